"""Experiment orchestration: scenarios, ensemble runs, sweeps, persistence.

A scenario bundles the physics, the preparation, a time grid and, for sweep
kinds, a (g, c) coupling grid.  The thermal ensemble is independent of the
couplings in diagonal mode, so one set of spatial references is shared by the
whole grid (common random numbers); per-reference operator blocks are cached
by basis spec and recombined per grid point, which makes a sweep cost little
more than its propagations.

Outputs per run: series.csv (per-time observables, long format with g and c
columns for sweeps), map.csv (per-point snapshot and crossing summaries),
samples.csv (per-sample weights for convergence audits) and manifest.json
(everything needed to reproduce the run bit for bit, wall time aside).
"""

from __future__ import annotations

import configparser
import csv
import json
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy

from . import __version__
from .errors import CapacityError, ConfigError, UndefinedDirectionError
from .fock import BasisSpec, enumerate_basis, frozen_basis, spatial_quanta, sub_basis_around
from .idealgas import fig1_series
from .observables import (
    SectorPopulations,
    SpinMoments,
    TimeSeries,
    coherence,
    coherence_normalized,
    crossing_time,
    measure_spin_moments,
    sector_populations_from_vector,
    squeezing,
)
from .operators import PhysicsParams, build_blocks, build_collective_spin, build_tact_generator, sector_js
from .prep import (
    CanonicalBoseGas,
    PrepConfig,
    WeightedSample,
    apply_pulse,
    apply_tact,
    config_to_fock,
    enumerate_thermal_diagonal,
    exact_thermal_samples,
    sample_thermal_qmc,
)
from .propagate import PropagationStats, PropagatorConfig, StateVector, evolve_real

__all__ = ["Scenario", "RunResult", "load_config", "run_scenario", "run_freeze_spatial"]

KINDS = (
    "contrast_decay",
    "sector_population",
    "squeezing_decay",
    "gc_map",
    "idealgas_fig1",
    "freeze_spatial_map",
)


@dataclass(frozen=True)
class Scenario:
    """Full description of one run; every field lands in the manifest."""

    kind: str
    params: PhysicsParams
    prep: PrepConfig = field(default_factory=PrepConfig)
    t_start: float = 0.0
    t_end: float = 50.0
    n_times: int = 26
    snapshot_time: float | None = None
    g_values: tuple[float, ...] = ()
    c_values: tuple[float, ...] = ()
    grid_pairs: tuple[tuple[float, float], ...] = ()
    delta_q: int = 4
    mode_margin: int | None = None
    n_modes: int | None = None
    q_max: int | None = None
    max_states: int = 300_000
    propagator: PropagatorConfig = field(default_factory=PropagatorConfig)
    xi2_threshold: float = 1.0
    freeze_spatial: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.n_times < 2 or self.t_end <= self.t_start:
            raise ConfigError("time grid must be strictly increasing")
        if self.kind in ("gc_map", "freeze_spatial_map") and not self.grid():
            raise ConfigError("map scenarios need a nonempty coupling grid")

    def times(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_times)

    def grid(self) -> list[tuple[float, float]]:
        """Coupling grid; single-point kinds use the params couplings."""
        if self.kind in ("gc_map", "freeze_spatial_map"):
            if self.grid_pairs:
                return list(self.grid_pairs)
            return [(g, c) for g in self.g_values for c in self.c_values]
        p = self.params
        if p.g is not None:
            return [(p.g, p.c)]
        g00, g01, g11 = p.couplings()
        # represent explicit couplings exactly through the mean/difference form
        if abs((g11 - g00) / 2.0 + g00 - g01) < 1e-15:
            return [(g01, (g11 - g00) / 2.0)]
        raise ConfigError("single-point kinds with explicit couplings must satisfy g01=(g00+g11)/2")

    def point_params(self, g: float, c: float) -> PhysicsParams:
        base = self.params
        return PhysicsParams(
            n_atoms=base.n_atoms, temperature=base.temperature,
            beta0=base.beta0, beta1=base.beta1, beta2=base.beta2, g=g, c=c,
        )


# ---------------------------------------------------------------------------
# configuration files


def _parse_pulse(text: str) -> float:
    text = text.strip().lower()
    if text in ("pi/2", "pi2"):
        return math.pi / 2
    if text in ("none", "0"):
        return 0.0
    return float(text)


_ALLOWED = {
    "scenario": {"kind", "snapshot_time", "xi2_threshold", "freeze_spatial"},
    "physics": {"n_atoms", "temperature", "beta0", "beta1", "beta2", "g", "c",
                "g00", "g01", "g11"},
    "grid": {"g", "c"},
    "prep": {"mode", "n_samples", "seed", "pulse", "tact_theta", "exhaustive",
             "tail_weight", "exact_diag_threshold"},
    "time": {"start", "stop", "points"},
    "basis": {"delta_q", "mode_margin", "max_states", "n_modes", "q_max"},
    "propagation": {"krylov_dim", "tol"},
}


def load_config(path: str) -> Scenario:
    """Read a scenario from an INI file or from a manifest JSON."""
    text = open(path).read()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        payload = json.loads(text)
        if "config" not in payload:
            raise ConfigError("manifest JSON lacks a 'config' section")
        sections = payload["config"]
    else:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        sections = {name: dict(parser[name]) for name in parser.sections()}
    return scenario_from_sections(sections)


def scenario_from_sections(sections: dict) -> Scenario:
    for name, keys in sections.items():
        if name not in _ALLOWED:
            raise ConfigError(f"unknown config section [{name}]")
        for key in keys:
            if key not in _ALLOWED[name]:
                raise ConfigError(f"unknown key {key!r} in section [{name}]")
    try:
        return _scenario_from_sections(sections)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from exc


def _get(sections, section, key, default=None, cast=str):
    value = sections.get(section, {}).get(key)
    if value is None:
        return default
    if cast is bool:
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return cast(value)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _scenario_from_sections(sections: dict) -> Scenario:
    kind = _get(sections, "scenario", "kind")
    if kind is None:
        raise ConfigError("[scenario] kind is required")
    phys = sections.get("physics", {})
    params = PhysicsParams(
        n_atoms=_get(sections, "physics", "n_atoms", cast=int),
        temperature=_get(sections, "physics", "temperature", cast=float),
        beta0=_get(sections, "physics", "beta0", 0.0, float),
        beta1=_get(sections, "physics", "beta1", 0.0, float),
        beta2=_get(sections, "physics", "beta2", 0.0, float),
        g=_get(sections, "physics", "g", None, float),
        c=_get(sections, "physics", "c", None, float),
        g00=_get(sections, "physics", "g00", None, float),
        g01=_get(sections, "physics", "g01", None, float),
        g11=_get(sections, "physics", "g11", None, float),
    )
    prep = PrepConfig(
        mode=_get(sections, "prep", "mode", "diagonal"),
        n_samples=_get(sections, "prep", "n_samples", 1, int),
        rng_seed=_get(sections, "prep", "seed", 0, int),
        tact_theta=_get(sections, "prep", "tact_theta", 0.0, float),
        pulse_angle=_parse_pulse(_get(sections, "prep", "pulse", "pi/2")),
        exhaustive=_get(sections, "prep", "exhaustive", False, bool),
        tail_weight=_get(sections, "prep", "tail_weight", 1e-6, float),
        exact_diag_threshold=_get(sections, "prep", "exact_diag_threshold", 0, int),
    )
    propagator = PropagatorConfig(
        krylov_dim=_get(sections, "propagation", "krylov_dim", 30, int),
        tol=_get(sections, "propagation", "tol", 1e-9, float),
    )
    mode_margin = _get(sections, "basis", "mode_margin", None, int)
    return Scenario(
        kind=kind,
        params=params,
        prep=prep,
        t_start=_get(sections, "time", "start", 0.0, float),
        t_end=_get(sections, "time", "stop", 50.0, float),
        n_times=_get(sections, "time", "points", 26, int),
        snapshot_time=_get(sections, "scenario", "snapshot_time", None, float),
        g_values=_floats(sections.get("grid", {}).get("g", "")) if "grid" in sections else (),
        c_values=_floats(sections.get("grid", {}).get("c", "")) if "grid" in sections else (),
        delta_q=_get(sections, "basis", "delta_q", 4, int),
        mode_margin=mode_margin,
        n_modes=_get(sections, "basis", "n_modes", None, int),
        q_max=_get(sections, "basis", "q_max", None, int),
        max_states=_get(sections, "basis", "max_states", 300_000, int),
        propagator=propagator,
        xi2_threshold=_get(sections, "scenario", "xi2_threshold", 1.0, float),
        freeze_spatial=_get(sections, "scenario", "freeze_spatial", False, bool),
    )


def scenario_to_sections(s: Scenario) -> dict:
    """Exact echo of a scenario, consumable by scenario_from_sections."""
    phys = {"n_atoms": repr(s.params.n_atoms), "temperature": repr(s.params.temperature),
            "beta0": repr(s.params.beta0), "beta1": repr(s.params.beta1),
            "beta2": repr(s.params.beta2)}
    for name in ("g", "c", "g00", "g01", "g11"):
        value = getattr(s.params, name)
        if value is not None:
            phys[name] = repr(value)
    sections = {
        "scenario": {
            "kind": s.kind,
            "xi2_threshold": repr(s.xi2_threshold),
            "freeze_spatial": str(s.freeze_spatial).lower(),
        },
        "physics": phys,
        "prep": {
            "mode": s.prep.mode,
            "n_samples": repr(s.prep.n_samples),
            "seed": repr(s.prep.rng_seed),
            "pulse": repr(s.prep.pulse_angle),
            "tact_theta": repr(s.prep.tact_theta),
            "exhaustive": str(s.prep.exhaustive).lower(),
            "tail_weight": repr(s.prep.tail_weight),
            "exact_diag_threshold": repr(s.prep.exact_diag_threshold),
        },
        "time": {"start": repr(s.t_start), "stop": repr(s.t_end), "points": repr(s.n_times)},
        "basis": {"delta_q": repr(s.delta_q), "max_states": repr(s.max_states)},
        "propagation": {"krylov_dim": repr(s.propagator.krylov_dim), "tol": repr(s.propagator.tol)},
    }
    if s.snapshot_time is not None:
        sections["scenario"]["snapshot_time"] = repr(s.snapshot_time)
    if s.mode_margin is not None:
        sections["basis"]["mode_margin"] = repr(s.mode_margin)
    if s.n_modes is not None:
        sections["basis"]["n_modes"] = repr(s.n_modes)
    if s.q_max is not None:
        sections["basis"]["q_max"] = repr(s.q_max)
    if s.g_values or s.c_values:
        sections["grid"] = {
            "g": " ".join(repr(v) for v in s.g_values),
            "c": " ".join(repr(v) for v in s.c_values),
        }
    return sections


# ---------------------------------------------------------------------------
# ensemble construction


@dataclass
class Reference:
    """One spatial seed configuration with its ensemble weight."""

    index: int
    levels: dict[int, int]
    weight: float
    provenance: dict


def _diagonal_references(scenario: Scenario) -> list[Reference]:
    prep, params = scenario.prep, scenario.params
    refs: list[Reference] = []
    if prep.exhaustive:
        for i, (levels, prob) in enumerate(
            enumerate_thermal_diagonal(params, prep.tail_weight)
        ):
            refs.append(Reference(i, levels, prob, {"mode": "diagonal-exhaustive"}))
        return refs
    rng = np.random.default_rng(prep.rng_seed)
    gas = CanonicalBoseGas(params.n_atoms, params.temperature)
    merged: dict[tuple, Reference] = {}
    for i in range(prep.n_samples):
        levels = gas.sample_configuration(rng)
        key = tuple(sorted(levels.items()))
        if key in merged:
            merged[key].weight += 1.0
            merged[key].provenance["multiplicity"] += 1
        else:
            merged[key] = Reference(
                len(merged), dict(levels), 1.0,
                {"mode": "diagonal-sampled", "multiplicity": 1},
            )
    return list(merged.values())


def _reference_basis(scenario: Scenario, ref: Reference):
    levels = ref.levels
    q_ref = sum(m * k for m, k in levels.items())
    q_max = q_ref + scenario.delta_q
    top_mode = max((m for m, k in levels.items() if k), default=0)
    if scenario.mode_margin is None:
        n_modes = q_max + 1
    else:
        n_modes = min(q_max + 1, top_mode + 1 + scenario.mode_margin)
    state = config_to_fock(levels, n_modes)
    if scenario.freeze_spatial or scenario.kind == "freeze_spatial_map":
        return frozen_basis(state, scenario.max_states), state
    basis = sub_basis_around(state, scenario.delta_q, n_modes, scenario.max_states)
    return basis, state


# per-process cache of (basis, blocks, spin, tact) keyed by basis spec
_CACHE: dict = {}
_CACHE_LIMIT = 6


def _cached_machinery(spec_key, builder):
    hit = _CACHE.get(spec_key)
    if hit is not None:
        return hit
    value = builder()
    if len(_CACHE) >= _CACHE_LIMIT:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[spec_key] = value
    return value


@dataclass
class SampleResult:
    """Per-reference trajectory data for every grid point."""

    index: int
    weight: float
    basis_dim: int
    quanta: int
    provenance: dict
    # per point: dict with arrays over the time grid
    points: dict
    error: str | None = None
    prop_stats: PropagationStats | None = None
    operator_nnz: int = 0
    hermiticity_residual: float = 0.0


def _measure(amps, spin, n_atoms, hamiltonian):
    moments = measure_spin_moments(amps, spin)
    pops = sector_populations_from_vector(amps, spin, n_atoms)
    norm = float(np.linalg.norm(amps))
    energy = hamiltonian.expectation(amps)
    leak = hamiltonian.leakage(amps)
    return moments, pops, norm, energy, leak


def _run_reference(scenario: Scenario, ref: Reference, grid) -> SampleResult:
    params = scenario.params
    n_atoms = params.n_atoms
    times = scenario.times()
    basis, ref_state = _reference_basis(scenario, ref)
    spec = basis.spec

    interacting = any(scenario.point_params(g, c).couplings() != (0.0, 0.0, 0.0)
                      for g, c in grid)
    spec_key = (spec.n_atoms, spec.n_modes, spec.q_max, spec.profile, interacting)

    def build():
        blocks = build_blocks(basis, need_interactions=interacting)
        spin = build_collective_spin(basis)
        # built unconditionally so scenarios differing only in prep share the cache
        tact = build_tact_generator(basis, spin)
        return basis, blocks, spin, tact

    basis, blocks, spin, tact = _cached_machinery(spec_key, build)
    sample = WeightedSample(StateVector.from_fock(basis, ref_state), ref.weight,
                            dict(ref.provenance))
    sample = apply_pulse(sample, scenario.prep.pulse_angle, spin)
    if scenario.prep.tact_theta:
        sample = apply_tact(sample, scenario.prep.tact_theta, basis, spin, generator=tact)
    stats = PropagationStats()
    points = {}
    op_nnz = 0
    op_resid = 0.0
    for g, c in grid:
        point_params = scenario.point_params(g, c)
        hamiltonian = blocks.hamiltonian(point_params, include_beta0=point_params.beta0 != 0.0)
        op_nnz = max(op_nnz, hamiltonian.nnz)
        op_resid = max(op_resid, hamiltonian.verified_hermiticity or 0.0)
        state = sample.state.copy()
        n_t = len(times)
        firsts = np.empty((n_t, 3))
        seconds = np.empty((n_t, 3, 3))
        pops = np.empty((n_t, len(sector_js(n_atoms))))
        norms = np.empty(n_t)
        energies = np.empty(n_t)
        leaks = np.empty(n_t)
        t_prev = 0.0
        for i, t in enumerate(times):
            if t != t_prev:
                state = evolve_real(state, hamiltonian, t - t_prev, scenario.propagator, stats)
                t_prev = t
            moments, sector, norm, energy, leak = _measure(
                state.amplitudes, spin, n_atoms, hamiltonian
            )
            firsts[i] = moments.first
            seconds[i] = moments.second
            pops[i] = sector.values
            norms[i] = norm
            energies[i] = energy
            leaks[i] = leak
        points[(g, c)] = {
            "first": firsts, "second": seconds, "pops": pops,
            "norm": norms, "energy": energies, "leak": leaks,
        }
    return SampleResult(
        index=ref.index, weight=ref.weight, basis_dim=len(basis),
        quanta=spatial_quanta(ref_state), provenance=dict(ref.provenance),
        points=points, prop_stats=stats,
        operator_nnz=op_nnz, hermiticity_residual=op_resid,
    )


def _run_reference_safe(payload):
    scenario, ref, grid = payload
    try:
        return _run_reference(scenario, ref, grid)
    except CapacityError:
        raise
    except Exception as exc:  # per-sample failure isolation
        return SampleResult(
            index=ref.index, weight=ref.weight, basis_dim=0,
            quanta=sum(m * k for m, k in ref.levels.items()),
            provenance=dict(ref.provenance), points={}, error=f"{type(exc).__name__}: {exc}",
        )


# ---------------------------------------------------------------------------
# qmc ensemble


def _run_qmc_point(scenario: Scenario, g: float, c: float):
    """QMC thermal ensemble for one coupling point (thermal state depends on g, c)."""
    params = scenario.point_params(g, c)
    if scenario.n_modes is None or scenario.q_max is None:
        raise ConfigError("qmc mode needs [basis] n_modes and q_max for the shared basis")
    spec = BasisSpec(params.n_atoms, scenario.n_modes, scenario.q_max)
    basis = enumerate_basis(spec, scenario.max_states)
    blocks = build_blocks(basis)
    spin = build_collective_spin(basis)
    tact = build_tact_generator(basis, spin) if scenario.prep.tact_theta else None
    hamiltonian = blocks.hamiltonian(params, include_beta0=params.beta0 != 0.0)
    down_dim = len(basis.down_sector_indices())
    if scenario.prep.exact_diag_threshold and down_dim <= scenario.prep.exact_diag_threshold:
        samples = exact_thermal_samples(params, basis, hamiltonian)
    else:
        rng = np.random.default_rng(scenario.prep.rng_seed)
        samples = [
            sample_thermal_qmc(params, basis, hamiltonian, rng, scenario.propagator)
            for _ in range(scenario.prep.n_samples)
        ]
    times = scenario.times()
    results = []
    for idx, raw in enumerate(samples):
        stats = PropagationStats()
        sample = apply_pulse(raw, scenario.prep.pulse_angle, spin)
        if scenario.prep.tact_theta:
            sample = apply_tact(sample, scenario.prep.tact_theta, basis, spin, generator=tact)
        state = sample.state.copy()
        n_t = len(times)
        data = {
            "first": np.empty((n_t, 3)), "second": np.empty((n_t, 3, 3)),
            "pops": np.empty((n_t, len(sector_js(params.n_atoms)))),
            "norm": np.empty(n_t), "energy": np.empty(n_t), "leak": np.empty(n_t),
        }
        t_prev = 0.0
        for i, t in enumerate(times):
            if t != t_prev:
                state = evolve_real(state, hamiltonian, t - t_prev, scenario.propagator, stats)
                t_prev = t
            moments, sector, norm, energy, leak = _measure(
                state.amplitudes, spin, params.n_atoms, hamiltonian
            )
            data["first"][i] = moments.first
            data["second"][i] = moments.second
            data["pops"][i] = sector.values
            data["norm"][i] = norm
            data["energy"][i] = energy
            data["leak"][i] = leak
        results.append(SampleResult(
            index=idx, weight=sample.weight, basis_dim=len(basis),
            quanta=0, provenance=dict(sample.provenance), points={(g, c): data},
            prop_stats=stats,
        ))
    return results


# ---------------------------------------------------------------------------
# reduction and output


def _reduce_point(results: list[SampleResult], point, times, n_atoms, xi2_threshold):
    """Weighted ensemble reduction at one grid point, in sample-index order."""
    js = sector_js(n_atoms)
    total = 0.0
    first = second = pops = norm = energy = leak = None
    snapshots = []
    for res in sorted(results, key=lambda r: r.index):
        if res.error or point not in res.points:
            continue
        data = res.points[point]
        w = res.weight
        total += w
        if first is None:
            first = w * data["first"].copy()
            second = w * data["second"].copy()
            pops = w * data["pops"].copy()
            norm = w * data["norm"].copy()
            energy = w * data["energy"].copy()
            leak = w * data["leak"].copy()
        else:
            first += w * data["first"]
            second += w * data["second"]
            pops += w * data["pops"]
            norm += w * data["norm"]
            energy += w * data["energy"]
            leak += w * data["leak"]
        snapshots.append((w, data["pops"][:, 0], data["first"]))
    if total <= 0:
        raise ConfigError(f"no surviving samples at grid point {point}")
    first /= total
    second /= total
    pops /= total
    norm /= total
    energy /= total
    leak /= total
    n_t = len(times)
    contrast = np.empty(n_t)
    contrast_n = np.empty(n_t)
    xi2 = np.empty(n_t)
    for i in range(n_t):
        m = SpinMoments(first=first[i], second=second[i])
        contrast[i] = coherence(m)
        contrast_n[i] = coherence_normalized(m, n_atoms)
        try:
            xi2[i] = squeezing(m, n_atoms)
        except UndefinedDirectionError:
            xi2[i] = math.nan
    series = TimeSeries(
        times=times, sx=first[:, 0], sy=first[:, 1], sz=first[:, 2],
        contrast=contrast, contrast_norm=contrast_n, xi2=xi2,
        populations=pops, js=js, norm=norm, energy=energy, leakage=leak,
    )
    # weighted standard error of the top-sector snapshot values
    stderr = None
    if len(snapshots) > 1:
        w = np.array([s[0] for s in snapshots])
        ptop_final = np.array([s[1][-1] for s in snapshots])
        mean = float((w * ptop_final).sum() / w.sum())
        var = float((w * (ptop_final - mean) ** 2).sum() / w.sum())
        n_eff = float(w.sum() ** 2 / (w**2).sum())
        stderr = math.sqrt(var / max(n_eff - 1.0, 1.0))
    return series, stderr


def _interp(times, values, t):
    return float(np.interp(t, times, values))


@dataclass
class RunResult:
    scenario: Scenario
    series: dict
    map_rows: list[dict]
    manifest: dict

    def series_at(self, g: float, c: float) -> TimeSeries:
        for (gg, cc), s in self.series.items():
            if abs(gg - g) < 1e-12 and abs(cc - c) < 1e-12:
                return s
        raise KeyError((g, c))


def run_scenario(scenario: Scenario, out_dir=None, threads: int = 1) -> RunResult:
    """Execute a scenario and optionally persist CSVs plus the manifest."""
    wall0 = time.time()
    if scenario.kind == "idealgas_fig1":
        result = _run_idealgas(scenario)
    else:
        result = _run_ensemble(scenario, threads)
    result.manifest["wall_time_s"] = time.time() - wall0
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def run_freeze_spatial(scenario: Scenario, out_dir=None, threads: int = 1) -> RunResult:
    """Same pipeline with every per-sample basis frozen to its spatial profile."""
    return run_scenario(replace(scenario, freeze_spatial=True), out_dir, threads)


def _base_manifest(scenario: Scenario) -> dict:
    return {
        "artifact": {"name": "spingas", "version": __version__},
        "config": scenario_to_sections(scenario),
        "kind": scenario.kind,
        "seed": scenario.prep.rng_seed,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def _run_idealgas(scenario: Scenario) -> RunResult:
    params = scenario.params
    times = scenario.times()
    curves = fig1_series(params.n_atoms, params.temperature, params.beta2, times)
    manifest = _base_manifest(scenario)
    manifest["ensemble"] = {"mode": "analytic"}
    return RunResult(scenario=scenario, series={"idealgas": (times, curves)},
                     map_rows=[], manifest=manifest)


def _run_ensemble(scenario: Scenario, threads: int) -> RunResult:
    grid = scenario.grid()
    times = scenario.times()
    n_atoms = scenario.params.n_atoms
    if scenario.prep.mode == "qmc":
        results = []
        for g, c in grid:
            results.extend(_run_qmc_point(scenario, g, c))
        # qmc samples are per point already
        per_point_results = results
    else:
        refs = _diagonal_references(scenario)
        order = sorted(refs, key=lambda r: (sum(m * k for m, k in r.levels.items()), r.index))
        payloads = [(scenario, ref, grid) for ref in order]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(_run_reference_safe, payloads))
        else:
            results = [_run_reference_safe(p) for p in payloads]
        per_point_results = results

    series = {}
    map_rows = []
    failures = [r for r in per_point_results if r.error]
    stderrs = {}
    for point in grid:
        ts, stderr = _reduce_point(per_point_results, point, times, n_atoms,
                                   scenario.xi2_threshold)
        series[point] = ts
        stderrs[point] = stderr

    snapshot = scenario.snapshot_time if scenario.snapshot_time is not None else scenario.t_end
    baseline = series.get((0.0, 0.0))
    t0_cross = None
    if baseline is not None:
        t0_cross = crossing_time(times, baseline.xi2, scenario.xi2_threshold)
    for point in grid:
        ts = series[point]
        t_cross = crossing_time(times, ts.xi2, scenario.xi2_threshold)
        ratio = (
            t_cross / t0_cross
            if (t_cross is not None and t0_cross is not None and t0_cross > 0)
            else math.nan
        )
        row = {
            "g": point[0], "c": point[1],
            "p_top": _interp(times, ts.populations[:, 0], snapshot),
            "Sx": _interp(times, ts.sx, snapshot),
            "C": _interp(times, ts.contrast, snapshot),
            "C_norm": _interp(times, ts.contrast_norm, snapshot),
            "xi2": _interp(times, ts.xi2, snapshot),
            "t_cross_xi2": t_cross if t_cross is not None else math.nan,
            "t_cross_ratio": ratio,
            "t_half_C": crossing_time(times, ts.contrast_norm, 0.5, "below") or math.nan,
            "p_top_stderr": stderrs[point] if stderrs[point] is not None else math.nan,
            "leakage_final": float(ts.leakage[-1]),
        }
        map_rows.append(row)

    ok = [r for r in per_point_results if not r.error]
    dims = [r.basis_dim for r in ok]
    stats = PropagationStats()
    for r in ok:
        if r.prop_stats:
            stats.merge(r.prop_stats)
    manifest = _base_manifest(scenario)
    manifest.update({
        "snapshot_time": snapshot,
        "ensemble": {
            "mode": scenario.prep.mode + ("-exhaustive" if scenario.prep.exhaustive else ""),
            "n_samples": scenario.prep.n_samples,
            "n_unique": len(ok) + len(failures),
            "total_weight": sum(r.weight for r in ok),
        },
        "samples": [
            {
                "index": r.index, "weight": r.weight, "quanta": r.quanta,
                "basis_dim": r.basis_dim, "provenance": r.provenance,
                "error": r.error,
            }
            for r in sorted(per_point_results, key=lambda r: r.index)
        ],
        "basis": {
            "min_dim": min(dims) if dims else 0,
            "max_dim": max(dims) if dims else 0,
            "mean_dim": float(np.mean(dims)) if dims else 0.0,
            "delta_q": scenario.delta_q,
            "mode_margin": scenario.mode_margin,
        },
        "operators": {
            "max_nnz": max((r.operator_nnz for r in ok), default=0),
            "max_hermiticity_residual": max(
                (r.hermiticity_residual for r in ok), default=0.0),
        },
        "leakage": {
            "max_final": max(
                (float(s.leakage[-1]) for s in series.values()), default=0.0),
        },
        "propagation": {
            "substeps": stats.substeps,
            "rejected": stats.rejected,
            "max_error_estimate": stats.max_error_estimate,
        },
        "points": [
            {"g": p[0], "c": p[1], "status": "ok",
             "p_top_stderr": stderrs[p] if stderrs[p] is not None else None}
            for p in grid
        ],
        "failures": [
            {"index": r.index, "error": r.error} for r in failures
        ],
    })
    return RunResult(scenario=scenario, series=series, map_rows=map_rows, manifest=manifest)


# ---------------------------------------------------------------------------
# persistence


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_outputs(result: RunResult, out_dir) -> None:
    import os

    os.makedirs(out_dir, exist_ok=True)
    scenario = result.scenario
    if scenario.kind == "idealgas_fig1":
        times, curves = result.series["idealgas"]
        with open(os.path.join(out_dir, "series.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "C_bosons", "C_fermions", "C_boltzmann"])
            for i, t in enumerate(times):
                writer.writerow([_fmt(t), _fmt(curves["bosons"][i]),
                                 _fmt(curves["fermions"][i]), _fmt(curves["boltzmann"][i])])
    else:
        multi = len(result.series) > 1 or scenario.kind in ("gc_map", "freeze_spatial_map")
        with open(os.path.join(out_dir, "series.csv"), "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            first_series = next(iter(result.series.values()))
            header = (["g", "c"] if multi else []) + first_series.header()
            writer.writerow(header)
            for (g, c), ts in result.series.items():
                for row in ts.rows():
                    prefix = [_fmt(g), _fmt(c)] if multi else []
                    writer.writerow(prefix + [_fmt(v) for v in row])
        if result.map_rows:
            with open(os.path.join(out_dir, "map.csv"), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                cols = list(result.map_rows[0].keys())
                writer.writerow(cols)
                for row in result.map_rows:
                    writer.writerow([_fmt(row[c]) for c in cols])
        if "samples" in result.manifest:
            with open(os.path.join(out_dir, "samples.csv"), "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["index", "weight", "quanta", "basis_dim", "mode", "error"])
                for s in result.manifest["samples"]:
                    writer.writerow([
                        s["index"], _fmt(s["weight"]), s["quanta"], s["basis_dim"],
                        s["provenance"].get("mode", ""), s["error"] or "",
                    ])
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(result.manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)}")
