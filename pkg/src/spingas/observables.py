"""Measurement layer: spin moments, coherence, squeezing, sector populations.

Ensemble values are always formed by weight-averaging first and second spin
moments over the samples and only then deriving coherence and squeezing, which
matches the density-matrix definitions; variances must never be averaged
directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UndefinedDirectionError
from .operators import PhysicsParams, SpinOperators, sector_js
from .spbasis import ContactIntegrals

__all__ = [
    "SpinMoments",
    "SectorPopulations",
    "RegimeDiagnostics",
    "measure_spin_moments",
    "average_moments",
    "coherence",
    "coherence_normalized",
    "squeezing",
    "sector_populations_from_vector",
    "sector_populations_projected",
    "average_populations",
    "regime_diagnostics",
    "crossing_time",
    "TimeSeries",
]

DIRECTION_EPS = 1e-9


@dataclass
class SpinMoments:
    """First moments <S_a> and symmetrized second moments <S_a S_b>_sym."""

    first: np.ndarray
    second: np.ndarray


def measure_spin_moments(amplitudes: np.ndarray, spin: SpinOperators) -> SpinMoments:
    """Moments of a (possibly unnormalized) state vector."""
    norm2 = np.vdot(amplitudes, amplitudes).real
    vecs = [op.matvec(amplitudes) for op in spin.as_tuple()]
    first = np.array([np.vdot(amplitudes, v).real for v in vecs]) / norm2
    second = np.empty((3, 3))
    for a in range(3):
        for b in range(a, 3):
            val = np.vdot(vecs[a], vecs[b]).real / norm2
            second[a, b] = val
            second[b, a] = val
    return SpinMoments(first=first, second=second)


def average_moments(weighted: list[tuple[float, SpinMoments]]) -> SpinMoments:
    """Weighted ensemble average, reduced in the given (fixed) order."""
    total = sum(w for w, _ in weighted)
    if total <= 0:
        raise ConfigError("ensemble has no weight")
    first = np.zeros(3)
    second = np.zeros((3, 3))
    for w, m in weighted:
        first += w * m.first
        second += w * m.second
    return SpinMoments(first=first / total, second=second / total)


def coherence(moments: SpinMoments) -> float:
    """C = sqrt(<S_x>^2 + <S_y>^2), the transverse collective spin length."""
    return float(math.hypot(moments.first[0], moments.first[1]))


def coherence_normalized(moments: SpinMoments, n_atoms: int) -> float:
    """C scaled so a fully polarized transverse state reads 1."""
    return coherence(moments) / (n_atoms / 2.0)


def squeezing(moments: SpinMoments, n_atoms: int, eps: float = DIRECTION_EPS) -> float:
    """Wineland squeezing parameter along the fixed equatorial perpendicular.

    The observation direction is n = <S>/|<S>| and the perpendicular is taken
    literally as (n_y, -n_x, 0), the prescription valid while the dynamics
    stays on the equator; consumers should watch <S_z> for drift.  Raises
    UndefinedDirectionError when |<S>| <= eps so callers report a missing data
    point instead of a fake zero.
    """
    length = float(np.linalg.norm(moments.first))
    if length <= eps:
        raise UndefinedDirectionError(f"|<S>| = {length:.3e} <= eps = {eps:.3e}")
    n = moments.first / length
    nperp = np.array([n[1], -n[0], 0.0])
    var = float(nperp @ moments.second @ nperp) - float(nperp @ moments.first) ** 2
    mean_along = float(moments.first @ n)
    return n_atoms * var / mean_along**2


@dataclass
class SectorPopulations:
    """Populations of the total-spin sectors, ordered j = N/2 down to j_min."""

    js: list[float]
    values: np.ndarray

    @property
    def top(self) -> float:
        """Population of the maximal (fully symmetric) sector."""
        return float(self.values[0])

    def total(self) -> float:
        return float(self.values.sum())


def sector_populations_from_vector(
    amplitudes: np.ndarray, spin: SpinOperators, n_atoms: int
) -> SectorPopulations:
    """All <P_j> of a state from power moments of S^2.

    S^2 has exactly the eigenvalues j(j+1) on the N-atom space, so the K
    sector populations follow from the first K power moments through a small
    Vandermonde solve; this needs ~K/2 applications of S^2 instead of K^2
    projector factor sweeps.
    """
    js = sector_js(n_atoms)
    k = len(js)
    lambdas = np.array([j * (j + 1.0) for j in js])
    norm2 = np.vdot(amplitudes, amplitudes).real

    def apply_s2(vec):
        out = np.zeros_like(vec)
        for op in spin.as_tuple():
            out += op.matvec(op.matvec(vec))
        return out

    powers = [amplitudes]
    while len(powers) < (k + 2) // 2:
        powers.append(apply_s2(powers[-1]))
    moments = np.empty(k)
    for order in range(k):
        lo, hi = order // 2, order - order // 2
        moments[order] = np.vdot(powers[lo], powers[hi]).real / norm2
    vander = np.vander(lambdas, k, increasing=True).T
    values = np.linalg.solve(vander, moments)
    return SectorPopulations(js=js, values=values)


def sector_populations_projected(amplitudes: np.ndarray, projectors) -> SectorPopulations:
    """Same populations through explicit sector projectors (cross-check path)."""
    js = [p.j if hasattr(p, "j") else None for p in projectors]
    values = np.array([p.expectation(amplitudes) for p in projectors])
    return SectorPopulations(js=js, values=values)


def average_populations(weighted: list[tuple[float, SectorPopulations]]) -> SectorPopulations:
    total = sum(w for w, _ in weighted)
    js = weighted[0][1].js
    values = sum(w * p.values for w, p in weighted) / total
    return SectorPopulations(js=js, values=values)


@dataclass
class RegimeDiagnostics:
    """Scalar figures of merit separating the self-rephasing regime.

    delta_col is the collisional shift |g01| * nbar, e_lat the lateral
    elastic-collision energy 2 g01^2 nbar v_T / (3 pi sqrt(pi)), and delta_b
    the spread of single-particle field shifts over the thermal occupations.
    All are diagnostics only; none feed back into the dynamics.
    """

    nbar: float
    v_thermal: float
    delta_col: float
    e_lat: float
    delta_b: float


def regime_diagnostics(
    params: PhysicsParams,
    mean_occupations: np.ndarray,
    contact: ContactIntegrals,
) -> RegimeDiagnostics:
    """Diagnostics from thermally averaged mode occupations.

    The mean density is the density-weighted estimator
    nbar = (1/N) integral n(x)^2 dx with n(x) = sum_m <n_m> |phi_m(x)|^2,
    evaluated through the cached mode integrals.
    """
    occ = np.asarray(mean_occupations, dtype=float)
    n_levels = len(occ)
    n_atoms = params.n_atoms
    nbar = 0.0
    for m in range(n_levels):
        if occ[m] == 0.0:
            continue
        for n in range(m, n_levels):
            if occ[n] == 0.0:
                continue
            mult = 1.0 if m == n else 2.0
            nbar += mult * occ[m] * occ[n] * contact.density_overlap(m, n)
    nbar /= n_atoms
    _, g01, _ = params.couplings()
    v_t = math.sqrt(params.temperature)
    delta_col = abs(g01) * nbar
    e_lat = 2.0 * g01**2 * nbar * v_t / (3.0 * math.pi * math.sqrt(math.pi))
    # spread of the single-particle field shift beta1 <x> + beta2 <x^2>
    shifts = np.array([params.beta2 * (m + 0.5) for m in range(n_levels)])
    probs = occ / occ.sum()
    mean_shift = float(probs @ shifts)
    delta_b = float(math.sqrt(max(probs @ (shifts - mean_shift) ** 2, 0.0)))
    return RegimeDiagnostics(
        nbar=nbar, v_thermal=v_t, delta_col=delta_col, e_lat=e_lat, delta_b=delta_b
    )


def crossing_time(times, values, threshold: float, direction: str = "above") -> float | None:
    """First time the series crosses the threshold, linearly interpolated.

    Returns None when the series never crosses inside the horizon.  NaN
    samples (missing data points) are skipped.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.size == 0:
        raise ConfigError("empty series")
    if np.any(np.diff(times) <= 0):
        raise ConfigError("time grid must be strictly increasing")
    sign = 1.0 if direction == "above" else -1.0
    prev_t = prev_v = None
    for t, v in zip(times, values):
        if math.isnan(v):
            prev_t = prev_v = None
            continue
        if sign * (v - threshold) > 0:
            if prev_t is None:
                return float(t)
            frac = (threshold - prev_v) / (v - prev_v)
            return float(prev_t + frac * (t - prev_t))
        prev_t, prev_v = t, v
    return None


@dataclass
class TimeSeries:
    """Per-time ensemble observables, one row per grid time.

    Column layout (the CSV contract): t, Sx, Sy, Sz, C, C_norm, xi2,
    p_<j> (one column per sector, descending j), norm, energy, leakage.
    xi2 is NaN where the direction is undefined.
    """

    times: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    contrast: np.ndarray
    contrast_norm: np.ndarray
    xi2: np.ndarray
    populations: np.ndarray
    js: list[float]
    norm: np.ndarray
    energy: np.ndarray
    leakage: np.ndarray
    extra: dict = field(default_factory=dict)

    def header(self) -> list[str]:
        cols = ["t", "Sx", "Sy", "Sz", "C", "C_norm", "xi2"]
        cols += [f"p_{j:g}" for j in self.js]
        cols += ["norm", "energy", "leakage"]
        return cols

    def rows(self):
        for i in range(len(self.times)):
            row = [
                self.times[i], self.sx[i], self.sy[i], self.sz[i],
                self.contrast[i], self.contrast_norm[i], self.xi2[i],
            ]
            row += list(self.populations[i])
            row += [self.norm[i], self.energy[i], self.leakage[i]]
            yield row
