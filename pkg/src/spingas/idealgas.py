"""Closed-form noninteracting contrast decay and the statistics comparison.

For an ideal gas in a weak quadratic field the transverse spin of an atom
sitting in bare level n just rotates, s_n(t) = (1/2) exp(-i 2 beta2 n t), and
the thermal contrast is the occupation-weighted coherent sum over levels.
Mean occupations are grand-canonical by default (chemical potential solved to
fix <N> = N); exact canonical occupations for bosons are available for
cross-validation against the many-body sampler, as is a variant that keeps
the exact eigenbasis overlaps of the two spin-dependent potentials instead of
the delta-overlap approximation.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, ConvergenceError
from .prep import CanonicalBoseGas
from .spbasis import hermite_functions

__all__ = [
    "StatisticsKind",
    "occupations",
    "s_single_level",
    "s_single_level_exact",
    "s_thermal_single",
    "contrast_thermal",
    "fig1_series",
]

TAIL_WEIGHT = 1e-12


class StatisticsKind(str, Enum):
    BOSONS = "bosons"
    FERMIONS = "fermions"
    BOLTZMANN = "boltzmann"


def _solve_mu(n_atoms, temperature, levels, sign):
    """Chemical potential fixing sum_k 1/(exp((k-mu)/T) + sign) = N."""

    def total(mu):
        return np.sum(1.0 / (np.exp((levels - mu) / temperature) + sign)) - n_atoms

    if sign < 0:  # bosons: mu < lowest level (at 0)
        lo, hi = -max(200.0, 60.0 * temperature), -1e-13
    else:
        lo, hi = -max(200.0, 60.0 * temperature), float(n_atoms + 60.0 * temperature)
    try:
        return brentq(total, lo, hi, xtol=1e-14, rtol=8.9e-16)
    except ValueError as exc:
        raise ConvergenceError(
            f"chemical potential bracket failed on [{lo}, {hi}]: {exc}"
        ) from exc


def occupations(
    n_atoms: int,
    temperature: float,
    kind: StatisticsKind | str = StatisticsKind.BOSONS,
    ensemble: str = "grand",
    tail: float = TAIL_WEIGHT,
) -> np.ndarray:
    """Mean level occupations <n_k> with the total fixed to N.

    The level cutoff adapts until the neglected tail is below `tail` of the
    total.  ensemble="canonical" is implemented for bosons only and uses the
    exact recursive partition-function identities.
    """
    kind = StatisticsKind(kind)
    if temperature <= 0:
        raise ConfigError("occupations need T > 0")
    if ensemble == "canonical":
        if kind is not StatisticsKind.BOSONS:
            raise ConfigError("canonical occupations implemented for bosons only")
        gas = CanonicalBoseGas(n_atoms, temperature)
        k = max(64, int(temperature * 40) + n_atoms)
        while True:
            occ = gas.mean_occupations(k)
            if occ[-1] < tail * n_atoms:
                return occ
            k *= 2
    if ensemble != "grand":
        raise ConfigError(f"unknown ensemble {ensemble!r}")
    if kind is StatisticsKind.BOLTZMANN:
        xi = math.exp(-1.0 / temperature)
        k = max(64, int(temperature * 40))
        while n_atoms * (1 - xi) * xi**k > tail * n_atoms:
            k *= 2
        levels = np.arange(k)
        return n_atoms * (1 - xi) * xi**levels
    sign = -1.0 if kind is StatisticsKind.BOSONS else 1.0
    k = max(64, int(temperature * 40) + 2 * n_atoms)
    while True:
        levels = np.arange(k, dtype=float)
        mu = _solve_mu(n_atoms, temperature, levels, sign)
        occ = 1.0 / (np.exp((levels - mu) / temperature) + sign)
        if occ[-1] < tail * n_atoms:
            return occ
        k *= 2


def s_single_level(n: int, beta2: float, t: float) -> complex:
    """Transverse spin of one atom initially in bare level n.

    The level-independent zero-point phase is a global rotation and is
    dropped, as is the stationary-overlap correction (delta approximation).
    """
    if n < 0:
        raise ConfigError("level index must be >= 0")
    return 0.5 * np.exp(-2j * beta2 * n * t)


def s_thermal_single(beta2: float, temperature: float, t: float) -> complex:
    """Thermal single-atom transverse spin, geometric closed form.

    (1/2) (1 - xi) / (1 - xi exp(-i 2 beta2 t)) with xi = exp(-1/T); the 1/2
    restores the single-atom normalization of the level formula.
    """
    if temperature <= 0:
        raise ConfigError("s_thermal_single needs T > 0")
    xi = math.exp(-1.0 / temperature)
    return 0.5 * (1.0 - xi) / (1.0 - xi * np.exp(-2j * beta2 * t))


_overlap_cache: dict[tuple, np.ndarray] = {}


def _scaled_overlaps(omega_left: float, omega_right: float, n_max: int) -> np.ndarray:
    """<phi^L_a | phi^R_b> for oscillator bases of different frequencies.

    Gauss-Hermite after rescaling by the mean Gaussian width; exact for the
    polynomial degrees involved.
    """
    key = (round(omega_left, 14), round(omega_right, 14), n_max)
    cached = _overlap_cache.get(key)
    if cached is not None:
        return cached
    order = 2 * n_max + 12
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    s = math.sqrt((omega_left + omega_right) / 2.0)
    x = nodes / s
    tw = np.exp(np.log(weights) + nodes * nodes) / s
    left = omega_left**0.25 * hermite_functions(n_max, math.sqrt(omega_left) * x)
    right = omega_right**0.25 * hermite_functions(n_max, math.sqrt(omega_right) * x)
    out = np.einsum("i,ai,bi->ab", tw, left, right)
    _overlap_cache[key] = out
    return out


def s_single_level_exact(n: int, beta2: float, t: float, n_extra: int = 40) -> complex:
    """Level-n transverse spin from the full two-potential overlap sum.

    Expands the bare level in the exact eigenbases of the spin-up and
    spin-down potentials (frequencies sqrt(1 +/- 2 beta2)) and keeps both the
    exact energies and the stationary overlaps.  Used to quantify the error
    of the delta-overlap approximation; agreement is O(beta2^2).
    """
    omega_up = math.sqrt(1.0 + 2.0 * beta2)
    omega_dn = math.sqrt(1.0 - 2.0 * beta2)
    n_max = n + n_extra
    c_up = _scaled_overlaps(omega_up, 1.0, n_max)[:, n]
    c_dn = _scaled_overlaps(omega_dn, 1.0, n_max)[:, n]
    cross = _scaled_overlaps(omega_up, omega_dn, n_max)
    a = np.arange(n_max + 1)
    e_up = omega_up * (a + 0.5)
    e_dn = omega_dn * (a + 0.5)
    # phase sign follows the level formula (only |s| is observable)
    phases = np.exp(-1j * np.subtract.outer(e_up, e_dn) * t)
    return 0.5 * np.einsum("a,b,ab,ab->", c_up.conj(), c_dn, phases, cross)


def contrast_thermal(
    n_atoms: int,
    temperature: float,
    beta2: float,
    t: float,
    kind: StatisticsKind | str = StatisticsKind.BOSONS,
    ensemble: str = "grand",
    exact_overlaps: bool = False,
    occ: np.ndarray | None = None,
) -> float:
    """Thermal contrast C(t) = N |sum_k (<n_k>/N) s_k(t)| (raw units).

    Divide by N/2 for the normalized value; passing a precomputed occupation
    vector skips the chemical-potential solve when scanning times.
    """
    if occ is None:
        occ = occupations(n_atoms, temperature, kind, ensemble)
    if exact_overlaps:
        s = np.array([s_single_level_exact(k, beta2, t) for k in range(len(occ))])
    else:
        s = 0.5 * np.exp(-2j * beta2 * np.arange(len(occ)) * t)
    return float(np.abs(occ @ s))


def fig1_series(n_atoms: int, temperature: float, beta2: float, times) -> dict[str, np.ndarray]:
    """Normalized contrast curves for the three statistics on a common grid."""
    times = np.asarray(times, dtype=float)
    out: dict[str, np.ndarray] = {}
    for kind in StatisticsKind:
        occ = occupations(n_atoms, temperature, kind)
        vals = np.array(
            [contrast_thermal(n_atoms, temperature, beta2, t, kind, occ=occ) for t in times]
        )
        out[kind.value] = vals / (n_atoms / 2.0)
    return out
