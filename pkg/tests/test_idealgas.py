import cmath
import math

import numpy as np
import pytest

from spingas.errors import ConfigError
from spingas.idealgas import (
    StatisticsKind,
    contrast_thermal,
    fig1_series,
    occupations,
    s_single_level,
    s_single_level_exact,
    s_thermal_single,
)
from spingas.prep import CanonicalBoseGas


def test_s_single_level_examples():
    assert s_single_level(0, 0.05, 17.0) == pytest.approx(0.5)
    assert s_single_level(3, 0.05, 0.0) == pytest.approx(0.5)
    val = s_single_level(3, 0.05, 10.0)
    assert abs(val) == pytest.approx(0.5)
    assert cmath.phase(val) == pytest.approx(-3.0, abs=1e-12)


def test_s_single_level_exact_overlap_cross_check():
    # delta-overlap approximation agrees with the full two-potential sum to
    # O(beta2^2): relative phases track and magnitudes stay near 1/2
    beta2, t = 0.05, 10.0
    base = s_single_level_exact(0, beta2, t)
    for n in (1, 2, 3):
        exact = s_single_level_exact(n, beta2, t)
        approx = s_single_level(n, beta2, t)
        # compare relative to level 0 to cancel the global zero-point phase
        rel_exact = exact / base
        rel_approx = approx / s_single_level(0, beta2, t)
        assert abs(abs(exact) - 0.5) < 4 * beta2**2 * (n + 1)
        assert abs(cmath.phase(rel_exact / rel_approx)) < 40 * beta2**3 * (n + 1) * t + 1e-6


def test_s_thermal_single():
    assert s_thermal_single(0.05, 5.0, 0.0) == pytest.approx(0.5)
    # T -> 0: only the ground level contributes, constant 1/2
    assert abs(s_thermal_single(0.05, 1e-6, 23.0)) == pytest.approx(0.5, abs=1e-9)
    # geometric series oracle
    beta2, T, t = 0.05, 10.0, 20.0
    xi = math.exp(-1.0 / T)
    series = sum((1 - xi) * xi**n * s_single_level(n, beta2, t) for n in range(3000))
    assert s_thermal_single(beta2, T, t) == pytest.approx(series, abs=1e-13)
    with pytest.raises(ConfigError):
        s_thermal_single(0.05, 0.0, 1.0)


def test_occupation_normalization_and_errors():
    for kind in StatisticsKind:
        occ = occupations(100, 10.0, kind)
        assert occ.sum() == pytest.approx(100.0, abs=1e-10)
    with pytest.raises(ConfigError):
        occupations(3, 3.0, "fermions", ensemble="canonical")
    with pytest.raises(ConfigError):
        occupations(3, 0.0, "bosons")


def test_canonical_occupations_match_recursion():
    occ = occupations(3, 3.0, "bosons", ensemble="canonical")
    want = CanonicalBoseGas(3, 3.0).mean_occupations(len(occ))
    assert np.abs(occ - want).max() < 1e-12
    assert occ.sum() == pytest.approx(3.0, abs=1e-10)


def test_bose_condensation_limit():
    # at fixed T the ground fraction grows with N
    fractions = []
    for n in (5, 20, 80, 320):
        occ = occupations(n, 5.0, "bosons")
        fractions.append(occ[0] / n)
    assert all(b > a for a, b in zip(fractions, fractions[1:]))


def test_contrast_at_zero_time():
    for kind in StatisticsKind:
        raw = contrast_thermal(50, 8.0, 0.05, 0.0, kind)
        assert raw == pytest.approx(25.0, abs=1e-9)


def test_single_atom_reduces_to_thermal_single():
    # a single atom is exactly Boltzmann-distributed; the canonical-boson path
    # reproduces that identically, while the grand-canonical BE/FD occupations
    # differ from the one-atom ensemble at the percent level (documented)
    beta2, T = 0.03, 4.0
    for t in (0.0, 3.0, 11.0):
        want = abs(s_thermal_single(beta2, T, t))
        got = contrast_thermal(1, T, beta2, t, StatisticsKind.BOLTZMANN)
        assert got == pytest.approx(want, abs=1e-10)
        got = contrast_thermal(1, T, beta2, t, StatisticsKind.BOSONS, ensemble="canonical")
        assert got == pytest.approx(want, abs=1e-10)
        for kind in (StatisticsKind.BOSONS, StatisticsKind.FERMIONS):
            assert contrast_thermal(1, T, beta2, t, kind) == pytest.approx(want, abs=0.02)


def test_statistics_ordering_fig1():
    curves = fig1_series(100, 10.0, 0.05, np.linspace(0.01, 3.0, 60))
    b, f, m = curves["bosons"], curves["fermions"], curves["boltzmann"]
    assert np.all(b >= m - 1e-12)
    assert np.all(m >= f - 1e-12)
    assert b[-1] > m[-1] > f[-1]
