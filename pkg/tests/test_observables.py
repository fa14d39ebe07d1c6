import math

import numpy as np
import pytest
import scipy.linalg as sla

from conftest import random_state
from oracles import dicke_operators, dicke_plus_state, dicke_xi2
from spingas.errors import ConfigError, UndefinedDirectionError
from spingas.fock import BasisSpec, enumerate_basis, frozen_basis
from spingas.observables import (
    SpinMoments,
    average_moments,
    average_populations,
    coherence,
    coherence_normalized,
    crossing_time,
    measure_spin_moments,
    regime_diagnostics,
    sector_populations_from_vector,
    sector_populations_projected,
    squeezing,
)
from spingas.operators import (
    PhysicsParams,
    build_collective_spin,
    build_spin_sector_projector,
    build_total_spin_squared,
    sector_js,
)
from spingas.spbasis import contact_integrals


def coherent_state(n_atoms, azimuth=0.0):
    """Equatorial coherent state on the single-mode spin manifold."""
    basis = frozen_basis(tuple([n_atoms] + [0]))
    spin = build_collective_spin(basis)
    down = np.zeros(len(basis), dtype=complex)
    down[basis.index((n_atoms, 0))] = 1.0
    rot_y = sla.expm(1j * (math.pi / 2) * spin.sy.matrix.toarray())
    vec = rot_y @ down
    if azimuth:
        rot_z = sla.expm(-1j * azimuth * spin.sz.matrix.toarray())
        vec = rot_z @ vec
    return basis, spin, vec


def test_coherence_examples():
    n = 6
    basis, spin, plus = coherent_state(n)
    m = measure_spin_moments(plus, spin)
    assert coherence(m) == pytest.approx(n / 2, abs=1e-10)
    assert coherence_normalized(m, n) == pytest.approx(1.0, abs=1e-10)
    down = np.zeros(len(basis), dtype=complex)
    down[basis.index((n, 0))] = 1.0
    m0 = measure_spin_moments(down, spin)
    assert coherence(m0) == pytest.approx(0.0, abs=1e-12)


def test_squeezing_coherent_is_one():
    for azimuth in (0.0, 0.7, 2.4):
        n = 5
        _, spin, vec = coherent_state(n, azimuth)
        m = measure_spin_moments(vec, spin)
        assert squeezing(m, n) == pytest.approx(1.0, abs=1e-9)


def test_squeezing_product_states_not_below_shot_noise():
    # equatorial product (coherent) states sit at the standard quantum limit
    for n in (2, 4, 7):
        for azimuth in (0.0, 0.3, 1.1, 2.9):
            _, spin, vec = coherent_state(n, azimuth)
            m = measure_spin_moments(vec, spin)
            assert squeezing(m, n) >= 1.0 - 1e-9


def test_squeezing_undefined_direction():
    n = 4
    basis, spin, _ = coherent_state(n)
    vec = np.zeros(len(basis), dtype=complex)
    vec[basis.index((2, 2))] = 1.0  # S_z eigenstate with eigenvalue 0
    m = measure_spin_moments(vec, spin)
    with pytest.raises(UndefinedDirectionError):
        squeezing(m, n)


def test_squeezing_matches_dicke_oracle(rng):
    # arbitrary symmetric states: frozen single-mode manifold vs (N+1)-dim oracle
    n = 8
    basis = frozen_basis((n, 0))
    spin = build_collective_spin(basis)
    sx, sy, sz = dicke_operators(n)
    # map: frozen basis state (n-k down, k up) <-> Dicke |j, m = k - n/2>
    for _ in range(5):
        c = rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1)
        c /= np.linalg.norm(c)
        vec = np.zeros(len(basis), dtype=complex)
        for k in range(n + 1):
            vec[basis.index((n - k, k))] = c[k]
        m = measure_spin_moments(vec, spin)
        # oracle ladder is ordered m = j..-j i.e. k = n..0
        psi = c[::-1].copy()
        try:
            want = dicke_xi2(psi, n)
        except ZeroDivisionError:
            continue
        if np.linalg.norm(m.first) < 1e-6:
            continue
        assert squeezing(m, n) == pytest.approx(want, rel=1e-9)


def test_sector_population_examples(rng):
    n = 5
    _, spin, plus = coherent_state(n)
    pops = sector_populations_from_vector(plus, spin, n)
    assert pops.top == pytest.approx(1.0, abs=1e-9)
    assert pops.total() == pytest.approx(1.0, abs=1e-9)
    # N=2 singlet in two modes
    basis = enumerate_basis(BasisSpec(2, 2, 1))
    spin2 = build_collective_spin(basis)
    vec = np.zeros(len(basis), dtype=complex)
    vec[basis.index((1, 0, 0, 1))] = 1 / math.sqrt(2)
    vec[basis.index((0, 1, 1, 0))] = -1 / math.sqrt(2)
    pops = sector_populations_from_vector(vec, spin2, 2)
    assert pops.values[-1] == pytest.approx(1.0, abs=1e-9)  # j = 0 sector


def test_sector_populations_match_projectors(rng):
    basis = enumerate_basis(BasisSpec(3, 2, 3))
    spin = build_collective_spin(basis)
    projectors = [build_spin_sector_projector(basis, j, spin) for j in sector_js(3)]
    for _ in range(4):
        v = random_state(rng, len(basis))
        fast = sector_populations_from_vector(v, spin, 3)
        slow = sector_populations_projected(v, projectors)
        assert np.abs(fast.values - slow.values).max() < 1e-9
        assert fast.total() == pytest.approx(1.0, abs=1e-9)


def test_sector_populations_match_eigendecomposition(rng):
    basis = enumerate_basis(BasisSpec(3, 2, 2))
    spin = build_collective_spin(basis)
    s2 = build_total_spin_squared(spin).matrix.toarray()
    evals, evecs = np.linalg.eigh(s2)
    v = random_state(rng, len(basis))
    amps = np.abs(evecs.conj().T @ v) ** 2
    pops = sector_populations_from_vector(v, spin, 3)
    for j, got in zip(pops.js, pops.values):
        lam = j * (j + 1)
        want = amps[np.abs(evals - lam) < 1e-6].sum()
        assert got == pytest.approx(want, abs=1e-9)


def test_moment_averaging():
    a = SpinMoments(first=np.array([1.0, 0, 0]), second=np.eye(3))
    b = SpinMoments(first=np.array([0.0, 1, 0]), second=2 * np.eye(3))
    avg = average_moments([(1.0, a), (3.0, b)])
    assert np.allclose(avg.first, [0.25, 0.75, 0.0])
    assert np.allclose(avg.second, 1.75 * np.eye(3))
    with pytest.raises(ConfigError):
        average_moments([(0.0, a)])


def test_crossing_time_examples():
    times = np.array([0.0, 1.0])
    assert crossing_time(times, [0.8, 1.2], 1.0) == pytest.approx(0.5)
    assert crossing_time(np.linspace(0, 5, 6), [0.5] * 6, 1.0) is None
    with pytest.raises(ConfigError):
        crossing_time([], [], 1.0)
    with pytest.raises(ConfigError):
        crossing_time([0.0, 0.0], [1, 2], 0.5)
    # closed-form exponential: xi2(t) = 0.44 exp(t / tau)
    tau = 7.0
    ts = np.linspace(0, 30, 301)
    ys = 0.44 * np.exp(ts / tau)
    want = tau * math.log(1 / 0.44)
    got = crossing_time(ts, ys, 1.0)
    assert got == pytest.approx(want, abs=0.01)
    # nan samples are skipped
    ys2 = ys.copy()
    ys2[:5] = math.nan
    assert crossing_time(ts, ys2, 1.0) == pytest.approx(got, abs=0.2)


def test_crossing_time_below_direction():
    ts = [0.0, 1.0, 2.0]
    assert crossing_time(ts, [1.0, 0.6, 0.2], 0.5, "below") == pytest.approx(1.25)


def test_regime_diagnostics_zero_coupling():
    params = PhysicsParams(n_atoms=3, temperature=3.0, g=0.0, c=0.0)
    occ = np.array([2.0, 1.0])
    d = regime_diagnostics(params, occ, contact_integrals(4))
    assert d.delta_col == 0.0 and d.e_lat == 0.0
    assert d.v_thermal == pytest.approx(math.sqrt(3.0))


def test_regime_diagnostics_ground_density():
    # all N atoms in mode 0: nbar = N / sqrt(2 pi)
    n = 4
    params = PhysicsParams(n_atoms=n, temperature=1.0, g=0.5, c=0.0)
    occ = np.zeros(3)
    occ[0] = n
    d = regime_diagnostics(params, occ, contact_integrals(4))
    assert d.nbar == pytest.approx(n / math.sqrt(2 * math.pi), rel=1e-12)
    assert d.delta_col == pytest.approx(0.5 * n / math.sqrt(2 * math.pi), rel=1e-12)


def test_population_averaging():
    from spingas.observables import SectorPopulations

    a = SectorPopulations(js=[1.0, 0.0], values=np.array([1.0, 0.0]))
    b = SectorPopulations(js=[1.0, 0.0], values=np.array([0.0, 1.0]))
    avg = average_populations([(1.0, a), (1.0, b)])
    assert np.allclose(avg.values, [0.5, 0.5])
