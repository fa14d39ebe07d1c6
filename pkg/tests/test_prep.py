import math

import numpy as np
import pytest

from oracles import TensorOracle
from spingas.errors import ConfigError
from spingas.fock import BasisSpec, enumerate_basis, frozen_basis, spatial_profile
from spingas.observables import measure_spin_moments, sector_populations_from_vector
from spingas.operators import PhysicsParams, build_collective_spin, build_hamiltonian
from spingas.prep import (
    CanonicalBoseGas,
    PrepConfig,
    WeightedSample,
    apply_pulse,
    apply_tact,
    config_to_fock,
    enumerate_thermal_diagonal,
    exact_thermal_samples,
    sample_thermal_diagonal,
    sample_thermal_qmc,
)
from spingas.propagate import StateVector


def test_prep_config_validation():
    with pytest.raises(ConfigError):
        PrepConfig(n_samples=0)
    with pytest.raises(ConfigError):
        PrepConfig(mode="bogus")


def test_zero_temperature_ground_configuration():
    params = PhysicsParams(n_atoms=4, temperature=0.0)
    rng = np.random.default_rng(0)
    for _ in range(5):
        cfg = sample_thermal_diagonal(params, rng)
        assert cfg == {0: 4}


def test_single_atom_geometric_occupation():
    # one atom: level k appears with probability (1 - xi) xi^k
    T = 2.0
    xi = math.exp(-1.0 / T)
    rng = np.random.default_rng(42)
    gas = CanonicalBoseGas(1, T)
    n = 40000
    counts = np.zeros(30)
    for _ in range(n):
        (level, k), = gas.sample_configuration(rng).items()
        assert k == 1
        if level < 30:
            counts[level] += 1
    probs = counts / n
    want = (1 - xi) * xi ** np.arange(30)
    sigma = np.sqrt(want * (1 - want) / n)
    assert np.all(np.abs(probs - want) < 3.5 * sigma + 1e-12)


def test_canonical_sampler_matches_recursion_occupations():
    # empirical level occupations against the exact canonical <n_k> within 3 sigma
    n_atoms, T = 3, 3.0
    gas = CanonicalBoseGas(n_atoms, T)
    rng = np.random.default_rng(7)
    n = 100_000
    kmax = 48
    totals = np.zeros(kmax)
    totals_sq = np.zeros(kmax)
    for _ in range(n):
        occ = np.zeros(kmax)
        for level, k in gas.sample_configuration(rng).items():
            if level < kmax:
                occ[level] += k
        totals += occ
        totals_sq += occ**2
    mean = totals / n
    std_err = np.sqrt(np.maximum(totals_sq / n - mean**2, 0.0) / n)
    want = gas.mean_occupations(kmax)
    dev = np.abs(mean - want) / np.maximum(std_err, 1e-12)
    assert dev[want > 1e-3].max() < 3.0 or np.sum(dev[want > 1e-3] > 3.0) <= 2


def test_exhaustive_enumeration_weights_and_coverage():
    params = PhysicsParams(n_atoms=3, temperature=3.0)
    tail = 1e-4
    gas = CanonicalBoseGas(3, 3.0)
    entries = list(enumerate_thermal_diagonal(params, tail))
    total = sum(w for _, w in entries)
    assert total >= 1 - tail
    assert total <= 1.0 + 1e-12
    for levels, w in entries[:50]:
        assert w == pytest.approx(gas.config_probability(levels), rel=1e-12)
    # configurations are unique
    keys = {tuple(sorted(l.items())) for l, _ in entries}
    assert len(keys) == len(entries)


def test_sampling_reproducible_under_seed():
    params = PhysicsParams(n_atoms=4, temperature=2.5)
    a = [sample_thermal_diagonal(params, np.random.default_rng(123)) for _ in range(3)]
    b = [sample_thermal_diagonal(params, np.random.default_rng(123)) for _ in range(3)]
    assert a == b


def qmc_setup(params, q_max=4):
    basis = enumerate_basis(BasisSpec(params.n_atoms, 3, q_max))
    H = build_hamiltonian(params, basis)
    return basis, H


def test_qmc_weight_on_eigenbasis():
    # diagonal H: the sampled weight is exactly the Boltzmann factor
    params = PhysicsParams(n_atoms=2, temperature=2.0)
    basis, H = qmc_setup(params)
    rng = np.random.default_rng(5)
    for _ in range(6):
        sample = sample_thermal_qmc(params, basis, H, rng)
        seed_state = sample.provenance["seed_state"]
        energy = sum((m % 3 + 0.5) * occ for m, occ in enumerate(seed_state))
        assert sample.weight == pytest.approx(math.exp(-energy / params.temperature), rel=1e-8)


def test_qmc_infinite_temperature_uniform():
    params = PhysicsParams(n_atoms=2, temperature=1e8, g=0.3, c=0.01)
    basis, H = qmc_setup(params)
    rng = np.random.default_rng(9)
    sample = sample_thermal_qmc(params, basis, H, rng)
    assert sample.weight == pytest.approx(1.0, abs=1e-4)


def test_qmc_thermal_energy_matches_dense_oracle():
    # interacting thermal energy via qmc vs exact canonical from the dense oracle
    params = PhysicsParams(n_atoms=2, temperature=2.0, beta2=0.02, g=0.5, c=0.05)
    basis = enumerate_basis(BasisSpec(2, 3, 4))
    H = build_hamiltonian(params, basis)
    oracle = TensorOracle(basis)
    down = basis.down_sector_indices()
    dense = H.matrix.toarray()
    sub = dense[np.ix_(down, down)]
    evals, evecs = np.linalg.eigh(sub)
    weights = np.exp(-evals / params.temperature)
    e_exact = float(weights @ evals / weights.sum())

    rng = np.random.default_rng(11)
    num = den = 0.0
    values = []
    for _ in range(400):
        s = sample_thermal_qmc(params, basis, H, rng)
        e = H.expectation(s.state.amplitudes)
        values.append((s.weight, e))
        num += s.weight * e
        den += s.weight
    e_qmc = num / den
    w = np.array([v[0] for v in values])
    e = np.array([v[1] for v in values])
    mean = e_qmc
    var = float((w * (e - mean) ** 2).sum() / w.sum())
    n_eff = float(w.sum() ** 2 / (w**2).sum())
    sigma = math.sqrt(var / n_eff)
    assert abs(e_qmc - e_exact) < 3 * sigma + 1e-9


def test_diagonal_and_qmc_agree_at_g_zero():
    # for g = 0 the bare basis diagonalizes H, so qmc weights reduce to
    # Boltzmann factors and both estimators see the same ensemble
    params = PhysicsParams(n_atoms=2, temperature=3.0)
    basis = enumerate_basis(BasisSpec(2, 3, 4))
    H = build_hamiltonian(params, basis)
    rng = np.random.default_rng(3)
    num = den = 0.0
    for _ in range(600):
        s = sample_thermal_qmc(params, basis, H, rng)
        num += s.weight * H.expectation(s.state.amplitudes)
        den += s.weight
    e_qmc = num / den
    gas = CanonicalBoseGas(2, 3.0)
    entries = [e for e in gas.enumerate_configurations(1e-10)]
    # restrict to configurations inside the shared basis and renormalize
    kept = [(l, w) for l, w in entries if max(l) <= 2 and sum(m * k for m, k in l.items()) <= 4]
    z = sum(w for _, w in kept)
    e_diag = sum(w * (sum((m + 0.5) * k for m, k in l.items())) for l, w in kept) / z
    # agreement cannot be closer than the ensemble truncation to the basis
    assert abs(e_qmc - e_diag) < 0.2


def test_exact_thermal_samples():
    params = PhysicsParams(n_atoms=2, temperature=2.0, g=0.4, c=0.02)
    basis = enumerate_basis(BasisSpec(2, 3, 4))
    H = build_hamiltonian(params, basis)
    samples = exact_thermal_samples(params, basis, H)
    down = basis.down_sector_indices()
    dense = H.matrix.toarray()[np.ix_(down, down)]
    evals = np.linalg.eigvalsh(dense)
    weights = np.exp(-(evals - evals[0]) / params.temperature)
    e_exact = float(weights @ evals / weights.sum())
    num = sum(s.weight * H.expectation(s.state.amplitudes) for s in samples)
    den = sum(s.weight for s in samples)
    assert num / den == pytest.approx(e_exact, abs=1e-10)


def pulse_fixture(n_atoms):
    ref = config_to_fock({0: n_atoms}, 1)
    basis = frozen_basis(ref)
    spin = build_collective_spin(basis)
    sample = WeightedSample(StateVector.from_fock(basis, ref), 1.0, {})
    return basis, spin, sample


def test_pulse_examples():
    basis, spin, sample = pulse_fixture(4)
    same = apply_pulse(sample, 0.0, spin)
    assert same.state is sample.state
    pulsed = apply_pulse(sample, math.pi / 2, spin)
    m = measure_spin_moments(pulsed.state.amplitudes, spin)
    assert m.first[0] == pytest.approx(2.0, abs=1e-10)
    assert abs(m.first[1]) < 1e-10 and abs(m.first[2]) < 1e-10
    flipped = apply_pulse(sample, math.pi, spin)
    idx = basis.index((0, 4))
    assert abs(flipped.state.amplitudes[idx]) == pytest.approx(1.0, abs=1e-10)


def test_pulse_preserves_spatial_profile():
    ref = (2, 1, 0, 0, 0, 0)
    basis = frozen_basis(ref)
    spin = build_collective_spin(basis)
    sample = WeightedSample(StateVector.from_fock(basis, ref), 1.0, {})
    pulsed = apply_pulse(sample, math.pi / 2, spin)
    for i, amp in enumerate(pulsed.state.amplitudes):
        if abs(amp) > 1e-12:
            assert spatial_profile(basis.states[i]) == (2, 1, 0)
    assert pulsed.state.norm == pytest.approx(1.0, abs=1e-12)


def test_tact_identity_and_anchor():
    basis, spin, sample = pulse_fixture(10)
    pulsed = apply_pulse(sample, math.pi / 2, spin)
    same = apply_tact(pulsed, 0.0, basis, spin)
    assert same.state is pulsed.state
    squeezed = apply_tact(pulsed, 0.05, basis, spin)
    pops = sector_populations_from_vector(squeezed.state.amplitudes, spin, 10)
    assert pops.top == pytest.approx(1.0, abs=1e-10)
    occ_before = np.abs(pulsed.state.amplitudes) ** 2
    occ_after = np.abs(squeezed.state.amplitudes) ** 2
    # spatial profile untouched: single mode here, total norm is enough
    assert occ_after.sum() == pytest.approx(occ_before.sum(), abs=1e-12)
