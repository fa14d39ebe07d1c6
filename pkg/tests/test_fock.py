import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spingas.errors import CapacityError, ConfigError
from spingas.fock import (
    BasisSpec,
    apply_bilinear,
    enumerate_basis,
    frozen_basis,
    spatial_profile,
    spatial_quanta,
    sub_basis_around,
)


def brute_force_states(n_atoms, n_modes, q_max):
    """All occupation tuples by direct product enumeration."""
    out = []
    slots = 2 * n_modes
    for occ in itertools.product(range(n_atoms + 1), repeat=slots):
        if sum(occ) != n_atoms:
            continue
        q = sum((i % n_modes) * occ[i] for i in range(slots))
        if q <= q_max:
            out.append(occ)
    return sorted(out)


def test_enumerate_examples():
    assert len(enumerate_basis(BasisSpec(1, 2, 1))) == 4
    assert len(enumerate_basis(BasisSpec(2, 2, 2))) == 10
    assert len(enumerate_basis(BasisSpec(2, 3, 1))) == 7


@pytest.mark.parametrize("n_atoms,n_modes,q_max", [(1, 2, 1), (2, 2, 2), (2, 3, 1), (3, 3, 4)])
def test_enumerate_matches_brute_force(n_atoms, n_modes, q_max):
    basis = enumerate_basis(BasisSpec(n_atoms, n_modes, q_max))
    assert basis.states == brute_force_states(n_atoms, n_modes, q_max)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 5))
def test_round_trip_indexing(n_atoms, n_modes, q_max):
    basis = enumerate_basis(BasisSpec(n_atoms, n_modes, q_max))
    for i, state in enumerate(basis.states):
        assert basis.index(state) == i
        assert basis.unpack(basis.pack(state)) == state


def test_truncation_monotonicity():
    small = enumerate_basis(BasisSpec(3, 4, 2))
    for dq in (3, 4, 6):
        larger = enumerate_basis(BasisSpec(3, 4, dq))
        assert set(small.states) <= set(larger.states)


def test_sub_basis_ground_reference():
    n = 4
    ref = (n, 0, 0, 0, 0, 0)  # 3 modes, all atoms in mode 0, spin down
    basis = sub_basis_around(ref, delta_q=0)
    assert len(basis) == n + 1
    for state in basis.states:
        assert spatial_profile(state)[0] == n


def test_sub_basis_equals_enumeration():
    # reference with Q=3, delta_q=2 equals the plain Q_max=5 enumeration
    ref = (1, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0)  # 6 modes: one atom mode 0, one mode 2, down
    assert spatial_quanta(ref) == 2
    ref = (1, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0)
    assert spatial_quanta(ref) == 3
    got = sub_basis_around(ref, delta_q=2, n_modes=6)
    want = enumerate_basis(BasisSpec(2, 6, 5))
    assert got.states == want.states


def test_sub_basis_large_delta_equals_full():
    ref = (2, 0, 0, 0, 0, 0)
    got = sub_basis_around(ref, delta_q=4, n_modes=3)
    want = enumerate_basis(BasisSpec(2, 3, 4))
    assert got.states == want.states


def test_frozen_basis_is_spin_manifold():
    ref = (2, 1, 0, 0, 0, 0)  # profile (2, 1, 0)
    basis = frozen_basis(ref)
    assert len(basis) == (2 + 1) * (1 + 1)
    for state in basis.states:
        assert spatial_profile(state) == (2, 1, 0)


def test_capacity_error():
    with pytest.raises(CapacityError):
        enumerate_basis(BasisSpec(6, 20, 40), max_states=1000)


def test_bad_specs():
    with pytest.raises(ConfigError):
        BasisSpec(0, 3, 2)
    with pytest.raises(ConfigError):
        BasisSpec(2, 3, -1)
    with pytest.raises(ConfigError):
        BasisSpec(2, 3, 2, profile=(1, 1))  # wrong length
    with pytest.raises(ConfigError):
        sub_basis_around((1, 0, 0, 1), 2, n_modes=1)


def test_apply_bilinear_examples():
    state = (2, 0)  # one mode, two atoms down
    new, amp = apply_bilinear(state, create=(0, 1), annihilate=(0, 0), n_modes=1)
    assert new == (1, 1)
    assert amp == pytest.approx(np.sqrt(2) * np.sqrt(1))
    # annihilating an empty slot: zero amplitude, no error
    new, amp = apply_bilinear((2, 0), create=(0, 0), annihilate=(0, 1), n_modes=1)
    assert new is None and amp == 0.0


def test_apply_bilinear_preserves_atom_number():
    basis = enumerate_basis(BasisSpec(3, 2, 3))
    for state in basis.states:
        for c_m, c_s, a_m, a_s in itertools.product(range(2), range(2), range(2), range(2)):
            new, amp = apply_bilinear(state, (c_m, c_s), (a_m, a_s), n_modes=2)
            if new is not None:
                assert sum(new) == 3


def test_apply_bilinear_matches_dense_oracle(rng):
    # a^dag_i a_j as a matrix must equal the tensor-oracle one-body operator
    from oracles import TensorOracle

    basis = enumerate_basis(BasisSpec(2, 2, 2))
    oracle = TensorOracle(basis)
    m = basis.n_modes
    for create in ((0, 0), (1, 0), (0, 1), (1, 1)):
        for annihilate in ((0, 0), (1, 0), (0, 1), (1, 1)):
            dense = np.zeros((len(basis), len(basis)))
            for col, state in enumerate(basis.states):
                new, amp = apply_bilinear(state, create, annihilate, m)
                if new is not None and basis.contains(new):
                    dense[basis.index(new), col] = amp
            h = np.zeros((2 * m, 2 * m))
            h[create[1] * m + create[0], annihilate[1] * m + annihilate[0]] = 1.0
            ref = oracle.one_body(h).real
            assert np.abs(dense - ref).max() < 1e-12


def test_down_sector_indices():
    basis = enumerate_basis(BasisSpec(2, 2, 2))
    down = basis.down_sector_indices()
    for i in down:
        state = basis.states[i]
        assert sum(state[2:]) == 0
    assert len(down) == 3  # (2,0), (1,1), (0,2) spatial configs of 2 atoms in 2 modes
