"""Two-component bosonic Fock basis: enumeration, indexing, truncation.

A Fock state is stored as a flat tuple of occupations of length 2*M: entries
0..M-1 hold the spin-down occupations of modes 0..M-1, entries M..2M-1 the
spin-up ones.  Truncation is by total spatial quanta Q = sum_m m*(n_down_m +
n_up_m), never by per-mode caps, so every spatial configuration that is in
the basis comes with its complete set of spin splittings.  That closure makes
collective spin rotations exact inside any basis built here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

from .errors import CapacityError, ConfigError

__all__ = [
    "BasisSpec",
    "EnumeratedBasis",
    "enumerate_basis",
    "sub_basis_around",
    "frozen_basis",
    "spatial_profile",
    "spatial_quanta",
    "apply_bilinear",
]

DOWN, UP = 0, 1

DEFAULT_MAX_STATES = 2_000_000


@dataclass(frozen=True)
class BasisSpec:
    """Shape of a truncated basis.

    profile, when set, restricts the basis to states whose spatial occupation
    pattern equals it exactly (the freeze-spatial ablation); q_max is then the
    quanta of that profile.
    """

    n_atoms: int
    n_modes: int
    q_max: int
    profile: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ConfigError("n_atoms must be >= 1")
        if self.n_modes < 1:
            raise ConfigError("n_modes must be >= 1")
        if self.q_max < 0:
            raise ConfigError("q_max must be >= 0")
        if self.profile is not None:
            if len(self.profile) != self.n_modes:
                raise ConfigError("profile length must equal n_modes")
            if sum(self.profile) != self.n_atoms:
                raise ConfigError("profile must hold n_atoms atoms")


def spatial_profile(state: tuple[int, ...]) -> tuple[int, ...]:
    """Per-mode occupation summed over spin."""
    m = len(state) // 2
    return tuple(state[i] + state[m + i] for i in range(m))


def spatial_quanta(state: tuple[int, ...]) -> int:
    """Total spatial quanta Q of a Fock state."""
    m = len(state) // 2
    return sum(i * (state[i] + state[m + i]) for i in range(m))


def _spatial_configs(n_atoms: int, n_modes: int, q_max: int):
    """Yield per-mode total occupations (k_0..k_{M-1}) with the Q cutoff."""

    def rec(mode: int, atoms_left: int, quanta_left: int, prefix: tuple[int, ...]):
        if mode == n_modes - 1:
            if atoms_left * mode <= quanta_left:
                yield prefix + (atoms_left,)
            return
        for k in range(atoms_left, -1, -1):
            cost = k * mode
            if cost > quanta_left:
                continue
            yield from rec(mode + 1, atoms_left - k, quanta_left - cost, prefix + (k,))

    if n_modes == 1:
        yield (n_atoms,)
        return
    yield from rec(0, n_atoms, q_max, ())


@lru_cache(maxsize=4096)
def _count_states(n_atoms: int, n_modes: int, q_max: int) -> int:
    """Dimension of the spec without materializing it (spin splits included)."""

    def rec(mode: int, atoms_left: int, quanta_left: int) -> int:
        if mode == n_modes - 1:
            return atoms_left + 1 if atoms_left * mode <= quanta_left else 0
        total = 0
        for k in range(atoms_left + 1):
            cost = k * mode
            if cost > quanta_left:
                break
            total += (k + 1) * rec(mode + 1, atoms_left - k, quanta_left - cost)
        return total

    if n_modes == 1:
        return n_atoms + 1
    return rec(0, n_atoms, q_max)


def _spin_splits(config: tuple[int, ...]):
    """All (down, up) splittings of a spatial configuration."""
    n_modes = len(config)
    states: list[tuple[int, ...]] = [()]
    for m in range(n_modes):
        k = config[m]
        states = [s + (down,) for s in states for down in range(k, -1, -1)]
    out = []
    for downs in states:
        ups = tuple(config[m] - downs[m] for m in range(n_modes))
        out.append(downs + ups)
    return out


class EnumeratedBasis:
    """Deterministically ordered basis with O(1) state lookup.

    States are sorted lexicographically on the flat occupation tuple.  The
    index map hashes a packed integer encoding with fixed-width bit fields
    sized from the atom number.
    """

    def __init__(self, spec: BasisSpec, states: list[tuple[int, ...]]):
        self.spec = spec
        self.states = states
        self.n_atoms = spec.n_atoms
        self.n_modes = spec.n_modes
        self._bits = max(spec.n_atoms.bit_length(), 1)
        self._index = {self.pack(s): i for i, s in enumerate(states)}

    def pack(self, state: tuple[int, ...]) -> int:
        code = 0
        for occ in reversed(state):
            code = (code << self._bits) | occ
        return code

    def unpack(self, code: int) -> tuple[int, ...]:
        mask = (1 << self._bits) - 1
        out = []
        for _ in range(2 * self.n_modes):
            out.append(code & mask)
            code >>= self._bits
        return tuple(out)

    def __len__(self) -> int:
        return len(self.states)

    @property
    def dim(self) -> int:
        return len(self.states)

    def index(self, state: tuple[int, ...]) -> int:
        """Position of a state; raises KeyError if outside the basis."""
        return self._index[self.pack(state)]

    def lookup(self, state: tuple[int, ...]) -> int | None:
        return self._index.get(self.pack(state))

    def contains(self, state: tuple[int, ...]) -> bool:
        return self.pack(state) in self._index

    def down_sector_indices(self) -> list[int]:
        """Indices of states with every atom in spin-down."""
        m = self.n_modes
        return [i for i, s in enumerate(self.states) if sum(s[m:]) == 0]

    def quanta(self) -> list[int]:
        return [spatial_quanta(s) for s in self.states]


def enumerate_basis(spec: BasisSpec, max_states: int = DEFAULT_MAX_STATES) -> EnumeratedBasis:
    """Build the full truncated basis for a spec.

    Raises CapacityError before materializing anything if the dimension would
    exceed max_states; truncation is never silent.
    """
    if spec.profile is not None:
        states = sorted(_spin_splits(spec.profile))
        if len(states) > max_states:
            raise CapacityError(
                f"frozen basis has {len(states)} states > budget {max_states}"
            )
        return EnumeratedBasis(spec, states)
    n = _count_states(spec.n_atoms, spec.n_modes, spec.q_max)
    if n > max_states:
        raise CapacityError(
            f"basis spec {spec} has {n} states > budget {max_states}"
        )
    states: list[tuple[int, ...]] = []
    for config in _spatial_configs(spec.n_atoms, spec.n_modes, spec.q_max):
        states.extend(_spin_splits(config))
    states.sort()
    return EnumeratedBasis(spec, states)


def sub_basis_around(
    reference: tuple[int, ...],
    delta_q: int,
    n_modes: int | None = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> EnumeratedBasis:
    """Basis of all states with Q <= Q(reference) + delta_q.

    This is the per-sample working space: it always contains every state
    reachable from the reference by pure spin rotations, plus delta_q quanta
    of spatial headroom.  n_modes defaults to the largest value a state can
    use under the quanta cutoff (q_max + 1), so no extra truncation happens
    unless the caller asks for it.
    """
    if delta_q < 0:
        raise ConfigError("delta_q must be >= 0")
    n_atoms = sum(reference)
    q_ref = spatial_quanta(reference)
    q_max = q_ref + delta_q
    ref_modes = len(reference) // 2
    if n_modes is None:
        n_modes = q_max + 1
    top = max((m for m in range(ref_modes) if reference[m] + reference[ref_modes + m]), default=0)
    if n_modes < top + 1:
        raise ConfigError("n_modes too small to hold the reference state")
    spec = BasisSpec(n_atoms=n_atoms, n_modes=n_modes, q_max=q_max)
    return enumerate_basis(spec, max_states)


def frozen_basis(reference: tuple[int, ...], max_states: int = DEFAULT_MAX_STATES) -> EnumeratedBasis:
    """Freeze-spatial basis: the spin manifold over the reference profile.

    Contains exactly the states whose spatial configuration matches the
    reference; interactions then act only as energy shifts and spin exchange,
    never as spatial redistribution.
    """
    profile = spatial_profile(reference)
    spec = BasisSpec(
        n_atoms=sum(profile),
        n_modes=len(profile),
        q_max=spatial_quanta(reference),
        profile=profile,
    )
    return enumerate_basis(spec, max_states)


def apply_bilinear(
    state: tuple[int, ...],
    create: tuple[int, int],
    annihilate: tuple[int, int],
    n_modes: int,
) -> tuple[tuple[int, ...] | None, float]:
    """Apply a^dag_{create} a_{annihilate} to a Fock state.

    Returns (new_state, amplitude); annihilating an empty mode yields
    (None, 0.0).  The resulting state may fall outside any particular basis;
    the caller decides whether that is leakage.
    """
    src = annihilate[1] * n_modes + annihilate[0]
    dst = create[1] * n_modes + create[0]
    n_src = state[src]
    if n_src == 0:
        return None, 0.0
    occ = list(state)
    occ[src] = n_src - 1
    amp = math.sqrt(n_src) * math.sqrt(occ[dst] + 1)
    occ[dst] += 1
    return tuple(occ), amp
