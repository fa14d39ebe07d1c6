"""Sparse many-body operators on an enumerated Fock basis.

Conventions, fixed once here and relied on everywhere else:

* The magnetic-field terms couple to the Pauli sign of each atom, spin-up
  = +1 and spin-down = -1, so the single-particle field energy is
  (beta1*x + beta2*x^2) * (+1 for up / -1 for down).
* The collective spin operators carry the spin-1/2 normalization,
  S_a = sum_i sigma_a_i / 2, so a fully polarized transverse state has
  coherence N/2 and a single atom contributes at most 1/2.
* The uniform field term is dropped by default (rotating frame); when
  enabled it adds beta0 * 2 S_z, i.e. beta0 * sum_i sigma_z_i.
* Interactions are contact collisions in three channels,
  (1/2) g00 (down,down) + (1/2) g11 (up,up) + g01 (up,down), with mode
  integrals U_abcd from spbasis.

Operator rows that would map outside the truncated basis are dropped and
their squared amplitude accumulated per source state as an incoherent
"leakage weight" diagnostic (cross terms between different Hamiltonian
blocks are not tracked).
"""

from __future__ import annotations

import math
from array import array
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, ConfigError
from .fock import EnumeratedBasis
from .spbasis import ContactIntegrals, contact_integrals, mode_energy, x2_matrix_element, x_matrix_element

__all__ = [
    "PhysicsParams",
    "SparseOperator",
    "SpinOperators",
    "OperatorBlocks",
    "build_blocks",
    "build_hamiltonian",
    "MatrixFreeHamiltonian",
    "build_collective_spin",
    "build_total_spin_squared",
    "build_spin_sector_projector",
    "ProjectorOperator",
    "build_tact_generator",
    "sector_js",
]

HERMITICITY_TOL = 1e-12
MAX_OPERATOR_ENTRIES = 60_000_000


@dataclass(frozen=True)
class PhysicsParams:
    """All physical constants in oscillator units.

    Couplings are given either through the mean/difference parametrization
    (g, c) -> g00 = g - c, g01 = g, g11 = g + c, or explicitly; supplying
    both is an error.
    """

    n_atoms: int
    temperature: float
    beta0: float = 0.0
    beta1: float = 0.0
    beta2: float = 0.0
    g: float | None = None
    c: float | None = None
    g00: float | None = None
    g01: float | None = None
    g11: float | None = None

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ConfigError("n_atoms must be >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if 1.0 + 2.0 * self.beta2 <= 0:
            raise ConfigError("trap unstable: need 1 + 2*beta2 > 0")
        gc = self.g is not None or self.c is not None
        explicit = any(v is not None for v in (self.g00, self.g01, self.g11))
        if gc and explicit:
            raise ConfigError("give either (g, c) or explicit g00/g01/g11, not both")
        if gc and (self.g is None or self.c is None):
            raise ConfigError("both g and c are required in the (g, c) parametrization")
        if explicit and None in (self.g00, self.g01, self.g11):
            raise ConfigError("all of g00, g01, g11 are required when explicit")

    def couplings(self) -> tuple[float, float, float]:
        """(g00, g01, g11) resolved from either parametrization."""
        if self.g is not None:
            return (self.g - self.c, self.g, self.g + self.c)
        if self.g00 is not None:
            return (self.g00, self.g01, self.g11)
        return (0.0, 0.0, 0.0)


class SparseOperator:
    """A CSR matrix bound to its basis, with an optional leakage diagnostic.

    Hermitian operators are verified on construction to HERMITICITY_TOL;
    construction fails loudly rather than propagating a silent asymmetry.
    """

    def __init__(
        self,
        basis: EnumeratedBasis,
        matrix: sp.spmatrix,
        name: str = "",
        hermitian: bool = True,
        leak: np.ndarray | None = None,
    ):
        self.basis = basis
        self.matrix = matrix.tocsr()
        self.name = name
        self.hermitian = hermitian
        self.leak = leak
        self.verified_hermiticity: float | None = None
        if hermitian:
            resid = self.hermiticity_residual()
            if resid > HERMITICITY_TOL * max(1.0, self._scale()):
                raise ConfigError(f"operator {name!r} not Hermitian: residual {resid:.3e}")
            self.verified_hermiticity = resid

    def _scale(self) -> float:
        data = self.matrix.data
        return float(np.abs(data).max()) if data.size else 1.0

    def hermiticity_residual(self) -> float:
        diff = self.matrix - self.matrix.getH()
        return float(np.abs(diff.data).max()) if diff.data.size else 0.0

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        mat = self.matrix
        if mat.dtype == np.float64 and np.iscomplexobj(vec):
            # two real matvecs beat one complex-upcast matvec by ~2x
            return (mat @ np.ascontiguousarray(vec.real)) + 1j * (
                mat @ np.ascontiguousarray(vec.imag)
            )
        return mat @ vec

    def expectation(self, vec: np.ndarray) -> float:
        """<v|A|v> / <v|v> for a Hermitian operator."""
        num = np.vdot(vec, self.matvec(vec))
        den = np.vdot(vec, vec).real
        return float(num.real / den)

    def leakage(self, vec: np.ndarray) -> float:
        """Incoherent weight of the operator's image outside the basis."""
        if self.leak is None:
            return 0.0
        w = np.abs(vec) ** 2
        return float(self.leak @ w / w.sum())

    def __add__(self, other):
        return SparseOperator(
            self.basis,
            self.matrix + other.matrix,
            name=f"{self.name}+{other.name}",
            hermitian=self.hermitian and other.hermitian,
            leak=_combine_leaks([(1.0, self.leak), (1.0, other.leak)], self.dim),
        )

    def scaled(self, coef: float) -> "SparseOperator":
        leak = None if self.leak is None else coef * coef * self.leak
        return SparseOperator(self.basis, coef * self.matrix, name=self.name,
                              hermitian=self.hermitian, leak=leak)


def _combine_leaks(parts, dim):
    out = None
    for coef, leak in parts:
        if leak is None:
            continue
        if out is None:
            out = np.zeros(dim)
        out += coef * coef * leak
    return out


class _Assembler:
    """COO triplet accumulator with an entry budget."""

    def __init__(self, dim: int, max_entries: int = MAX_OPERATOR_ENTRIES):
        self.dim = dim
        self.rows = array("i")
        self.cols = array("i")
        self.vals = array("d")
        self.max_entries = max_entries

    def add(self, row: int, col: int, val: float) -> None:
        self.rows.append(row)
        self.cols.append(col)
        self.vals.append(val)
        if len(self.vals) > self.max_entries:
            raise CapacityError(
                f"operator exceeds entry budget ({self.max_entries})"
            )

    def to_csr(self) -> sp.csr_matrix:
        mat = sp.coo_matrix(
            (np.frombuffer(self.vals, dtype=float),
             (np.frombuffer(self.rows, dtype=np.int32),
              np.frombuffer(self.cols, dtype=np.int32))),
            shape=(self.dim, self.dim),
        )
        out = mat.tocsr()
        out.sum_duplicates()
        return out


def _target_pairs(n_modes: int, ordered: bool):
    """Mode pairs grouped by parity and sorted by index sum.

    Returns {parity: (sums, pairs)} where pairs are (a, b) with a <= b for the
    unordered (same-spin) case.  bisect on sums gives the prefix allowed by a
    quanta budget.
    """
    out = {}
    for parity in (0, 1):
        pairs = []
        for a in range(n_modes):
            b0 = a if not ordered else 0
            for b in range(b0, n_modes):
                if (a + b) % 2 == parity:
                    pairs.append((a + b, a, b))
        pairs.sort()
        sums = [p[0] for p in pairs]
        out[parity] = (sums, [(a, b) for _, a, b in pairs])
    return out


class _BasisContext:
    """Precomputed per-basis tables used by every block assembler."""

    def __init__(self, basis: EnumeratedBasis):
        self.basis = basis
        m = basis.n_modes
        self.n_modes = m
        self.quanta = basis.quanta()
        self.occupied_down = [
            [i for i in range(m) if s[i]] for s in basis.states
        ]
        self.occupied_up = [
            [i for i in range(m) if s[m + i]] for s in basis.states
        ]
        self.pairs_unordered = _target_pairs(m, ordered=False)
        self.pairs_ordered = _target_pairs(m, ordered=True)


def _trap_diagonal(basis: EnumeratedBasis) -> np.ndarray:
    m = basis.n_modes
    diag = np.empty(len(basis))
    for i, s in enumerate(basis.states):
        diag[i] = sum(mode_energy(k) * (s[k] + s[m + k]) for k in range(m))
    return diag


def _sigma_z_diagonal(basis: EnumeratedBasis) -> np.ndarray:
    """Diagonal of sum_i sigma_z_i = n_up - n_down."""
    m = basis.n_modes
    diag = np.empty(len(basis))
    for i, s in enumerate(basis.states):
        diag[i] = sum(s[m + k] for k in range(m)) - sum(s[k] for k in range(m))
    return diag


def _field_column(ctx: _BasisContext, col: int, power: int):
    """Terms of sum_i x_i^power * sigma_z_i acting on one basis state."""
    basis, m = ctx.basis, ctx.n_modes
    state = basis.states[col]
    q = ctx.quanta[col]
    q_max = basis.spec.q_max
    elem = x_matrix_element if power == 1 else x2_matrix_element
    steps = (-1, 1) if power == 1 else (-2, 0, 2)
    terms = []
    leak = 0.0
    for spin, occupied in ((0, ctx.occupied_down[col]), (1, ctx.occupied_up[col])):
        sign = 1.0 if spin else -1.0
        base = spin * m
        for mode in occupied:
            occ_src = state[base + mode]
            for step in steps:
                target = mode + step
                if target < 0:
                    continue
                coef = elem(target, mode)
                if coef == 0.0:
                    continue
                if target == mode:
                    amp = float(occ_src)
                    val = sign * coef * amp
                    terms.append((col, val))
                    continue
                if target >= m:
                    # mode above the cutoff is unoccupied by construction
                    val = sign * coef * math.sqrt(occ_src)
                    leak += val * val
                    continue
                amp = math.sqrt(occ_src) * math.sqrt(state[base + target] + 1)
                val = sign * coef * amp
                if q + step > q_max:
                    leak += val * val
                    continue
                occ = list(state)
                occ[base + mode] -= 1
                occ[base + target] += 1
                idx = basis.lookup(tuple(occ))
                if idx is None:
                    leak += val * val
                else:
                    terms.append((idx, val))
    return terms, leak


def _same_spin_column(ctx: _BasisContext, col: int, spin: int, contact: ContactIntegrals):
    """Terms of (1/2) sum U_abcd a+_a a+_b a_c a_d within one spin component."""
    basis, m = ctx.basis, ctx.n_modes
    state = basis.states[col]
    q = ctx.quanta[col]
    q_max = basis.spec.q_max
    base = spin * m
    occupied = ctx.occupied_up[col] if spin else ctx.occupied_down[col]
    terms = []
    leak = 0.0
    for ic, cmode in enumerate(occupied):
        for dmode in occupied[ic:]:
            if cmode == dmode and state[base + cmode] < 2:
                continue
            mult_cd = 1.0 if cmode == dmode else 2.0
            amp_ann = math.sqrt(state[base + dmode]) * math.sqrt(
                state[base + cmode] - (1 if cmode == dmode else 0)
            )
            budget = q_max - q + cmode + dmode
            parity = (cmode + dmode) % 2
            sums, pairs = ctx.pairs_unordered[parity]
            stop = bisect_right(sums, budget)
            for amode, bmode in pairs[:stop]:
                u = contact.value(amode, bmode, cmode, dmode)
                if u == 0.0:
                    continue
                mult = mult_cd * (1.0 if amode == bmode else 2.0)
                occ = list(state)
                occ[base + dmode] -= 1
                occ[base + cmode] -= 1
                amp = amp_ann * math.sqrt(occ[base + bmode] + 1)
                occ[base + bmode] += 1
                amp *= math.sqrt(occ[base + amode] + 1)
                occ[base + amode] += 1
                val = 0.5 * mult * u * amp
                idx = basis.lookup(tuple(occ))
                if idx is None:
                    leak += val * val
                else:
                    terms.append((idx, val))
    return terms, leak


def _cross_spin_column(ctx: _BasisContext, col: int, contact: ContactIntegrals):
    """Terms of sum U_abcd a+_{a,up} a+_{b,down} a_{c,down} a_{d,up}."""
    basis, m = ctx.basis, ctx.n_modes
    state = basis.states[col]
    q = ctx.quanta[col]
    q_max = basis.spec.q_max
    terms = []
    leak = 0.0
    for cmode in ctx.occupied_down[col]:
        for dmode in ctx.occupied_up[col]:
            amp_ann = math.sqrt(state[cmode]) * math.sqrt(state[m + dmode])
            budget = q_max - q + cmode + dmode
            parity = (cmode + dmode) % 2
            sums, pairs = ctx.pairs_ordered[parity]
            stop = bisect_right(sums, budget)
            for amode, bmode in pairs[:stop]:
                u = contact.value(amode, bmode, cmode, dmode)
                if u == 0.0:
                    continue
                occ = list(state)
                occ[cmode] -= 1
                occ[m + dmode] -= 1
                amp = amp_ann * math.sqrt(occ[bmode] + 1)
                occ[bmode] += 1
                amp *= math.sqrt(occ[m + amode] + 1)
                occ[m + amode] += 1
                val = u * amp
                idx = basis.lookup(tuple(occ))
                if idx is None:
                    leak += val * val
                else:
                    terms.append((idx, val))
    return terms, leak


def _assemble_block(ctx: _BasisContext, column_fn, name: str) -> SparseOperator:
    dim = len(ctx.basis)
    asm = _Assembler(dim)
    leak = np.zeros(dim)
    for col in range(dim):
        terms, lk = column_fn(ctx, col)
        leak[col] = lk
        for row, val in terms:
            asm.add(row, col, val)
    return SparseOperator(ctx.basis, asm.to_csr(), name=name, leak=leak)


class _VectorContext:
    """Array form of a basis for vectorized assembly.

    States live in a (dim, 2M) uint8 matrix whose rows are in enumeration
    order; because that order is lexicographic and occupations fit one byte,
    row lookup reduces to searchsorted on fixed-width byte strings.
    """

    def __init__(self, basis: EnumeratedBasis):
        self.basis = basis
        self.n_modes = basis.n_modes
        self.q_max = basis.spec.q_max
        self.states = np.array(basis.states, dtype=np.uint8)
        self.quanta = np.asarray(basis.quanta(), dtype=np.int64)
        width = self.states.shape[1]
        self._width = width
        self.keys = np.ascontiguousarray(self.states).view(f"S{width}").ravel()

    def find(self, rows: np.ndarray) -> np.ndarray:
        """Indices of rows in the basis, -1 where absent."""
        rk = np.ascontiguousarray(rows).view(f"S{self._width}").ravel()
        pos = np.searchsorted(self.keys, rk)
        pos = np.minimum(pos, len(self.keys) - 1)
        out = np.where(self.keys[pos] == rk, pos, -1)
        return out.astype(np.int64)


class _Coo:
    """Chunked COO accumulator for the vectorized builders."""

    def __init__(self, dim: int):
        self.dim = dim
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.leak = np.zeros(dim)
        self._count = 0

    def add(self, rows, cols, vals):
        self.rows.append(np.asarray(rows, dtype=np.int64))
        self.cols.append(np.asarray(cols, dtype=np.int64))
        self.vals.append(np.asarray(vals, dtype=float))
        self._count += len(vals)
        if self._count > MAX_OPERATOR_ENTRIES:
            raise CapacityError(f"operator exceeds entry budget ({MAX_OPERATOR_ENTRIES})")

    def add_leak(self, cols, vals):
        if len(cols):
            np.add.at(self.leak, cols, np.asarray(vals) ** 2)

    def emit(self, rows, cols, vals):
        """Split found/leaked contributions on the row index sign."""
        rows = np.asarray(rows)
        ok = rows >= 0
        if ok.any():
            self.add(rows[ok], np.asarray(cols)[ok], np.asarray(vals)[ok])
        if not ok.all():
            self.add_leak(np.asarray(cols)[~ok], np.asarray(vals)[~ok])

    def to_operator(self, basis, name, hermitian: bool = True) -> SparseOperator:
        if self.rows:
            rows = np.concatenate(self.rows)
            cols = np.concatenate(self.cols)
            vals = np.concatenate(self.vals)
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
            vals = np.zeros(0)
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(self.dim, self.dim)).tocsr()
        mat.sum_duplicates()
        return SparseOperator(basis, mat, name=name, hermitian=hermitian, leak=self.leak)


def _vec_field(ctx: _VectorContext, power: int) -> _Coo:
    """Vectorized sum_i x_i^power sigma_z_i (all bilinear moves batched)."""
    S, Q, m = ctx.states, ctx.quanta, ctx.n_modes
    dim = S.shape[0]
    coo = _Coo(dim)
    elem = x_matrix_element if power == 1 else x2_matrix_element
    steps = (-1, 1) if power == 1 else (-2, 0, 2)
    diag = np.zeros(dim)
    for spin in (0, 1):
        sign = 1.0 if spin else -1.0
        base = spin * m
        for mode in range(m):
            occ_src = S[:, base + mode].astype(float)
            for step in steps:
                target = mode + step
                if target < 0:
                    continue
                coef = elem(target, mode)
                if coef == 0.0:
                    continue
                if step == 0:
                    diag += sign * coef * occ_src
                    continue
                src = np.nonzero(S[:, base + mode])[0]
                if not len(src):
                    continue
                if target >= m:
                    vals = sign * coef * np.sqrt(occ_src[src])
                    coo.add_leak(src, vals)
                    continue
                budget_ok = Q[src] + step <= ctx.q_max
                leak_src = src[~budget_ok]
                if len(leak_src):
                    coo.add_leak(leak_src, sign * coef * np.sqrt(occ_src[leak_src]))
                src = src[budget_ok]
                if not len(src):
                    continue
                rows = S[src].copy()
                amp = np.sqrt(rows[:, base + mode].astype(float))
                rows[:, base + mode] -= 1
                amp *= np.sqrt(rows[:, base + target] + 1.0)
                rows[:, base + target] += 1
                coo.emit(ctx.find(rows), src, sign * coef * amp)
    idx = np.nonzero(diag)[0]
    if len(idx):
        coo.add(idx, idx, diag[idx])
    return coo


def _vec_same_spin(ctx: _VectorContext, spin: int, contact: ContactIntegrals) -> _Coo:
    """Vectorized (1/2) sum U_abcd a+_a a+_b a_c a_d within one spin block."""
    S, Q, m = ctx.states, ctx.quanta, ctx.n_modes
    dim = S.shape[0]
    base = spin * m
    coo = _Coo(dim)
    pairs = _target_pairs(m, ordered=False)
    for c in range(m):
        for d in range(c, m):
            if c == d:
                mask = S[:, base + c] >= 2
            else:
                mask = (S[:, base + c] >= 1) & (S[:, base + d] >= 1)
            src = np.nonzero(mask)[0]
            if not len(src):
                continue
            mult_cd = 1.0 if c == d else 2.0
            occ_c = S[src, base + c].astype(float)
            occ_d = S[src, base + d].astype(float)
            amp_ann = np.sqrt(occ_d * (occ_c - (1.0 if c == d else 0.0)))
            budget = ctx.q_max - Q[src] + c + d
            base_rows = S[src].copy()
            base_rows[:, base + d] -= 1
            base_rows[:, base + c] -= 1
            smax = int(budget.max())
            sums, ab = pairs[(c + d) % 2]
            stop = bisect_right(sums, smax)
            for a, b in ab[:stop]:
                u = contact.value(a, b, c, d)
                if u == 0.0:
                    continue
                sub = budget >= a + b
                if not sub.any():
                    continue
                k = src[sub]
                rows = base_rows[sub].copy()
                amp = amp_ann[sub] * np.sqrt(rows[:, base + b] + 1.0)
                rows[:, base + b] += 1
                amp *= np.sqrt(rows[:, base + a] + 1.0)
                rows[:, base + a] += 1
                mult = mult_cd * (1.0 if a == b else 2.0)
                coo.emit(ctx.find(rows), k, 0.5 * mult * u * amp)
    return coo


def _vec_cross_spin(ctx: _VectorContext, contact: ContactIntegrals) -> _Coo:
    """Vectorized sum U_abcd a+_{a,up} a+_{b,down} a_{c,down} a_{d,up}."""
    S, Q, m = ctx.states, ctx.quanta, ctx.n_modes
    dim = S.shape[0]
    coo = _Coo(dim)
    pairs = _target_pairs(m, ordered=True)
    for c in range(m):
        for d in range(m):
            mask = (S[:, c] >= 1) & (S[:, m + d] >= 1)
            src = np.nonzero(mask)[0]
            if not len(src):
                continue
            amp_ann = np.sqrt(S[src, c].astype(float) * S[src, m + d].astype(float))
            budget = ctx.q_max - Q[src] + c + d
            base_rows = S[src].copy()
            base_rows[:, c] -= 1
            base_rows[:, m + d] -= 1
            smax = int(budget.max())
            sums, ab = pairs[(c + d) % 2]
            stop = bisect_right(sums, smax)
            for a, b in ab[:stop]:
                u = contact.value(a, b, c, d)
                if u == 0.0:
                    continue
                sub = budget >= a + b
                if not sub.any():
                    continue
                k = src[sub]
                rows = base_rows[sub].copy()
                amp = amp_ann[sub] * np.sqrt(rows[:, b] + 1.0)
                rows[:, b] += 1
                amp *= np.sqrt(rows[:, m + a] + 1.0)
                rows[:, m + a] += 1
                coo.emit(ctx.find(rows), k, u * amp)
    return coo


@dataclass
class OperatorBlocks:
    """Coupling-independent pieces of the Hamiltonian for one basis.

    Building these once per basis lets a (g, c) sweep recombine them per grid
    point at the cost of a sparse-matrix sum.
    """

    basis: EnumeratedBasis
    trap: np.ndarray
    sigma_z: np.ndarray
    field_x: SparseOperator
    field_x2: SparseOperator
    v_down_down: SparseOperator
    v_up_up: SparseOperator
    v_up_down: SparseOperator

    def hamiltonian(self, params: PhysicsParams, include_beta0: bool = False) -> SparseOperator:
        g00, g01, g11 = params.couplings()
        dim = len(self.basis)
        diag = self.trap.copy()
        if include_beta0 and params.beta0 != 0.0:
            diag += params.beta0 * self.sigma_z
        mat = sp.diags(diag, format="csr", dtype=float)
        parts = [
            (params.beta1, self.field_x),
            (params.beta2, self.field_x2),
            (g00, self.v_down_down),
            (g11, self.v_up_up),
            (g01, self.v_up_down),
        ]
        for coef, block in parts:
            if coef != 0.0:
                mat = mat + coef * block.matrix
        leak = _combine_leaks([(c, b.leak) for c, b in parts], dim)
        return SparseOperator(self.basis, mat, name="H", leak=leak)


def build_blocks(
    basis: EnumeratedBasis,
    contact: ContactIntegrals | None = None,
    need_interactions: bool = True,
) -> OperatorBlocks:
    """Assemble every coupling-independent Hamiltonian block for a basis.

    need_interactions=False skips the three collision channels (returned as
    empty operators) for runs known to sit at zero coupling.
    """
    ctx = _VectorContext(basis)
    if contact is None and need_interactions:
        contact = contact_integrals(basis.n_modes)
    m = basis.n_modes
    energies = np.arange(m) + 0.5
    trap = ctx.states[:, :m] @ energies + ctx.states[:, m:] @ energies
    sigma_z = (ctx.states[:, m:].sum(axis=1).astype(np.int64)
               - ctx.states[:, :m].sum(axis=1).astype(np.int64)).astype(float)
    if need_interactions:
        vdd = _vec_same_spin(ctx, 0, contact).to_operator(basis, "Vdd")
        vuu = _vec_same_spin(ctx, 1, contact).to_operator(basis, "Vuu")
        vud = _vec_cross_spin(ctx, contact).to_operator(basis, "Vud")
    else:
        empty = _Coo(len(basis))
        vdd = empty.to_operator(basis, "Vdd")
        vuu = empty.to_operator(basis, "Vuu")
        vud = empty.to_operator(basis, "Vud")
    return OperatorBlocks(
        basis=basis,
        trap=trap,
        sigma_z=sigma_z,
        field_x=_vec_field(ctx, 1).to_operator(basis, "F1"),
        field_x2=_vec_field(ctx, 2).to_operator(basis, "F2"),
        v_down_down=vdd,
        v_up_up=vuu,
        v_up_down=vud,
    )


def build_hamiltonian(
    params: PhysicsParams,
    basis: EnumeratedBasis,
    contact: ContactIntegrals | None = None,
    include_beta0: bool = False,
) -> SparseOperator:
    """Full Hamiltonian; beta0 is omitted unless explicitly enabled."""
    return build_blocks(basis, contact).hamiltonian(params, include_beta0)


class MatrixFreeHamiltonian:
    """Applies the Hamiltonian on the fly, never materializing entries.

    Slower per application than the CSR path but O(dim) memory; used as a
    cross-check and as an escape hatch for bases too large to store.
    """

    def __init__(self, params: PhysicsParams, basis: EnumeratedBasis,
                 contact: ContactIntegrals | None = None, include_beta0: bool = False):
        self.basis = basis
        self.params = params
        self._ctx = _BasisContext(basis)
        self._contact = contact or contact_integrals(basis.n_modes)
        self._diag = _trap_diagonal(basis)
        if include_beta0 and params.beta0 != 0.0:
            self._diag = self._diag + params.beta0 * _sigma_z_diagonal(basis)
        g00, g01, g11 = params.couplings()
        self._parts = [
            (params.beta1, lambda c, i: _field_column(c, i, 1)),
            (params.beta2, lambda c, i: _field_column(c, i, 2)),
            (g00, lambda c, i: _same_spin_column(c, i, 0, self._contact)),
            (g11, lambda c, i: _same_spin_column(c, i, 1, self._contact)),
            (g01, lambda c, i: _cross_spin_column(c, i, self._contact)),
        ]

    @property
    def dim(self) -> int:
        return len(self.basis)

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        out = self._diag * vec
        for coef, column_fn in self._parts:
            if coef == 0.0:
                continue
            for col in np.nonzero(vec)[0]:
                amp = vec[col]
                terms, _ = column_fn(self._ctx, int(col))
                for row, val in terms:
                    out[row] += coef * val * amp
        return out


@dataclass
class SpinOperators:
    """Collective spin-1/2 operators plus the raising operator they came from."""

    sx: SparseOperator
    sy: SparseOperator
    sz: SparseOperator
    plus: sp.csr_matrix = field(repr=False, default=None)

    def as_tuple(self):
        return (self.sx, self.sy, self.sz)


def build_collective_spin(basis: EnumeratedBasis) -> SpinOperators:
    """S_x, S_y, S_z in the spin-1/2 normalization.

    S_z = (1/2) sum_m (n_up_m - n_down_m); S_+ = sum_m a+_{m,up} a_{m,down};
    S_x = (S_+ + S_-)/2 and S_y = (S_+ - S_-)/(2i).  Spin flips preserve the
    spatial profile, so these operators never leak out of the basis.  S_x and
    S_z are stored real (fast matvec path); S_y is genuinely complex.
    """
    ctx = _VectorContext(basis)
    S, m = ctx.states, basis.n_modes
    dim = S.shape[0]
    coo = _Coo(dim)
    for mode in range(m):
        src = np.nonzero(S[:, mode])[0]
        if not len(src):
            continue
        rows = S[src].copy()
        amp = np.sqrt(rows[:, mode].astype(float))
        rows[:, mode] -= 1
        amp *= np.sqrt(rows[:, m + mode] + 1.0)
        rows[:, m + mode] += 1
        idx = ctx.find(rows)
        if (idx < 0).any():
            raise ConfigError("spin flip left the basis; enumeration is broken")
        coo.add(idx, src, amp)
    plus = coo.to_operator(basis, "S+", hermitian=False).matrix
    minus = plus.T.tocsr()
    sx = SparseOperator(basis, (plus + minus) * 0.5, name="Sx")
    sy = SparseOperator(basis, ((plus - minus) * (-0.5j)).tocsr(), name="Sy")
    sigma_z = (S[:, m:].sum(axis=1).astype(np.int64)
               - S[:, :m].sum(axis=1).astype(np.int64)).astype(float)
    sz = SparseOperator(basis, sp.diags(0.5 * sigma_z, format="csr"), name="Sz")
    return SpinOperators(sx=sx, sy=sy, sz=sz, plus=plus)


def build_total_spin_squared(spin: SpinOperators) -> SparseOperator:
    """Materialized S^2 = S_x^2 + S_y^2 + S_z^2 (use only at modest dims)."""
    mat = None
    for op in spin.as_tuple():
        sq = op.matrix @ op.matrix
        mat = sq if mat is None else mat + sq
    return SparseOperator(spin.sx.basis, mat, name="S2")


def sector_js(n_atoms: int) -> list[float]:
    """Allowed total-spin values, N/2 down to 0 or 1/2."""
    top = n_atoms / 2.0
    js = []
    j = top
    while j > -0.25:
        js.append(j)
        j -= 1.0
    return js


class ProjectorOperator:
    """Total-spin sector projector applied as a polynomial in S^2.

    P_j = prod_{j' != j} (S^2 - j'(j'+1)) / (j(j+1) - j'(j'+1)); applying the
    factors one by one avoids the fill-in of materializing the product.
    """

    def __init__(self, spin: SpinOperators, j: float):
        n = spin.sx.basis.n_atoms
        js = sector_js(n)
        if not any(abs(j - jj) < 1e-9 for jj in js):
            raise ConfigError(f"invalid total spin {j} for {n} atoms")
        self.basis = spin.sx.basis
        self.j = j
        self._spin = spin
        self._factors = [
            (jp * (jp + 1.0), j * (j + 1.0) - jp * (jp + 1.0))
            for jp in js
            if abs(jp - j) > 1e-9
        ]

    def _s2(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros_like(vec)
        for op in self._spin.as_tuple():
            out += op.matvec(op.matvec(vec))
        return out

    def matvec(self, vec: np.ndarray) -> np.ndarray:
        out = vec.astype(complex)
        for shift, denom in self._factors:
            out = (self._s2(out) - shift * out) / denom
        return out

    def expectation(self, vec: np.ndarray) -> float:
        num = np.vdot(vec, self.matvec(vec)).real
        return float(num / np.vdot(vec, vec).real)


def build_spin_sector_projector(
    basis: EnumeratedBasis,
    j: float,
    spin: SpinOperators | None = None,
    materialize: bool | None = None,
) -> SparseOperator | ProjectorOperator:
    """Projector onto the total-spin-j sector.

    Materializes the polynomial for small bases (exact sparse product) and
    returns the factor-applying form otherwise.
    """
    if spin is None:
        spin = build_collective_spin(basis)
    proj = ProjectorOperator(spin, j)
    if materialize is None:
        materialize = len(basis) <= 4000
    if not materialize:
        return proj
    s2 = build_total_spin_squared(spin).matrix
    eye = sp.identity(len(basis), dtype=complex, format="csr")
    mat = eye
    for shift, denom in proj._factors:
        mat = (s2 @ mat - shift * mat) / denom
    return SparseOperator(basis, mat, name=f"P_{j}")


def build_tact_generator(basis: EnumeratedBasis, spin: SpinOperators | None = None) -> SparseOperator:
    """Two-axis counter-twisting generator S_y S_z + S_z S_y.

    S_z is diagonal, so the product keeps the sparsity pattern of S_y.
    """
    if spin is None:
        spin = build_collective_spin(basis)
    sy, sz = spin.sy.matrix, spin.sz.matrix
    mat = sy @ sz + sz @ sy
    return SparseOperator(basis, mat, name="TACT")
