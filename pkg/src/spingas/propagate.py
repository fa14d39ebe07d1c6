"""Krylov (Lanczos) propagation: exp(-iHt) and exp(-H tau) acting on vectors.

The Hamiltonian is Hermitian throughout, so the short-recurrence Lanczos
process applies; one full reorthogonalization pass per vector keeps the basis
clean at the small Krylov dimensions used here.  Substeps adapt to the
standard a-posteriori error estimate beta * |last component of exp(T) e_1|,
halving on violation and cautiously growing again after successes.  There is
no claimed global error bound; global accuracy is enforced by the
conservation property tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError
from .fock import EnumeratedBasis
from .operators import SparseOperator

__all__ = ["StateVector", "PropagatorConfig", "PropagationStats", "evolve_real", "evolve_imag"]

_BREAKDOWN = 1e-13


@dataclass
class StateVector:
    """Complex amplitudes over an enumerated basis."""

    basis: EnumeratedBasis
    amplitudes: np.ndarray
    _norm: float | None = field(default=None, repr=False)

    @classmethod
    def unit(cls, basis: EnumeratedBasis, index: int) -> "StateVector":
        amp = np.zeros(len(basis), dtype=complex)
        amp[index] = 1.0
        return cls(basis, amp)

    @classmethod
    def from_fock(cls, basis: EnumeratedBasis, state: tuple[int, ...]) -> "StateVector":
        return cls.unit(basis, basis.index(state))

    @property
    def norm(self) -> float:
        if self._norm is None:
            self._norm = float(np.linalg.norm(self.amplitudes))
        return self._norm

    def normalized(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes / self.norm, 1.0)

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy(), self._norm)


@dataclass
class PropagatorConfig:
    krylov_dim: int = 30
    tol: float = 1e-9
    max_substeps: int = 100_000

    def __post_init__(self):
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be >= 2")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass
class PropagationStats:
    """Aggregate diagnostics over all propagations it was handed to."""

    substeps: int = 0
    rejected: int = 0
    max_error_estimate: float = 0.0

    def merge(self, other: "PropagationStats") -> None:
        self.substeps += other.substeps
        self.rejected += other.rejected
        self.max_error_estimate = max(self.max_error_estimate, other.max_error_estimate)


def _lanczos(matvec, v0, m):
    """m-step Lanczos with one reorthogonalization pass.

    Returns (V, alphas, betas, k) where k <= m is the reached dimension and
    betas[k-1] is the next off-diagonal element (0 on happy breakdown).
    """
    dim = v0.size
    V = np.empty((m, dim), dtype=complex)
    alphas = np.zeros(m)
    betas = np.zeros(m)
    V[0] = v0
    scale = 0.0
    for j in range(m):
        w = matvec(V[j])
        scale = max(scale, float(np.linalg.norm(w)))
        alphas[j] = np.vdot(V[j], w).real
        w -= alphas[j] * V[j]
        if j > 0:
            w -= betas[j - 1] * V[j - 1]
        # one full reorthogonalization pass, cheap at these m
        w -= V[: j + 1].T @ (V[: j + 1].conj() @ w)
        beta = float(np.linalg.norm(w))
        betas[j] = beta
        if beta < _BREAKDOWN * max(1.0, scale):
            return V, alphas, betas, j + 1
        if j + 1 < m:
            V[j + 1] = w / beta
    return V, alphas, betas, m


def _expm_tridiag(alphas, betas, k, coef):
    """Columns exp(coef * T_k) e_1 via the spectral form of the tridiagonal T."""
    T = np.diag(alphas[:k])
    if k > 1:
        off = betas[: k - 1]
        T += np.diag(off, 1) + np.diag(off, -1)
    theta, Q = np.linalg.eigh(T)
    return Q @ (np.exp(coef * theta) * Q[0].conj())


def _expm_krylov(matvec, vec, coef, cfg, stats):
    """Approximate exp(coef * A) vec for Hermitian A and complex coef.

    Works on the unit direction and restores the magnitude at the end, so
    imaginary-time decay does not starve the error control.
    """
    total = abs(coef)
    if total == 0.0:
        return vec.copy()
    norm0 = float(np.linalg.norm(vec))
    if norm0 == 0.0:
        return vec.copy()
    unit_coef = coef / total
    v = vec / norm0
    log_weight = np.log(norm0)
    done = 0.0
    step = total
    successes = 0
    while done < total * (1 - 1e-15):
        step = min(step, total - done)
        V, alphas, betas, k = _lanczos(matvec, v, cfg.krylov_dim)
        while True:
            u = _expm_tridiag(alphas, betas, k, unit_coef * step)
            err = betas[k - 1] * abs(u[-1]) if k == cfg.krylov_dim else 0.0
            if err <= cfg.tol or step <= total * 1e-12:
                break
            step *= 0.5
            successes = 0
            stats.rejected += 1
        w = V[:k].T @ u
        wnorm = float(np.linalg.norm(w))
        if wnorm == 0.0:
            raise ConvergenceError("propagated vector vanished")
        log_weight += np.log(wnorm)
        v = w / wnorm
        done += step
        stats.substeps += 1
        stats.max_error_estimate = max(stats.max_error_estimate, err)
        if stats.substeps + stats.rejected > cfg.max_substeps:
            raise ConvergenceError(
                f"propagation exceeded {cfg.max_substeps} substeps "
                f"(step={step:.3e}, err={err:.3e})"
            )
        successes += 1
        if successes >= 2:
            step *= 1.5
            successes = 0
    return v * np.exp(log_weight)


def evolve_real(
    state: StateVector,
    hamiltonian: SparseOperator,
    t: float,
    cfg: PropagatorConfig | None = None,
    stats: PropagationStats | None = None,
) -> StateVector:
    """Unitary evolution exp(-iHt)|psi>; norm is preserved to the step tolerance."""
    cfg = cfg or PropagatorConfig()
    stats = stats if stats is not None else PropagationStats()
    amps = _expm_krylov(hamiltonian.matvec, state.amplitudes, -1j * t, cfg, stats)
    return StateVector(state.basis, amps)


def evolve_imag(
    state: StateVector,
    hamiltonian: SparseOperator,
    tau: float,
    cfg: PropagatorConfig | None = None,
    stats: PropagationStats | None = None,
) -> StateVector:
    """Imaginary-time propagation exp(-H tau)|psi>, unnormalized.

    The returned norm carries the thermal weight of the sample; callers doing
    Monte Carlo averaging must not renormalize before recording it.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    cfg = cfg or PropagatorConfig()
    stats = stats if stats is not None else PropagationStats()
    amps = _expm_krylov(hamiltonian.matvec, state.amplitudes, -tau, cfg, stats)
    return StateVector(state.basis, amps)
