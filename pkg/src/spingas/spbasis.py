"""Single-particle harmonic-oscillator machinery.

Everything is expressed in oscillator units (hbar = m = omega = 1), so the
mode energies are m + 1/2, lengths are measured in the oscillator length and
the eigenfunctions are the normalized Hermite functions.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

__all__ = [
    "mode_energy",
    "x_matrix_element",
    "x2_matrix_element",
    "hermite_functions",
    "ContactIntegrals",
]


def mode_energy(m: int) -> float:
    """Energy of oscillator mode m (trap only), in units of hbar*omega."""
    return m + 0.5


def _check_index(m: int, cutoff: int) -> None:
    if not 0 <= m < cutoff:
        raise ConfigError(f"mode index {m} outside 0..{cutoff - 1}")


def x_matrix_element(m: int, n: int, cutoff: int | None = None) -> float:
    """<m|x|n> for oscillator eigenstates; nonzero only for |m - n| = 1.

    From x = (a + a^dag)/sqrt(2): <n-1|x|n> = sqrt(n/2),
    <n+1|x|n> = sqrt((n+1)/2).
    """
    if cutoff is not None:
        _check_index(m, cutoff)
        _check_index(n, cutoff)
    if m == n - 1:
        return math.sqrt(n / 2.0)
    if m == n + 1:
        return math.sqrt((n + 1) / 2.0)
    return 0.0


def x2_matrix_element(m: int, n: int, cutoff: int | None = None) -> float:
    """<m|x^2|n>; nonzero for m = n (n + 1/2) and |m - n| = 2."""
    if cutoff is not None:
        _check_index(m, cutoff)
        _check_index(n, cutoff)
    if m == n:
        return n + 0.5
    lo, hi = min(m, n), max(m, n)
    if hi == lo + 2:
        return math.sqrt((lo + 1) * (lo + 2)) / 2.0
    return 0.0


def hermite_functions(n_max: int, x: np.ndarray) -> np.ndarray:
    """Values phi_n(x) of the normalized Hermite functions for n = 0..n_max.

    Uses the stable upward recurrence on the functions themselves (Gaussian
    factor included), which stays bounded where raw Hermite polynomials would
    overflow for n of a few tens.  Returns an array of shape (n_max+1, len(x)).
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((n_max + 1, x.size))
    out[0] = np.pi ** -0.25 * np.exp(-0.5 * x * x)
    if n_max >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, n_max):
        out[n + 1] = (
            math.sqrt(2.0 / (n + 1)) * x * out[n]
            - math.sqrt(n / (n + 1)) * out[n - 1]
        )
    return out


class ContactIntegrals:
    """Cache of the contact-interaction mode integrals.

    U[a,b,c,d] = integral of phi_a(x) phi_b(x) phi_c(x) phi_d(x) dx, fully
    symmetric in the four indices and zero when a+b+c+d is odd.  Values are
    obtained by Gauss-Hermite quadrature after the substitution u = sqrt(2) x,
    which makes the quadrature exact for the polynomial degree involved.  The
    weights are folded with exp(u^2) in log space so neither factor under- or
    overflows, and the Hermite functions are evaluated by the bounded
    recurrence above.  Entries are cached on the sorted index tuple;
    parity-zero entries are never stored.
    """

    def __init__(self, n_max: int):
        if n_max < 1:
            raise ConfigError("n_max must be >= 1")
        self.n_max = n_max
        order = 2 * n_max + 8
        nodes, weights = np.polynomial.hermite.hermgauss(order)
        self._x = nodes / math.sqrt(2.0)
        self._w = np.exp(np.log(weights) + nodes * nodes) / math.sqrt(2.0)
        self._phi = hermite_functions(n_max - 1, self._x)
        self._cache: dict[tuple[int, int, int, int], float] = {}

    def value(self, a: int, b: int, c: int, d: int) -> float:
        for idx in (a, b, c, d):
            _check_index(idx, self.n_max)
        if (a + b + c + d) % 2:
            return 0.0
        key = tuple(sorted((a, b, c, d)))
        val = self._cache.get(key)
        if val is None:
            p = self._phi
            val = float(np.dot(self._w, p[key[0]] * p[key[1]] * p[key[2]] * p[key[3]]))
            self._cache[key] = val
        return val

    def __call__(self, a: int, b: int, c: int, d: int) -> float:
        return self.value(a, b, c, d)

    def density_overlap(self, m: int, n: int) -> float:
        """integral of |phi_m|^2 |phi_n|^2 dx, used by the density diagnostic."""
        return self.value(m, m, n, n)


_shared: dict[int, ContactIntegrals] = {}


def contact_integrals(n_max: int) -> ContactIntegrals:
    """Shared per-process cache; tables only grow with the requested cutoff."""
    best = max((k for k in _shared if k >= n_max), default=None)
    if best is not None:
        return _shared[best]
    table = ContactIntegrals(n_max)
    _shared[n_max] = table
    return table
