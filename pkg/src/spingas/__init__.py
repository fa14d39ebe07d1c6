"""spingas: ab initio spin dynamics of trapped two-level 1D Bose gases.

Simulates N two-level bosons in a harmonic trap with an inhomogeneous
magnetic field and tunable contact interactions: spin dephasing, spin
self-rephasing, and the protection of spin-squeezed states.
"""

__version__ = "0.1.0"

from .errors import (
    CapacityError,
    ConfigError,
    ConvergenceError,
    SpingasError,
    UndefinedDirectionError,
)
from .fock import BasisSpec, EnumeratedBasis, enumerate_basis, frozen_basis, sub_basis_around
from .operators import (
    PhysicsParams,
    SparseOperator,
    SpinOperators,
    build_blocks,
    build_collective_spin,
    build_hamiltonian,
    build_spin_sector_projector,
    build_tact_generator,
    build_total_spin_squared,
    sector_js,
)
from .prep import PrepConfig, WeightedSample, apply_pulse, apply_tact
from .propagate import PropagatorConfig, StateVector, evolve_imag, evolve_real

__all__ = [
    "BasisSpec",
    "CapacityError",
    "ConfigError",
    "ConvergenceError",
    "EnumeratedBasis",
    "PhysicsParams",
    "PrepConfig",
    "PropagatorConfig",
    "SparseOperator",
    "SpinOperators",
    "SpingasError",
    "StateVector",
    "UndefinedDirectionError",
    "WeightedSample",
    "apply_pulse",
    "apply_tact",
    "build_blocks",
    "build_collective_spin",
    "build_hamiltonian",
    "build_spin_sector_projector",
    "build_tact_generator",
    "build_total_spin_squared",
    "enumerate_basis",
    "evolve_imag",
    "evolve_real",
    "frozen_basis",
    "sector_js",
    "sub_basis_around",
]
