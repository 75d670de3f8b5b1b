"""Density-to-potential reconstruction for lattice time-dependent Kohn-Sham systems."""

__version__ = "0.1.0"

from .errors import (BoundOverflow, BoundViolation, ConfigError, DeskScaleError,
                     InconsistentInitialState, InconsistentSource, KSMarchError,
                     LipschitzBudgetExceeded, VRepresentabilityBreakdown)
from .fock import LatticeModel, build_basis, build_hamiltonian, chain_hopping, slater_amplitudes
from .forcebalance import build_K, build_S, force_balance, solve_potential
from .marcher import ExactSource, MarchConfig, StencilSource, march, required_precision, required_steps
from .propagator import KSState, ManyBodyState, evolve_interacting, evolve_ks, ground_orbitals
from .waveforms import PotentialSchedule

__all__ = [
    "BoundOverflow", "BoundViolation", "ConfigError", "DeskScaleError", "ExactSource",
    "InconsistentInitialState", "InconsistentSource", "KSMarchError", "KSState", "LatticeModel",
    "LipschitzBudgetExceeded", "ManyBodyState", "MarchConfig", "PotentialSchedule",
    "StencilSource", "VRepresentabilityBreakdown", "build_K", "build_S", "build_basis",
    "build_hamiltonian", "chain_hopping", "evolve_interacting", "evolve_ks", "force_balance",
    "ground_orbitals", "march", "required_precision", "required_steps", "slater_amplitudes",
    "solve_potential",
]
