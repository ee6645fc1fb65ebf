"""Simulation toolkit for nuclear magnetic resonance in a levitated micro-diamond."""

from .errors import AmbiguousLabelError, ConfigError, ConvergenceError, InvalidInputError, QueryBudgetExceeded
from .spin import (
    EXCITED,
    GROUND,
    FieldVector,
    LevelSet,
    NVParams,
    eigensystem,
    eslac_field,
    hamiltonian_coupled,
    hamiltonian_electron,
    spin1_operators,
    transition_frequencies,
)

__version__ = "0.1.0"
