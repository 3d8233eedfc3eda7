"""Safety value functions and safety-shaped Q-learning for vehicle-cyclist
interaction: backward reachability on a relative-state grid, a comfort-aware
disturbance model, DQN training, and trajectory evaluation."""

__version__ = "0.1.0"

from .dynamics import CollisionDisc, InputBounds, LateralMode, RelativeState
from .reachability import (
    ConstantProfile,
    Grid3,
    ModulatedProfile,
    SafetyClass,
    ValueField,
    solve,
    terminal_values,
)

__all__ = [
    "__version__",
    "RelativeState",
    "InputBounds",
    "CollisionDisc",
    "LateralMode",
    "Grid3",
    "ValueField",
    "SafetyClass",
    "ConstantProfile",
    "ModulatedProfile",
    "solve",
    "terminal_values",
]
