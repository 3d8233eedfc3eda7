"""Relative-frame vehicle-cyclist dynamics and collision geometry.

State is the 3-vector (dx, dv, dy): longitudinal range [m], longitudinal
range rate [m/s] and lateral range [m] of the cyclist with respect to the
vehicle.  The vehicle's longitudinal acceleration u and the cyclist's
acceleration d enter through dv' = d - u.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

__all__ = [
    "RelativeState",
    "InputBounds",
    "CollisionDisc",
    "LateralMode",
    "signed_distance",
    "flow",
    "integrate_step",
]


@dataclass(frozen=True)
class RelativeState:
    dx: float
    dv: float
    dy: float

    def __post_init__(self):
        for name in ("dx", "dv", "dy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"RelativeState.{name} must be finite")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.dx, self.dv, self.dy)


@dataclass(frozen=True)
class InputBounds:
    """Symmetric acceleration bounds: u in [-u_max, u_max], d in [-d_max, d_max]."""

    u_max: float = 3.0
    d_max: float = 1.5

    def __post_init__(self):
        if not (self.u_max > 0.0):
            raise ValueError("u_max must be > 0")
        if not (self.d_max >= 0.0):
            raise ValueError("d_max must be >= 0")


@dataclass(frozen=True)
class CollisionDisc:
    radius: float = 1.0

    def __post_init__(self):
        if not (self.radius > 0.0):
            raise ValueError("collision radius must be > 0")


class LateralMode(enum.Enum):
    """Lateral range dynamics variant.

    LITERAL uses dy' = dy (self-coupled, exponentially divergent); FROZEN
    uses dy' = 0.  FROZEN is the default for every run.
    """

    LITERAL = "literal"
    FROZEN = "frozen"

    @classmethod
    def from_str(cls, s: str) -> "LateralMode":
        try:
            return cls(s.lower())
        except ValueError:
            raise ValueError(f"unknown lateral mode {s!r}; expected 'frozen' or 'literal'")


def signed_distance(s: RelativeState, disc: CollisionDisc) -> float:
    """Planar signed distance to the collision disc; <= 0 means collision."""
    return math.hypot(s.dx, s.dy) - disc.radius


def flow(
    s: RelativeState,
    u: float,
    d: float,
    bounds: InputBounds,
    mode: LateralMode = LateralMode.FROZEN,
) -> tuple[float, float, float]:
    """Time derivative (dx', dv', dy') under inputs u (vehicle) and d (cyclist)."""
    if abs(u) > bounds.u_max * (1.0 + 1e-12):
        raise ValueError(f"|u|={abs(u)} exceeds u_max={bounds.u_max}")
    if abs(d) > bounds.d_max * (1.0 + 1e-12):
        raise ValueError(f"|d|={abs(d)} exceeds d_max={bounds.d_max}")
    ddy = s.dy if mode is LateralMode.LITERAL else 0.0
    return (s.dv, d - u, ddy)


def integrate_step(
    s: RelativeState,
    u: float,
    d: float,
    dt: float,
    bounds: InputBounds,
    mode: LateralMode = LateralMode.FROZEN,
) -> RelativeState:
    """One RK4 step under piecewise-constant inputs.

    Exact for FROZEN mode, where the dynamics are polynomial in t of
    degree <= 2.
    """
    if not (dt > 0.0):
        raise ValueError("dt must be > 0")

    def f(state: tuple[float, float, float]) -> tuple[float, float, float]:
        dx, dv, dy = state
        ddy = dy if mode is LateralMode.LITERAL else 0.0
        return (dv, d - u, ddy)

    # validate inputs once through the public contract
    flow(s, u, d, bounds, mode)

    y0 = s.as_tuple()
    k1 = f(y0)
    k2 = f(tuple(y0[i] + 0.5 * dt * k1[i] for i in range(3)))
    k3 = f(tuple(y0[i] + 0.5 * dt * k2[i] for i in range(3)))
    k4 = f(tuple(y0[i] + dt * k3[i] for i in range(3)))
    out = tuple(
        y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(3)
    )
    return RelativeState(*out)
