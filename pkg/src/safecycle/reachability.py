"""Backward reachability on a 3-D grid via an explicit Lax-Friedrichs scheme.

Solves the terminal-value variational inequality

    min{ g(s) - v(s,t),  D_t v(s,t) + H(s, D_s v(s,t)) } = 0,   v(s,0) = g(s)

backward in time, where g is the signed distance to the collision disc and

    H(s, p) = max_u min_d p.f(s,u,d)
            = p1*dv + p3*(dy if literal else 0) + |p2|*(u_max - d_eff(s)).

The discrete update marches v_tau = H (tau = backward time) with the outer
min against g:

    v <- min(g, v + dt*[H(s, (p- + p+)/2) + sum_i alpha_i (p_i+ - p_i-)/2])

with dissipation coefficients alpha_1 = max|dv|, alpha_2 = u_max + max
d_eff, alpha_3 = max|dy| (literal) or 0 (frozen); the +curvature term is
what makes the explicit update monotone for this marching direction.
Boundaries: the dx faces hold v = g (ranges leaving the window are opening
states, where the minimum payoff is attained immediately), the dv and dy
faces use zero-gradient ghost nodes (the missing one-sided difference is
zero, which keeps every face update monotone under the CFL bound).

The zero sublevel set of the solved field is B u C (backward reachable set
plus collision set); its complement is the guaranteed-safe set.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import CollisionDisc, InputBounds, LateralMode, RelativeState

__all__ = [
    "Grid3",
    "ValueField",
    "SafetyClass",
    "ConstantProfile",
    "ModulatedProfile",
    "CflError",
    "NonFiniteError",
    "terminal_values",
    "hamiltonian",
    "hamiltonian_oracle",
    "step_backward",
    "solve",
    "value_at",
    "values_at",
    "classify_state",
    "classify_states",
    "unsafe_fraction",
    "save_vf1",
    "load_vf1",
]

AXES = ("dx", "dv", "dy")


class CflError(ValueError):
    """Requested dt violates the explicit-scheme stability bound."""


class NonFiniteError(RuntimeError):
    """A grid node went non-finite during the solve."""


@dataclass(frozen=True)
class Grid3:
    """Regular node-centered grid over (dx, dv, dy)."""

    mins: tuple[float, float, float]
    maxs: tuple[float, float, float]
    shape: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "mins", tuple(float(x) for x in self.mins))
        object.__setattr__(self, "maxs", tuple(float(x) for x in self.maxs))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        for i, name in enumerate(AXES):
            if self.shape[i] < 3:
                raise ValueError(f"{name} axis needs >= 3 nodes, got {self.shape[i]}")
            if not self.maxs[i] > self.mins[i]:
                raise ValueError(f"{name} axis needs max > min")

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(
            (self.maxs[i] - self.mins[i]) / (self.shape[i] - 1) for i in range(3)
        )

    def axis(self, i: int) -> np.ndarray:
        return np.linspace(self.mins[i], self.maxs[i], self.shape[i])

    @property
    def n_nodes(self) -> int:
        return self.shape[0] * self.shape[1] * self.shape[2]

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape (n_nodes, 3), row-major (dx-major)."""
        ax = [self.axis(i) for i in range(3)]
        mesh = np.meshgrid(*ax, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def contains(self, s: RelativeState) -> bool:
        vals = s.as_tuple()
        return all(self.mins[i] <= vals[i] <= self.maxs[i] for i in range(3))


@dataclass
class ValueField:
    grid: Grid3
    values: np.ndarray  # shape == grid.shape, C order (dx-major, dy-minor)
    horizon: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )


class SafetyClass(enum.Enum):
    COLLISION = "collision"  # g <= 0
    UNSAFE = "unsafe"  # v <= 0 < g
    SAFE = "safe"  # v > 0


# --- disturbance profiles ----------------------------------------------------


@dataclass(frozen=True)
class ConstantProfile:
    """Fixed cyclist acceleration bound d_eff = d_max everywhere."""

    d_max: float = 1.5

    def __post_init__(self):
        if self.d_max < 0:
            raise ValueError("d_max must be >= 0")

    @property
    def identifier(self) -> str:
        return f"constant(d_max={self.d_max})"

    def bound_at(self, s: RelativeState) -> float:
        return self.d_max

    def bound_on(self, grid: Grid3) -> np.ndarray:
        return np.full(grid.shape, self.d_max)

    def max_bound(self, grid: Grid3) -> float:
        return self.d_max


@dataclass(frozen=True)
class ModulatedProfile:
    """Comfort-modulated bound d_eff(s) = d_max * (1 + kappa * score(s)).

    `score` maps an (n, 3) array of (dx, dv, dy) rows to outlier scores in
    [0, 1]; scores are clipped defensively so the effective bound never
    drops below the constant base bound.
    """

    score: Callable[[np.ndarray], np.ndarray]
    d_max: float = 1.5
    kappa: float = 1.0
    name: str = "comfort"

    def __post_init__(self):
        if self.d_max < 0:
            raise ValueError("d_max must be >= 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")

    @property
    def identifier(self) -> str:
        return f"modulated(d_max={self.d_max},kappa={self.kappa},model={self.name})"

    def _scores(self, states: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(self.score(states), dtype=float), 0.0, 1.0)

    def bound_at(self, s: RelativeState) -> float:
        sc = self._scores(np.array([s.as_tuple()]))[0]
        return self.d_max * (1.0 + self.kappa * sc)

    def bound_on(self, grid: Grid3) -> np.ndarray:
        sc = self._scores(grid.nodes()).reshape(grid.shape)
        return self.d_max * (1.0 + self.kappa * sc)

    def max_bound(self, grid: Grid3) -> float:
        # a-priori cap (score is clipped to 1), so dissipation does not
        # depend on the realized score field
        return self.d_max * (1.0 + self.kappa)


Profile = ConstantProfile | ModulatedProfile


# --- terminal condition and Hamiltonian --------------------------------------


def _g_on_grid(grid: Grid3, disc: CollisionDisc) -> np.ndarray:
    x = grid.axis(0)[:, None, None]
    y = grid.axis(2)[None, None, :]
    return np.sqrt(x * x + y * y) - disc.radius + np.zeros((1, grid.shape[1], 1))


def terminal_values(grid: Grid3, disc: CollisionDisc) -> ValueField:
    """v(s, 0) = g(s) at every node."""
    return ValueField(
        grid=grid,
        values=_g_on_grid(grid, disc),
        horizon=0.0,
        meta={"iterations": 0, "stop_rule": "horizon", "residual": 0.0},
    )


def hamiltonian(
    s: RelativeState,
    p: tuple[float, float, float],
    bounds: InputBounds,
    profile: Profile,
    mode: LateralMode = LateralMode.FROZEN,
) -> float:
    """Closed form of max_u min_d p.f(s,u,d) for interval-bounded inputs."""
    p1, p2, p3 = (float(c) for c in p)
    for c in (p1, p2, p3):
        if not np.isfinite(c):
            raise ValueError("costate must be finite")
    d_eff = profile.bound_at(s)
    drift = p1 * s.dv + (p3 * s.dy if mode is LateralMode.LITERAL else 0.0)
    return drift + abs(p2) * (bounds.u_max - d_eff)


def hamiltonian_oracle(
    s: RelativeState,
    p: tuple[float, float, float],
    bounds: InputBounds,
    profile: Profile,
    mode: LateralMode = LateralMode.FROZEN,
    n: int = 201,
) -> float:
    """Brute-force max over n vehicle inputs of min over n cyclist inputs."""
    if n < 2:
        raise ValueError("n must be >= 2")
    p1, p2, p3 = (float(c) for c in p)
    d_eff = profile.bound_at(s)
    us = np.linspace(-bounds.u_max, bounds.u_max, n)
    ds = np.linspace(-d_eff, d_eff, n)
    drift = p1 * s.dv + (p3 * s.dy if mode is LateralMode.LITERAL else 0.0)
    payoff = drift + p2 * ds[None, :] - p2 * us[:, None]
    return float(payoff.min(axis=1).max(axis=0))


# --- Lax-Friedrichs stepping --------------------------------------------------


@dataclass
class _StepContext:
    g: np.ndarray
    dv_term: np.ndarray  # dv axis broadcast to (1, nv, 1)
    dy_term: np.ndarray | None  # dy axis broadcast (literal mode) or None
    d_eff: np.ndarray
    u_max: float
    alphas: tuple[float, float, float]
    spacing: tuple[float, float, float]
    dt_admissible: float


def _build_context(
    grid: Grid3,
    bounds: InputBounds,
    profile: Profile,
    disc: CollisionDisc,
    mode: LateralMode,
    cfl: float = 0.5,
    alpha2: float | None = None,
) -> _StepContext:
    h = grid.spacing
    d_eff = np.asarray(profile.bound_on(grid), dtype=float)
    a1 = float(np.max(np.abs(grid.axis(1))))
    a2 = bounds.u_max + max(profile.max_bound(grid), float(np.max(d_eff)))
    if alpha2 is not None:
        if alpha2 < a2:
            raise ValueError(f"alpha2 override {alpha2} below required {a2}")
        a2 = alpha2
    a3 = float(np.max(np.abs(grid.axis(2)))) if mode is LateralMode.LITERAL else 0.0
    speed = a1 / h[0] + a2 / h[1] + (a3 / h[2] if a3 > 0 else 0.0)
    return _StepContext(
        g=_g_on_grid(grid, disc),
        dv_term=grid.axis(1)[None, :, None],
        dy_term=grid.axis(2)[None, None, :] if mode is LateralMode.LITERAL else None,
        d_eff=d_eff,
        u_max=bounds.u_max,
        alphas=(a1, a2, a3),
        spacing=h,
        dt_admissible=cfl / speed,
    )


def _one_sided(
    v: np.ndarray, h: float, axis: int, zero_ghost: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Left/right differences; missing boundary entries are either zero
    (zero-gradient ghost) or copied from the interior side."""
    d = np.diff(v, axis=axis) / h
    shape = list(v.shape)
    shape[axis] = 1
    if zero_ghost:
        first = np.zeros(shape)
        last = np.zeros(shape)
    else:
        first = np.take(d, [0], axis=axis)
        last = np.take(d, [-1], axis=axis)
    d_minus = np.concatenate([first, d], axis=axis)
    d_plus = np.concatenate([d, last], axis=axis)
    return d_minus, d_plus


def _lf_step(v: np.ndarray, dt: float, ctx: _StepContext) -> np.ndarray:
    m1, p1 = _one_sided(v, ctx.spacing[0], 0, zero_ghost=False)
    m2, p2 = _one_sided(v, ctx.spacing[1], 1, zero_ghost=True)
    c1 = 0.5 * (m1 + p1)
    c2 = 0.5 * (m2 + p2)
    ham = c1 * ctx.dv_term + np.abs(c2) * (ctx.u_max - ctx.d_eff)
    diss = 0.5 * (ctx.alphas[0] * (p1 - m1) + ctx.alphas[1] * (p2 - m2))
    if ctx.dy_term is not None:
        m3, p3 = _one_sided(v, ctx.spacing[2], 2, zero_ghost=True)
        ham = ham + 0.5 * (m3 + p3) * ctx.dy_term
        diss = diss + 0.5 * ctx.alphas[2] * (p3 - m3)
    out = np.minimum(ctx.g, v + dt * (ham + diss))
    out[0, :, :] = ctx.g[0, :, :]
    out[-1, :, :] = ctx.g[-1, :, :]
    return out


def _check_dt(dt: float, ctx: _StepContext) -> None:
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if dt > ctx.dt_admissible * (1.0 + 1e-12):
        raise CflError(
            f"dt={dt} violates the CFL bound; admissible dt <= {ctx.dt_admissible:.6g}"
        )


def step_backward(
    vf: ValueField,
    dt: float,
    bounds: InputBounds,
    profile: Profile,
    disc: CollisionDisc,
    mode: LateralMode = LateralMode.FROZEN,
) -> ValueField:
    """One explicit step toward more-negative time; enforces v <= g."""
    ctx = _build_context(vf.grid, bounds, profile, disc, mode)
    _check_dt(dt, ctx)
    out = _lf_step(vf.values, dt, ctx)
    meta = dict(vf.meta)
    meta["iterations"] = int(meta.get("iterations", 0)) + 1
    return ValueField(vf.grid, out, vf.horizon + dt, meta)


def solve(
    grid: Grid3,
    horizon_T: float,
    tol: float,
    bounds: InputBounds,
    profile: Profile,
    disc: CollisionDisc,
    mode: LateralMode = LateralMode.FROZEN,
    dt: float | None = None,
    cfl: float = 0.5,
    alpha2: float | None = None,
) -> ValueField:
    """March the terminal condition backward until the horizon or a fixed point.

    dt defaults to the CFL-admissible step (the final step is truncated to
    land exactly on the horizon); an explicit dt is validated against the
    CFL bound.  Stops early once the sup-norm change per full step drops
    below tol.  alpha2 raises the dv-axis dissipation coefficient above the
    profile's requirement, which lets paired solves (constant vs modulated)
    share one numerical scheme so their unsafe sets nest exactly.
    """
    if horizon_T < 0:
        raise ValueError("horizon_T must be >= 0")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    ctx = _build_context(grid, bounds, profile, disc, mode, cfl=cfl, alpha2=alpha2)
    if dt is None:
        dt = ctx.dt_admissible
    else:
        _check_dt(dt, ctx)

    v = ctx.g.copy()
    elapsed = 0.0
    iterations = 0
    residual = np.inf
    stop_rule = "horizon"
    while elapsed < horizon_T - 1e-12 * max(1.0, horizon_T):
        step_dt = min(dt, horizon_T - elapsed)
        v_new = _lf_step(v, step_dt, ctx)
        if not np.all(np.isfinite(v_new)):
            idx = tuple(int(i) for i in np.argwhere(~np.isfinite(v_new))[0])
            raise NonFiniteError(f"non-finite value at node {idx} after {iterations + 1} steps")
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        elapsed += step_dt
        iterations += 1
        if residual < tol:
            stop_rule = "tol"
            break
    meta = {
        "iterations": iterations,
        "stop_rule": stop_rule,
        "residual": residual if np.isfinite(residual) else None,
        "dt": dt,
        "cfl_dt": ctx.dt_admissible,
        "alpha": list(ctx.alphas),
        "horizon_requested": horizon_T,
        "tol": tol,
        "bounds": {"u_max": bounds.u_max, "d_max": bounds.d_max},
        "lateral_mode": mode.value,
        "profile": profile.identifier,
        "collision_radius": disc.radius,
    }
    return ValueField(grid, v, elapsed, meta)


# --- queries ------------------------------------------------------------------


def values_at(vf: ValueField, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Trilinear interpolation at (n, 3) points.

    Out-of-grid points are clamped to the boundary; the second return value
    flags which rows were clamped.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != 3:
        raise ValueError("points must be (n, 3)")
    grid = vf.grid
    idx0, fracs = [], []
    clamped = np.zeros(len(pts), dtype=bool)
    for ax in range(3):
        lo, hi, n = grid.mins[ax], grid.maxs[ax], grid.shape[ax]
        h = grid.spacing[ax]
        p = pts[:, ax]
        clamped |= (p < lo) | (p > hi)
        t = np.clip((p - lo) / h, 0.0, n - 1.0)
        i0 = np.minimum(t.astype(int), n - 2)
        idx0.append(i0)
        fracs.append(t - i0)
    v = vf.values
    out = np.zeros(len(pts))
    for corner in range(8):
        b = [(corner >> ax) & 1 for ax in range(3)]
        w = np.ones(len(pts))
        for ax in range(3):
            w = w * (fracs[ax] if b[ax] else 1.0 - fracs[ax])
        out += w * v[idx0[0] + b[0], idx0[1] + b[1], idx0[2] + b[2]]
    return out, clamped


def value_at(vf: ValueField, s: RelativeState) -> float:
    vals, _ = values_at(vf, np.array([s.as_tuple()]))
    return float(vals[0])


def classify_state(vf: ValueField, s: RelativeState, disc: CollisionDisc) -> SafetyClass:
    from .dynamics import signed_distance

    if signed_distance(s, disc) <= 0.0:
        return SafetyClass.COLLISION
    if value_at(vf, s) <= 0.0:
        return SafetyClass.UNSAFE
    return SafetyClass.SAFE


def classify_states(
    vf: ValueField, points: np.ndarray, disc: CollisionDisc
) -> np.ndarray:
    """Vectorized classification; returns an object array of SafetyClass."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = np.sqrt(pts[:, 0] ** 2 + pts[:, 2] ** 2) - disc.radius
    vals, _ = values_at(vf, pts)
    out = np.empty(len(pts), dtype=object)
    out[:] = SafetyClass.SAFE
    out[vals <= 0.0] = SafetyClass.UNSAFE
    out[g <= 0.0] = SafetyClass.COLLISION
    return out


def unsafe_fraction(vf: ValueField) -> float:
    """Fraction of grid nodes in the zero sublevel set {v <= 0}."""
    return float(np.mean(vf.values <= 0.0))


# --- VF1 file format ----------------------------------------------------------


def save_vf1(vf: ValueField, path) -> None:
    header = {
        "format": "VF1",
        "mins": list(vf.grid.mins),
        "maxs": list(vf.grid.maxs),
        "shape": list(vf.grid.shape),
        "horizon": vf.horizon,
        "meta": vf.meta,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(blob + b"\n")
        fh.write(np.ascontiguousarray(vf.values, dtype="<f8").tobytes())


def load_vf1(path) -> ValueField:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt VF1 header: {exc}") from exc
    if header.get("format") != "VF1":
        raise ValueError("not a VF1 file")
    grid = Grid3(tuple(header["mins"]), tuple(header["maxs"]), tuple(header["shape"]))
    if len(payload) != 8 * grid.n_nodes:
        raise ValueError(
            f"VF1 payload holds {len(payload) // 8} values, header implies {grid.n_nodes}"
        )
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).copy()
    return ValueField(grid, values, float(header["horizon"]), dict(header["meta"]))
