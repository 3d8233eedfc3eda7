"""Episode environment in lane coordinates.

The vehicle is a rate-limited unicycle: speed tracks the commanded speed at
up to max_accel, yaw tracks the commanded yaw at up to max_yaw_rate.  The
cyclist rides a fixed lateral line and either replays a recorded speed
profile or reacts with bounded random acceleration (optionally inflated by
the comfort model's outlier score).

Per-episode trajectory logs use the CSV schema
`t,veh_x,veh_y,veh_speed,veh_yaw,cyc_x,cyc_y,dx,dv,dy,action_id,reward,value,cause`.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .dynamics import RelativeState
from .events import CyclistEvent

__all__ = [
    "Scenario",
    "WorldState",
    "Cause",
    "StepOutcome",
    "SimEnv",
    "TrajectoryLog",
    "relative_state",
    "observation",
    "run_episode",
    "human_replay_log",
]


@dataclass(frozen=True)
class Scenario:
    lane_left: float = -1.75
    lane_right: float = 1.75
    goal_x: float = 100.0
    dt: float = 0.1
    max_duration: float = 60.0
    start_speed: float = 8.0
    max_accel: float = 3.0
    max_yaw_rate: float = 0.5
    collision_radius: float = 1.0
    # dx, dv, dy, dist-left, dist-right, dist-goal
    obs_scales: tuple[float, float, float, float, float, float] = (
        50.0,
        10.0,
        6.0,
        3.5,
        3.5,
        100.0,
    )

    def __post_init__(self):
        if not self.lane_left < self.lane_right:
            raise ValueError("lane_left must be < lane_right")
        if not self.goal_x > 0.0:
            raise ValueError("goal must be ahead of the vehicle start")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")


@dataclass
class WorldState:
    veh_x: float
    veh_y: float
    veh_speed: float
    veh_yaw: float
    cyc_x: float
    cyc_y: float
    cyc_speed: float
    t: float

    def __post_init__(self):
        if self.veh_speed < 0 or self.cyc_speed < 0:
            raise ValueError("speeds must be >= 0")
        if not -math.pi / 2 < self.veh_yaw < math.pi / 2:
            raise ValueError("yaw must lie in (-pi/2, pi/2)")


class Cause(enum.Enum):
    NONE = "none"
    COLLISION = "collision"
    GOAL = "goal"
    TIMEOUT = "timeout"


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    components: dict
    done: bool
    cause: Cause
    world: WorldState
    rel: RelativeState

    def __post_init__(self):
        if self.done != (self.cause is not Cause.NONE):
            raise ValueError("done flag must mirror the termination cause")


def relative_state(world: WorldState) -> RelativeState:
    """Cyclist pose/speed relative to the vehicle's longitudinal axis."""
    long_speed = world.veh_speed * math.cos(world.veh_yaw)
    return RelativeState(
        dx=world.cyc_x - world.veh_x,
        dv=world.cyc_speed - long_speed,
        dy=world.cyc_y - world.veh_y,
    )


def observation(world: WorldState, scenario: Scenario) -> np.ndarray:
    rel = relative_state(world)
    s = scenario.obs_scales
    return np.array(
        [
            rel.dx / s[0],
            rel.dv / s[1],
            rel.dy / s[2],
            (world.veh_y - scenario.lane_left) / s[3],
            (scenario.lane_right - world.veh_y) / s[4],
            max(scenario.goal_x - world.veh_x, 0.0) / s[5],
        ]
    )


def _slew(current: float, target: float, max_delta: float) -> float:
    return current + float(np.clip(target - current, -max_delta, max_delta))


# reward_fn(prev_world, next_world, cause) -> (total, components)
RewardFn = Callable[[WorldState, WorldState, Cause], tuple[float, dict]]


class SimEnv:
    """One episode at a time; single-writer.

    Cyclist source is replay (an event's speed profile) when reset() gets an
    event, else reactive with uniformly random bounded acceleration.
    """

    def __init__(
        self,
        scenario: Scenario,
        reward_fn: RewardFn | None = None,
        d_max: float = 1.5,
        comfort=None,
        kappa: float = 1.0,
    ):
        self.scenario = scenario
        self.reward_fn = reward_fn
        self.d_max = d_max
        self.comfort = comfort
        self.kappa = kappa
        self.world: WorldState | None = None
        self._done = True
        self._steps = 0
        self._event: CyclistEvent | None = None
        self._replay_ts: np.ndarray | None = None
        self._replay_speeds: np.ndarray | None = None
        self._replay_ys: np.ndarray | None = None
        self._rng = np.random.default_rng(0)
        self._last_d = 0.0

    # -- lifecycle -------------------------------------------------------

    def reset(
        self, event: CyclistEvent | None = None, seed: int | None = None
    ) -> tuple[WorldState, np.ndarray]:
        sc = self.scenario
        self._event = event
        self._steps = 0
        self._last_d = 0.0
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        if event is not None:
            if not event.records:
                raise ValueError("empty event")
            first = event.records[0]
            veh_speed = first.ego_speed if first.ego_speed is not None else sc.start_speed
            self._replay_ts = event.timestamps() - event.records[0].timestamp
            if event.has_ego_speed:
                self._replay_speeds = np.array(
                    [r.ego_speed + r.dv for r in event.records]
                )
            else:
                self._replay_speeds = veh_speed + np.array([r.dv for r in event.records])
            # the recorded lateral range is the cyclist's absolute line under
            # a straight recording ego
            self._replay_ys = np.array([r.dy for r in event.records])
            world = WorldState(
                veh_x=0.0,
                veh_y=0.0,
                veh_speed=float(veh_speed),
                veh_yaw=0.0,
                cyc_x=float(first.dx),
                cyc_y=float(first.dy),
                cyc_speed=float(self._replay_speeds[0]),
                t=0.0,
            )
        else:
            self._replay_ts = None
            self._replay_speeds = None
            self._replay_ys = None
            world = WorldState(
                veh_x=0.0,
                veh_y=0.0,
                veh_speed=sc.start_speed,
                veh_yaw=0.0,
                cyc_x=float(self._rng.uniform(15.0, 45.0)),
                cyc_y=float(self._rng.uniform(1.0, 3.0)),
                cyc_speed=float(self._rng.uniform(3.0, 6.0)),
                t=0.0,
            )
        self.world = world
        self._done = False
        return world, observation(world, sc)

    # -- cyclist ----------------------------------------------------------

    def cyclist_input(self) -> float:
        """Cyclist acceleration for the current step."""
        if self._replay_speeds is not None:
            ts, spd = self._replay_ts, self._replay_speeds
            t = self.world.t
            i = int(np.searchsorted(ts, t + 1e-9) - 1)
            i = max(i, 0)
            if i + 1 >= len(ts):
                return 0.0  # past end of the recording: hold last speed
            return float((spd[i + 1] - spd[i]) / (ts[i + 1] - ts[i]))
        d_eff = self.d_max
        if self.comfort is not None:
            from .disturbance import StateSample, classify_comfort

            rel = relative_state(self.world)
            _, score = classify_comfort(
                self.comfort, StateSample(rel.dx, rel.dv, rel.dy, self._last_d)
            )
            d_eff = self.d_max * (1.0 + self.kappa * score)
        d = float(self._rng.uniform(-d_eff, d_eff))
        self._last_d = d
        return d

    # -- stepping ---------------------------------------------------------

    def step(self, action: tuple[float, float]) -> StepOutcome:
        if self._done or self.world is None:
            raise RuntimeError("stepping a finished episode; call reset() first")
        sc = self.scenario
        dt = sc.dt
        w = self.world
        speed_cmd, yaw_cmd = float(action[0]), float(action[1])

        d = self.cyclist_input()
        cyc_speed = max(0.0, w.cyc_speed + d * dt)
        cyc_x = w.cyc_x + 0.5 * (w.cyc_speed + cyc_speed) * dt
        if self._replay_ys is not None:
            cyc_y = float(
                np.interp(self._steps * dt + dt, self._replay_ts, self._replay_ys)
            )
        else:
            cyc_y = w.cyc_y

        yaw = _slew(w.veh_yaw, yaw_cmd, sc.max_yaw_rate * dt)
        speed = max(0.0, _slew(w.veh_speed, speed_cmd, sc.max_accel * dt))
        avg_speed = 0.5 * (w.veh_speed + speed)
        avg_yaw = 0.5 * (w.veh_yaw + yaw)
        veh_x = w.veh_x + avg_speed * math.cos(avg_yaw) * dt
        veh_y = w.veh_y + avg_speed * math.sin(avg_yaw) * dt

        self._steps += 1
        new = WorldState(
            veh_x=veh_x,
            veh_y=veh_y,
            veh_speed=speed,
            veh_yaw=yaw,
            cyc_x=cyc_x,
            cyc_y=cyc_y,
            cyc_speed=cyc_speed,
            t=self._steps * dt,
        )

        dist = math.hypot(new.cyc_x - new.veh_x, new.cyc_y - new.veh_y)
        if dist <= sc.collision_radius:
            cause = Cause.COLLISION
        elif new.veh_x >= sc.goal_x:
            cause = Cause.GOAL
        elif new.t >= sc.max_duration - 1e-9:
            cause = Cause.TIMEOUT
        else:
            cause = Cause.NONE

        if self.reward_fn is not None:
            reward, components = self.reward_fn(w, new, cause)
        else:
            reward, components = 0.0, {}

        self.world = new
        self._done = cause is not Cause.NONE
        return StepOutcome(
            observation=observation(new, sc),
            reward=float(reward),
            components=components,
            done=self._done,
            cause=cause,
            world=new,
            rel=relative_state(new),
        )


# --- trajectory logs -----------------------------------------------------------

_LOG_COLUMNS = [
    "t",
    "veh_x",
    "veh_y",
    "veh_speed",
    "veh_yaw",
    "cyc_x",
    "cyc_y",
    "dx",
    "dv",
    "dy",
    "action_id",
    "reward",
    "value",
    "cause",
]


@dataclass
class TrajectoryLog:
    event_id: str
    dt: float
    rows: list[dict] = field(default_factory=list)
    cause: Cause = Cause.NONE

    @property
    def n_steps(self) -> int:
        return len(self.rows)

    @property
    def duration(self) -> float:
        return self.rows[-1]["t"] if self.rows else 0.0

    @property
    def total_reward(self) -> float:
        return sum(r["reward"] for r in self.rows)

    def states(self) -> np.ndarray:
        return np.array([[r["dx"], r["dv"], r["dy"]] for r in self.rows])

    def values(self) -> np.ndarray:
        return np.array([r["value"] for r in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_LOG_COLUMNS)
            for i, r in enumerate(self.rows):
                cause = self.cause.value if i == len(self.rows) - 1 else Cause.NONE.value
                writer.writerow(
                    [repr(float(r[c])) for c in _LOG_COLUMNS[:10]]
                    + [str(int(r["action_id"])), repr(float(r["reward"])), repr(float(r["value"])), cause]
                )

    @classmethod
    def from_csv(cls, path, event_id: str | None = None) -> "TrajectoryLog":
        rows = []
        cause = Cause.NONE
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rows.append(
                    {c: float(row[c]) for c in _LOG_COLUMNS[:10]}
                    | {
                        "action_id": int(row["action_id"]),
                        "reward": float(row["reward"]),
                        "value": float(row["value"]),
                    }
                )
                if row["cause"] != Cause.NONE.value:
                    cause = Cause(row["cause"])
        dt = rows[1]["t"] - rows[0]["t"] if len(rows) > 1 else 0.0
        return cls(event_id=event_id or str(path), dt=dt, rows=rows, cause=cause)


def _log_row(out: StepOutcome, action_id: int, value: float) -> dict:
    w, rel = out.world, out.rel
    return {
        "t": w.t,
        "veh_x": w.veh_x,
        "veh_y": w.veh_y,
        "veh_speed": w.veh_speed,
        "veh_yaw": w.veh_yaw,
        "cyc_x": w.cyc_x,
        "cyc_y": w.cyc_y,
        "dx": rel.dx,
        "dv": rel.dv,
        "dy": rel.dy,
        "action_id": action_id,
        "reward": out.reward,
        "value": value,
    }


def run_episode(
    env: SimEnv,
    policy: Callable[[np.ndarray], tuple[int, tuple[float, float]]],
    event: CyclistEvent | None = None,
    seed: int | None = None,
    value_fn: Callable[[RelativeState], float] | None = None,
    event_id: str | None = None,
) -> TrajectoryLog:
    """Roll one episode to termination under `policy(obs) -> (id, action)`."""
    _, obs = env.reset(event=event, seed=seed)
    log = TrajectoryLog(
        event_id=event_id or (event.event_id if event else f"seed:{seed}"),
        dt=env.scenario.dt,
    )
    done = False
    while not done:
        action_id, action = policy(obs)
        out = env.step(action)
        value = value_fn(out.rel) if value_fn is not None else float("nan")
        log.rows.append(_log_row(out, action_id, value))
        obs = out.observation
        done = out.done
    log.cause = out.cause
    return log


def human_replay_log(
    event: CyclistEvent,
    scenario: Scenario,
    reward_fn: RewardFn | None = None,
    value_fn: Callable[[RelativeState], float] | None = None,
) -> TrajectoryLog:
    """Drive the env with the event's recorded vehicle profile (ground truth).

    The recording frame assumes a straight ego, so the human commands are
    the next recorded ego speed at zero yaw; the cyclist replays both its
    speed profile and its recorded lateral line.
    """
    if not event.has_ego_speed:
        raise ValueError("human replay needs ego_speed in the event records")
    env = SimEnv(scenario, reward_fn=reward_fn)
    env.reset(event=event)
    ts = event.timestamps() - event.records[0].timestamp
    ego = np.array([r.ego_speed for r in event.records])
    log = TrajectoryLog(event_id=event.event_id, dt=scenario.dt)
    done = False
    k = 0
    while not done and k + 1 < len(ts):
        out = env.step((float(ego[k + 1]), 0.0))
        value = value_fn(out.rel) if value_fn is not None else float("nan")
        log.rows.append(_log_row(out, -1, value))
        done = out.done
        k += 1
    if not done:
        # recording ended before a terminal condition: coast to goal
        while not done:
            out = env.step((float(ego[-1]), 0.0))
            value = value_fn(out.rel) if value_fn is not None else float("nan")
            log.rows.append(_log_row(out, -1, value))
            done = out.done
    log.cause = out.cause
    return log
