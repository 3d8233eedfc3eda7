"""Safety-shaped deep Q-learning over a discrete (speed, yaw) action set.

The per-step reward folds the reachability value function in as a bounded
safety channel:

    r = lambda_v * clamp(v(s'), -v_cap, v_cap)/v_cap
      + lambda_g * (goal distance decrease)/(ref_speed * dt)
      - lambda_t
      + terminal bonus (goal) or penalty (collision)

Updates are standard DQN: uniform experience replay, a frozen target
network refreshed periodically, TD target R + gamma*max_a' Q_target(s',a'),
MSE on the taken action's output, Adam.  A tabular Bellman operator backs
the contraction property checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import neuralnet as nn
from .dynamics import RelativeState
from .reachability import ValueField, value_at
from .simenv import Cause, Scenario, SimEnv, WorldState, relative_state

__all__ = [
    "ActionSet",
    "Transition",
    "ReplayBuffer",
    "RewardWeights",
    "TrainConfig",
    "QPolicy",
    "TrainingLog",
    "TrainingDiverged",
    "default_action_set",
    "shaped_reward",
    "make_shaped_reward",
    "select_action",
    "td_target",
    "train_step",
    "train",
    "tabular_backup",
    "alpha_schedule_check",
    "save_policy",
    "load_policy",
]


@dataclass(frozen=True)
class ActionSet:
    pairs: tuple[tuple[float, float], ...]  # (speed_cmd m/s, yaw_cmd rad)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("action set must be nonempty")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate actions")

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, i: int) -> tuple[float, float]:
        return self.pairs[i]


def default_action_set(
    speeds: Sequence[float] = (0.0, 2.5, 5.0, 7.5, 10.0),
    yaws: Sequence[float] = (-0.2, -0.1, 0.0, 0.1, 0.2),
) -> ActionSet:
    return ActionSet(tuple((s, y) for s in speeds for y in yaws))


class Transition(NamedTuple):
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


class ReplayBuffer:
    """Bounded FIFO with uniform sampling."""

    def __init__(self, capacity: int = 50_000):
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, tr: Transition) -> None:
        if not np.isfinite(tr.reward):
            raise ValueError("reward must be finite")
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._next] = tr
            self._next = (self._next + 1) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator) -> list[Transition]:
        if batch > len(self._items):
            raise ValueError("cannot sample more transitions than stored")
        idx = rng.choice(len(self._items), size=batch, replace=False)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class RewardWeights:
    """Per-step reward weights.

    lambda_t defaults to lambda_v + lambda_g so a full-speed far-field step
    nets zero and idling is strictly negative.  Anything smaller leaves the
    drive/stop action gap at (1-gamma)*V, which vanishes against the Q
    scale and teaches the greedy policy to stall short of the goal.
    """

    lambda_v: float = 1.0
    lambda_g: float = 1.0
    lambda_t: float = 2.0
    terminal_bonus: float = 10.0
    terminal_penalty: float = 10.0
    v_cap: float = 5.0
    progress_ref_speed: float = 10.0


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    alpha: float = 1e-4
    lr_schedule: str = "constant"  # "constant" | "inverse_time"
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.5  # of the episode budget
    batch_size: int = 64
    buffer_capacity: int = 50_000
    target_refresh: int = 500
    train_period: int = 1
    warmup: int = 500
    episodes: int = 300
    hidden: tuple[int, ...] = (64, 64)
    seed: int = 0
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not self.alpha > 0.0:
            raise ValueError("alpha must be > 0")
        if self.lr_schedule not in ("constant", "inverse_time"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def learning_rate(self, k: int) -> float:
        if self.lr_schedule == "constant":
            return self.alpha
        return self.alpha * 1000.0 / (1000.0 + k)

    def epsilon(self, episode: int) -> float:
        decay = max(1.0, self.eps_decay_fraction * self.episodes)
        frac = min(1.0, episode / decay)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def shaped_reward(
    prev: WorldState,
    new: WorldState,
    cause: Cause,
    vf: ValueField,
    weights: RewardWeights,
    scenario: Scenario,
) -> tuple[float, dict]:
    """Safety + progress + time + terminal reward for one transition."""
    w = weights
    rel = relative_state(new)
    v = value_at(vf, rel)
    safety = w.lambda_v * float(np.clip(v, -w.v_cap, w.v_cap)) / w.v_cap
    dist_prev = max(scenario.goal_x - prev.veh_x, 0.0)
    dist_new = max(scenario.goal_x - new.veh_x, 0.0)
    progress = w.lambda_g * (dist_prev - dist_new) / (w.progress_ref_speed * scenario.dt)
    time_cost = -w.lambda_t
    terminal = 0.0
    if cause is Cause.GOAL:
        terminal = w.terminal_bonus
    elif cause is Cause.COLLISION:
        terminal = -w.terminal_penalty
    total = safety + progress + time_cost + terminal
    return total, {
        "safety": safety,
        "progress": progress,
        "time": time_cost,
        "terminal": terminal,
    }


def make_shaped_reward(vf: ValueField, weights: RewardWeights, scenario: Scenario):
    def fn(prev: WorldState, new: WorldState, cause: Cause) -> tuple[float, dict]:
        return shaped_reward(prev, new, cause, vf, weights, scenario)

    return fn


def select_action(
    qnet: nn.Mlp, obs: np.ndarray, eps: float, rng: np.random.Generator
) -> int:
    """epsilon-greedy; greedy ties break to the lowest index."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    if eps > 0.0 and rng.random() < eps:
        return int(rng.integers(len(qnet.biases[-1])))
    return int(np.argmax(nn.forward(qnet, obs)))


def td_target(qnet_target: nn.Mlp, tr: Transition, gamma: float) -> float:
    if tr.done:
        return float(tr.reward)
    return float(tr.reward + gamma * np.max(nn.forward(qnet_target, tr.next_obs)))


def train_step(
    qnet: nn.Mlp,
    qnet_target: nn.Mlp,
    batch: Sequence[Transition],
    gamma: float,
    adam: nn.AdamState,
    lr: float,
) -> float:
    """One DQN update; returns the batch MSE loss.

    Only the taken action's output receives gradient.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    obs = np.array([tr.obs for tr in batch])
    next_obs = np.array([tr.next_obs for tr in batch])
    actions = np.array([tr.action for tr in batch])
    rewards = np.array([tr.reward for tr in batch])
    done = np.array([tr.done for tr in batch])

    next_q = nn.forward(qnet_target, next_obs).max(axis=1)
    targets = rewards + gamma * np.where(done, 0.0, next_q)

    q = nn.forward(qnet, obs)
    pred = q[np.arange(len(batch)), actions]
    err = pred - targets
    loss = float(np.mean(err * err))
    grad_out = np.zeros_like(q)
    grad_out[np.arange(len(batch)), actions] = 2.0 * err / len(batch)
    grads = nn.backprop(qnet, obs, grad_out)
    nn.adam_step(qnet, grads, adam, lr)
    return loss


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class QPolicy:
    net: nn.Mlp
    actions: ActionSet
    obs_scales: tuple[float, ...]
    config: TrainConfig

    def greedy(self, obs: np.ndarray) -> tuple[int, tuple[float, float]]:
        idx = int(np.argmax(nn.forward(self.net, obs)))
        return idx, self.actions[idx]


@dataclass
class TrainingLog:
    records: list[dict] = field(default_factory=list)

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "steps", "return", "loss_mean", "epsilon", "collisions"])
            for r in self.records:
                writer.writerow(
                    [
                        r["episode"],
                        r["steps"],
                        repr(r["return"]),
                        repr(r["loss_mean"]),
                        repr(r["epsilon"]),
                        r["collisions"],
                    ]
                )

    def returns(self) -> np.ndarray:
        return np.array([r["return"] for r in self.records])


def train(
    env: SimEnv,
    config: TrainConfig,
    events: Sequence | None = None,
    actions: ActionSet | None = None,
) -> tuple[QPolicy, TrainingLog]:
    """Run the episode loop; deterministic under config.seed.

    Training events (replay mode) are cycled round-robin; without events the
    env resets in reactive mode with per-episode seeds.
    """
    action_set = actions or default_action_set()
    seq = np.random.SeedSequence(config.seed)
    action_rng, sample_rng, env_seed_rng = (
        np.random.default_rng(s) for s in seq.spawn(3)
    )

    obs_dim = 6
    qnet = nn.init_mlp(
        [obs_dim, *config.hidden, len(action_set)],
        ["relu"] * len(config.hidden) + ["identity"],
        seed=config.seed,
    )
    target = qnet.copy()
    adam = nn.AdamState.for_net(qnet)
    buffer = ReplayBuffer(config.buffer_capacity)
    log = TrainingLog()

    global_step = 0
    updates = 0
    for episode in range(config.episodes):
        eps = config.epsilon(episode)
        event = events[episode % len(events)] if events else None
        env_seed = int(env_seed_rng.integers(2**63))
        _, obs = env.reset(event=event, seed=env_seed)
        ep_return = 0.0
        ep_losses = []
        steps = 0
        done = False
        while not done:
            a = select_action(qnet, obs, eps, action_rng)
            out = env.step(action_set[a])
            buffer.push(Transition(obs, a, out.reward, out.observation, out.done))
            obs = out.observation
            ep_return += out.reward
            done = out.done
            steps += 1
            global_step += 1
            if (
                len(buffer) >= max(config.batch_size, config.warmup)
                and global_step % config.train_period == 0
            ):
                batch = buffer.sample(config.batch_size, sample_rng)
                updates += 1
                loss = train_step(
                    qnet, target, batch, config.gamma, adam, config.learning_rate(updates)
                )
                if not math.isfinite(loss) or loss > 1e6:
                    raise TrainingDiverged(f"loss {loss} at step {global_step}")
                ep_losses.append(loss)
            if global_step % config.target_refresh == 0:
                target = qnet.copy()
        log.records.append(
            {
                "episode": episode,
                "steps": steps,
                "return": ep_return,
                "loss_mean": float(np.mean(ep_losses)) if ep_losses else 0.0,
                "epsilon": eps,
                "collisions": int(out.cause is Cause.COLLISION),
            }
        )
    policy = QPolicy(qnet, action_set, env.scenario.obs_scales, config)
    return policy, log


# --- tabular operator and schedule check ----------------------------------------


def tabular_backup(
    q: np.ndarray, rewards: np.ndarray, next_state: np.ndarray, gamma: float
) -> np.ndarray:
    """F[Q](s,u) = R(s,u,s') + gamma * max_u' Q(s',u') on finite tables."""
    q = np.asarray(q, dtype=float)
    rewards = np.asarray(rewards, dtype=float)
    next_state = np.asarray(next_state, dtype=int)
    if q.shape != rewards.shape or q.shape != next_state.shape:
        raise ValueError("table shapes must match")
    n_states = q.shape[0]
    if next_state.min() < 0 or next_state.max() >= n_states:
        raise ValueError("dangling next-state index")
    return rewards + gamma * q[next_state].max(axis=-1)


def alpha_schedule_check(
    schedule: Callable[[np.ndarray], np.ndarray] | float, horizon_K: int
) -> dict:
    """Partial sums of alpha_k and alpha_k^2 plus divergence/convergence trends.

    `schedule` is a vectorized function of k = 1..K (or a constant).  Trend
    verdicts come from a tail-ratio test over doubling K: the tail past K/2
    of a divergent series stays comparable to (or outgrows) the tail before
    it, while a convergent tail keeps shrinking.
    """
    if horizon_K < 1:
        raise ValueError("horizon_K must be >= 1")
    k = np.arange(1, horizon_K + 1, dtype=float)
    alpha = np.full_like(k, float(schedule)) if np.isscalar(schedule) else np.asarray(
        schedule(k), dtype=float
    )
    if alpha.shape != k.shape:
        raise ValueError("schedule must return one alpha per k")
    sq = alpha * alpha

    def tail_ratio(series: np.ndarray) -> tuple[float, float]:
        n = len(series)
        if n < 4:
            return float(series.sum()), 2.0
        q1, q2 = n // 4, n // 2
        t_prev = float(series[q1:q2].sum())
        t_last = float(series[q2:].sum())
        if t_prev <= 0.0:
            return t_last, 0.0
        return t_last, t_last / t_prev

    tail_a, ratio_a = tail_ratio(alpha)
    tail_sq, ratio_sq = tail_ratio(sq)
    return {
        "sum_alpha": float(alpha.sum()),
        "sum_alpha_sq": float(sq.sum()),
        "sum_alpha_diverges": bool(tail_a > 1e-15 and ratio_a >= 0.75),
        "sum_alpha_sq_converges": bool(tail_sq <= 1e-15 or ratio_sq < 0.75),
    }


# --- persistence -----------------------------------------------------------------


def save_policy(policy: QPolicy, base_path) -> tuple[Path, Path]:
    base = Path(base_path)
    nn1 = base.with_suffix(".nn1")
    sidecar = base.with_suffix(".json")
    nn.save_nn1(policy.net, nn1, hyperparameters={"role": "qnet"})
    cfg = asdict(policy.config)
    cfg["hidden"] = list(policy.config.hidden)
    payload = {
        "actions": [list(p) for p in policy.actions.pairs],
        "obs_scales": list(policy.obs_scales),
        "config": cfg,
    }
    with open(sidecar, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    return nn1, sidecar


def load_policy(base_path) -> QPolicy:
    base = Path(base_path)
    net, _ = nn.load_nn1(base.with_suffix(".nn1"))
    with open(base.with_suffix(".json")) as fh:
        payload = json.load(fh)
    cfg = dict(payload["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    cfg["weights"] = RewardWeights(**cfg["weights"])
    return QPolicy(
        net=net,
        actions=ActionSet(tuple(tuple(p) for p in payload["actions"])),
        obs_scales=tuple(payload["obs_scales"]),
        config=TrainConfig(**cfg),
    )
