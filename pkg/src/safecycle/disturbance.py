"""Comfort model: label states by safety value, train a one-class autoencoder
on safe states, and map reconstruction error to an outlier score.

The score feeds the reachability solver's modulated disturbance profile:
states the cyclist population rarely visits reconstruct poorly, score close
to 1, and inflate the assumed cyclist acceleration bound there.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import neuralnet as nn
from .reachability import ValueField, values_at

__all__ = [
    "StateSample",
    "SafetyLabel",
    "Normalizer",
    "AutoencoderConfig",
    "ComfortModel",
    "label_dataset",
    "normalize_features",
    "synthesize_states",
    "train_autoencoder",
    "classify_comfort",
    "evaluate_classifier",
    "reconstruction_errors",
    "assemble_labeled_dataset",
    "samples_from_events",
    "as_disturbance_score",
    "save_comfort_model",
    "load_comfort_model",
    "save_labeled_csv",
    "load_labeled_csv",
]

FEATURES = ("dx", "dv", "dy", "da")


@dataclass(frozen=True)
class StateSample:
    dx: float
    dv: float
    dy: float
    da: float

    def __post_init__(self):
        for name in FEATURES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"StateSample.{name} must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dv, self.dy, self.da])


class SafetyLabel(enum.Enum):
    SAFE = "safe"
    DANGEROUS = "dangerous"


def _to_matrix(samples: Sequence[StateSample]) -> np.ndarray:
    return np.array([[s.dx, s.dv, s.dy, s.da] for s in samples], dtype=float)


def label_dataset(
    samples: Sequence[StateSample], vf: ValueField
) -> list[SafetyLabel]:
    """v > 0 on the (dx, dv, dy) projection => SAFE, else DANGEROUS."""
    if not samples:
        return []
    pts = _to_matrix(samples)[:, :3]
    vals, _ = values_at(vf, pts)
    return [SafetyLabel.SAFE if v > 0.0 else SafetyLabel.DANGEROUS for v in vals]


@dataclass(frozen=True)
class Normalizer:
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def __post_init__(self):
        for lo, hi in zip(self.mins, self.maxs):
            if not hi > lo:
                raise ValueError("normalizer ranges must be non-degenerate")

    def apply(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Min-max scale rows of x; flags rows outside the training range."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        lo = np.array(self.mins)
        hi = np.array(self.maxs)
        out = (x - lo) / (hi - lo)
        extrapolated = np.any((out < 0.0) | (out > 1.0), axis=1)
        return out, extrapolated

    def invert(self, x: np.ndarray) -> np.ndarray:
        lo = np.array(self.mins)
        hi = np.array(self.maxs)
        return np.asarray(x, dtype=float) * (hi - lo) + lo


def normalize_features(
    samples: Sequence[StateSample],
) -> tuple[np.ndarray, Normalizer]:
    """Per-feature min-max scaling to [0, 1]; rejects constant columns."""
    m = _to_matrix(samples)
    if len(m) < 2:
        raise ValueError("need at least 2 samples to normalize")
    mins = m.min(axis=0)
    maxs = m.max(axis=0)
    for i, name in enumerate(FEATURES):
        if maxs[i] <= mins[i]:
            raise ValueError(f"feature {name!r} is degenerate (constant column)")
    norm = Normalizer(tuple(mins), tuple(maxs))
    scaled, _ = norm.apply(m)
    return scaled, norm


def synthesize_states(
    samples: Sequence[StateSample],
    n: int,
    seed: int,
    d_max: float = 1.5,
    ttc_range: tuple[float, float] = (0.5, 20.0),
) -> list[StateSample]:
    """Fabricate n extra samples by re-drawing time-to-collision and da.

    Closing base samples (dv < 0, dx > 0) get dv rescaled so -dx/dv equals a
    log-uniform TTC draw; opening ones get additive dv jitter.  da is redrawn
    uniformly within +-d_max.  Returns the input list plus the new samples.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not samples:
        raise ValueError("need a nonempty seed set")
    rng = np.random.default_rng(seed)
    out = list(samples)
    log_lo, log_hi = math.log(ttc_range[0]), math.log(ttc_range[1])
    for _ in range(n):
        base = samples[int(rng.integers(len(samples)))]
        if base.dv < 0.0 and base.dx > 0.0:
            ttc = math.exp(rng.uniform(log_lo, log_hi))
            dv = -base.dx / ttc
        else:
            dv = base.dv + rng.uniform(-1.0, 1.0)
        da = rng.uniform(-d_max, d_max)
        out.append(StateSample(base.dx, dv, base.dy, da))
    return out


@dataclass(frozen=True)
class AutoencoderConfig:
    hidden: tuple[int, ...] = (3, 2, 3)
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    holdout_fraction: float = 0.2
    percentile: float = 95.0

    def sizes(self, n_features: int = 4) -> list[int]:
        return [n_features, *self.hidden, n_features]

    def activations(self) -> list[str]:
        return ["tanh"] * len(self.hidden) + ["identity"]


@dataclass
class ComfortModel:
    normalizer: Normalizer
    net: nn.Mlp
    tau: float
    score_scale: float  # reconstruction error mapping to score 1.0
    loss_history: list[float] = field(default_factory=list)
    config: AutoencoderConfig = field(default_factory=AutoencoderConfig)

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be > 0")


def _errors_normalized(net: nn.Mlp, x: np.ndarray) -> np.ndarray:
    recon = nn.forward(net, x)
    return np.mean((recon - x) ** 2, axis=1)


def reconstruction_errors(model: ComfortModel, samples: Sequence[StateSample]) -> np.ndarray:
    x, _ = model.normalizer.apply(_to_matrix(samples))
    return _errors_normalized(model.net, x)


def train_autoencoder(
    samples: Sequence[StateSample],
    config: AutoencoderConfig | None = None,
    seed: int = 0,
    labels: Sequence[SafetyLabel] | None = None,
) -> ComfortModel:
    """One-class training on safe states; threshold at the error percentile
    of a held-out safe split.

    If labels are supplied, any DANGEROUS entry is rejected: the target
    class alone defines the normal pattern.
    """
    cfg = config or AutoencoderConfig()
    if labels is not None:
        if len(labels) != len(samples):
            raise ValueError("labels/samples length mismatch")
        if any(l is SafetyLabel.DANGEROUS for l in labels):
            raise ValueError("training set must contain only safe-labeled samples")
    if len(samples) < 10:
        raise ValueError("need at least 10 safe samples")

    x_all, normalizer = normalize_features(samples)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x_all))
    n_hold = max(1, int(round(cfg.holdout_fraction * len(x_all))))
    hold = x_all[order[:n_hold]]
    train = x_all[order[n_hold:]]
    if len(train) == 0:
        raise ValueError("holdout fraction leaves no training data")

    net = nn.init_mlp(cfg.sizes(x_all.shape[1]), cfg.activations(), seed)
    adam = nn.AdamState.for_net(net)
    losses = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(len(train))
        epoch_loss = 0.0
        for start in range(0, len(train), cfg.batch_size):
            batch = train[perm[start : start + cfg.batch_size]]
            pred = nn.forward(net, batch)
            loss, grad = nn.mse_loss(pred, batch)
            grads = nn.backprop(net, batch, grad)
            nn.adam_step(net, grads, adam, cfg.learning_rate)
            epoch_loss += loss * len(batch)
        losses.append(epoch_loss / len(train))

    tau = float(np.percentile(_errors_normalized(net, hold), cfg.percentile))
    if tau <= 0.0:
        tau = 1e-12
    return ComfortModel(
        normalizer=normalizer,
        net=net,
        tau=tau,
        score_scale=2.0 * tau,
        loss_history=losses,
        config=cfg,
    )


def classify_comfort(model: ComfortModel, x: StateSample) -> tuple[str, float]:
    """Returns (label, score): label "outlier" iff error > tau, score in [0,1]."""
    err = float(reconstruction_errors(model, [x])[0])
    label = "outlier" if err > model.tau else "target"
    score = float(np.clip(err / model.score_scale, 0.0, 1.0))
    return label, score


def evaluate_classifier(
    model: ComfortModel,
    samples: Sequence[StateSample],
    labels: Sequence[SafetyLabel],
) -> dict:
    """AUC over the error ranking plus precision/recall at tau
    (positive class: DANGEROUS ~ outlier)."""
    if len(samples) != len(labels):
        raise ValueError("labels/samples length mismatch")
    y = np.array([l is SafetyLabel.DANGEROUS for l in labels])
    if y.all() or not y.any():
        raise ValueError("holdout must contain both labels")
    errors = reconstruction_errors(model, samples)

    # Mann-Whitney AUC with average ranks for ties
    order = np.argsort(errors, kind="stable")
    ranks = np.empty(len(errors))
    sorted_err = errors[order]
    i = 0
    while i < len(sorted_err):
        j = i
        while j + 1 < len(sorted_err) and sorted_err[j + 1] == sorted_err[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    pred = errors > model.tau
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return {"auc": float(auc), "precision": precision, "recall": recall}


def assemble_labeled_dataset(
    base_samples: Sequence[StateSample],
    vf: ValueField,
    n_total: int,
    seed: int,
    band: tuple[float, float] = (0.05, 0.10),
    d_max: float = 1.5,
) -> tuple[list[StateSample], list[SafetyLabel]]:
    """Compose a dataset of real + synthesized samples whose dangerous share
    is steered into the band (resampling until both pools suffice)."""
    if n_total < 20:
        raise ValueError("n_total too small to steer class balance")
    target = 0.5 * (band[0] + band[1])
    n_dangerous = int(round(target * n_total))
    n_safe = n_total - n_dangerous

    grid = vf.grid

    def in_box(s: StateSample) -> bool:
        return (
            grid.mins[0] <= s.dx <= grid.maxs[0]
            and grid.mins[1] <= s.dv <= grid.maxs[1]
            and grid.mins[2] <= s.dy <= grid.maxs[2]
        )

    def sort_pools(cands, safe_pool, danger_pool):
        # safe states must lie on the solved window so the one-class
        # training distribution (and its normalizer) stays natural;
        # dangerous states may be arbitrarily extreme fabrications and are
        # labeled at the clamped projection per the value_at contract
        for s, l in zip(cands, label_dataset(cands, vf)):
            if l is SafetyLabel.DANGEROUS:
                danger_pool.append(s)
            elif in_box(s):
                safe_pool.append(s)

    samples = list(base_samples)
    safe_pool: list[StateSample] = []
    danger_pool: list[StateSample] = []
    sort_pools(samples, safe_pool, danger_pool)
    if not safe_pool and not danger_pool:
        raise ValueError("no usable base samples")
    rng = np.random.default_rng(seed)
    attempt = 0
    while len(safe_pool) < n_safe or len(danger_pool) < n_dangerous:
        attempt += 1
        if attempt > 200:
            raise RuntimeError("could not steer dangerous fraction into band")
        # short on dangerous states: re-seed synthesis from the close-passing
        # moments (approaching, sub-meter lateral) and bias TTC low
        hunting = len(danger_pool) < n_dangerous
        seeds = list(base_samples)
        ttc = (0.5, 20.0)
        if hunting:
            ttc = (0.5, 2.5)
            near = [s for s in base_samples if s.dy < 1.0 and s.dx > 0.0]
            if near:
                seeds = near
        fresh = synthesize_states(
            seeds,
            max(n_total // 2, 500),
            seed=int(rng.integers(2**31)),
            d_max=d_max,
            ttc_range=ttc,
        )[len(seeds) :]
        sort_pools(fresh, safe_pool, danger_pool)

    chosen_safe = [safe_pool[i] for i in rng.choice(len(safe_pool), n_safe, replace=False)]
    chosen_danger = [
        danger_pool[i] for i in rng.choice(len(danger_pool), n_dangerous, replace=False)
    ]
    out = chosen_safe + chosen_danger
    out_labels = [SafetyLabel.SAFE] * n_safe + [SafetyLabel.DANGEROUS] * n_dangerous
    shuffle = rng.permutation(n_total)
    return [out[i] for i in shuffle], [out_labels[i] for i in shuffle]


def samples_from_events(events) -> list[StateSample]:
    """One sample per record; da is the finite-differenced cyclist speed."""
    out = []
    for ev in events:
        recs = ev.records
        ts = [r.timestamp for r in recs]
        if ev.has_ego_speed:
            cyc = [r.ego_speed + r.dv for r in recs]
        else:
            cyc = [r.dv for r in recs]  # constant-ego assumption
        for i, r in enumerate(recs):
            if i + 1 < len(recs):
                da = (cyc[i + 1] - cyc[i]) / (ts[i + 1] - ts[i])
            elif len(recs) > 1:
                da = (cyc[i] - cyc[i - 1]) / (ts[i] - ts[i - 1])
            else:
                da = 0.0
            out.append(StateSample(r.dx, r.dv, r.dy, da))
    return out


def as_disturbance_score(model: ComfortModel) -> Callable[[np.ndarray], np.ndarray]:
    """Adapter for reachability.ModulatedProfile: score (n, 3) kinematic
    states with a neutral cyclist input da = 0."""

    def score(states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(np.asarray(states, dtype=float))
        x4 = np.column_stack([states, np.zeros(len(states))])
        xn, _ = model.normalizer.apply(x4)
        err = _errors_normalized(model.net, xn)
        return np.clip(err / model.score_scale, 0.0, 1.0)

    return score


# --- persistence ---------------------------------------------------------------


def save_comfort_model(model: ComfortModel, base_path) -> tuple[Path, Path]:
    """NN1 checkpoint plus a JSON sidecar (normalizer, tau, scale, config)."""
    base = Path(base_path)
    nn1 = base.with_suffix(".nn1")
    sidecar = base.with_suffix(".json")
    nn.save_nn1(model.net, nn1, hyperparameters={"role": "autoencoder"})
    payload = {
        "tau": model.tau,
        "score_scale": model.score_scale,
        "normalizer": {"mins": list(model.normalizer.mins), "maxs": list(model.normalizer.maxs)},
        "loss_history": model.loss_history,
        "config": {
            "hidden": list(model.config.hidden),
            "epochs": model.config.epochs,
            "batch_size": model.config.batch_size,
            "learning_rate": model.config.learning_rate,
            "holdout_fraction": model.config.holdout_fraction,
            "percentile": model.config.percentile,
        },
    }
    with open(sidecar, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    return nn1, sidecar


def load_comfort_model(base_path) -> ComfortModel:
    base = Path(base_path)
    net, _ = nn.load_nn1(base.with_suffix(".nn1"))
    with open(base.with_suffix(".json")) as fh:
        payload = json.load(fh)
    cfg = payload["config"]
    return ComfortModel(
        normalizer=Normalizer(
            tuple(payload["normalizer"]["mins"]), tuple(payload["normalizer"]["maxs"])
        ),
        net=net,
        tau=float(payload["tau"]),
        score_scale=float(payload["score_scale"]),
        loss_history=[float(x) for x in payload["loss_history"]],
        config=AutoencoderConfig(
            hidden=tuple(cfg["hidden"]),
            epochs=int(cfg["epochs"]),
            batch_size=int(cfg["batch_size"]),
            learning_rate=float(cfg["learning_rate"]),
            holdout_fraction=float(cfg["holdout_fraction"]),
            percentile=float(cfg["percentile"]),
        ),
    )


def save_labeled_csv(samples: Sequence[StateSample], labels: Sequence[SafetyLabel], path) -> None:
    if len(samples) != len(labels):
        raise ValueError("labels/samples length mismatch")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dx", "dv", "dy", "da", "label"])
        for s, l in zip(samples, labels):
            writer.writerow([repr(s.dx), repr(s.dv), repr(s.dy), repr(s.da), l.value])


def load_labeled_csv(path) -> tuple[list[StateSample], list[SafetyLabel]]:
    samples, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            samples.append(
                StateSample(float(row["dx"]), float(row["dv"]), float(row["dy"]), float(row["da"]))
            )
            labels.append(SafetyLabel(row["label"]))
    return samples, labels
