"""Trajectory evaluation: the five-number report, report comparison, and
value-field slice export for figures.

safety_factor is the mean over trajectories of the per-trajectory mean HJ
value (lower = less safe); a per-step global mean is kept as an auxiliary
field since both readings of "average value per trajectory" are defensible.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import CollisionDisc
from .reachability import SafetyClass, ValueField, classify_states, values_at
from .simenv import Cause, TrajectoryLog

__all__ = [
    "MetricsReport",
    "compute_metrics",
    "compare_reports",
    "export_slice",
    "write_reports_csv",
    "read_reports_csv",
]

METRIC_COLUMNS = [
    "safety_factor",
    "unsafe_pct",
    "time_sec",
    "collisions",
    "goal_reached",
]


@dataclass(frozen=True)
class MetricsReport:
    safety_factor: float
    unsafe_pct: float
    time_sec: float
    collisions: int
    goal_reached: float
    n_events: int
    safety_factor_stepwise: float
    event_set: str

    def __post_init__(self):
        if not 0.0 <= self.unsafe_pct <= 100.0:
            raise ValueError("unsafe_pct must lie in [0, 100]")
        if self.collisions < 0:
            raise ValueError("collisions must be >= 0")
        if not 0.0 <= self.goal_reached <= 1.0:
            raise ValueError("goal_reached must lie in [0, 1]")


def _event_set_id(logs: Sequence[TrajectoryLog]) -> str:
    joined = "|".join(sorted(l.event_id for l in logs))
    return hashlib.sha256(joined.encode()).hexdigest()[:16]


def compute_metrics(
    logs: Sequence[TrajectoryLog], vf: ValueField, disc: CollisionDisc
) -> MetricsReport:
    if not logs:
        raise ValueError("need at least one trajectory log")
    radius = vf.meta.get("collision_radius")
    if radius is not None and abs(radius - disc.radius) > 1e-9:
        raise ValueError(
            f"field was solved for radius {radius}, metrics asked for {disc.radius}"
        )
    total_steps = 0
    unsafe_steps = 0
    traj_means = []
    all_values = []
    collisions = 0
    goals = 0
    time_sec = 0.0
    for log in logs:
        if log.n_steps == 0:
            raise ValueError(f"log {log.event_id} has no steps")
        states = log.states()
        classes = classify_states(vf, states, disc)
        unsafe_steps += int(np.sum(classes != SafetyClass.SAFE))
        total_steps += len(states)
        vals, _ = values_at(vf, states)
        traj_means.append(float(np.mean(vals)))
        all_values.append(vals)
        time_sec += log.duration
        collisions += int(log.cause is Cause.COLLISION)
        goals += int(log.cause is Cause.GOAL)
    return MetricsReport(
        safety_factor=float(np.mean(traj_means)),
        unsafe_pct=100.0 * unsafe_steps / total_steps,
        time_sec=time_sec,
        collisions=collisions,
        goal_reached=goals / len(logs),
        n_events=len(logs),
        safety_factor_stepwise=float(np.mean(np.concatenate(all_values))),
        event_set=_event_set_id(logs),
    )


_BETTER_HIGH = {"safety_factor": True, "unsafe_pct": False, "time_sec": False,
                "collisions": False, "goal_reached": True}


def compare_reports(a: MetricsReport, b: MetricsReport) -> dict:
    """Per-metric deltas (a - b) and which report dominates each metric."""
    if a.event_set != b.event_set:
        raise ValueError("reports cover different event sets")
    deltas = {}
    dominance = {}
    for m in METRIC_COLUMNS:
        va, vb = getattr(a, m), getattr(b, m)
        deltas[m] = va - vb
        if va == vb:
            dominance[m] = "tie"
        elif (va > vb) == _BETTER_HIGH[m]:
            dominance[m] = "a"
        else:
            dominance[m] = "b"
    return {"deltas": deltas, "dominance": dominance}


def export_slice(vf: ValueField, dy_fixed: float, out_prefix) -> tuple[Path, Path]:
    """Interpolated (dx, dv) value matrix at fixed dy plus zero-level cells.

    Writes `<prefix>_values.csv` (matrix; first column dx, header row dv)
    and `<prefix>_contour.csv` (cells whose corner values straddle zero).
    """
    grid = vf.grid
    if not grid.mins[2] <= dy_fixed <= grid.maxs[2]:
        raise ValueError(
            f"dy={dy_fixed} outside grid [{grid.mins[2]}, {grid.maxs[2]}]"
        )
    xs, vs = grid.axis(0), grid.axis(1)
    mesh_x, mesh_v = np.meshgrid(xs, vs, indexing="ij")
    pts = np.column_stack(
        [mesh_x.ravel(), mesh_v.ravel(), np.full(mesh_x.size, dy_fixed)]
    )
    vals, _ = values_at(vf, pts)
    mat = vals.reshape(len(xs), len(vs))

    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    values_path = Path(f"{prefix}_values.csv")
    contour_path = Path(f"{prefix}_contour.csv")

    with open(values_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dx\\dv"] + [repr(float(v)) for v in vs])
        for i, x in enumerate(xs):
            writer.writerow([repr(float(x))] + [repr(float(m)) for m in mat[i]])

    with open(contour_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "dx_lo", "dx_hi", "dv_lo", "dv_hi"])
        corner_min = np.minimum.reduce(
            [mat[:-1, :-1], mat[1:, :-1], mat[:-1, 1:], mat[1:, 1:]]
        )
        corner_max = np.maximum.reduce(
            [mat[:-1, :-1], mat[1:, :-1], mat[:-1, 1:], mat[1:, 1:]]
        )
        for i, j in np.argwhere((corner_min <= 0.0) & (corner_max > 0.0)):
            writer.writerow(
                [
                    int(i),
                    int(j),
                    repr(float(xs[i])),
                    repr(float(xs[i + 1])),
                    repr(float(vs[j])),
                    repr(float(vs[j + 1])),
                ]
            )
    return values_path, contour_path


def write_reports_csv(rows: Sequence[tuple[str, MetricsReport]], path) -> None:
    """Fixed-column CSV, one row per policy, metric columns in report order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy"] + METRIC_COLUMNS + ["n_events"])
        for label, r in rows:
            writer.writerow(
                [label]
                + [repr(float(getattr(r, m))) if m != "collisions" else str(r.collisions)
                   for m in METRIC_COLUMNS]
                + [str(r.n_events)]
            )


def read_reports_csv(path) -> list[tuple[str, dict]]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            label = row.pop("policy")
            out.append((label, {k: float(v) for k, v in row.items()}))
    return out


def report_to_json(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(report), fh, sort_keys=True, indent=2)
