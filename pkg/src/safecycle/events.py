"""Cyclist event ingestion, segmentation, filtering and synthesis.

Input records follow the CSV schema
`trip_id,timestamp,target_id,dx,dv,dy,side[,ego_speed]`.  An event is one
maximal contiguous sensor track of a single target; tracks split whenever
consecutive detections are more than GAP_SPLIT_S apart.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "RawRecord",
    "CyclistEvent",
    "SyntheticEventRanges",
    "GAP_SPLIT_S",
    "segment_events",
    "filter_events",
    "generate_synthetic_events",
    "load_records_csv",
    "save_event_csv",
    "load_event_csv",
    "save_event_set",
    "load_event_set",
]

GAP_SPLIT_S = 0.5

REASON_RANGE = "RANGE_GT_50M"
REASON_DURATION = "DURATION_LT_1S"
REASON_SIDE = "RIGHT_SIDE"


@dataclass(frozen=True)
class RawRecord:
    trip_id: str
    timestamp: float
    target_id: str
    dx: float
    dv: float
    dy: float
    side: str  # "left" | "right"
    ego_speed: float | None = None

    def __post_init__(self):
        if self.side not in ("left", "right"):
            raise ValueError(f"side must be left|right, got {self.side!r}")
        for name in ("timestamp", "dx", "dv", "dy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"RawRecord.{name} must be finite")


@dataclass
class CyclistEvent:
    event_id: str
    records: list[RawRecord] = field(default_factory=list)

    def __post_init__(self):
        if not self.records:
            raise ValueError("event needs at least one record")

    @property
    def duration(self) -> float:
        return self.records[-1].timestamp - self.records[0].timestamp

    @property
    def max_dx(self) -> float:
        return max(r.dx for r in self.records)

    @property
    def side(self) -> str:
        return self.records[0].side

    @property
    def has_ego_speed(self) -> bool:
        return all(r.ego_speed is not None for r in self.records)

    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records])

    def relative_states(self) -> np.ndarray:
        return np.array([[r.dx, r.dv, r.dy] for r in self.records])


def segment_events(records: list[RawRecord]) -> list[CyclistEvent]:
    """One event per maximal contiguous run of a (trip, target) track."""
    groups: dict[tuple[str, str], list[RawRecord]] = {}
    for r in records:
        groups.setdefault((r.trip_id, r.target_id), []).append(r)
    events = []
    for (trip, target), recs in sorted(groups.items()):
        recs = sorted(recs, key=lambda r: r.timestamp)
        for a, b in zip(recs[:-1], recs[1:]):
            if b.timestamp == a.timestamp:
                raise ValueError(
                    f"duplicate timestamp {a.timestamp} in track ({trip}, {target})"
                )
        run: list[RawRecord] = []
        part = 0
        for r in recs:
            if run and r.timestamp - run[-1].timestamp > GAP_SPLIT_S:
                events.append(CyclistEvent(f"{trip}:{target}:{part}", run))
                part += 1
                run = []
            run.append(r)
        events.append(CyclistEvent(f"{trip}:{target}:{part}", run))
    return events


def filter_events(
    events: list[CyclistEvent],
) -> tuple[list[CyclistEvent], list[tuple[CyclistEvent, list[str]]]]:
    """Apply the false-positive rules; returns (kept, rejected-with-reasons)."""
    kept, rejected = [], []
    for ev in events:
        reasons = []
        if ev.max_dx > 50.0:
            reasons.append(REASON_RANGE)
        if ev.duration < 1.0:
            reasons.append(REASON_DURATION)
        if ev.side == "right":
            reasons.append(REASON_SIDE)
        if reasons:
            rejected.append((ev, reasons))
        else:
            kept.append(ev)
    return kept, rejected


@dataclass(frozen=True)
class SyntheticEventRanges:
    dx0: tuple[float, float] = (15.0, 45.0)
    dy: tuple[float, float] = (1.0, 3.0)
    cyclist_speed: tuple[float, float] = (3.0, 6.0)
    ego_speed: tuple[float, float] = (8.0, 12.0)
    duration: tuple[float, float] = (5.0, 20.0)
    rate_hz: float = 10.0
    ou_theta: float = 0.5
    ou_sigma: float = 0.3
    # lateral weave around the initial offset; keeps a hard floor so the
    # cyclist never rides through the ego line
    lat_theta: float = 0.3
    lat_sigma: float = 0.35
    lat_floor: float = 0.3


def generate_synthetic_events(
    n: int, ranges: SyntheticEventRanges | None = None, seed: int = 0
) -> list[CyclistEvent]:
    """Fabricate n left-side events that pass every filter by construction.

    The cyclist speed follows an Ornstein-Uhlenbeck process around the
    event's base speed and the lateral offset a second, tighter OU weave
    around the initial offset, both clipped to +-3 stationary sigmas; the
    ego speed is constant per event.  Range records integrate the range
    rate with the trapezoid rule so simulator replay reproduces them
    exactly.
    """
    if n <= 0:
        raise ValueError("n must be > 0")
    rng = np.random.default_rng(seed)
    rr = ranges or SyntheticEventRanges()
    dt = 1.0 / rr.rate_hz
    sigma_stat = rr.ou_sigma / math.sqrt(2.0 * rr.ou_theta)
    lat_stat = rr.lat_sigma / math.sqrt(2.0 * rr.lat_theta)
    events = []
    for k in range(n):
        dx0 = rng.uniform(*rr.dx0)
        dy0 = rng.uniform(*rr.dy)
        base = rng.uniform(*rr.cyclist_speed)
        ego = rng.uniform(*rr.ego_speed)
        duration = rng.uniform(*rr.duration)
        steps = int(round(duration * rr.rate_hz))
        speeds = np.empty(steps + 1)
        speeds[0] = base
        dys = np.empty(steps + 1)
        dys[0] = dy0
        noise = rng.standard_normal((steps, 2))
        for i in range(steps):
            s = speeds[i] + rr.ou_theta * (base - speeds[i]) * dt
            s += rr.ou_sigma * math.sqrt(dt) * noise[i, 0]
            speeds[i + 1] = np.clip(s, base - 3 * sigma_stat, base + 3 * sigma_stat)
            y = dys[i] + rr.lat_theta * (dy0 - dys[i]) * dt
            y += rr.lat_sigma * math.sqrt(dt) * noise[i, 1]
            dys[i + 1] = np.clip(
                y, max(rr.lat_floor, dy0 - 3 * lat_stat), dy0 + 3 * lat_stat
            )
        dv = speeds - ego
        dx = dx0 + np.concatenate([[0.0], np.cumsum(0.5 * (dv[:-1] + dv[1:]) * dt)])
        recs = [
            RawRecord(
                trip_id="synthetic",
                timestamp=round(i * dt, 6),
                target_id=f"t{k:04d}",
                dx=float(dx[i]),
                dv=float(dv[i]),
                dy=float(dys[i]),
                side="left",
                ego_speed=float(ego),
            )
            for i in range(steps + 1)
        ]
        events.append(CyclistEvent(f"synthetic:t{k:04d}:0", recs))
    return events


# --- CSV / manifest I/O -------------------------------------------------------

_HEADER = ["trip_id", "timestamp", "target_id", "dx", "dv", "dy", "side", "ego_speed"]


def load_records_csv(path) -> list[RawRecord]:
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _HEADER[:-1] if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"missing CSV columns: {missing}")
        for row in reader:
            ego = row.get("ego_speed")
            records.append(
                RawRecord(
                    trip_id=row["trip_id"],
                    timestamp=float(row["timestamp"]),
                    target_id=row["target_id"],
                    dx=float(row["dx"]),
                    dv=float(row["dv"]),
                    dy=float(row["dy"]),
                    side=row["side"],
                    ego_speed=float(ego) if ego not in (None, "") else None,
                )
            )
    return records


def save_event_csv(event: CyclistEvent, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_HEADER)
        for r in event.records:
            writer.writerow(
                [
                    r.trip_id,
                    repr(r.timestamp),
                    r.target_id,
                    repr(r.dx),
                    repr(r.dv),
                    repr(r.dy),
                    r.side,
                    "" if r.ego_speed is None else repr(r.ego_speed),
                ]
            )


def load_event_csv(path) -> CyclistEvent:
    records = load_records_csv(path)
    events = segment_events(records)
    if len(events) != 1:
        raise ValueError(f"{path} holds {len(events)} events, expected 1")
    return events[0]


def save_event_set(
    kept: list[CyclistEvent],
    rejected: list[tuple[CyclistEvent, list[str]]],
    out_dir,
) -> Path:
    """One CSV per kept event plus a JSON manifest with rejection counts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, ev in enumerate(kept):
        name = f"event_{i:04d}.csv"
        save_event_csv(ev, out / name)
        names.append(name)
    histogram: dict[str, int] = {}
    for _, reasons in rejected:
        for r in reasons:
            histogram[r] = histogram.get(r, 0) + 1
    manifest = {
        "total": len(kept) + len(rejected),
        "kept": len(kept),
        "rejected": len(rejected),
        "rejection_histogram": histogram,
        "files": names,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return out / "manifest.json"


def load_event_set(manifest_path) -> list[CyclistEvent]:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    return [load_event_csv(manifest_path.parent / name) for name in manifest["files"]]
