"""Run configuration: one JSON document validated up front.

Unknown keys are rejected (typo protection) and every run writes the fully
resolved config next to its outputs so reruns are reproducible byte for
byte.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .disturbance import AutoencoderConfig
from .dynamics import CollisionDisc, InputBounds, LateralMode
from .qlearn import RewardWeights, TrainConfig
from .reachability import Grid3
from .simenv import Scenario

__all__ = ["ConfigError", "RunConfig", "default_config_dict", "load_config"]


class ConfigError(ValueError):
    pass


def default_config_dict() -> dict:
    return {
        "seed": 0,
        "out_dir": "runs/out",
        "grid": {
            "mins": [-10.0, -10.0, -2.0],
            "maxs": [50.0, 10.0, 6.0],
            "shape": [121, 81, 33],
        },
        "bounds": {"u_max": 3.0, "d_max": 1.5},
        "lateral_mode": "frozen",
        "collision_radius": 1.0,
        "solver": {"horizon": 10.0, "tol": 1e-4, "cfl": 0.5},
        "disturbance": {"profile": "constant", "kappa": 1.0, "comfort_model": None},
        "autoencoder": {
            "hidden": [3, 2, 3],
            "epochs": 300,
            "batch_size": 64,
            "learning_rate": 1e-3,
            "holdout_fraction": 0.2,
            "percentile": 95.0,
            "dataset_size": 4000,
            "dangerous_band": [0.05, 0.10],
        },
        "dqn": {
            "episodes": 300,
            "gamma": 0.99,
            "alpha": 1e-4,
            "lr_schedule": "constant",
            "eps_start": 1.0,
            "eps_end": 0.05,
            "eps_decay_fraction": 0.5,
            "batch_size": 64,
            "buffer_capacity": 50000,
            "target_refresh": 500,
            "train_period": 1,
            "warmup": 500,
            "hidden": [64, 64],
            "weights": {
                "lambda_v": 1.0,
                "lambda_g": 1.0,
                "lambda_t": 2.0,
                "terminal_bonus": 10.0,
                "terminal_penalty": 10.0,
                "v_cap": 5.0,
                "progress_ref_speed": 10.0,
            },
        },
        "scenario": {
            "lane_left": -1.75,
            "lane_right": 1.75,
            "goal_x": 100.0,
            "dt": 0.1,
            "max_duration": 60.0,
            "start_speed": 8.0,
            "max_accel": 3.0,
            "max_yaw_rate": 0.5,
            "cyclist_source": "replay",
        },
        "events": {"source": "synthetic:120", "eval_count": 60},
        "pipeline": {"include_baseline": True},
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = value
    return out


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


@dataclass
class RunConfig:
    seed: int
    out_dir: Path
    grid: Grid3
    bounds: InputBounds
    lateral_mode: LateralMode
    disc: CollisionDisc
    horizon: float
    tol: float
    cfl: float
    profile_kind: str
    kappa: float
    comfort_model_path: str | None
    autoencoder: AutoencoderConfig
    ae_dataset_size: int
    ae_dangerous_band: tuple[float, float]
    dqn: TrainConfig
    scenario: Scenario
    cyclist_source: str
    events_source: str
    eval_count: int
    include_baseline: bool
    resolved: dict = field(repr=False, default_factory=dict)


def parse_config(raw: dict) -> RunConfig:
    merged = _merge(default_config_dict(), raw)
    try:
        grid = Grid3(
            tuple(merged["grid"]["mins"]),
            tuple(merged["grid"]["maxs"]),
            tuple(merged["grid"]["shape"]),
        )
        bounds = InputBounds(
            float(merged["bounds"]["u_max"]), float(merged["bounds"]["d_max"])
        )
        mode = LateralMode.from_str(merged["lateral_mode"])
        disc = CollisionDisc(float(merged["collision_radius"]))
        ae_raw = merged["autoencoder"]
        ae = AutoencoderConfig(
            hidden=tuple(int(h) for h in ae_raw["hidden"]),
            epochs=int(ae_raw["epochs"]),
            batch_size=int(ae_raw["batch_size"]),
            learning_rate=float(ae_raw["learning_rate"]),
            holdout_fraction=float(ae_raw["holdout_fraction"]),
            percentile=float(ae_raw["percentile"]),
        )
        dqn_raw = merged["dqn"]
        dqn = TrainConfig(
            gamma=float(dqn_raw["gamma"]),
            alpha=float(dqn_raw["alpha"]),
            lr_schedule=str(dqn_raw["lr_schedule"]),
            eps_start=float(dqn_raw["eps_start"]),
            eps_end=float(dqn_raw["eps_end"]),
            eps_decay_fraction=float(dqn_raw["eps_decay_fraction"]),
            batch_size=int(dqn_raw["batch_size"]),
            buffer_capacity=int(dqn_raw["buffer_capacity"]),
            target_refresh=int(dqn_raw["target_refresh"]),
            train_period=int(dqn_raw["train_period"]),
            warmup=int(dqn_raw["warmup"]),
            episodes=int(dqn_raw["episodes"]),
            hidden=tuple(int(h) for h in dqn_raw["hidden"]),
            seed=int(merged["seed"]),
            weights=RewardWeights(**{k: float(v) for k, v in dqn_raw["weights"].items()}),
        )
        sc_raw = merged["scenario"]
        scenario = Scenario(
            lane_left=float(sc_raw["lane_left"]),
            lane_right=float(sc_raw["lane_right"]),
            goal_x=float(sc_raw["goal_x"]),
            dt=float(sc_raw["dt"]),
            max_duration=float(sc_raw["max_duration"]),
            start_speed=float(sc_raw["start_speed"]),
            max_accel=float(sc_raw["max_accel"]),
            max_yaw_rate=float(sc_raw["max_yaw_rate"]),
            collision_radius=float(merged["collision_radius"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc

    profile_kind = merged["disturbance"]["profile"]
    _require(profile_kind in ("constant", "modulated"),
             f"disturbance.profile must be constant|modulated, got {profile_kind!r}")
    source = str(merged["events"]["source"])
    if source.startswith("synthetic:"):
        _require(source[len("synthetic:"):].isdigit(),
                 "events.source synthetic:N needs an integer N")
    cyclist_source = str(merged["scenario"]["cyclist_source"])
    _require(cyclist_source in ("replay", "reactive"),
             "scenario.cyclist_source must be replay|reactive")
    _require(float(merged["solver"]["horizon"]) >= 0.0, "solver.horizon must be >= 0")
    _require(float(merged["solver"]["tol"]) > 0.0, "solver.tol must be > 0")
    band = merged["autoencoder"]["dangerous_band"]
    _require(
        len(band) == 2 and 0.0 < band[0] < band[1] < 1.0,
        "autoencoder.dangerous_band must be an increasing pair in (0, 1)",
    )

    return RunConfig(
        seed=int(merged["seed"]),
        out_dir=Path(merged["out_dir"]),
        grid=grid,
        bounds=bounds,
        lateral_mode=mode,
        disc=disc,
        horizon=float(merged["solver"]["horizon"]),
        tol=float(merged["solver"]["tol"]),
        cfl=float(merged["solver"]["cfl"]),
        profile_kind=profile_kind,
        kappa=float(merged["disturbance"]["kappa"]),
        comfort_model_path=merged["disturbance"]["comfort_model"],
        autoencoder=ae,
        ae_dataset_size=int(merged["autoencoder"]["dataset_size"]),
        ae_dangerous_band=(float(band[0]), float(band[1])),
        dqn=dqn,
        scenario=scenario,
        cyclist_source=cyclist_source,
        events_source=source,
        eval_count=int(merged["events"]["eval_count"]),
        include_baseline=bool(merged["pipeline"]["include_baseline"]),
        resolved=merged,
    )


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return parse_config(raw)
