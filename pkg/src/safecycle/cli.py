"""Command-line surface.

Subcommands: reach, train-ae, train-dqn, simulate, evaluate, slice,
pipeline, roundtrip.  Exit codes: 0 success, 2 config error, 3 numeric
failure, 4 I/O error.  Every command writes the resolved config and a
version stamp beside its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from . import disturbance as dist
from . import events as ev
from . import metrics as met
from . import neuralnet as nn
from . import qlearn as ql
from . import reachability as reach
from .config import ConfigError, RunConfig, load_config
from .reachability import CflError, NonFiniteError
from .simenv import SimEnv, human_replay_log, run_episode

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

# stable per-stage seed tags
_SEED_EVENTS = 1
_SEED_SPLIT = 2
_SEED_DATASET = 3
_SEED_AE = 4
_SEED_DQN_MOD = 5
_SEED_DQN_CONST = 6
_SEED_EVAL = 7


class PipelineError(RuntimeError):
    def __init__(self, stage: str, completed: list[str], cause: BaseException):
        super().__init__(
            f"pipeline stage {stage!r} failed: {cause}; "
            f"completed artifacts: {completed or 'none'}"
        )
        self.stage = stage
        self.completed = completed


def _derive_seed(master: int, tag: int) -> int:
    return int(np.random.SeedSequence([master, tag]).generate_state(1)[0])


def _write_resolved(cfg: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"safecycle_version": __version__, "config": cfg.resolved}
    with open(out / "resolved_config.json", "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def _load_events(cfg: RunConfig) -> tuple[list[ev.CyclistEvent], bool]:
    """Returns (kept events, from_csv flag)."""
    source = cfg.events_source
    if source.startswith("synthetic:"):
        n = int(source[len("synthetic:"):])
        events = ev.generate_synthetic_events(n, seed=_derive_seed(cfg.seed, _SEED_EVENTS))
        kept, rejected = ev.filter_events(events)
        if rejected:
            raise RuntimeError("synthetic events must pass every filter")
        return kept, False
    records = ev.load_records_csv(source)
    kept, _ = ev.filter_events(ev.segment_events(records))
    if not kept:
        raise ConfigError(f"no events survive the filters in {source}")
    return kept, True


def _split_events(cfg: RunConfig, events):
    if cfg.eval_count >= len(events):
        raise ConfigError(
            f"events.eval_count={cfg.eval_count} needs more than {len(events)} events"
        )
    rng = np.random.default_rng(_derive_seed(cfg.seed, _SEED_SPLIT))
    perm = rng.permutation(len(events))
    eval_events = [events[i] for i in sorted(perm[: cfg.eval_count])]
    train_events = [events[i] for i in sorted(perm[cfg.eval_count :])]
    return train_events, eval_events


def _profile_constant(cfg: RunConfig) -> reach.ConstantProfile:
    return reach.ConstantProfile(cfg.bounds.d_max)


def _profile_modulated(cfg: RunConfig, model: dist.ComfortModel) -> reach.ModulatedProfile:
    return reach.ModulatedProfile(
        score=dist.as_disturbance_score(model),
        d_max=cfg.bounds.d_max,
        kappa=cfg.kappa,
        name="autoencoder",
    )


def _solve(cfg: RunConfig, profile) -> reach.ValueField:
    return reach.solve(
        cfg.grid,
        cfg.horizon,
        cfg.tol,
        cfg.bounds,
        profile,
        cfg.disc,
        cfg.lateral_mode,
        cfl=cfg.cfl,
    )


# --- subcommands ---------------------------------------------------------------


def cmd_reach(cfg: RunConfig, out: Path) -> Path:
    if cfg.profile_kind == "modulated":
        if not cfg.comfort_model_path:
            raise ConfigError("disturbance.profile=modulated needs disturbance.comfort_model")
        model = dist.load_comfort_model(cfg.comfort_model_path)
        profile = _profile_modulated(cfg, model)
        name = "field_modulated.vf1"
    else:
        profile = _profile_constant(cfg)
        name = "field_constant.vf1"
    vf = _solve(cfg, profile)
    path = out / name
    reach.save_vf1(vf, path)
    print(
        f"reach: {vf.meta['iterations']} iterations, stop={vf.meta['stop_rule']}, "
        f"residual={vf.meta['residual']:.3e}, unsafe_fraction={reach.unsafe_fraction(vf):.4f}"
    )
    return path


def _build_dataset(cfg: RunConfig, vf: reach.ValueField, train_events):
    samples = dist.samples_from_events(train_events)
    return dist.assemble_labeled_dataset(
        samples,
        vf,
        n_total=cfg.ae_dataset_size,
        seed=_derive_seed(cfg.seed, _SEED_DATASET),
        band=cfg.ae_dangerous_band,
        d_max=cfg.bounds.d_max,
    )


def cmd_train_ae(cfg: RunConfig, out: Path, field_path: Path) -> Path:
    vf = reach.load_vf1(field_path)
    events, _ = _load_events(cfg)
    train_events, _ = _split_events(cfg, events)
    samples, labels = _build_dataset(cfg, vf, train_events)
    dist.save_labeled_csv(samples, labels, out / "labeled_dataset.csv")

    n_test = max(1, len(samples) // 5)
    test_s, test_l = samples[:n_test], labels[:n_test]
    fit_s = [s for s, l in zip(samples[n_test:], labels[n_test:]) if l is dist.SafetyLabel.SAFE]
    model = dist.train_autoencoder(
        fit_s, cfg.autoencoder, seed=_derive_seed(cfg.seed, _SEED_AE)
    )
    base = out / "comfort_model"
    dist.save_comfort_model(model, base)
    scores = dist.evaluate_classifier(model, test_s, test_l)
    with open(out / "ae_metrics.json", "w") as fh:
        json.dump(scores, fh, sort_keys=True, indent=2)
    print(
        f"train-ae: tau={model.tau:.6g}, auc={scores['auc']:.3f}, "
        f"recall={scores['recall']:.3f}"
    )
    return base


def cmd_train_dqn(
    cfg: RunConfig, out: Path, field_path: Path, name: str = "policy", seed_tag: int = _SEED_DQN_MOD
) -> Path:
    vf = reach.load_vf1(field_path)
    events, _ = _load_events(cfg)
    train_events, _ = _split_events(cfg, events)
    env = SimEnv(
        cfg.scenario,
        reward_fn=ql.make_shaped_reward(vf, cfg.dqn.weights, cfg.scenario),
        d_max=cfg.bounds.d_max,
        kappa=cfg.kappa,
    )
    dqn_cfg = ql.TrainConfig(**{**_train_config_dict(cfg.dqn), "seed": _derive_seed(cfg.seed, seed_tag)})
    use_events = train_events if cfg.cyclist_source == "replay" else None
    policy, log = ql.train(env, dqn_cfg, events=use_events)
    base = out / name
    ql.save_policy(policy, base)
    log.to_csv(out / f"{name}_training.csv")
    returns = log.returns()
    tail = float(np.mean(returns[-20:])) if len(returns) else float("nan")
    print(f"train-dqn[{name}]: {len(returns)} episodes, final-20 mean return {tail:.2f}")
    return base


def _train_config_dict(tc: ql.TrainConfig) -> dict:
    from dataclasses import asdict

    d = asdict(tc)
    d["hidden"] = tuple(d["hidden"])
    d["weights"] = ql.RewardWeights(**d["weights"])
    return d


def _greedy(policy: ql.QPolicy):
    return lambda obs: policy.greedy(obs)


def _evaluate_policy(cfg: RunConfig, policy: ql.QPolicy, eval_events, vf, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    env = SimEnv(
        cfg.scenario,
        reward_fn=ql.make_shaped_reward(vf, cfg.dqn.weights, cfg.scenario),
        d_max=cfg.bounds.d_max,
        kappa=cfg.kappa,
    )
    value_fn = lambda rel: reach.value_at(vf, rel)
    logs = []
    for i, event in enumerate(eval_events):
        log = run_episode(env, _greedy(policy), event=event, value_fn=value_fn)
        log.to_csv(out_dir / f"event_{i:04d}.csv")
        logs.append(log)
    return logs


def cmd_simulate(cfg: RunConfig, out: Path, policy_path: Path, field_path: Path) -> Path:
    vf = reach.load_vf1(field_path)
    policy = ql.load_policy(policy_path)
    events, _ = _load_events(cfg)
    _, eval_events = _split_events(cfg, events)
    traj_dir = out / "trajectories"
    _evaluate_policy(cfg, policy, eval_events, vf, traj_dir)
    print(f"simulate: wrote {len(eval_events)} trajectory logs to {traj_dir}")
    return traj_dir


def cmd_evaluate(cfg: RunConfig, out: Path, policy_paths: list[tuple[str, Path]], field_path: Path) -> Path:
    vf = reach.load_vf1(field_path)
    events, from_csv = _load_events(cfg)
    _, eval_events = _split_events(cfg, events)
    rows = []
    for label, ppath in policy_paths:
        policy = ql.load_policy(ppath)
        logs = _evaluate_policy(cfg, policy, eval_events, vf, out / "trajectories" / label)
        rows.append((label, met.compute_metrics(logs, vf, cfg.disc)))
    if from_csv:
        rows.append(("human_driver", _human_row(cfg, eval_events, vf)))
    path = out / "metrics.csv"
    met.write_reports_csv(rows, path)
    for label, report in rows:
        met.report_to_json(report, out / f"report_{label}.json")
    print(f"evaluate: wrote {path}")
    return path


def _human_row(cfg: RunConfig, eval_events, vf) -> met.MetricsReport:
    value_fn = lambda rel: reach.value_at(vf, rel)
    logs = [
        human_replay_log(
            event,
            cfg.scenario,
            reward_fn=ql.make_shaped_reward(vf, cfg.dqn.weights, cfg.scenario),
            value_fn=value_fn,
        )
        for event in eval_events
    ]
    return met.compute_metrics(logs, vf, cfg.disc)


def cmd_slice(cfg: RunConfig, out: Path, field_path: Path, dy: float | None) -> list[Path]:
    vf = reach.load_vf1(field_path)
    dys = [dy] if dy is not None else [1.25, 1.5]
    paths = []
    for d in dys:
        tag = repr(float(d)).replace(".", "p").replace("-", "m")
        paths.extend(met.export_slice(vf, d, out / f"slice_dy{tag}"))
    print("slice: wrote " + ", ".join(str(p) for p in paths))
    return paths


def cmd_roundtrip(path: Path) -> str:
    original = Path(path).read_bytes()
    header = original.split(b"\n", 1)[0]
    try:
        meta = json.loads(header)
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt header at byte 0: {exc}") from exc
    kind = meta.get("format")
    with tempfile.TemporaryDirectory() as tmp:
        copy_path = Path(tmp) / "copy.bin"
        if kind == "VF1":
            reach.save_vf1(reach.load_vf1(path), copy_path)
        elif kind == "NN1":
            net, hyper = nn.load_nn1(path)
            nn.save_nn1(net, copy_path, hyperparameters=hyper)
        else:
            raise ValueError(f"unknown format {kind!r}")
        rewritten = copy_path.read_bytes()
    if rewritten == original:
        verdict = f"roundtrip OK ({kind}, {len(original)} bytes)"
    else:
        first = next(
            (i for i, (a, b) in enumerate(zip(original, rewritten)) if a != b),
            min(len(original), len(rewritten)),
        )
        verdict = f"roundtrip MISMATCH ({kind}) at byte {first}"
    print(verdict)
    return verdict


def cmd_pipeline(cfg: RunConfig, out: Path) -> Path:
    completed: list[str] = []
    stage = "events"
    try:
        events, from_csv = _load_events(cfg)
        train_events, eval_events = _split_events(cfg, events)
        ev.save_event_set(events, [], out / "events")
        completed.append(str(out / "events" / "manifest.json"))

        stage = "reach_constant"
        vf_const = _solve(cfg, _profile_constant(cfg))
        const_path = out / "field_constant.vf1"
        reach.save_vf1(vf_const, const_path)
        completed.append(str(const_path))

        stage = "dataset"
        samples, labels = _build_dataset(cfg, vf_const, train_events)
        dist.save_labeled_csv(samples, labels, out / "labeled_dataset.csv")
        completed.append(str(out / "labeled_dataset.csv"))

        stage = "comfort"
        n_test = max(1, len(samples) // 5)
        fit = [s for s, l in zip(samples[n_test:], labels[n_test:]) if l is dist.SafetyLabel.SAFE]
        model = dist.train_autoencoder(fit, cfg.autoencoder, seed=_derive_seed(cfg.seed, _SEED_AE))
        dist.save_comfort_model(model, out / "comfort_model")
        scores = dist.evaluate_classifier(model, samples[:n_test], labels[:n_test])
        with open(out / "ae_metrics.json", "w") as fh:
            json.dump(scores, fh, sort_keys=True, indent=2)
        completed.append(str(out / "comfort_model.nn1"))

        stage = "reach_modulated"
        vf_mod = _solve(cfg, _profile_modulated(cfg, model))
        mod_path = out / "field_modulated.vf1"
        reach.save_vf1(vf_mod, mod_path)
        completed.append(str(mod_path))

        stage = "dqn"
        use_events = train_events if cfg.cyclist_source == "replay" else None
        policies: list[tuple[str, ql.QPolicy]] = []
        for name, vf, tag in (
            ("modulated_policy", vf_mod, _SEED_DQN_MOD),
            ("constant_policy", vf_const, _SEED_DQN_CONST),
        ):
            if name == "constant_policy" and not cfg.include_baseline:
                continue
            env = SimEnv(
                cfg.scenario,
                reward_fn=ql.make_shaped_reward(vf, cfg.dqn.weights, cfg.scenario),
                d_max=cfg.bounds.d_max,
                kappa=cfg.kappa,
            )
            dqn_cfg = ql.TrainConfig(
                **{**_train_config_dict(cfg.dqn), "seed": _derive_seed(cfg.seed, tag)}
            )
            policy, log = ql.train(env, dqn_cfg, events=use_events)
            ql.save_policy(policy, out / name)
            log.to_csv(out / f"{name}_training.csv")
            policies.append((name, policy))
            completed.append(str(out / f"{name}.nn1"))

        stage = "evaluate"
        rows = []
        for name, policy in policies:
            logs = _evaluate_policy(cfg, policy, eval_events, vf_mod, out / "trajectories" / name)
            rows.append((name, met.compute_metrics(logs, vf_mod, cfg.disc)))
        if from_csv:
            rows.append(("human_driver", _human_row(cfg, eval_events, vf_mod)))
        met.write_reports_csv(rows, out / "metrics.csv")
        for label, report in rows:
            met.report_to_json(report, out / f"report_{label}.json")
        completed.append(str(out / "metrics.csv"))
    except Exception as exc:
        raise PipelineError(stage, completed, exc) from exc
    print(f"pipeline: complete; metrics at {out / 'metrics.csv'}")
    return out / "metrics.csv"


# --- argument parsing ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safecycle",
        description="Safety value functions and safety-shaped Q-learning "
        "for vehicle-cyclist interaction",
    )
    parser.add_argument("--version", action="version", version=f"safecycle {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=str, default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", type=str, default=None, help="output directory override")
        p.add_argument(
            "--events", type=str, default=None, help="events source: CSV path or synthetic:N"
        )

    p = sub.add_parser("reach", help="solve the reachability field and save VF1")
    common(p)
    p = sub.add_parser("train-ae", help="label states and train the comfort autoencoder")
    common(p)
    p.add_argument("--field", type=str, required=True, help="VF1 field for labeling")
    p = sub.add_parser("train-dqn", help="train the safety-shaped DQN policy")
    common(p)
    p.add_argument("--field", type=str, required=True, help="VF1 field for reward shaping")
    p.add_argument("--name", type=str, default="policy")
    p = sub.add_parser("simulate", help="roll a trained policy over held-out events")
    common(p)
    p.add_argument("--field", type=str, required=True)
    p.add_argument("--policy", type=str, required=True, help="policy checkpoint base path")
    p = sub.add_parser("evaluate", help="compute the five-metric report per policy")
    common(p)
    p.add_argument("--field", type=str, required=True)
    p.add_argument(
        "--policy",
        action="append",
        required=True,
        help="label=path pair; repeatable",
    )
    p = sub.add_parser("slice", help="export value slices at fixed lateral range")
    common(p)
    p.add_argument("--field", type=str, required=True)
    p.add_argument("--dy", type=float, default=None, help="default: both 1.25 and 1.5")
    p = sub.add_parser("pipeline", help="run ingestion through evaluation end to end")
    common(p)
    p = sub.add_parser("roundtrip", help="verify byte-exact VF1/NN1 re-serialization")
    p.add_argument("file", type=str)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "roundtrip":
            verdict = cmd_roundtrip(Path(args.file))
            return EXIT_OK if "OK" in verdict else EXIT_IO

        overrides = {
            "seed": args.seed,
            "out_dir": args.out,
            "events.source": args.events,
        }
        cfg = load_config(args.config, overrides)
        out = cfg.out_dir
        _write_resolved(cfg, out)

        if args.command == "reach":
            cmd_reach(cfg, out)
        elif args.command == "train-ae":
            cmd_train_ae(cfg, out, Path(args.field))
        elif args.command == "train-dqn":
            cmd_train_dqn(cfg, out, Path(args.field), name=args.name)
        elif args.command == "simulate":
            cmd_simulate(cfg, out, Path(args.policy), Path(args.field))
        elif args.command == "evaluate":
            pairs = []
            for spec_str in args.policy:
                if "=" not in spec_str:
                    raise ConfigError(f"--policy expects label=path, got {spec_str!r}")
                label, _, path = spec_str.partition("=")
                pairs.append((label, Path(path)))
            cmd_evaluate(cfg, out, pairs, Path(args.field))
        elif args.command == "slice":
            cmd_slice(cfg, out, Path(args.field), args.dy)
        elif args.command == "pipeline":
            cmd_pipeline(cfg, out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CflError, NonFiniteError, ql.TrainingDiverged, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PipelineError as exc:
        cause = exc.__cause__
        if isinstance(cause, (CflError, NonFiniteError, ql.TrainingDiverged)):
            print(f"numeric failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
