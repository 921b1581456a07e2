"""Command-line entry point: data generation, training, evaluation, OOD.

Every command accepts flags plus an optional --config JSON file; explicit
flags take precedence over config-file values. The resolved configuration
is persisted as runconfig.json inside the output directory. Exit codes:
0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

from . import baseline as bl
from . import evaluation as ev
from . import sim
from .checkpoint import CheckpointError
from .episodes import DatasetError, read_dataset, read_manifest, write_dataset
from .model import ModelConfig, count_params
from .sampling import SamplerConfig, write_trace_csv
from .training import (
    Checkpoint,
    LossWeights,
    TrainSchedule,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage errors are validation errors
        raise ValidationError(message)


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    overrides = json.loads(Path(args.config).read_text())
    explicit = set()
    for tok in argv:
        if tok.startswith("--"):
            explicit.add(tok[2:].split("=")[0].replace("-", "_"))
    for key, value in overrides.items():
        if key not in explicit:
            if not hasattr(args, key):
                raise ValidationError(f"unknown config key {key!r}")
            setattr(args, key, value)


def _run_dir(args) -> Path:
    name = args.run_name or time.strftime("%Y%m%d-%H%M%S")
    d = Path(args.out) / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_runconfig(directory: Path, args: argparse.Namespace) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    (directory / "runconfig.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _parse_length(spec: str):
    if ":" in spec:
        lo, hi = spec.split(":")
        return (int(lo), int(hi))
    return int(spec)


# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    if args.n_success + args.n_failure <= 0:
        raise ValidationError("empty dataset: need n_success + n_failure > 0")
    corpus_cfg = sim.CorpusConfig(
        object_shape=args.object_shape,
        object_size=args.object_size,
        zone_half=args.zone_half,
        noise_scale=args.noise_scale,
    )
    episodes = sim.generate_corpus(
        args.n_success,
        args.n_failure,
        args.seed,
        length=_parse_length(args.length) if args.length else None,
        corpus=corpus_cfg,
    )
    out = Path(args.out)
    manifest = write_dataset(episodes, out)
    _write_runconfig(out, args)
    print(
        f"wrote {manifest['n_episodes']} episodes ({manifest['n_steps']} steps, "
        f"{args.n_success} success / {args.n_failure} failure, "
        f"shape={args.object_shape}) to {out}"
    )
    return 0


def _model_config_from_args(args) -> ModelConfig:
    return ModelConfig(
        n_layers=args.layers,
        width=args.width,
        heads=args.heads,
        d_q=3,
        horizon=args.horizon,
        token_patch=args.token_patch,
    )


def cmd_train(args) -> int:
    episodes = read_dataset(args.data)
    run_dir = _run_dir(args)
    _write_runconfig(run_dir, args)
    schedule = TrainSchedule(steps=args.steps, batch=args.batch, lr=args.lr, seed=args.seed)

    if args.model == "binclass":
        target = count_params(_model_config_from_args(args))
        cfg = bl.baseline_config_matching(target, d_q=3)
        ckpt, rows = bl.train_baseline(episodes, cfg, schedule)
        bl.save_baseline_checkpoint(run_dir / "checkpoint.ckpt", ckpt)
    else:
        lam_prop = args.lambda_prop
        if args.model == "viva-noprop":
            lam_prop = 0.0
            print("viva-noprop: forcing lambda_prop = 0")
        weights = LossWeights(lambda_prop=lam_prop, lambda_val=args.lambda_val)
        config = _model_config_from_args(args)
        ckpt, rows = train(episodes, config, weights, schedule)
        save_checkpoint(run_dir / "checkpoint.ckpt", ckpt)

    write_metrics_csv(run_dir / "metrics.csv", rows)
    print(
        f"{args.model}: trained {schedule.steps} steps on {len(episodes)} episodes; "
        f"final loss {rows[-1]['total_loss']:.5f}; artifacts in {run_dir}"
    )
    return 0


def _load_any_checkpoint(path: Path):
    magic = Path(path).open("rb").read(4)
    if magic == b"VIVA":
        return load_checkpoint(path)
    if magic == b"VBCL":
        return bl.load_baseline_checkpoint(path)
    raise ValidationError(f"unrecognized checkpoint magic {magic!r} in {path}")


def _eval_common(args, episodes) -> int:
    run_dir = _run_dir(args)
    _write_runconfig(run_dir, args)

    names = args.names or []
    if names and len(names) != len(args.checkpoints):
        raise ValidationError("--names must match --checkpoints in length")

    sampler = SamplerConfig(n_steps=args.sampler_steps, seed=args.sampler_seed, n_seeds=args.n_seeds)
    traces_by_model = {}
    for i, cpath in enumerate(args.checkpoints):
        ckpt = _load_any_checkpoint(Path(cpath))
        name = names[i] if names else (
            "binclass" if isinstance(ckpt, bl.BaselineCheckpoint) else f"viva_{i}"
        )
        tracer = ev.build_value_tracer(ckpt, sampler)
        traces = [tracer(ep, args.stride) for ep in episodes]
        traces_by_model[name] = traces
        for j, rows in enumerate(traces):
            write_trace_csv(run_dir / f"trace_{name}_{j:03d}.csv", rows)

    report = ev.evaluate_traces(traces_by_model, episodes)
    ev.write_metrics_json(run_dir / "metrics.json", report)

    print("metric definitions:")
    for key, text in ev.METRIC_DEFINITIONS.items():
        print(f"  {key}: {text}")
    for warning in report["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    for name, entry in report["models"].items():
        print(
            f"{name}: spearman_mean={entry['spearman_mean']}, "
            f"auc_mid_episode={entry['auc_mid_episode']}, "
            f"failure_sensitivity={entry['failure_sensitivity']}"
        )
    if not args.no_plots:
        paths = ev.plot_traces(episodes, traces_by_model, run_dir / "plots")
        print(f"wrote {len(paths)} plot(s) to {run_dir / 'plots'}")
    print(f"metrics in {run_dir / 'metrics.json'}")
    return 0


def cmd_eval(args) -> int:
    episodes = read_dataset(args.data)
    return _eval_common(args, episodes)


def cmd_ood(args) -> int:
    episodes = read_dataset(args.data)
    ood_shapes = {ep.meta.get("shape") for ep in episodes}
    train_manifest = read_manifest(args.train_data)
    train_shapes = {e.get("meta", {}).get("shape") for e in train_manifest["episodes"]}
    overlap = ood_shapes & train_shapes
    if overlap:
        raise ValidationError(
            f"overlap error: shape tag(s) {sorted(overlap)} present in both the "
            f"training corpus and the held-out variant"
        )
    return _eval_common(args, episodes)


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="flowval", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a simulator corpus")
    g.add_argument("--config", default=None)
    g.add_argument("--n-success", type=int, default=100)
    g.add_argument("--n-failure", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--length", default=None, help="fixed T or range 'lo:hi' (default 60:140)")
    g.add_argument("--object-shape", default="circle", choices=["circle", "square", "triangle"])
    g.add_argument("--object-size", type=float, default=0.03)
    g.add_argument("--zone-half", type=float, default=0.07)
    g.add_argument("--noise-scale", type=float, default=0.004)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a value model")
    t.add_argument("--config", default=None)
    t.add_argument("--model", default="viva", choices=["viva", "viva-noprop", "binclass"])
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="runs")
    t.add_argument("--run-name", default=None)
    t.add_argument("--steps", type=int, default=20000)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--horizon", type=int, default=50)
    t.add_argument("--lambda-prop", type=float, default=1.0)
    t.add_argument("--lambda-val", type=float, default=0.5)
    t.add_argument("--width", type=int, default=128)
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--heads", type=int, default=4)
    t.add_argument("--token-patch", type=int, default=1)
    t.set_defaults(func=cmd_train)

    for name, fn, extra in (("eval", cmd_eval, False), ("ood", cmd_ood, True)):
        e = sub.add_parser(name, help=f"{name} checkpoints on a dataset")
        e.add_argument("--config", default=None)
        e.add_argument("--data", required=True)
        if extra:
            e.add_argument("--train-data", required=True)
        e.add_argument("--checkpoints", nargs="+", required=True)
        e.add_argument("--names", nargs="*", default=None)
        e.add_argument("--out", default="runs")
        e.add_argument("--run-name", default=None)
        e.add_argument("--stride", type=int, default=5)
        e.add_argument("--sampler-steps", type=int, default=1)
        e.add_argument("--sampler-seed", type=int, default=0)
        e.add_argument("--n-seeds", type=int, default=1)
        e.add_argument("--no-plots", action="store_true")
        e.set_defaults(func=fn)

    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
        _apply_config_file(args, argv)
        return args.func(args)
    except (ValidationError, DatasetError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
