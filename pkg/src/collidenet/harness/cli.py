"""Command-line entry point: ``collidenet <command> [options]``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..config import ExperimentConfig, apply_overrides, dumps, load
from ..datagen import gen_component_series, make_dataset, read_dataset, write_dataset
from ..decomposition import components_csv, decompose
from ..diagnostics import stationarity_report
from ..errors import CollideNetError
from ..temporal import CollideNet
from .checkpoint import load_checkpoint, save_checkpoint
from .experiments import DEFAULT_GRIDS, SWEEP_AXES, run_ablation, run_sensitivity
from .training import constant_baseline, derive_seed, evaluate, train

MAX_SEED = 2**64 - 1


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="config file with 'section.key = value' lines")
    p.add_argument("--seed", type=_seed, default=d if suppress else 0, help="unsigned 64-bit seed")
    p.add_argument("--out", default=d if suppress else "out", help="output directory")
    p.add_argument("--deterministic", action="store_true", default=d if suppress else False,
                   help="single worker process")
    p.add_argument("--set", action="append", default=d if suppress else [], metavar="KEY=VALUE",
                   help="override one config entry")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collidenet", description=__doc__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    command("gen-data", "render the synthetic dataset and write manifest.csv")
    p = command("train", "train one model and score it on the test split")
    p.add_argument("--manifest")
    p = command("eval", "score a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p = command("ablate", "train the 14-row toggle grid")
    p.add_argument("--manifest")
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p.add_argument("--rows", type=_int_list, help="subset of row IDs to train (others report nan)")
    p = command("sweep", "one-axis sensitivity curve")
    p.add_argument("--manifest")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", type=_int_list)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2])
    p = command("diagnose", "ADF/KPSS report on raw vs normalized embedding sequences")
    p.add_argument("--input", help="CNT1 tensor [N, n, d] or [n, d]; default: synthetic drifting series")
    p.add_argument("--checkpoint", help="embed clips of --manifest with this checkpoint's spatial encoder")
    p.add_argument("--manifest")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--window", type=int, default=30, help="sequence length for synthetic input")
    p = command("decompose", "moving-average trend / seasonality split of a sequence")
    p.add_argument("--input", help="CNT1 tensor [n, d]; default: synthetic component series")
    p.add_argument("--window", type=int, help="moving-average width (default: temporal.window)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load(args.config) if args.config else ExperimentConfig()
    pairs = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise CollideNetError(f"--set expects KEY=VALUE, got {item!r}")
        pairs[key.strip()] = value.strip()
    cfg = apply_overrides(cfg, pairs)
    if args.deterministic:
        cfg = replace(cfg, train=replace(cfg.train, workers=1))
    return cfg


def _dataset(args, cfg):
    if getattr(args, "manifest", None):
        return read_dataset(args.manifest)
    return make_dataset(cfg.data, derive_seed(args.seed, "data"))


def _write(out: Path, name: str, text: str) -> None:
    with open(out / name, "w", newline="") as fh:
        fh.write(text)


def _synthetic_series(seed: int, n: int, d: int = 8):
    z, _, _ = gen_component_series(0.02, 12, 1.0, 0.5, 0.3, 2.0, n, d, seed)
    return z


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except CollideNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out, "config.txt", dumps(cfg))
    cmd = args.command

    if cmd == "gen-data":
        ds = make_dataset(cfg.data, derive_seed(args.seed, "data"))
        path = write_dataset(ds, out)
        print(f"wrote {path} ({len(ds.train)}/{len(ds.val)}/{len(ds.test)} clips)")
    elif cmd == "train":
        cfg.validate()
        ds = _dataset(args, cfg)
        model = CollideNet(cfg.model, seed=derive_seed(args.seed, "init"))
        result = train(model, ds, cfg, seed=derive_seed(args.seed, "train"), out_dir=out, log=print)
        save_checkpoint(out / "checkpoint.cnck", result.checkpoint)
        _write(out, "history.jsonl", result.history_jsonl())
        report = evaluate(result.checkpoint, ds, "test")
        base = constant_baseline(ds, "test")
        _write(out, "predictions.csv", report.to_csv())
        _write(out, "summary.csv", "model,mse\n" f"collidenet,{report.mse!r}\n" f"constant_mean,{base.mse!r}\n")
        print(f"test mse {report.mse:.4f} (constant-mean baseline {base.mse:.4f})")
    elif cmd == "eval":
        ckpt = load_checkpoint(args.checkpoint)
        ds = _dataset(args, ckpt.config)
        report = evaluate(ckpt, ds, args.split)
        _write(out, "predictions.csv", report.to_csv())
        _write(out, "eval.csv", report.summary_csv())
        print(f"{args.split} mse {report.mse:.4f}")
    elif cmd == "ablate":
        ds = _dataset(args, cfg)
        res = run_ablation(cfg, ds, args.seeds, rows=args.rows, workers=cfg.train.workers)
        _write(out, "ablation.csv", res.summary_csv)
        _write(out, "ablation_runs.csv", res.runs_csv)
        print(res.summary_csv, end="")
    elif cmd == "sweep":
        values = args.values if args.values else list(DEFAULT_GRIDS[args.axis])
        ds = _dataset(args, cfg)
        res = run_sensitivity(cfg, args.axis, values, ds, args.seeds, workers=cfg.train.workers)
        _write(out, f"sweep_{args.axis}.csv", res.summary_csv)
        _write(out, f"sweep_{args.axis}_runs.csv", res.runs_csv)
        print(res.summary_csv, end="")
    elif cmd == "diagnose":
        seqs = _diagnose_input(args, cfg)
        report = stationarity_report(seqs)
        _write(out, "stationarity.csv", report.to_csv())
        _write(out, "stationarity.txt", report.to_text())
        print(report.to_text(), end="")
    elif cmd == "decompose":
        if args.input:
            z = nx.load_tensor(args.input)
        else:
            z = _synthetic_series(derive_seed(args.seed, "series"), 128)
        k = args.window or cfg.model.temporal.window
        trend_csv, seasonal_csv = components_csv(decompose(z, k))
        _write(out, "trend.csv", trend_csv)
        _write(out, "seasonal.csv", seasonal_csv)
        print(f"wrote trend.csv and seasonal.csv (k={k}, n={z.shape[0]})")
    return 0


def _diagnose_input(args, cfg):
    if args.input:
        arr = nx.load_tensor(args.input)
        return arr if arr.ndim == 3 else arr[None]
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        ds = _dataset(args, ckpt.config)
        model = ckpt.build_model()
        clips = ds.split(args.split)
        with nx.no_grad():
            return np.concatenate(
                [model.spatial.encode_clip(np.stack([c.data for c in clips[i : i + 16]]).astype(np.float64)).data
                 for i in range(0, len(clips), 16)]
            )
    z = _synthetic_series(derive_seed(args.seed, "series"), 20 * args.window)
    return z.reshape(20, args.window, z.shape[1])


if __name__ == "__main__":
    sys.exit(main())
