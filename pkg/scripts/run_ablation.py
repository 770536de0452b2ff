"""Train the 14-row toggle grid on the default synthetic dataset.

    python3 scripts/run_ablation.py --seeds 0,1,2 --out results/ablation

Writes ablation.csv (mean/std test MSE per row) and ablation_runs.csv.
Each run takes 5-10 minutes on one CPU core, so the full grid over three
seeds is a multi-hour job; ``--rows`` trains a subset.
"""
import argparse
import sys
import time
from pathlib import Path

from collidenet.config import load
from collidenet.datagen import make_dataset
from collidenet.harness import constant_baseline, run_ablation
from collidenet.harness.training import derive_seed

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.cfg"))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--rows", help="comma-separated row IDs (default: all 14)")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=str(ROOT / "results" / "ablation"))
    args = ap.parse_args(argv)

    cfg = load(args.config)
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(cfg.data, derive_seed(args.data_seed, "data"))
    print(f"dataset: {len(ds.train)}/{len(ds.val)}/{len(ds.test)} clips; "
          f"constant-mean test MSE {constant_baseline(ds).mse:.4f}", flush=True)
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = [int(r) for r in args.rows.split(",")] if args.rows else None
    start = time.perf_counter()
    res = run_ablation(cfg, ds, seeds, rows=rows, workers=args.workers)
    (out / "ablation.csv").write_text(res.summary_csv)
    (out / "ablation_runs.csv").write_text(res.runs_csv)
    print(res.summary_csv, end="")
    print(f"{len(res.runs)} runs in {(time.perf_counter() - start) / 60:.1f} min")
    return 0


if __name__ == "__main__":
    sys.exit(main())
