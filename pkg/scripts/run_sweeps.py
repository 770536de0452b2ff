"""Sensitivity curves over spatial scales, temporal scales and window size.

    python3 scripts/run_sweeps.py --axes window_k --seeds 0 --out results/sweeps
"""
import argparse
import sys
from pathlib import Path

from collidenet.config import load
from collidenet.datagen import make_dataset
from collidenet.harness import DEFAULT_GRIDS, run_sensitivity
from collidenet.harness.training import derive_seed

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.cfg"))
    ap.add_argument("--axes", default=",".join(DEFAULT_GRIDS))
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=str(ROOT / "results" / "sweeps"))
    args = ap.parse_args(argv)

    cfg = load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(cfg.data, derive_seed(args.data_seed, "data"))
    seeds = [int(s) for s in args.seeds.split(",")]
    for axis in args.axes.split(","):
        res = run_sensitivity(cfg, axis, DEFAULT_GRIDS[axis], ds, seeds, workers=args.workers)
        (out / f"sweep_{axis}.csv").write_text(res.summary_csv)
        (out / f"sweep_{axis}_runs.csv").write_text(res.runs_csv)
        print(res.summary_csv, end="", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
