"""Stationarity tests and trend/seasonality split of learned frame embeddings.

Loads a checkpoint, embeds the clips of a split with its spatial encoder and
writes stationarity.csv/.txt plus trend.csv and seasonal.csv for one clip.

    python3 scripts/inspect_embeddings.py out/train/checkpoint.cnck data/manifest.csv
"""
import argparse
import sys
from pathlib import Path

import numpy as np

from collidenet import numerics as nx
from collidenet.datagen import read_dataset
from collidenet.decomposition import components_csv, decompose
from collidenet.diagnostics import stationarity_report
from collidenet.harness import load_checkpoint


def embed(model, clips, batch=16) -> np.ndarray:
    with nx.no_grad():
        parts = [model.spatial.encode_clip(np.stack([c.data for c in clips[i : i + batch]]).astype(np.float64)).data
                 for i in range(0, len(clips), batch)]
    return np.concatenate(parts)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("manifest")
    ap.add_argument("--split", default="test")
    ap.add_argument("--clip", type=int, default=0, help="index of the clip to decompose")
    ap.add_argument("--out", default="inspect")
    args = ap.parse_args(argv)

    ckpt = load_checkpoint(args.checkpoint)
    model = ckpt.build_model()
    clips = read_dataset(args.manifest).split(args.split)
    z = embed(model, clips)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = stationarity_report(z)
    (out / "stationarity.csv").write_text(report.to_csv())
    (out / "stationarity.txt").write_text(report.to_text())
    trend, seasonal = components_csv(decompose(z[args.clip], ckpt.config.model.temporal.window_at("input")))
    (out / "trend.csv").write_text(trend)
    (out / "seasonal.csv").write_text(seasonal)
    print(report.to_text(), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
