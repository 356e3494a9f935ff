"""Synthetic end-to-end runs over several seeds (stub prompts, desk-scale encoder).

    python scripts/synth_smoke.py --seeds 7 8 9 --out runs/smoke
"""
import argparse
import json
import logging
from pathlib import Path

import numpy as np

from c2vl.pipeline import run_synth, smoke_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[7])
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--per-class", type=int, default=60)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs/smoke")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    rows = []
    for seed in args.seeds:
        cfg = smoke_config(args.config, {"seed": seed})
        res = run_synth(cfg, seed, Path(args.out) / f"seed{seed}", args.classes, args.per_class)
        rows.append(res)
        print(f"seed {seed}: linear {res['linear']:.1f}  knn {res['knn']:.1f}  "
              f"loss {res['first_loss']:.3f} -> {res['final_loss']:.3f}  {res['seconds']:.1f}s", flush=True)
    print(f"mean linear {np.mean([r['linear'] for r in rows]):.2f}  knn {np.mean([r['knn'] for r in rows]):.2f}")
    (Path(args.out) / "results.json").write_text(json.dumps(rows, indent=2))


if __name__ == "__main__":
    main()
