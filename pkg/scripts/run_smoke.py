"""Full smoke run: 2000 alternating steps on the synthetic corpus, then the diagnostics.

Prints a JSON report with the critic-loss trend, generated-word CER, writer
separation and the checkpoint-reproduction check.
"""

import argparse
import json
import logging

from hwgen.config import preset
from hwgen.experiments import smoke_run

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/smoke")
    ap.add_argument("--steps", type=int, default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    cfg = preset("smoke", seed=args.seed)
    if args.steps:
        cfg = cfg.replace(steps=args.steps)
    report = smoke_run(args.out_dir, cfg)
    report.pop("config")
    print(json.dumps(report, indent=2, ensure_ascii=False))
