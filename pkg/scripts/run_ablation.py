"""Train the four cumulative component variants on the smoke corpus and print their FIDs."""

import argparse
import json
import logging
from pathlib import Path

from hwgen.config import preset
from hwgen.dataio import Dataset
from hwgen.experiments import run_ablation
from hwgen.glyphs import bundled_font_path, load_hex_font
from hwgen.synth import write_corpus

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/ablation")
    ap.add_argument("--steps", type=int, default=500)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO)
    out = Path(args.out_dir)
    manifest, _ = write_corpus(out / "corpus", load_hex_font(bundled_font_path()))
    reports = run_ablation(preset("smoke", steps=args.steps), Dataset.from_manifest(manifest), out)
    for r in reports:
        r.pop("config")
        print(json.dumps(r))
