"""Write the synthetic two-writer smoke corpus (images, manifest.jsonl, split.txt)."""

import argparse

from hwgen.glyphs import bundled_font_path, load_hex_font
from hwgen.synth import write_corpus

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    args = ap.parse_args()
    manifest, split = write_corpus(args.out_dir, load_hex_font(bundled_font_path()))
    print(manifest)
    print(split)
