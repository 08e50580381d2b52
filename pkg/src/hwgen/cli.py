"""Command-line entry point: ``hwgen <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, experiments, images
from .checkpoint import CheckpointError, load_archive
from .config import ConfigError, RunConfig, preset
from .dataio import Dataset, ManifestError, load_manifest, load_split, make_split, write_split
from .glyphs import FontError, MissingGlyphError, ascii_art, bundled_font_path, load_hex_font, render_token, tokenize
from .recognizer import Charset
from .synth import SMOKE_STYLES, write_corpus
from .training import NonFiniteLossError, build_state, fit, load_state

log = logging.getLogger("hwgen")

CONFIG_ENV = "HWGEN_CONFIG"
EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

AUGMENT_RECIPE = """\
Recogniser augmentation recipe (desk-scale analogue of retraining an HTR model
on real + synthetic data):
  1. hwgen augment --checkpoint G.hwc --vocab-file words.txt --n 1000 --out-dir syn
  2. concatenate the real manifest and syn/manifest.jsonl into mixed.jsonl
  3. hwgen train --recognizer-only --manifest real.jsonl --out-dir r_real
     hwgen train --recognizer-only --manifest mixed.jsonl --out-dir r_mixed
  4. hwgen evaluate --recognizer-only --checkpoint r_*/final.hwc --manifest test.jsonl
"""


# ---------------------------------------------------------------- config plumbing


def resolve_config(args, required: bool = True) -> RunConfig | None:
    """--config, then $HWGEN_CONFIG, then --preset; --seed and a few flags override."""
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    if path:
        if not Path(path).is_file():
            raise ConfigError("config", f"config file {path} not found")
        cfg = RunConfig.load(path)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif required:
        raise ConfigError("config", f"give --config, --preset or set ${CONFIG_ENV}")
    else:
        return None
    overrides = {}
    for name in ("seed", "steps", "manifest", "split"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = str(value) if name in ("manifest", "split") else value
    cfg = cfg.replace(**overrides) if overrides else cfg
    if not cfg.resolved_font_path().is_file():
        raise ConfigError("font_path", f"font file {cfg.font_path} not found")
    return cfg


def _state_from_checkpoint(args):
    cfg = resolve_config(args, required=False)
    if cfg is None:
        cfg = RunConfig.from_dict(load_archive(args.checkpoint)[1]["config"])
    overrides = _arch_overrides(args)
    return load_state(args.checkpoint, cfg.replace(**overrides) if overrides else cfg)


def _arch_overrides(args) -> dict:
    out = {}
    if getattr(args, "wiring", None):
        out["wiring"] = args.wiring
    if getattr(args, "scales", None):
        out["n_scales"] = args.scales
    return out


def _emit(obj, out=None) -> None:
    if out:
        experiments.write_json(out, obj)
        log.info("wrote %s", out)
    else:
        print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


# ---------------------------------------------------------------- commands


def cmd_font_inspect(args) -> int:
    path = bundled_font_path() if args.path == "bundled" else args.path
    table = load_hex_font(path)
    for group in tokenize(args.text):
        names = " + ".join(f"U+{cp:04X}" for cp in group)
        narrow = all(table.entries[cp][:, :4].sum() == 0 and table.entries[cp][:, 12:].sum() == 0 for cp in group if cp in table.entries)
        print(f"{names}  ({'8' if narrow else '16'} px)")
        print(ascii_art(render_token(table, group)))
    return 0


def cmd_data_prepare(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.smoke:
        table = load_hex_font(bundled_font_path())
        manifest, split_path = write_corpus(out, table, styles=SMOKE_STYLES)
    else:
        if not args.manifest:
            raise ConfigError("manifest", "give --manifest or --smoke")
        manifest = Path(args.manifest)
        samples, writers = load_manifest(manifest)
        split = make_split(samples, len(writers), args.test_fraction, args.seed)
        split_path = out / "split.txt"
        write_split(split_path, split, writers)
    samples, writers = load_manifest(manifest)
    split = load_split(split_path, writers)
    ds = Dataset(samples, writers)
    for i in range(len(ds)):  # fail early on unreadable images
        ds.image(i)
    summary = {
        "manifest": str(manifest),
        "split": str(split_path),
        "n_samples": len(samples),
        "n_writers": len(writers),
        "train_writers": sorted(writers[i] for i in split.train_writers),
        "test_writers": sorted(writers[i] for i in split.test_writers),
        "vocabulary_size": len(ds.vocabulary),
    }
    _emit(summary, out / "prepare.json")
    print(f"{len(samples)} samples, {len(writers)} writers -> {manifest}, {split_path}")
    return 0


def cmd_train(args) -> int:
    if args.resume and not (args.config or os.environ.get(CONFIG_ENV) or args.preset):
        _, header = load_archive(args.resume)
        cfg = RunConfig.from_dict(header["config"])
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if args.steps is not None:
            cfg = cfg.replace(steps=args.steps)
    else:
        cfg = resolve_config(args)
    if not cfg.manifest:
        raise ConfigError("manifest", "training needs a manifest (config field or --manifest)")
    dataset = Dataset.from_manifest(cfg.manifest)
    indices = None
    if cfg.split:
        split = load_split(cfg.split, dataset.writers)
        indices = [i for i, s in enumerate(dataset.samples) if s.writer_id in split.train_writers]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")
    if args.recognizer_only:
        state = experiments.fit_recognizer(cfg, dataset, out, train_indices=indices)
    else:
        state = fit(cfg, dataset, out, train_indices=indices, resume=args.resume)
    print(f"step {state.step}: {out / 'final.hwc'}")
    return 0


def cmd_generate(args) -> int:
    if args.checkpoint:
        state = _state_from_checkpoint(args)
    else:
        # untrained networks: useful only for checking geometry and wiring
        cfg = resolve_config(args).replace(**_arch_overrides(args))
        state = build_state(cfg, Charset(("a",)), ["style"])
    texts = experiments.read_texts(args.text or (), args.text_file)
    style = experiments.load_style_dir(args.style_dir, limit=state.cfg.P)
    manifest = experiments.generate_to_dir(state, style, texts, args.out_dir, writer_tag=Path(args.style_dir).name)
    record = {"manifest": str(manifest), "n_images": len(texts), "style_dir": str(args.style_dir)}
    record.update(experiments.config_record(state.cfg, args.checkpoint))
    experiments.write_json(Path(args.out_dir) / "generate.json", record)
    print(f"{len(texts)} images -> {manifest}")
    return 0


def cmd_recognize(args) -> int:
    state = load_state(args.checkpoint)
    refs = {}
    if args.manifest:
        samples, _ = load_manifest(args.manifest)
        paths = [s.image_path for s in samples]
        refs = {s.image_path: s.transcript for s in samples}
    else:
        paths = list(args.images)
    if not paths:
        raise ConfigError("images", "nothing to recognise")
    rows = experiments.recognize_paths(state, paths)
    for r in rows:
        if r["image"] in refs:
            r["reference"] = refs[r["image"]]
    lines = "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows)
    if args.out:
        Path(args.out).write_text(lines, encoding="utf-8")
    else:
        sys.stdout.write(lines)
    if refs:
        pairs = [(r["prediction"], r["reference"]) for r in rows]
        log.info("CER %.2f  WER %.2f  NED %.2f", *experiments.htr_scores(pairs).values())
    return 0


def cmd_evaluate(args) -> int:
    state = load_state(args.checkpoint)
    dataset, split = experiments.load_eval_data(state.cfg, args.manifest, args.split)
    if args.recognizer_only:
        pairs = experiments.recognition_pairs(state, [dataset.image(i) for i in range(len(dataset))], [s.transcript for s in dataset.samples])
        report = experiments.htr_scores(pairs)
    else:
        report = experiments.evaluate(state, dataset, split, args.n_per_pool, args.seed, args.diff_out)
    report.update(experiments.config_record(state.cfg, args.checkpoint))
    _emit(report, args.out)
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out_dir)
    if not cfg.manifest:
        manifest, split = write_corpus(out / "corpus", load_hex_font(cfg.resolved_font_path()))
        cfg = cfg.replace(manifest=str(manifest), split=str(split))
    axes = tuple(a.strip() for a in args.axes.split(",") if a.strip()) if args.axes else experiments.ABLATION_AXES
    dataset = Dataset.from_manifest(cfg.manifest)
    reports = experiments.run_ablation(cfg, dataset, out, axes, seed=cfg.seed)
    _emit({"variants": reports}, out / "ablation.json")
    for r in reports:
        print(f"{r['variant']:28s} FID {r['fid']:10.4f}  config {r['config_digest']}")
    return 0


def cmd_augment(args) -> int:
    state = load_state(args.checkpoint)
    vocab = [w for w in Path(args.vocab_file).read_text(encoding="utf-8").split() if w]
    dataset, split = experiments.load_eval_data(state.cfg, args.manifest, args.split)
    writer_ids = sorted(split.train_writers) if split else None
    manifest = experiments.augment(state, dataset, vocab, args.n, args.out_dir, writer_ids, seed=args.seed)
    record = {"manifest": str(manifest), "n": args.n, **experiments.config_record(state.cfg, args.checkpoint)}
    experiments.write_json(Path(args.out_dir) / "augment.json", record)
    print(f"{args.n} images -> {manifest}")
    return 0


def cmd_report_size(args) -> int:
    if args.checkpoint:
        arrays, header = load_archive(args.checkpoint)
        counts = experiments.count_arrays(arrays)
        record = experiments.config_record(RunConfig.from_dict(header["config"]), args.checkpoint)
    else:
        cfg = resolve_config(args)
        charset = Charset(tuple(f"c{i}" for i in range(args.n_classes)))
        state = build_state(cfg, charset, [f"w{i}" for i in range(args.n_writers)])
        counts = experiments.count_state(state)
        record = experiments.config_record(cfg)
    table = experiments.size_table(counts)
    print(experiments.format_size_table(table))
    if args.out:
        experiments.write_json(args.out, {**table, **record})
    return 0


def cmd_grid(args) -> int:
    state = load_state(args.checkpoint)
    styles = [(Path(d).name, experiments.load_style_dir(d, i, limit=state.cfg.P)) for i, d in enumerate(args.style_dir)]
    texts = experiments.read_texts(args.text or (), args.text_file)
    grid = experiments.render_grid(state, styles, texts)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    images.write_image(args.out, grid)
    print(f"{len(styles)}x{len(texts)} grid -> {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def _config_args(p, seed=True):
    p.add_argument("--config", help=f"JSON RunConfig (default: ${CONFIG_ENV})")
    p.add_argument("--preset", choices=("desk", "smoke", "paper"), help="named config used when no file is given")
    if seed:
        p.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hwgen", description="Few-shot handwriting synthesis toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    font = sub.add_parser("font", help="font utilities").add_subparsers(dest="font_command", required=True)
    p = font.add_parser("inspect", help="print the glyph bitmaps for some text")
    p.add_argument("path", help="Unifont .hex file, or 'bundled'")
    p.add_argument("text")
    p.set_defaults(func=cmd_font_inspect)

    data = sub.add_parser("data", help="dataset utilities").add_subparsers(dest="data_command", required=True)
    p = data.add_parser("prepare", help="validate a manifest and write a writer split")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--smoke", action="store_true", help="write the synthetic two-writer corpus instead")
    p.add_argument("--test-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_data_prepare)

    p = sub.add_parser("train", help="train G/D/R/W", epilog=AUGMENT_RECIPE, formatter_class=argparse.RawDescriptionHelpFormatter)
    _config_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--steps", type=int)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--recognizer-only", action="store_true", help="train only the recogniser on real images")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="render texts in the style of a directory of images")
    _config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--style-dir", required=True)
    p.add_argument("--text", action="append")
    p.add_argument("--text-file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--wiring", choices=("conventional", "paper-literal"))
    p.add_argument("--scales", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("recognize", help="greedy CTC transcription as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="*")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("evaluate", help="FID/KID/CER/WER/NED report", epilog=AUGMENT_RECIPE, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--n-per-pool", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--diff-out", help="write reference/prediction alignments here")
    p.add_argument("--recognizer-only", action="store_true", help="score the recogniser on the manifest's images")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score the cumulative component variants")
    _config_args(p)
    p.add_argument("--axes", help=f"comma list from {','.join(experiments.ABLATION_AXES)}")
    p.add_argument("--steps", type=int)
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("augment", help="emit a synthetic labelled corpus", epilog=AUGMENT_RECIPE, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab-file", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--manifest", help="style source (default: the checkpoint's training manifest)")
    p.add_argument("--split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("report-size", help="parameter counts and MB for Gen and Enc")
    p.add_argument("--checkpoint")
    _config_args(p, seed=False)
    p.add_argument("--n-classes", type=int, default=80, help="recogniser classes when sizing a config")
    p.add_argument("--n-writers", type=int, default=339)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report_size)

    p = sub.add_parser("grid", help="style x text image grid")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--style-dir", action="append", required=True)
    p.add_argument("--text", action="append")
    p.add_argument("--text-file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ManifestError, FontError, MissingGlyphError, CheckpointError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
