"""Evaluation, augmentation, ablation and reporting built on a trained state.

The CLI is a thin layer over these functions; scripts and tests call them directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from . import images
from .checkpoint import file_hash
from .config import ConfigError, RunConfig, preset
from .dataio import (
    CHAR_WIDTH,
    HEIGHT,
    POOL_NAMES,
    Dataset,
    ManifestError,
    Sample,
    SplitSpec,
    StyleSet,
    build_eval_grid,
    load_split,
    preprocess_image,
    sample_style_set,
    write_manifest,
)
from .generator import generate
from .glyphs import load_hex_font, render_text, render_token, tokenize
from .metrics import cer, edit_distance, eval_four_way, features_for, fid, kid, ned, wer
from .recognizer import Charset, greedy_decode, recognition_loss, symbols_of
from .synth import write_corpus
from .training import PREFIXES, TrainState, _check_finite, build_state, fit, make_batch, save_state

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".pgm", ".pnm", ".png")
ABLATION_AXES = ("vit_generator", "multi_scale", "vit_recognizer_writerid")


# ---------------------------------------------------------------- inputs


def load_free_image(path) -> torch.Tensor:
    """Preprocess an image with no transcript: height 32, width rounded to a multiple of 16."""
    raw = images.read_image(path)
    h, w = raw.shape
    if h == 0 or w == 0:
        raise ManifestError(f"{path}: empty image")
    L = max(1, int(round(w * HEIGHT / h / CHAR_WIDTH)))
    return preprocess_image(raw, L)


def load_style_dir(path, writer_id: int = 0, limit: int | None = None) -> StyleSet:
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ManifestError(f"{path}: no style images ({', '.join(IMAGE_SUFFIXES)})")
    files = files[:limit] if limit else files
    return StyleSet(writer_id, [load_free_image(f) for f in files])


def read_texts(texts=(), text_file=None) -> list[str]:
    out = list(texts)
    if text_file:
        out += [l.strip() for l in Path(text_file).read_text(encoding="utf-8").splitlines() if l.strip()]
    if not out:
        raise ConfigError("text", "no texts given")
    return out


def config_record(cfg: RunConfig, checkpoint=None) -> dict:
    rec = {"config": cfg.to_dict(), "config_digest": cfg.digest()}
    if checkpoint is not None:
        rec["checkpoint"] = str(checkpoint)
        rec["checkpoint_sha256"] = file_hash(checkpoint)
    return rec


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- generation


def generate_to_dir(state: TrainState, style: StyleSet, texts: list[str], out_dir, writer_tag: str = "style") -> Path:
    """Write one PGM per text plus ``manifest.jsonl``; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        batch = generate(style, texts, state.gen, state.writer, state.table)
    records = []
    for i, (img, text) in enumerate(zip(batch.images, texts)):
        rel = Path("images") / f"{i:06d}.pgm"
        images.write_pgm(out_dir / rel, images.tensor_to_pixels(img[0].numpy()))
        records.append((rel.as_posix(), text, writer_tag))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


def recognize_paths(state: TrainState, paths) -> list[dict]:
    out = []
    with torch.no_grad():
        for p in paths:
            logits = state.recog(load_free_image(p))[0]
            out.append({"image": str(p), "prediction": greedy_decode(logits, state.charset)})
    return out


# ---------------------------------------------------------------- evaluation


class _Synth:
    """Generates images for samples, caching one style embedding per writer."""

    def __init__(self, state: TrainState, dataset: Dataset, seed: int):
        self.state, self.dataset, self.seed = state, dataset, seed
        self._styles: dict[int, torch.Tensor] = {}

    def style_tokens(self, writer_id: int) -> torch.Tensor:
        if writer_id not in self._styles:
            style = sample_style_set(self.dataset, writer_id, self.state.cfg.P, [self.seed, writer_id])
            self._styles[writer_id] = self.state.writer.embed(style.images).tokens
        return self._styles[writer_id]

    def __call__(self, samples) -> list[torch.Tensor]:
        d = self.state.cfg.block.d_model
        with torch.no_grad():
            return [
                self.state.gen(self.style_tokens(s.writer_id), render_text(self.state.table, s.transcript, d))[0]
                for s in samples
            ]


def recognition_pairs(state: TrainState, imgs, texts) -> list[tuple[str, str]]:
    with torch.no_grad():
        return [(greedy_decode(state.recog(im)[0], state.charset), t) for im, t in zip(imgs, texts)]


def htr_scores(pairs) -> dict:
    return {"cer": cer(pairs), "wer": wer(pairs), "ned": ned(pairs)}


def evaluate(
    state: TrainState,
    dataset: Dataset,
    split: SplitSpec | None = None,
    n_per_pool: int = 100,
    seed: int = 0,
    diff_path=None,
) -> dict:
    """FID/KID of generated vs real images, HTR scores of the recogniser on generated
    images, and the four-way pool table when a split is given."""
    synth = _Synth(state, dataset, seed)
    fakes = synth(dataset.samples)
    reals = [dataset.image(i) for i in range(len(dataset))]
    f_fake, f_real = features_for(fakes, seed), features_for(reals, seed)
    n = min(len(fakes), len(reals))
    pairs = recognition_pairs(state, fakes, [s.transcript for s in dataset.samples])
    report = {
        "n_images": len(fakes),
        "fid": fid(f_real, f_fake),
        "kid": kid(f_real, f_fake, subset_size=min(100, n), n_subsets=10, seed=seed) if n >= 2 else None,
        **htr_scores(pairs),
        "real_recognition": htr_scores(recognition_pairs(state, reals, [s.transcript for s in dataset.samples])),
    }
    if split is not None:
        pools = build_eval_grid(split, dataset.samples)
        index = {id(s): i for i, s in enumerate(dataset.samples)}
        report["four_way"] = eval_four_way(pools, synth, lambda s: dataset.image(index[id(s)]), n_per_pool, seed)
        report["pool_sizes"] = {k: len(pools[k]) for k in POOL_NAMES}
    if diff_path is not None:
        with Path(diff_path).open("w", encoding="utf-8") as fh:
            for pred, ref in pairs:
                c = edit_distance(symbols_of(pred), symbols_of(ref))
                fh.write(f"{ref}\t{pred}\tS={c.substitutions} I={c.insertions} D={c.deletions}\n")
    return report


def load_eval_data(cfg: RunConfig, manifest=None, split=None) -> tuple[Dataset, SplitSpec | None]:
    manifest = manifest or cfg.manifest
    if not manifest:
        raise ConfigError("manifest", "no manifest given on the command line or in the config")
    ds = Dataset.from_manifest(manifest)
    split = split or cfg.split
    return ds, (load_split(split, ds.writers) if split else None)


def fit_recognizer(cfg: RunConfig, dataset: Dataset, out_dir, train_indices=None) -> TrainState:
    """Train only the recogniser on the manifest's images (the augmentation baseline)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = build_state(cfg, Charset.from_texts(s.transcript for s in dataset.samples), dataset.writers)
    opt = state.optims["recog"]
    with (out_dir / "metrics.jsonl").open("w", encoding="utf-8") as mlog:
        while state.step < cfg.steps:
            batch = make_batch(dataset, cfg, state.step, train_indices)
            loss = torch.stack(
                [recognition_loss(state.recog(x)[0], t, state.charset) for x, t in zip(batch.real_images, batch.real_texts)]
            ).mean()
            _check_finite("recognizer", {"R": loss.item()})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            state.step += 1
            if state.step % cfg.log_interval == 0:
                mlog.write(json.dumps({"step": state.step, "R": loss.item()}) + "\n")
    save_state(state, out_dir / "final.hwc")
    return state


# ---------------------------------------------------------------- augmentation


def augment(state: TrainState, dataset: Dataset, vocab: list[str], n: int, out_dir, writer_ids=None, seed: int = 0) -> Path:
    """Generate ``n`` labelled images over the given writers' styles; returns the manifest path."""
    if n <= 0:
        raise ConfigError("n", "must be positive")
    if not vocab:
        raise ConfigError("vocab", "vocabulary is empty")
    writer_ids = sorted(dataset.by_writer) if writer_ids is None else sorted(writer_ids)
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    synth = _Synth(state, dataset, seed)
    records = []
    for i in range(n):
        wid = writer_ids[i % len(writer_ids)]
        text = vocab[int(rng.integers(len(vocab)))]
        img = synth([Sample("", text, wid)])[0]
        rel = Path("images") / f"{i:06d}.pgm"
        images.write_pgm(out_dir / rel, images.tensor_to_pixels(img[0].numpy()))
        records.append((rel.as_posix(), text, dataset.writers[wid]))
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    return manifest


# ---------------------------------------------------------------- model size

MB = 4 / 2**20  # float32 bytes per parameter, in MiB


def size_table(counts: dict[str, int]) -> dict:
    """Gen and Enc rows plus their total; the remaining networks are listed apart."""
    gen, enc = counts.get("gen", 0), counts.get("enc", 0)
    rows = {
        "Gen": {"params": gen, "MB": gen * MB},
        "Enc": {"params": enc, "MB": enc * MB},
        "Total": {"params": gen + enc, "MB": (gen + enc) * MB},
    }
    others = {k: {"params": v, "MB": v * MB} for k, v in counts.items() if k not in ("gen", "enc")}
    return {"rows": rows, "excluded": others}


def count_state(state: TrainState) -> dict[str, int]:
    enc = sum(p.numel() for n, p in state.writer.named_parameters() if not n.startswith("head."))
    return {
        "gen": sum(p.numel() for p in state.gen.parameters()),
        "enc": enc,
        "writer_head": state.writer.head.weight.numel() + state.writer.head.bias.numel(),
        "disc": sum(p.numel() for p in state.disc.parameters()),
        "recog": sum(p.numel() for p in state.recog.parameters()),
    }


def count_arrays(arrays: dict[str, np.ndarray]) -> dict[str, int]:
    counts = {"gen": 0, "enc": 0, "writer_head": 0, "disc": 0, "recog": 0}
    for name, arr in arrays.items():
        if name.startswith("optim."):
            continue
        if name.startswith(PREFIXES["gen"]):
            counts["gen"] += arr.size
        elif name.startswith(PREFIXES["writer"] + "head."):
            counts["writer_head"] += arr.size
        elif name.startswith(PREFIXES["writer"]):
            counts["enc"] += arr.size
        elif name.startswith(PREFIXES["disc"]):
            counts["disc"] += arr.size
        elif name.startswith(PREFIXES["recog"]):
            counts["recog"] += arr.size
    return counts


def format_size_table(table: dict) -> str:
    lines = [f"{'':8}{'params':>12}{'MB':>10}"]
    for name, row in table["rows"].items():
        lines.append(f"{name:8}{row['params']:>12,}{row['MB']:>10.1f}")
    if table["excluded"]:
        lines.append("not needed for generation:")
        for name, row in table["excluded"].items():
            lines.append(f"  {name:12}{row['params']:>12,}{row['MB']:>10.1f}")
    return "\n".join(lines)


# ---------------------------------------------------------------- ablation


def ablation_variants(base: RunConfig, axes=ABLATION_AXES) -> list[tuple[str, RunConfig]]:
    """Cumulative variants: CNN/CRNN baseline, then each enabled axis in fixed order."""
    unknown = [a for a in axes if a not in ABLATION_AXES]
    if unknown:
        raise ConfigError("axes", f"unknown ablation axis {unknown[0]!r}; choose from {', '.join(ABLATION_AXES)}")
    cfg = base.replace(use_cpe=False, n_scales=1, use_vit_recognizer=False, use_vit_writerid=False, P=15)
    variants = [("base", cfg)]
    changes = {
        "vit_generator": dict(use_cpe=True, P=1),
        "multi_scale": dict(n_scales=2),
        "vit_recognizer_writerid": dict(use_vit_recognizer=True, use_vit_writerid=True),
    }
    for axis in ABLATION_AXES:
        if axis in axes:
            cfg = cfg.replace(**changes[axis])
            variants.append((f"+{axis}", cfg))
    return variants


def data_order_digest(dataset: Dataset, cfg: RunConfig, steps: int) -> str:
    h = hashlib.sha256()
    for step in range(steps):
        b = make_batch(dataset, cfg, step)
        h.update(json.dumps([b.target_texts, b.real_texts, b.real_writers]).encode())
    return h.hexdigest()[:16]


def run_ablation(base: RunConfig, dataset: Dataset, out_dir, axes=ABLATION_AXES, seed: int = 0) -> list[dict]:
    out_dir = Path(out_dir)
    reports = []
    for name, cfg in ablation_variants(base, axes):
        run_dir = out_dir / name.lstrip("+")
        log.info("ablation variant %s (%s)", name, cfg.digest())
        state = fit(cfg, dataset, run_dir)
        ckpt = run_dir / "final.hwc"
        scores = evaluate(state, dataset, seed=seed)
        reports.append(
            {
                "variant": name,
                **config_record(cfg, ckpt),
                "data_order": data_order_digest(dataset, cfg, min(cfg.steps, 50)),
                "fid": scores["fid"],
                "kid": scores["kid"],
                "cer": scores["cer"],
            }
        )
    return reports


# ---------------------------------------------------------------- qualitative grid


def _label(table, text: str, max_chars: int = 12) -> np.ndarray:
    """Unifont rendering of a label as a (16, 16k) ink mask."""
    groups = tokenize(text)[:max_chars] or [[0x20]]
    return np.concatenate([render_token(table, g) for g in groups], axis=1).astype(bool)


def render_grid(state: TrainState, styles: list[tuple[str, StyleSet]], texts: list[str], pad: int = 4) -> np.ndarray:
    """Rows = style sources, columns = texts, with labelled top and left margins; uint8 image."""
    if not styles or not texts:
        raise ConfigError("grid", "need at least one style and one text")
    with torch.no_grad():
        cells = [[images.tensor_to_pixels(im[0].numpy()) for im in generate(s, texts, state.gen, state.writer, state.table).images] for _, s in styles]
    col_w = [max(cells[r][c].shape[1] for r in range(len(styles))) for c in range(len(texts))]
    row_labels = [_label(state.table, name) for name, _ in styles]
    col_labels = [_label(state.table, t, max_chars=max(1, w // CHAR_WIDTH)) for t, w in zip(texts, col_w)]
    left = max(l.shape[1] for l in row_labels) + pad
    top = 16 + pad
    width = left + sum(w + pad for w in col_w)
    height = top + len(styles) * (HEIGHT + pad)
    out = np.full((height, width), 255, dtype=np.uint8)
    x = left
    for c, w in enumerate(col_w):
        lab = col_labels[c][:, :w]
        out[0:16, x : x + lab.shape[1]][lab] = 0
        for r in range(len(styles)):
            y = top + r * (HEIGHT + pad)
            cell = cells[r][c]
            out[y : y + HEIGHT, x : x + cell.shape[1]] = cell
        x += w + pad
    for r, lab in enumerate(row_labels):
        y = top + r * (HEIGHT + pad) + (HEIGHT - 16) // 2
        out[y : y + 16, 0 : lab.shape[1]][lab] = 0
    return out



# ---------------------------------------------------------------- smoke run


def smoke_run(out_dir, cfg: RunConfig | None = None, repro_steps: int = 100) -> dict:
    """Train on the synthetic two-writer corpus and collect the smoke-run diagnostics.

    Reports the critic hinge-loss trend, greedy CER of the recogniser on generated
    training words, the mean absolute pixel difference between the two writers'
    renderings, and whether a fresh run reproduces the step-``repro_steps`` checkpoint.
    """
    out_dir = Path(out_dir)
    cfg = cfg or preset("smoke")
    table = load_hex_font(cfg.resolved_font_path())
    manifest, _ = write_corpus(out_dir / "corpus", table)
    dataset = Dataset.from_manifest(manifest)
    t0 = time.perf_counter()
    state = fit(cfg, dataset, out_dir / "run", table=table)
    seconds = time.perf_counter() - t0

    lines = [json.loads(l) for l in (out_dir / "run" / "metrics.jsonl").read_text().splitlines()]
    d_loss = np.array([l["C_D"] for l in lines])
    k = max(1, len(d_loss) // 10)
    words = dataset.vocabulary
    synth = _Synth(state, dataset, cfg.seed)
    per_writer = {w: synth([Sample("", t, w) for t in words]) for w in sorted(dataset.by_writer)}
    pairs = [p for w, imgs in per_writer.items() for p in recognition_pairs(state, imgs, words)]
    a, b = (per_writer[w] for w in sorted(per_writer)[:2])
    mad = float(np.mean([(x - y).abs().mean().item() for x, y in zip(a, b)]))

    report = {
        "seconds": seconds,
        "steps": state.step,
        "d_loss_first": float(d_loss[:k].mean()),
        "d_loss_last": float(d_loss[-k:].mean()),
        "d_loss_slope": float(np.polyfit(np.arange(len(d_loss)), d_loss, 1)[0]) if len(d_loss) > 1 else 0.0,
        "cer_generated": cer(pairs),
        "cer_real": cer(recognition_pairs(state, [dataset.image(i) for i in range(len(dataset))], [s.transcript for s in dataset.samples])),
        "writer_mad": mad,
        "samples": pairs[:6],
        **config_record(cfg, out_dir / "run" / "final.hwc"),
    }
    ref = out_dir / "run" / f"ckpt_{repro_steps:06d}.hwc"
    if ref.exists():
        fit(cfg, dataset, out_dir / "repro", max_steps=repro_steps, table=table)
        report["reproduced"] = file_hash(out_dir / "repro" / "final.hwc") == file_hash(ref)
    return report

