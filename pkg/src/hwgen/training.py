"""Alternating generator / critic optimisation with gradient balancing at the image."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import RunConfig
from .dataio import Dataset, StyleSet, select_style_indices
from .discriminator import Discriminator, d_hinge_loss, g_hinge_loss
from .generator import Generator
from .glyphs import GlyphTable, load_hex_font, render_text
from .recognizer import Charset, Recognizer, recognition_loss
from .writerid import WriterIdentifier, writer_loss

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-12
PREFIXES = {"gen": "gen.", "disc": "disc.", "recog": "recog.", "writer": "writerid."}


class NonFiniteLossError(RuntimeError):
    def __init__(self, phase: str, report: dict):
        super().__init__(f"non-finite loss in {phase} step: {report}")
        self.phase = phase
        self.report = report


@dataclass(frozen=True)
class BalanceConfig:
    alpha: float = 0.7
    beta: float = 0.7

    def __post_init__(self):
        for name in ("alpha", "beta"):
            if not 0.0 < getattr(self, name) <= 10.0:
                raise ValueError(f"{name} must lie in (0, 10]")


@dataclass
class GradStats:
    sigma_D: float
    sigma_R: float
    sigma_W: float


def _std(g: torch.Tensor) -> float:
    return float(g.std(correction=0)) if g.numel() else 0.0


def balance_gradients(g_adv, g_R, g_W, cfg: BalanceConfig = BalanceConfig()):
    """Rescale the recogniser and writer gradients to alpha/beta times the adversarial std.

    Returns ``(combined, GradStats)``. A term whose std is below 1e-12 is passed
    through unscaled.
    """
    if not (g_adv.shape == g_R.shape == g_W.shape):
        raise ValueError("gradient tensors must share a shape")
    s_d, s_r, s_w = _std(g_adv), _std(g_R), _std(g_W)
    if s_r < SIGMA_FLOOR:
        log.warning("recognizer gradient std %.3g below floor; passing through unscaled", s_r)
        r = g_R
    else:
        r = g_R * (cfg.alpha * s_d / s_r)
    if s_w < SIGMA_FLOOR:
        log.warning("writer gradient std %.3g below floor; passing through unscaled", s_w)
        w = g_W
    else:
        w = g_W * (cfg.beta * s_d / s_w)
    return g_adv + r + w, GradStats(s_d, s_r, s_w)


@dataclass
class Batch:
    style_sets: list[StyleSet]
    target_texts: list[str]
    real_images: list[torch.Tensor]
    real_texts: list[str]
    real_writers: list[int]

    @property
    def writer_ids(self) -> list[int]:
        return [s.writer_id for s in self.style_sets]


def make_batch(dataset: Dataset, cfg: RunConfig, step: int, train_indices=None, vocab=None) -> Batch:
    """Batch for ``step``; depends only on (seed, step), so resumed runs see the same data."""
    rng = np.random.default_rng([cfg.seed, step])
    indices = list(range(len(dataset))) if train_indices is None else list(train_indices)
    vocab = sorted({dataset.samples[i].transcript for i in indices}) if vocab is None else list(vocab)
    train_samples = [dataset.samples[i] for i in indices]
    styles, targets, reals, texts, writers = [], [], [], [], []
    for _ in range(cfg.batch_size):
        k = indices[int(rng.integers(len(indices)))]
        s = dataset.samples[k]
        picks = select_style_indices(train_samples, s.writer_id, cfg.P, int(rng.integers(2**31)))
        styles.append(StyleSet(s.writer_id, [dataset.image(indices[j]) for j in picks]))
        targets.append(vocab[int(rng.integers(len(vocab)))])
        reals.append(dataset.image(k))
        texts.append(s.transcript)
        writers.append(s.writer_id)
    return Batch(styles, targets, reals, texts, writers)


@dataclass
class TrainState:
    cfg: RunConfig
    table: GlyphTable
    charset: Charset
    writers: list[str]
    gen: Generator
    disc: Discriminator
    recog: Recognizer
    writer: WriterIdentifier
    optims: dict = field(default_factory=dict)
    step: int = 0

    @property
    def nets(self) -> dict:
        return {"gen": self.gen, "disc": self.disc, "recog": self.recog, "writer": self.writer}

    def to(self, dtype) -> "TrainState":
        for net in self.nets.values():
            net.to(dtype)
        self.optims = make_optimizers(self.nets, self.cfg)
        return self


def make_optimizers(nets: dict, cfg: RunConfig) -> dict:
    return {k: torch.optim.Adam(n.parameters(), lr=cfg.lr, betas=tuple(cfg.betas)) for k, n in nets.items()}


def build_state(cfg: RunConfig, charset: Charset, writers: list[str], table: GlyphTable | None = None) -> TrainState:
    torch.manual_seed(cfg.seed)
    table = load_hex_font(cfg.resolved_font_path()) if table is None else table
    writer = WriterIdentifier(cfg.block, max(len(writers), 1), use_vit=cfg.use_vit_writerid)
    gen = Generator(cfg.gen_config())
    disc = Discriminator(cfg.disc_channels)
    recog = Recognizer(cfg.block, charset, use_vit=cfg.use_vit_recognizer, widths=tuple(cfg.recog_widths))
    state = TrainState(cfg, table, charset, writers, gen, disc, recog, writer)
    state.optims = make_optimizers(state.nets, cfg)
    return state


def _check_finite(phase: str, report: dict) -> None:
    if not all(math.isfinite(v) for v in report.values()):
        raise NonFiniteLossError(phase, report)


def _style_tokens(state: TrainState, styles: list[StyleSet]) -> list[torch.Tensor]:
    with torch.no_grad():
        return [state.writer.embed(s.images).tokens for s in styles]


def _render(state: TrainState, tokens: list[torch.Tensor], texts: list[str]) -> list[torch.Tensor]:
    d = state.cfg.block.d_model
    return [state.gen(t, render_text(state.table, txt, d)) for t, txt in zip(tokens, texts)]


def generator_step(state: TrainState, batch: Batch) -> dict:
    """Update G only, from balanced adversarial + recognition + writer gradients at the fakes."""
    tokens = _style_tokens(state, batch.style_sets)
    fakes = _render(state, tokens, batch.target_texts)
    leaves = [f.detach().requires_grad_(True) for f in fakes]

    l_adv = g_hinge_loss(torch.cat([state.disc(x) for x in leaves], dim=1))
    l_r = torch.stack([recognition_loss(state.recog(x)[0], t, state.charset) for x, t in zip(leaves, batch.target_texts)]).mean()
    logits = torch.cat([state.writer.classify(state.writer.embed([x])) for x in leaves])
    l_w = writer_loss(logits, batch.writer_ids)
    report = {"G_adv": l_adv.item(), "G_R": l_r.item(), "G_W": l_w.item()}
    report["G_total"] = report["G_adv"] + report["G_R"] + report["G_W"]
    _check_finite("generator", report)

    def flat(grads):
        return torch.cat([g.reshape(-1) for g in grads])

    g_adv = flat(torch.autograd.grad(l_adv, leaves))
    g_r = flat(torch.autograd.grad(l_r, leaves))
    g_w = flat(torch.autograd.grad(l_w, leaves))
    combined, stats = balance_gradients(g_adv, g_r, g_w, BalanceConfig(state.cfg.alpha, state.cfg.beta))
    report.update(sigma_D=stats.sigma_D, sigma_R=stats.sigma_R, sigma_W=stats.sigma_W)
    _check_finite("generator", report)
    if not bool(torch.isfinite(combined).all()):
        raise NonFiniteLossError("generator", report)

    opt = state.optims["gen"]
    opt.zero_grad(set_to_none=True)
    grads = torch.split(combined, [f.numel() for f in fakes])
    torch.autograd.backward(fakes, [g.view_as(f) for g, f in zip(grads, fakes)])
    opt.step()
    return report


def critic_step(state: TrainState, batch: Batch) -> dict:
    """Update D on real vs fake, and R and W on real images only; G is untouched."""
    with torch.no_grad():
        tokens = _style_tokens(state, batch.style_sets)
        fakes = _render(state, tokens, batch.target_texts) if batch.style_sets else []

    real_scores = torch.cat([state.disc(x) for x in batch.real_images], dim=1) if batch.real_images else None
    fake_scores = torch.cat([state.disc(x) for x in fakes], dim=1) if fakes else None
    losses = {"D": d_hinge_loss(real_scores, fake_scores)}
    if batch.real_images:
        losses["R"] = torch.stack(
            [recognition_loss(state.recog(x)[0], t, state.charset) for x, t in zip(batch.real_images, batch.real_texts)]
        ).mean()
        logits = torch.cat([state.writer.classify(state.writer.embed([x])) for x in batch.real_images])
        losses["W"] = writer_loss(logits, batch.real_writers)
    report = {k: v.item() for k, v in losses.items()}
    _check_finite("critic", report)

    owners = {"D": "disc", "R": "recog", "W": "writer"}
    for key, loss in losses.items():
        opt = state.optims[owners[key]]
        opt.zero_grad(set_to_none=True)
        loss.backward()
    for key in losses:
        state.optims[owners[key]].step()
    return report


# ---------------------------------------------------------------- checkpoints


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays = {}
    for key, net in state.nets.items():
        prefix = PREFIXES[key]
        names = {id(p): n for n, p in net.named_parameters()}
        for name, p in net.named_parameters():
            arrays[prefix + name] = p.detach().cpu().numpy()
        for p, st in state.optims[key].state.items():
            for slot in ("exp_avg", "exp_avg_sq"):
                if slot in st:
                    arrays[f"optim.{prefix}{names[id(p)]}.{slot}"] = st[slot].cpu().numpy()
    return arrays


def state_header(state: TrainState) -> dict:
    opt_steps = {}
    for key, opt in state.optims.items():
        steps = [int(st["step"]) for st in opt.state.values() if "step" in st]
        opt_steps[key] = max(steps) if steps else 0
    return {
        "format": "hwgen-checkpoint/1",
        "step": state.step,
        "config": state.cfg.to_dict(),
        "charset": list(state.charset.symbols),
        "writers": list(state.writers),
        "optimizer_steps": opt_steps,
    }


def save_state(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save_archive(path, state_arrays(state), state_header(state))
    return path


def load_state(path, cfg: RunConfig | None = None, table: GlyphTable | None = None) -> TrainState:
    arrays, header = ckpt.load_archive(path)
    try:
        cfg = RunConfig.from_dict(header["config"]) if cfg is None else cfg
        charset = Charset(tuple(header["charset"]))
        state = build_state(cfg, charset, header["writers"], table)
        for key, net in state.nets.items():
            prefix = PREFIXES[key]
            with torch.no_grad():
                for name, p in net.named_parameters():
                    p.copy_(torch.from_numpy(arrays[prefix + name].astype(np.float32)))
            opt = state.optims[key]
            n_steps = header["optimizer_steps"][key]
            if n_steps:
                for name, p in net.named_parameters():
                    base = f"optim.{prefix}{name}"
                    if base + ".exp_avg" not in arrays:
                        continue
                    opt.state[p] = {
                        "step": torch.tensor(float(n_steps)),
                        "exp_avg": torch.from_numpy(arrays[base + ".exp_avg"].copy()),
                        "exp_avg_sq": torch.from_numpy(arrays[base + ".exp_avg_sq"].copy()),
                    }
        state.step = int(header["step"])
    except (KeyError, ValueError, RuntimeError) as exc:
        raise ckpt.CheckpointError(f"{path}: cannot restore training state ({exc})") from exc
    return state


# ---------------------------------------------------------------- loop


def fit(
    cfg: RunConfig,
    dataset: Dataset,
    out_dir,
    train_indices=None,
    resume=None,
    max_steps: int | None = None,
    table: GlyphTable | None = None,
) -> TrainState:
    """Alternate one generator step and one critic step per iteration up to ``cfg.steps``.

    Writes ``ckpt_<step>.hwc`` every ``checkpoint_every`` steps plus ``final.hwc``, and
    appends a JSON line to ``metrics.jsonl`` every ``log_interval`` steps.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    indices = list(range(len(dataset))) if train_indices is None else list(train_indices)
    vocab = sorted({dataset.samples[i].transcript for i in indices})
    if resume is not None:
        state = load_state(resume, cfg, table)
    else:
        charset = Charset.from_texts(s.transcript for s in dataset.samples)
        state = build_state(cfg, charset, dataset.writers, table)
    end = cfg.steps if max_steps is None else min(cfg.steps, max_steps)
    metrics_path = out_dir / "metrics.jsonl"
    mode = "a" if resume is not None else "w"
    with metrics_path.open(mode, encoding="utf-8") as mlog:
        while state.step < end:
            batch = make_batch(dataset, cfg, state.step, indices, vocab)
            g_report = generator_step(state, batch)
            c_report = critic_step(state, batch)
            state.step += 1
            if state.step % cfg.log_interval == 0:
                line = {"step": state.step, **g_report, **{f"C_{k}": v for k, v in c_report.items()}}
                mlog.write(json.dumps(line) + "\n")
                mlog.flush()
            if state.step % cfg.checkpoint_every == 0:
                save_state(state, out_dir / f"ckpt_{state.step:06d}.hwc")
    save_state(state, out_dir / "final.hwc")
    return state
