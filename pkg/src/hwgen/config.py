"""Run configuration: validation, presets and JSON round-tripping."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .generator import WIRINGS, GenConfig
from .glyphs import bundled_font_path
from .nnblocks import BlockConfig


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    font_path: str
    manifest: str = ""
    split: str = ""
    seed: int = 0
    steps: int = 2000
    batch_size: int = 4
    P: int = 15
    lr: float = 5e-5
    betas: tuple[float, float] = (0.5, 0.999)
    alpha: float = 0.7
    beta: float = 0.7
    log_interval: int = 10
    checkpoint_every: int = 500
    block: BlockConfig = field(default_factory=BlockConfig)
    wiring: str = "conventional"
    n_scales: int = 2
    use_cpe: bool = True
    decoder_channels: tuple[int, ...] = (64, 32, 16)
    use_vit_recognizer: bool = True
    use_vit_writerid: bool = True
    disc_channels: int = 32
    recog_widths: tuple[int, int] = (32, 64)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.font_path:
            raise ConfigError("font_path", "required")
        for name in ("steps", "batch_size", "P", "log_interval", "checkpoint_every", "disc_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr", "must be positive")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("betas", "must be two values in [0, 1)")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0.0 < v <= 10.0:
                raise ConfigError(name, "must lie in (0, 10]")
        if self.wiring not in WIRINGS:
            raise ConfigError("wiring", f"must be one of {WIRINGS}")
        try:
            self.gen_config()
        except ValueError as exc:
            raise ConfigError("n_scales", str(exc)) from None

    def resolved_font_path(self) -> Path:
        return bundled_font_path() if self.font_path == "bundled" else Path(self.font_path)

    def gen_config(self) -> GenConfig:
        return GenConfig(
            block=self.block,
            wiring=self.wiring,
            n_scales=self.n_scales,
            use_cpe=self.use_cpe,
            decoder_channels=tuple(self.decoder_channels),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        d["decoder_channels"] = list(self.decoder_channels)
        d["recog_widths"] = list(self.recog_widths)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown field")
        if "font_path" not in raw or not raw["font_path"]:
            raise ConfigError("font_path", "required")
        d = dict(raw)
        if "block" in d:
            try:
                d["block"] = BlockConfig(**d["block"])
            except (TypeError, ValueError) as exc:
                raise ConfigError("block", str(exc)) from None
        for name in ("betas", "decoder_channels", "recog_widths"):
            if name in d:
                d[name] = tuple(d[name])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError("<root>", str(exc)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc.msg}") from None
        cfg = cls.from_dict(raw)
        base = Path(path).parent
        for name in ("font_path", "manifest", "split"):
            value = getattr(cfg, name)
            if value and value != "bundled" and not Path(value).is_absolute():
                setattr(cfg, name, str(base / value))
        return cfg


def preset(name: str, **overrides) -> RunConfig:
    """Named configurations.

    ``desk``: default widths; ``smoke``: small nets for the CPU smoke corpus;
    ``paper``: wide nets used only for the model-size report.
    """
    if name == "desk":
        cfg = dict(font_path="bundled")
    elif name == "smoke":
        cfg = dict(
            font_path="bundled",
            steps=2000,
            batch_size=4,
            P=1,
            lr=5e-4,
            alpha=2.0,
            block=BlockConfig(d_model=64, n_heads=4, d_ff=128, n_layers=1),
            decoder_channels=(32, 16),
            disc_channels=16,
            recog_widths=(16, 32),
            checkpoint_every=100,
            log_interval=10,
        )
    elif name == "paper":
        cfg = dict(
            font_path="bundled",
            P=15,
            block=BlockConfig(d_model=384, n_heads=8, d_ff=768, n_layers=2),
            decoder_channels=(256, 128, 64),
        )
    else:
        raise ConfigError("preset", f"unknown preset {name!r}")
    cfg.update(overrides)
    return RunConfig(**cfg)
