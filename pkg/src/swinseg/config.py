"""Run configuration: dataclasses plus the flat text-file format.

Config files are UTF-8 text, one `section.key = value` per line, with
`#` starting a comment. Lists are comma-separated; the decoder schedule
is either `model.schedule = 5:0,5:2,...` (explicit pairs) or
`model.windows = 5,7,12` (one unshifted + one half-shifted block per
size).
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .backbone import BackboneConfig, backbone_preset
from .decoders import DECODER_VARIANTS, WindowSchedule
from .errors import ConfigError


@dataclass
class ModelSection:
    backbone: str = "swin-nano"
    decoder: str = "mswin-s"
    d_enc: int = 64
    heads: int = 8
    num_classes: int = 4
    fuse_window: int = 7
    aux_hidden: int = 256
    schedule: str = ""
    windows: str = ""

    def backbone_config(self) -> BackboneConfig:
        return backbone_preset(self.backbone)

    def window_schedule(self) -> WindowSchedule:
        if self.schedule and self.windows:
            raise ConfigError("set model.schedule or model.windows, not both")
        if self.schedule:
            return WindowSchedule.parse(self.schedule)
        if self.windows:
            sizes = [int(v) for v in self.windows.split(",") if v.strip()]
            return WindowSchedule.from_windows(sizes)
        return WindowSchedule.default()


@dataclass
class OptimSection:
    lr: float = 6e-5
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 2000
    warmup: int = 100
    batch_size: int = 1
    stop_miou: float = 0.0  # early stop once train mIoU reaches this; 0 disables


@dataclass
class DataSection:
    source: str = "synthetic"
    path: str = ""
    crop: int = 64
    flip_p: float = 0.5
    seed: int = 0
    count: int = 16


@dataclass
class EvalSection:
    scales: tuple = (0.75, 1.0, 1.25)
    flip: bool = True
    every: int = 100


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    optimizer: OptimSection = field(default_factory=OptimSection)
    data: DataSection = field(default_factory=DataSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        m, o, d, e = self.model, self.optimizer, self.data, self.eval
        if m.decoder not in DECODER_VARIANTS:
            raise ConfigError(
                f"model.decoder must be one of {DECODER_VARIANTS}, got {m.decoder!r}"
            )
        m.backbone_config()
        m.window_schedule()
        if m.d_enc % m.heads != 0:
            raise ConfigError(f"model.d_enc {m.d_enc} not divisible by {m.heads} heads")
        if m.num_classes < 2:
            raise ConfigError("model.num_classes must be >= 2")
        if d.crop % 32 != 0:
            raise ConfigError(f"data.crop must be divisible by 32, got {d.crop}")
        if d.source not in ("synthetic", "directory"):
            raise ConfigError("data.source must be 'synthetic' or 'directory'")
        if d.source == "directory" and not d.path:
            raise ConfigError("data.path required when data.source = directory")
        if not 0.0 <= d.flip_p <= 1.0:
            raise ConfigError("data.flip_p must lie in [0, 1]")
        if d.count < 1:
            raise ConfigError("data.count must be >= 1")
        if o.steps < 1 or o.warmup < 0 or o.batch_size < 1:
            raise ConfigError("optimizer.steps/warmup/batch_size out of range")
        if o.lr <= 0 and o.lr != 0.0:
            raise ConfigError("optimizer.lr must be >= 0")
        if not e.scales or any(s <= 0 for s in e.scales):
            raise ConfigError("eval.scales must be non-empty and positive")
        if e.every < 1:
            raise ConfigError("eval.every must be >= 1")
        return self


_SECTIONS = {
    "model": ModelSection,
    "optimizer": OptimSection,
    "data": DataSection,
    "eval": EvalSection,
}


def _coerce(raw: str, target_type, key: str):
    raw = raw.strip()
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if target_type is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} missing section prefix")
        section_name, field_name = key.split(".", 1)
        section_cls = _SECTIONS.get(section_name)
        if section_cls is None:
            raise ConfigError(f"line {lineno}: unknown section {section_name!r}")
        section = getattr(cfg, section_name)
        if field_name not in {f.name for f in fields(section_cls)}:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        # defaults carry the authoritative type for each field
        target_type = type(getattr(section, field_name))
        setattr(section, field_name, _coerce(raw, target_type, key))
    return cfg.validate()


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def dump_config(cfg: RunConfig) -> str:
    """Render a config back to the flat text format."""
    lines = []
    for section_name in _SECTIONS:
        section = getattr(cfg, section_name)
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section_name}.{f.name} = {value}")
    return "\n".join(lines) + "\n"
