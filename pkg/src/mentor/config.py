"""Training configuration: dataclass defaults, flat key=value config files,
and flag overrides (defaults < file < flags)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import BadValue, MissingFile, UnknownKey

ALIGN_LEVELS = ("L1", "L2", "L3", "L4")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 200
    batch_size: int = 2048
    early_stop_patience: int = 20
    embed_dim: int = 64          # d
    ui_layers: int = 2           # L, user-item propagation depth
    knn_k: int = 40              # top-k of the item-item graph
    item_graph_layers: int = 1
    normalize_item_graph: bool = True
    mask_ratio: float = 0.5      # p, feature-masking dropout ratio
    lambda_f: float = 1.5
    lambda_g: float = 1e-3
    lambda_align: float = 1.0
    tau: float = 0.2
    lambda_reg: float = 1e-4     # L2 weight on modality parameters
    noise_scale: float = 0.1     # eps, graph-perturbation noise scale
    seed: int = 2024
    fusion: str = "sum"          # "sum" (convex combination) or "concat"
    nce_negatives: str = "batch"  # "batch" or "all"
    align_levels: str = "L1,L2,L3,L4"
    k_core: int = 5

    def level_mask(self) -> frozenset[str]:
        if not self.align_levels.strip():
            return frozenset()
        return frozenset(s.strip() for s in self.align_levels.split(",") if s.strip())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


_POSITIVE = {
    "learning_rate", "epochs", "batch_size", "early_stop_patience", "embed_dim",
    "knn_k", "item_graph_layers", "tau", "noise_scale", "k_core",
}
_NONNEGATIVE = {"ui_layers", "lambda_f", "lambda_g", "lambda_align", "lambda_reg"}
_CHOICES = {
    "fusion": ("sum", "concat"),
    "nce_negatives": ("batch", "all"),
}


def _coerce(key: str, value, target_type):
    if isinstance(value, target_type) and not (target_type is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if target_type is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if target_type is int:
            f = float(text)
            if f != int(f):
                raise ValueError(text)
            return int(f)
        return target_type(text)
    except ValueError:
        raise BadValue(key, f"cannot parse {value!r} as {target_type.__name__}")


def _validate(cfg: TrainConfig) -> TrainConfig:
    for key in _POSITIVE:
        if getattr(cfg, key) <= 0:
            raise BadValue(key, "must be positive")
    for key in _NONNEGATIVE:
        if getattr(cfg, key) < 0:
            raise BadValue(key, "must be non-negative")
    if not (0.0 <= cfg.mask_ratio < 1.0):
        raise BadValue("mask_ratio", "must be in [0, 1)")
    for key, choices in _CHOICES.items():
        if getattr(cfg, key) not in choices:
            raise BadValue(key, f"must be one of {choices}")
    for level in cfg.level_mask():
        if level not in ALIGN_LEVELS:
            raise BadValue("align_levels", f"unknown level {level!r}")
    return cfg


def read_config_file(path) -> dict:
    """Flat `key = value` UTF-8 text; `#` starts a comment line."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    values = {}
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise BadValue(f"line {line_no}", f"expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def parse_config(path=None, overrides: dict | None = None) -> TrainConfig:
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    types = {f.name: type(getattr(TrainConfig(), f.name)) for f in dataclasses.fields(TrainConfig)}
    merged = {}
    for source in (read_config_file(path) if path else {}, overrides or {}):
        for key, value in source.items():
            if key not in fields:
                raise UnknownKey(key)
            if value is None:
                continue
            merged[key] = _coerce(key, value, types[key])
    return _validate(TrainConfig(**merged))
