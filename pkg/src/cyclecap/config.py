"""Run configuration: nested dataclasses, JSON loading, strict validation.

Unknown keys are rejected rather than ignored so a typo in a config file
fails loudly, and every numeric field carries an explicit bound check.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Any

from .errors import ConfigError

MODES = ("cyc", "sg", "lg", "pdvc")


@dataclass
class Toggles:
    v2t: bool = True
    mcd: bool = True
    cyc: bool = True


@dataclass
class Flags:
    fuse_residual: bool = True
    exclude_self: bool = True
    aux_losses: bool = True


@dataclass
class ModelConfig:
    d: int = 32
    chunk_count: int = 20
    retrieval_k: int = 10
    n_concepts: int = 60
    n_pairs: int = 10
    margin: float = 0.5
    n_queries: int = 16
    gen_layers: int = 2
    d_ff: int = 64
    h_loc: int = 32
    d_embed: int = 16
    sigma: float = 0.1
    k_max: int = 5
    pe_scale: float = 0.5
    max_caption_len: int = 8


@dataclass
class LossConfig:
    l1: float = 4.0
    l2: float = 1.0
    l3: float = 0.5
    l4: float = 1.0
    l5: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    beta_giou: float = 2.0
    beta_cls: float = 2.0
    beta_cap: float = 1.0
    beta_ct: float = 1.0


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    schedule: str = "cosine"
    eval_every: int = 10


@dataclass
class DataConfig:
    n_train: int = 200
    n_val: int = 50
    t_frames: int = 100
    n_types: int = 12
    k_min: int = 1
    k_max: int = 5
    width_min: float = 0.08
    width_max: float = 0.22
    iou_cap: float = 0.2
    noise_std: float = 0.1
    signal_strength: float = 1.0
    jitter: float = 0.1
    dup_rate: float = 0.35
    attempts: int = 100


@dataclass
class RunConfig:
    seed: int = 0
    mode: str = "cyc"
    toggles: Toggles = field(default_factory=Toggles)
    flags: Flags = field(default_factory=Flags)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    @property
    def effective_mode(self) -> str:
        """cyc degrades to lg when the cyclic toggle is off."""
        if self.mode == "cyc" and not self.toggles.cyc:
            return "lg"
        return self.mode

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_SECTIONS = {
    "toggles": Toggles,
    "flags": Flags,
    "model": ModelConfig,
    "loss": LossConfig,
    "train": TrainConfig,
    "data": DataConfig,
}


def _fill(cls: type, payload: dict[str, Any], where: str) -> Any:
    known = {f.name: f.type for f in fields(cls)}
    unknown = set(payload) - set(known)
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")
    obj = cls()
    for name, value in payload.items():
        current = getattr(obj, name)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}.{name} must be a boolean")
        elif isinstance(current, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}.{name} must be an integer")
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{name} must be a number")
            value = float(value)
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ConfigError(f"{where}.{name} must be a string")
        setattr(obj, name, value)
    return obj


def from_dict(payload: dict[str, Any]) -> RunConfig:
    if not isinstance(payload, dict):
        raise ConfigError("config root must be an object")
    unknown = set(payload) - set(_SECTIONS) - {"seed", "mode"}
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in config")
    cfg = RunConfig()
    if "seed" in payload:
        if isinstance(payload["seed"], bool) or not isinstance(payload["seed"], int):
            raise ConfigError("seed must be an integer")
        cfg.seed = payload["seed"]
    if "mode" in payload:
        cfg.mode = payload["mode"]
    for name, cls in _SECTIONS.items():
        if name in payload:
            if not isinstance(payload[name], dict):
                raise ConfigError(f"config section {name!r} must be an object")
            setattr(cfg, name, _fill(cls, payload[name], name))
    validate(cfg)
    return cfg


def load(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return from_dict(payload)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: RunConfig) -> None:
    _check(cfg.seed >= 0, "seed must be >= 0")
    _check(cfg.mode in MODES, f"mode must be one of {MODES}")

    m = cfg.model
    _check(m.d >= 4, "model.d must be >= 4")
    _check(m.d % 2 == 0, "model.d must be even")
    _check(m.chunk_count >= 1, "model.chunk_count must be >= 1")
    _check(m.retrieval_k >= 1, "model.retrieval_k must be >= 1")
    _check(m.n_concepts >= 1, "model.n_concepts must be >= 1")
    _check(m.n_pairs >= 1, "model.n_pairs must be >= 1")
    _check(m.margin > 0, "model.margin must be > 0")
    _check(1 <= m.n_queries <= 256, "model.n_queries must be in 1..256")
    _check(1 <= m.gen_layers <= 8, "model.gen_layers must be in 1..8")
    _check(m.d_ff >= 1, "model.d_ff must be >= 1")
    _check(m.h_loc >= 1, "model.h_loc must be >= 1")
    _check(m.d_embed >= 1, "model.d_embed must be >= 1")
    _check(m.sigma > 0, "model.sigma must be > 0")
    _check(1 <= m.k_max <= 64, "model.k_max must be in 1..64")
    _check(m.pe_scale > 0, "model.pe_scale must be > 0")
    _check(2 <= m.max_caption_len <= 64, "model.max_caption_len must be in 2..64")

    lo = cfg.loss
    for name in ("l1", "l2", "l3", "l4", "l5"):
        _check(getattr(lo, name) >= 0, f"loss.{name} must be >= 0")
    _check(0 < lo.focal_alpha < 1, "loss.focal_alpha must be in (0, 1)")
    _check(lo.focal_gamma >= 0, "loss.focal_gamma must be >= 0")
    for name in ("beta_giou", "beta_cls", "beta_cap", "beta_ct"):
        _check(getattr(lo, name) >= 0, f"loss.{name} must be >= 0")

    t = cfg.train
    _check(1 <= t.epochs <= 10000, "train.epochs must be in 1..10000")
    _check(t.batch_size >= 1, "train.batch_size must be >= 1")
    _check(t.lr > 0, "train.lr must be > 0")
    _check(0 <= t.momentum < 1, "train.momentum must be in [0, 1)")
    _check(t.schedule in ("cosine", "constant"), "train.schedule must be cosine|constant")
    _check(t.eval_every >= 1, "train.eval_every must be >= 1")

    d = cfg.data
    _check(d.n_train >= 1, "data.n_train must be >= 1")
    _check(d.n_val >= 0, "data.n_val must be >= 0")
    _check(d.t_frames >= 4, "data.t_frames must be >= 4")
    _check(2 <= d.n_types <= 12, "data.n_types must be in 2..12")
    _check(1 <= d.k_min, "data.k_min must be >= 1")
    _check(d.k_min <= d.k_max, "data.k_min must be <= data.k_max")
    _check(d.k_max <= m.k_max, "data.k_max must be <= model.k_max")
    _check(0 < d.width_min <= d.width_max < 1, "data widths must satisfy 0 < min <= max < 1")
    _check(d.width_min * d.t_frames >= 1, "data.width_min must span at least one frame")
    _check(0 <= d.iou_cap < 1, "data.iou_cap must be in [0, 1)")
    _check(d.noise_std >= 0, "data.noise_std must be >= 0")
    _check(d.signal_strength > 0, "data.signal_strength must be > 0")
    _check(0 <= d.jitter < 1, "data.jitter must be in [0, 1)")
    _check(0 <= d.dup_rate <= 1, "data.dup_rate must be in [0, 1]")
    _check(d.attempts >= 1, "data.attempts must be >= 1")
