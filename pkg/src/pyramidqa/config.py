"""Run configuration: defaults, file parsing, and validation.

Configs are plain ``key = value`` text (``#`` comments allowed) mapped
onto :class:`RunConfig`.  Values are coerced by the declared field type,
unknown keys are rejected, and :func:`RunConfig.validate` enforces the
divisibility rules the pyramid needs before any tensor is allocated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from typing import Tuple

import numpy as np

from .errors import ConfigError

TASKS = ("open_ended", "count", "multi_choice")
TOPDOWN_MODES = ("contextual", "upsample", "attention", "none")
SCALE_MODES = ("full", "head")
PLATEAU_MODES = ("val", "train")

VIDEO_SPATIAL_STRIDE = 4  # downsampling of the conv encoder front end


@dataclass
class RunConfig:
    task: str = "open_ended"
    seed: int = 0

    # model geometry
    levels: int = 3
    d_model: int = 64
    heads: int = 4
    time_steps: int = 16
    frame_hw: int = 32
    enc_channels: Tuple[int, ...] = (8, 16, 16)
    vocab_size: int = 64
    question_len: int = 10
    num_candidates: int = 4

    # variants
    attention_scale: str = "full"
    topdown: str = "contextual"
    decomposition: bool = True
    no_constraint: bool = False

    # optimisation
    batch_size: int = 16
    lr: float = 1e-4
    level_weight: float = 0.1
    max_epochs: int = 50
    patience: int = 10
    plateau_on: str = "val"
    float_width: int = 32
    augment: bool = True

    # counting head label range
    count_lo: int = 1
    count_hi: int = 5

    @property
    def dtype(self):
        return np.float32 if self.float_width == 32 else np.float64

    @property
    def grid_hw(self) -> int:
        return self.frame_hw // VIDEO_SPATIAL_STRIDE

    def n_outputs(self) -> int:
        if self.task == "open_ended":
            return 8  # one class per palette colour
        if self.task == "count":
            return 1
        return 1  # multi_choice scores one candidate at a time

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.topdown not in TOPDOWN_MODES:
            raise ConfigError(f"topdown must be one of {TOPDOWN_MODES}, got {self.topdown!r}")
        if self.attention_scale not in SCALE_MODES:
            raise ConfigError(
                f"attention_scale must be one of {SCALE_MODES}, got {self.attention_scale!r}")
        if self.plateau_on not in PLATEAU_MODES:
            raise ConfigError(f"plateau_on must be one of {PLATEAU_MODES}, got {self.plateau_on!r}")
        if self.float_width not in (32, 64):
            raise ConfigError(f"float_width must be 32 or 64, got {self.float_width}")
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.d_model % 2:
            raise ConfigError(f"d_model must be even, got {self.d_model}")
        if self.d_model % self.heads:
            raise ConfigError(
                f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if len(self.enc_channels) != 3:
            raise ConfigError(f"enc_channels needs 3 entries, got {self.enc_channels}")
        if self.frame_hw % VIDEO_SPATIAL_STRIDE:
            raise ConfigError(
                f"frame_hw {self.frame_hw} must be divisible by {VIDEO_SPATIAL_STRIDE}")
        coarsest = 1 << (self.levels - 1)
        if self.time_steps % coarsest:
            raise ConfigError(
                f"time_steps {self.time_steps} must be divisible by {coarsest} "
                f"(coarsest window for {self.levels} levels)")
        if self.grid_hw % coarsest:
            raise ConfigError(
                f"encoded grid {self.grid_hw} must be divisible by {coarsest} "
                f"(coarsest window for {self.levels} levels)")
        if self.batch_size < 2:
            raise ConfigError(
                f"batch_size must be >= 2 for batch statistics, got {self.batch_size}")
        if self.question_len < 1:
            raise ConfigError(f"question_len must be >= 1, got {self.question_len}")
        if self.num_candidates < 2:
            raise ConfigError(
                f"num_candidates must be >= 2, got {self.num_candidates}")
        if not 0 <= self.count_lo <= self.count_hi:
            raise ConfigError(
                f"count range [{self.count_lo}, {self.count_hi}] is invalid")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.level_weight < 0:
            raise ConfigError(f"level_weight must be non-negative, got {self.level_weight}")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _coerce(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {raw!r}") from None
    if kind is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {raw!r}") from None
    if kind is str:
        return raw
    # the only remaining declared type is a tuple of ints
    try:
        return tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {raw!r}") from None


def _field_types():
    out = {}
    for f in fields(RunConfig):
        if f.type in ("int", int):
            out[f.name] = int
        elif f.type in ("float", float):
            out[f.name] = float
        elif f.type in ("bool", bool):
            out[f.name] = bool
        elif f.type in ("str", str):
            out[f.name] = str
        else:
            out[f.name] = tuple
    return out


FIELD_TYPES = _field_types()


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _coerce(key, FIELD_TYPES[key], raw))
    return cfg


def load_config(path: str, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, base)
