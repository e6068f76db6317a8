"""Run configuration.

The on-disk format is one ``key = value`` pair per line with JSON values::

    # vector game, paper hyperparameters
    task = "vector_game"
    n_codes = 512
    lr_values = [1e-4, 5e-5, 1e-5, 5e-6]

Blank lines and ``#`` comments are ignored; unknown keys are errors. Fields
left at ``null`` take the task default (see :meth:`RunConfig.resolved`).
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

TASKS = ("vector_game", "image_game")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _scalar_ok(kind: str, v) -> bool:
    if kind == "str":
        return isinstance(v, str)
    if kind == "bool":
        return isinstance(v, bool)
    if kind == "int":
        return isinstance(v, int) and not isinstance(v, bool)
    if kind == "float":
        return isinstance(v, (int, float)) and not isinstance(v, bool)
    raise TypeError(kind)


def _check_type(name: str, annotation: str, v) -> None:
    optional = annotation.startswith("Optional[")
    kind = annotation[len("Optional["):-1] if optional else annotation
    if v is None:
        if not optional:
            raise ConfigError(name, "must not be null")
        return
    if kind.startswith("List["):
        inner = kind[len("List["):-1]
        ok = isinstance(v, list) and all(_scalar_ok(inner, x) for x in v)
        kind = f"list of {inner}"
    else:
        ok = _scalar_ok(kind, v)
    if not ok:
        raise ConfigError(name, f"expected {kind}, got {v!r}")


@dataclass
class RunConfig:
    task: str = "vector_game"
    n_codes: int = 512
    code_dim: Optional[int] = None  # 32 vector / 128 image
    beta: float = 0.25
    ema_decay: float = 0.99
    ema_eps: float = 1e-5
    warmup_iters: Optional[int] = None  # 2000 vector / 234 image
    lr_values: List[float] = field(default_factory=lambda: [1e-4, 5e-5, 1e-5, 5e-6])
    lr_boundaries: List[int] = field(default_factory=lambda: [0, 30000, 90000, 120000])
    batch_size: int = 256
    max_iters: Optional[int] = None  # 30000 vector / 120000 image
    seed: int = 0
    incorporation_level: int = 1
    skip_widths: Optional[List[int]] = None
    latent_widths: Optional[List[int]] = None
    decoder_widths: Optional[List[int]] = None
    calib_topk: Optional[int] = None  # all codes
    ged_topn: int = 8
    eval_inputs_per_category: int = 250
    eval_seed: int = 12345
    reseed_dead_codes: bool = False
    reseed_interval: int = 1000
    reseed_threshold: float = 1e-3
    checkpoint_interval: int = 5000
    log_flush_interval: int = 100
    anchor_seed: int = 1234
    digit_noise: float = 0.05
    mnist_train_images: Optional[str] = None
    mnist_train_labels: Optional[str] = None
    mnist_test_images: Optional[str] = None
    mnist_test_labels: Optional[str] = None
    output_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError("task", f"must be one of {TASKS}, got {self.task!r}")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            _check_type(f.name, str(f.type), v)
            if v is None or isinstance(v, (bool, str)):
                continue
            for item in (v if isinstance(v, list) else [v]):
                if not math.isfinite(item):
                    raise ConfigError(f.name, f"must be finite, got {item!r}")
                if f.name in ("seed", "eval_seed", "anchor_seed", "lr_boundaries"):
                    if item < 0:
                        raise ConfigError(f.name, f"must be non-negative, got {item!r}")
                elif item <= 0:
                    raise ConfigError(f.name, f"must be positive, got {item!r}")
        if not 0 < self.ema_decay < 1:
            raise ConfigError("ema_decay", "must lie in (0, 1)")
        b = self.lr_boundaries
        if len(b) != len(self.lr_values) or not b or b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])):
            raise ConfigError("lr_boundaries", "must start at 0, increase strictly and match lr_values")
        if self.task == "image_game":
            for name in ("mnist_train_images", "mnist_train_labels", "mnist_test_images", "mnist_test_labels"):
                if not getattr(self, name):
                    raise ConfigError(name, "required for the image game")
        return self

    def resolved(self) -> "RunConfig":
        """Copy with task-dependent defaults filled in."""
        vec = self.task == "vector_game"
        defaults = {
            "code_dim": 32 if vec else 128,
            "warmup_iters": 2000 if vec else 234,
            "max_iters": 30000 if vec else 120000,
            "skip_widths": [64, 64] if vec else [16, 32, 64, 128],
            "latent_widths": [128, 128],
            "decoder_widths": [64, 64] if vec else [64, 32, 16, 1],
            "calib_topk": self.n_codes,
        }
        return dataclasses.replace(self, **{k: v for k, v in defaults.items() if getattr(self, k) is None})

    # text form ------------------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{f.name} = {json.dumps(getattr(self, f.name))}" for f in dataclasses.fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(key or f"line {lineno}", "expected 'key = value'")
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
            try:
                values[key] = json.loads(value.strip())
            except json.JSONDecodeError as exc:
                raise ConfigError(key, f"unparseable value ({exc.msg})") from None
        cfg = cls(**values)
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())
