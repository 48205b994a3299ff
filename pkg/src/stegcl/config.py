"""Flat JSON run configuration.

Every field is optional in the file and falls back to the defaults below;
command-line overrides win over the file. Unknown keys are rejected so typos
fail loudly.
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError, ValidationError


@dataclass
class RunConfig:
    # model architecture
    image_size: int = 32
    payload_depth: int = 1          # bits per pixel, 1-3 in the default recipe
    encoder_layers: int = 9
    decoder_layers: int = 5
    hidden_channels: int = 32
    seed: int = 0

    # optimizer and batching
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8

    # composite loss weights (encode side ssim:msssim:rmse, then encode:decode)
    w_ssim: float = 0.5
    w_msssim: float = 0.5
    w_rmse: float = 0.3
    w_encode: float = 1.0
    w_decode: float = 0.7

    # staged schedule
    total_budget: int = 120
    stage1_cap: int = 40
    stage2_cap: int = 40
    stage3_cap: int = 40
    knee_min_epochs: int = 10
    knee_smoothing_window: int = 5
    knee_sensitivity: float = 1.0
    converge_patience: int = 10
    converge_min_delta: float = 1e-4

    # teacher ladder and difficulty thresholds
    teacher_budgets: tuple = (5, 15, 30)
    convergence_budget: int = 60
    alpha1: float = 0.9
    alpha2: float = 0.8
    mu1: float = 20.0
    mu2: float = 12.0

    # corpus: a directory of PNG/PPM files, or synthetic when empty
    corpus_path: str = ""
    corpus_n: int = 200

    # steganalysis detector
    detector_blocks: int = 3
    detector_channels: int = 8
    detector_epochs: int = 12
    detector_lr: float = 0.001
    detector_batch: int = 16

    def __post_init__(self):
        self.teacher_budgets = tuple(int(b) for b in self.teacher_budgets)
        if self.encoder_layers < 2 or self.decoder_layers < 2:
            raise ValidationError("encoder_layers and decoder_layers must be >= 2")
        if self.payload_depth < 1:
            raise ValidationError("payload_depth must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.knee_smoothing_window < 1 or self.knee_smoothing_window % 2 == 0:
            raise ValidationError("knee_smoothing_window must be odd and >= 1")
        if self.knee_min_epochs >= min(self.stage1_cap, self.stage2_cap):
            raise ValidationError("knee_min_epochs must be below the stage caps")
        if self.stage1_cap + self.stage2_cap + self.stage3_cap > self.total_budget:
            raise ValidationError("stage caps must sum to at most total_budget")
        if not (self.alpha1 > self.alpha2):
            raise ValidationError(f"alpha1 must exceed alpha2 ({self.alpha1} vs {self.alpha2})")
        if not (self.mu1 > self.mu2):
            raise ValidationError(f"mu1 must exceed mu2 ({self.mu1} vs {self.mu2})")

    # ------------------------------------------------------------------

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = set(cls.field_names())
        unknown = sorted(set(values) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**values)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise DataError(f"config file not found: {p}")
        try:
            values = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"config file {p} is not valid JSON: {exc}") from exc
        if not isinstance(values, dict):
            raise DataError(f"config file {p} must hold a JSON object")
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["teacher_budgets"] = list(self.teacher_budgets)
        return d

    def with_overrides(self, overrides: dict) -> "RunConfig":
        merged = self.to_dict()
        merged.update(overrides)
        return RunConfig.from_dict(merged)

    def model_echo(self) -> dict:
        """Architecture fields a checkpoint must agree on to be loadable."""
        return {
            "image_size": self.image_size,
            "payload_depth": self.payload_depth,
            "encoder_layers": self.encoder_layers,
            "decoder_layers": self.decoder_layers,
            "hidden_channels": self.hidden_channels,
        }


def parse_override(text: str):
    """Parse one KEY=VALUE override with JSON-typed values, bare words as str."""
    if "=" not in text:
        raise ValidationError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value
