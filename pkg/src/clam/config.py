"""Run configuration: one flat record covering data synthesis, quantizer and
code-model dimensions, optimizer settings, and generation defaults. Values
resolve as defaults < preset < config file < CLI flags.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import UsageError


@dataclass
class RunConfig:
    seed: int = 0
    steps: int = 1000
    batch_size: int = 8
    # quantizer dims
    depth: int = 8
    vocab: int = 64
    latent_dim: int = 16
    # frontend
    n_bins: int = 16
    factor: int = 8
    frame_rate: float = 80.0
    seq_frames: int = 64
    num_sequences: int = 64
    eval_sequences: int = 64
    harmonics: int = 2
    smoothness: float = 16.0
    noise_level: float = 0.02
    # code model dims
    mixture_count: int = 32
    lowrank_dim: int = 8
    window: int = 4
    embed_dim: int = 8
    # losses
    lambda_recon: float = 1.0
    lambda_commit: float = 0.25
    label_smoothing: float = 0.01
    spectral_norm: bool = True
    # optimizer
    lr_codebook: float = 0.003
    lr_codec: float = 0.001
    lr_lm: float = 0.0002
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    ema_decay: float = 0.99
    ema_epsilon: float = 1e-5
    # generation
    top_p: float = 0.5
    temperature: float = 2.6
    max_steps: int = 64
    eos_threshold: float = 0.5
    # harness
    metric_interval: int = 100
    compare_joint: bool = False
    preset: str = "desk"

    def validate(self) -> "RunConfig":
        positive = ["batch_size", "depth", "vocab", "latent_dim", "n_bins", "factor",
                    "seq_frames", "num_sequences", "mixture_count", "lowrank_dim",
                    "window", "embed_dim", "metric_interval", "max_steps"]
        for name in positive:
            if getattr(self, name) < 1:
                raise UsageError(f"config field {name} must be >= 1")
        if self.steps < 0 or self.eval_sequences < 0 or self.harmonics < 0:
            raise UsageError("steps, eval_sequences and harmonics must be >= 0")
        if self.lowrank_dim > self.latent_dim:
            raise UsageError("lowrank_dim must not exceed latent_dim")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


PRESETS: dict[str, dict] = {
    # default desk-scale experiment dims; identical to the dataclass defaults
    "desk": {},
    # full-scale dims from the published configuration; load-only, no
    # training-feasibility guarantee at this size
    "paper-scale": {
        "depth": 32,
        "vocab": 1024,
        "latent_dim": 512,
        "n_bins": 100,
        "mixture_count": 2048,
        "lowrank_dim": 64,
        "lr_codebook": 0.0002,
        "lr_codec": 0.0002,
        "lr_lm": 0.0002,
    },
    # tiny memorization run used by the code-model acceptance check
    "overfit": {
        "num_sequences": 4,
        "eval_sequences": 4,
        "seq_frames": 64,
        "batch_size": 4,
        "steps": 2000,
        "lr_lm": 0.003,
    },
}


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def build_config(file_path: str | None = None, preset: str | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Resolve a RunConfig from an optional JSON file, preset name, and
    explicit overrides (e.g. parsed CLI flags). Unknown keys are errors."""
    file_values: dict = {}
    if file_path is not None:
        try:
            with open(file_path) as fh:
                file_values = json.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {file_path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise UsageError("config file must contain a JSON object")

    preset_name = preset or file_values.get("preset") or "desk"
    if preset_name not in PRESETS:
        raise UsageError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")

    merged: dict = {"preset": preset_name}
    merged.update(PRESETS[preset_name])
    for key, value in file_values.items():
        if key == "preset":
            continue
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config key {key!r}")
        merged[key] = value
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _FIELD_TYPES:
            raise UsageError(f"unknown config override {key!r}")
        merged[key] = value
    return RunConfig(**merged).validate()
