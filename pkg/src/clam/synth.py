"""Deterministic synthetic mel-like sequence generator.

Sequences are sums of bin-localized Gaussian ridges whose centers drift as
seeded random walks, plus white noise; a stand-in for spectrogram frames that
keeps the repository self-contained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, UsageError


@dataclass
class FeatureSequence:
    """Frames (time x bins, float32) plus the frame rate in frames/second."""

    frames: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DataError(f"frames must be (T >= 1, bins), got {self.frames.shape}")
        if not np.all(np.isfinite(self.frames)):
            raise DataError("frames contain non-finite values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_bins(self) -> int:
        return self.frames.shape[1]


@dataclass
class SynthConfig:
    n_bins: int = 16
    duration: int = 64          # frames
    harmonics: int = 3
    smoothness: float = 8.0     # random-walk step std is 1/smoothness
    noise_level: float = 0.1
    seed: int = 0
    frame_rate: float = 80.0
    ridge_width: float = 1.0    # std (in bins) of each Gaussian ridge

    def __post_init__(self):
        if self.n_bins < 1 or self.duration < 1:
            raise UsageError("n_bins and duration must be >= 1")
        if self.harmonics < 0 or self.noise_level < 0:
            raise UsageError("harmonics and noise_level must be >= 0")
        if self.smoothness <= 0 or self.ridge_width <= 0 or self.frame_rate <= 0:
            raise UsageError("smoothness, ridge_width and frame_rate must be > 0")
        if self.seed is None:
            raise UsageError("seed is mandatory")


def synth_sequence(cfg: SynthConfig, rng=None) -> FeatureSequence:
    """Generate one sequence; bit-identical for a fixed (config, rng) pair."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    T, B = cfg.duration, cfg.n_bins
    frames = np.zeros((T, B))
    bins = np.arange(B, dtype=np.float64)
    for _ in range(cfg.harmonics):
        start = rng.uniform(0.0, B - 1.0)
        steps = rng.standard_normal(T) / cfg.smoothness
        centers = start + np.cumsum(steps)
        centers = np.clip(centers, 0.0, B - 1.0)
        amp = rng.uniform(0.5, 1.5)
        frames += amp * np.exp(
            -((bins[None, :] - centers[:, None]) ** 2) / (2.0 * cfg.ridge_width**2)
        )
    if cfg.noise_level > 0:
        frames += cfg.noise_level * rng.standard_normal((T, B))
    return FeatureSequence(frames=np.clip(frames, -4.0, 4.0), frame_rate=cfg.frame_rate)


def synth_dataset(cfg: SynthConfig, count: int, stream: int = 0) -> list[FeatureSequence]:
    """``count`` sequences with per-sequence generators derived from
    (seed, stream, index); deterministic and order-independent."""
    if count < 0:
        raise UsageError("count must be >= 0")
    out = []
    for i in range(count):
        rng = np.random.default_rng([cfg.seed, stream, i])
        out.append(synth_sequence(cfg, rng))
    return out


def sequence_token_string(cfg: SynthConfig, stream: int, index: int) -> str:
    """Conditioning text identifying a generated sequence's parameters."""
    return (f"harmonics={cfg.harmonics} noise={cfg.noise_level:g} "
            f"seed={cfg.seed} stream={stream} idx={index}")
