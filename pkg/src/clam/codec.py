"""Linear encoder/decoder pair over windows of frames, with the
reconstruction and commitment losses and their analytic gradients.

The encoder maps each window of ``factor`` consecutive frames (flattened,
trailing window zero-padded) through one affine layer to a latent; the
decoder expands each quantized latent back to a window of frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .synth import FeatureSequence

DOWNSAMPLE_FACTORS = (4, 8, 16)


@dataclass
class LinearCodec:
    factor: int
    n_bins: int
    enc_weight: np.ndarray   # (latent_dim, factor * n_bins)
    enc_bias: np.ndarray     # (latent_dim,)
    dec_weight: np.ndarray   # (factor * n_bins, latent_dim)
    dec_bias: np.ndarray     # (factor * n_bins,)

    def __post_init__(self):
        if self.factor not in DOWNSAMPLE_FACTORS:
            raise UsageError(f"factor must be one of {DOWNSAMPLE_FACTORS}, got {self.factor}")
        win = self.factor * self.n_bins
        if self.enc_weight.shape[1] != win or self.dec_weight.shape[0] != win:
            raise UsageError("encoder/decoder shapes inconsistent with factor * n_bins")
        if self.enc_weight.shape[0] != self.dec_weight.shape[1]:
            raise UsageError("encoder output dim differs from decoder input dim")

    @property
    def latent_dim(self) -> int:
        return self.enc_weight.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {
            "dec_bias": self.dec_bias,
            "dec_weight": self.dec_weight,
            "enc_bias": self.enc_bias,
            "enc_weight": self.enc_weight,
        }

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.dec_bias = params["dec_bias"]
        self.dec_weight = params["dec_weight"]
        self.enc_bias = params["enc_bias"]
        self.enc_weight = params["enc_weight"]

    def copy(self) -> "LinearCodec":
        return LinearCodec(self.factor, self.n_bins,
                           self.enc_weight.copy(), self.enc_bias.copy(),
                           self.dec_weight.copy(), self.dec_bias.copy())


def init_codec(factor: int, n_bins: int, latent_dim: int, seed: int = 0) -> LinearCodec:
    rng = np.random.default_rng(seed)
    win = factor * n_bins
    return LinearCodec(
        factor=factor,
        n_bins=n_bins,
        enc_weight=rng.standard_normal((latent_dim, win)) / np.sqrt(win),
        enc_bias=np.zeros(latent_dim),
        dec_weight=rng.standard_normal((win, latent_dim)) / np.sqrt(latent_dim),
        dec_bias=np.zeros(win),
    )


def frame_windows(frames: np.ndarray, factor: int) -> np.ndarray:
    """Flattened windows of ``factor`` frames, the last window zero-padded.
    Shape (ceil(T / factor), factor * bins)."""
    frames = np.asarray(frames, dtype=np.float64)
    T, B = frames.shape
    n_lat = -(-T // factor)
    padded = np.zeros((n_lat * factor, B))
    padded[:T] = frames
    return padded.reshape(n_lat, factor * B)


def encode(codec: LinearCodec, seq: FeatureSequence) -> np.ndarray:
    """Latent sequence of a feature sequence, shape (ceil(T / factor), latent_dim)."""
    if seq.num_bins != codec.n_bins:
        raise UsageError(
            f"sequence has {seq.num_bins} bins, codec expects {codec.n_bins}")
    windows = frame_windows(seq.frames, codec.factor)
    return windows @ codec.enc_weight.T + codec.enc_bias


def decode(codec: LinearCodec, latents: np.ndarray,
           num_frames: int | None = None, frame_rate: float = 80.0) -> FeatureSequence:
    """Expand latents back to frames, truncated to ``num_frames`` when known."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != codec.latent_dim:
        raise UsageError(f"latents must be (T, {codec.latent_dim}), got {latents.shape}")
    flat = latents @ codec.dec_weight.T + codec.dec_bias
    frames = flat.reshape(-1, codec.n_bins)
    if num_frames is not None:
        frames = frames[:num_frames]
    return FeatureSequence(frames=frames, frame_rate=frame_rate)


def recon_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Mean absolute error over all frame entries."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise UsageError(f"shape mismatch {y.shape} vs {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


def commitment_loss(z: np.ndarray, z_hat: np.ndarray) -> float:
    """Mean squared error over all latent entries."""
    z = np.asarray(z, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if z.shape != z_hat.shape:
        raise UsageError(f"shape mismatch {z.shape} vs {z_hat.shape}")
    return float(np.mean((z - z_hat) ** 2))


@dataclass
class CodecLosses:
    combined: float
    recon: float
    commitment: float


def codec_loss_and_grad(codec: LinearCodec, frames: np.ndarray, z_hat: np.ndarray,
                        lambda_recon: float = 1.0, lambda_commit: float = 0.25,
                        ) -> tuple[CodecLosses, dict[str, np.ndarray]]:
    """Combined objective lambda_r * L1(y, decode(z_hat)) + lambda_c * MSE(encode(y), z_hat)
    with exact gradients for the codec parameters.

    ``z_hat`` is the quantized latent sequence and enters as a constant: the
    decoder trains on it as input, the encoder is pulled toward it by the
    commitment term, and no gradient crosses the quantizer.
    """
    frames = np.asarray(frames, dtype=np.float64)
    z_hat = np.asarray(z_hat, dtype=np.float64)
    T, B = frames.shape
    windows = frame_windows(frames, codec.factor)
    if z_hat.shape != (windows.shape[0], codec.latent_dim):
        raise UsageError(f"z_hat must be {(windows.shape[0], codec.latent_dim)}, got {z_hat.shape}")

    z = windows @ codec.enc_weight.T + codec.enc_bias
    flat = z_hat @ codec.dec_weight.T + codec.dec_bias
    y_hat = flat.reshape(-1, B)[:T]

    diff = frames - y_hat
    l1 = float(np.mean(np.abs(diff)))
    mse = float(np.mean((z - z_hat) ** 2))
    combined = lambda_recon * l1 + lambda_commit * mse

    # decoder gradient through the truncated reshape: zero beyond frame T
    d_yhat = -np.sign(diff) * (lambda_recon / diff.size)
    d_flat = np.zeros((windows.shape[0] * codec.factor, B))
    d_flat[:T] = d_yhat
    d_flat = d_flat.reshape(windows.shape[0], codec.factor * B)
    d_z = 2.0 * (z - z_hat) * (lambda_commit / z.size)

    grads = {
        "dec_bias": d_flat.sum(axis=0),
        "dec_weight": d_flat.T @ z_hat,
        "enc_bias": d_z.sum(axis=0),
        "enc_weight": d_z.T @ windows,
    }
    return CodecLosses(combined=combined, recon=l1, commitment=mse), grads
