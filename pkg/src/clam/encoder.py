"""Pluggable context encoder for the latent code model.

The interface maps (conditioning tokens, quantized-latent history) to the
mixture head outputs. ``ReferenceEncoder`` is the provided desk-scale
implementation: mean-pooled byte embeddings concatenated with the last few
latents, fed through one affine map per output head. Every gradient is
analytic, which keeps the finite-difference suites exact.
"""

from __future__ import annotations

from typing import Protocol

import numpy as np

from .errors import UsageError

TOKEN_VOCAB = 256  # byte-level conditioning tokens


def encode_tokens(text: str) -> np.ndarray:
    """UTF-8 byte ids of a conditioning string."""
    if not text:
        raise UsageError("conditioning token string must be non-empty")
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.int64)


class ContextEncoder(Protocol):
    """Deterministic map from (tokens, latent history) to head outputs.

    forward returns (mixture logits (K,), low-rank means (K, n), eos logit).
    Implementations expose parameters as a dict of arrays and a matching
    ``backward`` producing the gradient of any scalar loss given the
    gradients at the three outputs.
    """

    def forward(self, token_ids: np.ndarray, history: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray, float]: ...


class ReferenceEncoder:
    """Single-affine-layer context encoder over pooled tokens and a latent window.

    Features are [mean token embedding | last ``window`` latents, zero-padded
    at the front, flattened]; each head (mixture logits, low-rank means, EOS)
    is an affine map of that feature vector.
    """

    def __init__(self, latent_dim: int, mixture_count: int, lowrank_dim: int,
                 window: int = 4, embed_dim: int = 8, seed: int = 0):
        if min(latent_dim, mixture_count, lowrank_dim, window, embed_dim) < 1:
            raise UsageError("all encoder dimensions must be >= 1")
        self.latent_dim = latent_dim
        self.mixture_count = mixture_count
        self.lowrank_dim = lowrank_dim
        self.window = window
        self.embed_dim = embed_dim
        feat = embed_dim + window * latent_dim
        self.feature_dim = feat
        rng = np.random.default_rng(seed)
        K, n = mixture_count, lowrank_dim
        self.params: dict[str, np.ndarray] = {
            "b_eos": np.zeros(1),
            "b_mean": np.zeros(K * n),
            "b_weight": np.zeros(K),
            "token_emb": 0.1 * rng.standard_normal((TOKEN_VOCAB, embed_dim)),
            "w_eos": rng.standard_normal(feat) / np.sqrt(feat),
            "w_mean": rng.standard_normal((K * n, feat)) / np.sqrt(feat),
            "w_weight": rng.standard_normal((K, feat)) / np.sqrt(feat),
        }

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _features(self, token_ids: np.ndarray, history: np.ndarray) -> np.ndarray:
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.size == 0:
            raise UsageError("token ids must be non-empty")
        history = np.asarray(history, dtype=np.float64).reshape(-1, self.latent_dim)
        pooled = self.params["token_emb"][token_ids].mean(axis=0)
        recent = history[-self.window:]
        padded = np.zeros((self.window, self.latent_dim))
        if recent.shape[0]:
            padded[self.window - recent.shape[0]:] = recent
        return np.concatenate([pooled, padded.ravel()])

    def forward(self, token_ids, history) -> tuple[np.ndarray, np.ndarray, float]:
        f = self._features(token_ids, history)
        p = self.params
        logits = p["w_weight"] @ f + p["b_weight"]
        means = (p["w_mean"] @ f + p["b_mean"]).reshape(self.mixture_count, self.lowrank_dim)
        eos_logit = float(p["w_eos"] @ f + p["b_eos"][0])
        return logits, means, eos_logit

    def backward(self, token_ids, history, d_logits: np.ndarray,
                 d_means: np.ndarray, d_eos: float) -> dict[str, np.ndarray]:
        """Gradient of a scalar loss wrt every parameter, given the gradients
        at the three head outputs for one forward call."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        f = self._features(token_ids, history)
        p = self.params
        d_means_flat = np.asarray(d_means, dtype=np.float64).ravel()
        d_logits = np.asarray(d_logits, dtype=np.float64)

        grads = {
            "b_eos": np.array([d_eos]),
            "b_mean": d_means_flat.copy(),
            "b_weight": d_logits.copy(),
            "token_emb": np.zeros_like(p["token_emb"]),
            "w_eos": d_eos * f,
            "w_mean": np.outer(d_means_flat, f),
            "w_weight": np.outer(d_logits, f),
        }
        d_f = p["w_weight"].T @ d_logits + p["w_mean"].T @ d_means_flat + d_eos * p["w_eos"]
        d_pooled = d_f[: self.embed_dim] / token_ids.size
        np.add.at(grads["token_emb"], token_ids, d_pooled[None, :])
        return grads

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.params.items()}
