"""Estimator-style wrappers so the quantizers and the latent code model
compose with scikit-learn pipelines: ``fit`` trains on arrays, ``transform``
maps latents to code stacks, ``inverse_transform`` maps codes back to
quantized latents.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .codebook import Codebook, batch_codebook_grad, init_codebook, quantize_batch
from .ema import ema_update, init_ema
from .errors import UsageError
from .lm import init_latent_lm, lm_train_step, stack_embeddings
from .optim import Adam
from .sampling import GenerationConfig, generate_codes
from .validation import as_matrix, check_finite


class _QuantizerBase(BaseEstimator, TransformerMixin):
    def _check_fitted(self):
        if getattr(self, "codebook_", None) is None:
            raise NotFittedError("call fit before transform")

    def _batches(self, n: int, rng) -> np.ndarray:
        size = min(self.batch_size, n)
        return rng.integers(0, n, size=size)

    def transform(self, X) -> np.ndarray:
        """Greedy code stacks for each latent row, shape (n, depth)."""
        self._check_fitted()
        X = check_finite(as_matrix(X, shape=(None, self.codebook_.dim), name="X"), "X")
        return quantize_batch(self.codebook_, X).stacks

    def inverse_transform(self, codes) -> np.ndarray:
        """Quantized latents of code stacks, shape (n, dim)."""
        self._check_fitted()
        codes = np.asarray(codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[1] != self.codebook_.depth:
            raise UsageError(f"codes must be (n, {self.codebook_.depth})")
        if np.any(codes < 0) or np.any(codes >= self.codebook_.vocab):
            raise UsageError("code entries out of range")
        return stack_embeddings(self.codebook_, codes)

    def quantization_mse(self, X) -> float:
        """Mean squared residual left after quantization."""
        self._check_fitted()
        X = as_matrix(X, shape=(None, self.codebook_.dim), name="X")
        result = quantize_batch(self.codebook_, X)
        return float(np.mean(result.residuals[:, -1] ** 2))


class ProbabilisticRVQ(_QuantizerBase):
    """Residual quantizer trained by gradient steps on the posterior-weighted
    Gaussian codebook loss."""

    def __init__(self, depth: int = 8, vocab: int = 64, steps: int = 1000,
                 batch_size: int = 64, lr: float = 0.003, seed: int = 0):
        self.depth = depth
        self.vocab = vocab
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed

    def fit(self, X, y=None):
        X = check_finite(as_matrix(X, name="X"), "X")
        if X.shape[0] == 0:
            raise UsageError("fit needs at least one latent vector")
        cb = init_codebook(self.depth, self.vocab, X.shape[1], seed=self.seed)
        opt = Adam(lr=self.lr)
        rng = np.random.default_rng(self.seed)
        losses = []
        for _ in range(self.steps):
            batch = X[self._batches(X.shape[0], rng)]
            stacks = quantize_batch(cb, batch).stacks
            loss, grad = batch_codebook_grad(cb, batch, stacks)
            losses.append(loss)
            params = {"directions": cb.directions, "log_sigma": np.asarray(cb.log_sigma),
                      "max_scale_logit": np.asarray(cb.max_scale_logit),
                      "scale_logits": cb.scale_logits}
            opt.step(params, grad.as_dict())
            cb.set_directions(params["directions"])
            cb.scale_logits = params["scale_logits"]
            cb.max_scale_logit = float(params["max_scale_logit"])
            cb.log_sigma = float(params["log_sigma"])
        self.codebook_ = cb
        self.loss_curve_ = np.asarray(losses)
        return self


class EmaRVQ(_QuantizerBase):
    """Conventional residual quantizer with exponential-moving-average
    codeword updates (the comparison baseline)."""

    def __init__(self, depth: int = 8, vocab: int = 64, steps: int = 1000,
                 batch_size: int = 64, decay: float = 0.99, epsilon: float = 1e-5,
                 seed: int = 0):
        self.depth = depth
        self.vocab = vocab
        self.steps = steps
        self.batch_size = batch_size
        self.decay = decay
        self.epsilon = epsilon
        self.seed = seed

    def fit(self, X, y=None):
        X = check_finite(as_matrix(X, name="X"), "X")
        if X.shape[0] == 0:
            raise UsageError("fit needs at least one latent vector")
        cb, state = init_ema(self.depth, self.vocab, X.shape[1], seed=self.seed,
                             decay=self.decay, epsilon=self.epsilon)
        rng = np.random.default_rng(self.seed)
        for _ in range(self.steps):
            batch = X[self._batches(X.shape[0], rng)]
            stacks = quantize_batch(cb, batch).stacks
            ema_update(cb, state, batch, stacks)
        self.codebook_ = cb
        self.state_ = state
        return self


class LatentCodeLM(BaseEstimator):
    """Fit/predict wrapper over the latent code model: ``fit`` consumes token
    strings paired with code matrices under a frozen quantizer codebook,
    ``sample`` generates codes for new strings."""

    def __init__(self, codebook: Codebook | None = None, mixture_count: int = 32,
                 lowrank_dim: int = 8, window: int = 4, embed_dim: int = 8,
                 steps: int = 500, lr: float = 0.003, label_smoothing: float = 0.01,
                 seed: int = 0):
        self.codebook = codebook
        self.mixture_count = mixture_count
        self.lowrank_dim = lowrank_dim
        self.window = window
        self.embed_dim = embed_dim
        self.steps = steps
        self.lr = lr
        self.label_smoothing = label_smoothing
        self.seed = seed

    def fit(self, X, y):
        """X: list of conditioning strings; y: list of (T, depth) code arrays."""
        from .encoder import encode_tokens

        if self.codebook is None:
            raise UsageError("LatentCodeLM needs a frozen codebook")
        if len(X) != len(y) or not X:
            raise UsageError("X and y must be equal-length and non-empty")
        batch = [(encode_tokens(text), np.asarray(codes, dtype=np.int64))
                 for text, codes in zip(X, y)]
        model = init_latent_lm(self.codebook.dim, self.mixture_count, self.lowrank_dim,
                               window=self.window, embed_dim=self.embed_dim,
                               seed=self.seed, label_smoothing=self.label_smoothing)
        optimizer = Adam(lr=self.lr)
        losses = []
        for _ in range(self.steps):
            losses.append(lm_train_step(model, self.codebook, batch, optimizer).total)
        self.model_ = model
        self.loss_curve_ = np.asarray(losses)
        return self

    def sample(self, text: str, config: GenerationConfig | None = None,
               seed: int = 0) -> np.ndarray:
        """Generated code matrix for one conditioning string."""
        from .encoder import encode_tokens

        if getattr(self, "model_", None) is None:
            raise NotFittedError("call fit before sample")
        cfg = config or GenerationConfig()
        rng = np.random.default_rng(seed)
        return generate_codes(self.model_, self.codebook, encode_tokens(text),
                              cfg, rng).codes
