"""Latent code model: a context encoder plus the shared low-rank mean
projection, teacher-forced training losses against a frozen quantizer, and
the Monte Carlo code log-likelihood diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, depth_log_posteriors, quantize_batch
from .encoder import ReferenceEncoder
from .errors import UsageError
from .mixture import (
    LowRankCache,
    eos_loss,
    mixture_bound_loss,
    responsibilities_from_sqdist,
    spectral_normalize,
)


@dataclass
class LatentLm:
    """Trainable state: the context encoder's parameters plus the projection
    from low-rank mean predictions to the latent space. The observation noise
    scale comes from the frozen quantizer."""

    encoder: ReferenceEncoder
    projection: np.ndarray        # (latent_dim, lowrank_dim)
    label_smoothing: float = 0.01
    use_spectral_norm: bool = True

    @property
    def num_params(self) -> int:
        return self.encoder.num_params + self.projection.size

    def parameters(self) -> dict[str, np.ndarray]:
        out = dict(self.encoder.params)
        out["projection"] = self.projection
        return out

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        for name, value in params.items():
            if name == "projection":
                self.projection = np.asarray(value, dtype=np.float64)
            else:
                self.encoder.params[name] = np.asarray(value, dtype=np.float64)


def init_latent_lm(latent_dim: int, mixture_count: int, lowrank_dim: int,
                   window: int = 4, embed_dim: int = 8, seed: int = 0,
                   label_smoothing: float = 0.01,
                   use_spectral_norm: bool = True) -> LatentLm:
    if lowrank_dim > latent_dim:
        raise UsageError("lowrank_dim must not exceed latent_dim")
    enc = ReferenceEncoder(latent_dim, mixture_count, lowrank_dim,
                           window=window, embed_dim=embed_dim, seed=seed)
    rng = np.random.default_rng(seed + 1)
    proj = rng.standard_normal((latent_dim, lowrank_dim)) / np.sqrt(lowrank_dim)
    if use_spectral_norm:
        proj = spectral_normalize(proj)
    return LatentLm(encoder=enc, projection=proj, label_smoothing=label_smoothing,
                    use_spectral_norm=use_spectral_norm)


def stack_embeddings(cb: Codebook, codes: np.ndarray) -> np.ndarray:
    """Quantized latents of ground-truth code stacks, shape (T, dim)."""
    codes = np.asarray(codes, dtype=np.int64)
    tables = cb.embeddings()
    return tables[np.arange(cb.depth)[None, :], codes].sum(axis=1)


@dataclass
class LossBreakdown:
    total: float
    bound: float
    eos: float
    steps: int = 0

    def scaled(self, factor: float) -> "LossBreakdown":
        return LossBreakdown(self.total * factor, self.bound * factor,
                             self.eos * factor, self.steps)


def _step_responsibilities(model: LatentLm, means: np.ndarray, target: np.ndarray,
                           sigma: float) -> np.ndarray:
    cache = LowRankCache.build(model.projection, target)
    sqd = (cache.ztz
           + np.einsum("kn,nj,kj->k", means, cache.mtm, means)
           - 2.0 * means @ cache.mtz)
    return responsibilities_from_sqdist(np.maximum(sqd, 0.0), sigma)


def sequence_loss(model: LatentLm, cb: Codebook, token_ids: np.ndarray,
                  codes: np.ndarray, grads: dict[str, np.ndarray] | None = None,
                  frozen_responsibilities: list[np.ndarray] | None = None,
                  ) -> tuple[LossBreakdown, list[np.ndarray]]:
    """Teacher-forced loss of one code sequence, averaged over its T+1 steps.

    Steps 0..T-1 pair the mixture bound loss against the ground-truth
    quantized latent with a negative EOS label; the appended terminal step
    (full history in context) carries the positive EOS label only.
    When ``grads`` is supplied, analytic gradients are accumulated into it.
    ``frozen_responsibilities`` replays stored per-step responsibilities so
    the same objective can be re-evaluated at perturbed parameters.
    Returns the breakdown and the responsibilities used per step.
    """
    codes = np.asarray(codes, dtype=np.int64)
    T = codes.shape[0]
    if T == 0:
        raise UsageError("code sequence must have at least one step")
    targets = stack_embeddings(cb, codes)
    sigma = cb.sigma
    n_steps = T + 1
    scale = 1.0 / n_steps
    total = bound_total = eos_total = 0.0
    responsibilities: list[np.ndarray] = []
    for t in range(n_steps):
        history = targets[:t]
        logits, means, eos_logit = model.encoder.forward(token_ids, history)
        is_end = t == T
        e_loss, e_grad = eos_loss(eos_logit, is_end)
        eos_total += e_loss
        d_logits = np.zeros_like(logits)
        d_means = np.zeros_like(means)
        if not is_end:
            frozen = frozen_responsibilities[t] if frozen_responsibilities else None
            b_loss, b_grads = mixture_bound_loss(
                logits, means, model.projection, targets[t], sigma,
                label_smoothing=model.label_smoothing,
                responsibilities=frozen,
            )
            bound_total += b_loss
            if frozen is None:
                responsibilities.append(
                    _step_responsibilities(model, means, targets[t], sigma))
            else:
                responsibilities.append(frozen)
            if grads is not None:
                d_logits = b_grads.logits * scale
                d_means = b_grads.means_lowrank * scale
                grads["projection"] += b_grads.projection * scale
        total += e_loss + (b_loss if not is_end else 0.0)
        if grads is not None:
            enc_grads = model.encoder.backward(token_ids, history, d_logits,
                                               d_means, e_grad * scale)
            for name, g in enc_grads.items():
                grads[name] += g
    breakdown = LossBreakdown(total * scale, bound_total * scale,
                              eos_total * scale, steps=n_steps)
    return breakdown, responsibilities


def batch_loss(model: LatentLm, cb: Codebook, batch: list[tuple[np.ndarray, np.ndarray]],
               with_grads: bool = False,
               frozen: list[list[np.ndarray]] | None = None,
               ) -> tuple[LossBreakdown, dict[str, np.ndarray] | None, list[list[np.ndarray]]]:
    """Mean teacher-forced loss over a batch of (token_ids, codes) pairs.

    Returns (breakdown, grads or None, per-sequence responsibilities). The
    mean reduction makes the result independent of batch order.
    """
    if not batch:
        raise UsageError("batch must be non-empty")
    grads = None
    if with_grads:
        grads = model.encoder.zero_grads()
        grads["projection"] = np.zeros_like(model.projection)
    total = LossBreakdown(0.0, 0.0, 0.0)
    resp_all: list[list[np.ndarray]] = []
    for i, (token_ids, codes) in enumerate(batch):
        item, resp = sequence_loss(model, cb, token_ids, codes, grads=grads,
                                   frozen_responsibilities=frozen[i] if frozen else None)
        resp_all.append(resp)
        total = LossBreakdown(total.total + item.total, total.bound + item.bound,
                              total.eos + item.eos, total.steps + item.steps)
    scale = 1.0 / len(batch)
    if grads is not None:
        for name in grads:
            grads[name] *= scale
    return total.scaled(scale), grads, resp_all


def lm_train_step(model: LatentLm, cb: Codebook, batch, optimizer) -> LossBreakdown:
    """One teacher-forced optimizer update; the quantizer stays frozen."""
    breakdown, grads, _ = batch_loss(model, cb, batch, with_grads=True)
    params = model.parameters()
    optimizer.step(params, grads)
    if model.use_spectral_norm:
        params["projection"] = spectral_normalize(params["projection"])
    model.set_parameters(params)
    return breakdown


def code_loglik_diagnostic(cb: Codebook, codes: np.ndarray, rng,
                           n_samples: int = 64) -> float:
    """Monte Carlo estimate of the expected code log-likelihood under the
    quantizer's noise model, scored with the pointwise factorized posterior
    (the exact evidence is exponential in depth). Always <= 0; diagnostic only."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim == 1:
        codes = codes[None, :]
    means = stack_embeddings(cb, codes)
    total = 0.0
    for t in range(codes.shape[0]):
        z_samples = means[t] + cb.sigma * rng.standard_normal((n_samples, cb.dim))
        stacks = quantize_batch(cb, z_samples).stacks
        for s in range(n_samples):
            logq = depth_log_posteriors(cb, z_samples[s], stacks[s])
            total += float(logq[np.arange(cb.depth), codes[t]].sum())
    return total / (codes.shape[0] * n_samples)
