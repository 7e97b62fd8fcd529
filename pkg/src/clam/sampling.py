"""Autoregressive generation: nucleus filtering, one sampling step, and the
full loop producing a code sequence from conditioning tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, quantize
from .errors import UsageError
from .lm import LatentLm
from .validation import check_probabilities


@dataclass
class GenerationConfig:
    top_p: float = 0.5
    temperature: float = 2.6   # multiplies the quantizer's noise scale
    max_steps: int = 64
    eos_threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.top_p <= 1.0:
            raise UsageError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.temperature < 0.0:
            raise UsageError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_steps < 1:
            raise UsageError("max_steps must be >= 1")


def top_p_filter(probs, p: float) -> np.ndarray:
    """Keep the smallest descending-order prefix with cumulative mass >= p,
    zero the rest, and renormalize. Ties sort by index."""
    probs = check_probabilities(probs, name="probs")
    if not 0.0 < p <= 1.0:
        raise UsageError(f"p must lie in (0, 1], got {p}")
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    keep = min(int(np.count_nonzero(csum < p)) + 1, probs.size)
    out = np.zeros_like(probs)
    kept = order[:keep]
    out[kept] = probs[kept]
    return out / out.sum()


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    e = np.exp(shifted)
    return e / e.sum()


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x)) if x >= 0 else float(np.exp(x) / (1.0 + np.exp(x)))


@dataclass
class SampleStep:
    stack: np.ndarray
    quantized: np.ndarray
    eos: bool
    component: int


def sample_step(model: LatentLm, cb: Codebook, token_ids: np.ndarray,
                history: np.ndarray, cfg: GenerationConfig, rng) -> SampleStep:
    """One generation step.

    Draws a mixture component through the nucleus filter, samples a latent
    from that component with standard deviation temperature * sigma, and
    quantizes it. The stop decision reads the EOS head with the freshly
    quantized latent already appended to the context, matching the
    terminal-step supervision; the caller appends ``quantized`` to history.
    """
    history = np.asarray(history, dtype=np.float64).reshape(-1, cb.dim)
    if history.shape[0] >= cfg.max_steps:
        raise UsageError("history already has max_steps entries")
    logits, means, _ = model.encoder.forward(token_ids, history)
    filtered = top_p_filter(_softmax(logits), cfg.top_p)
    k = int(rng.choice(filtered.size, p=filtered))
    mean = model.projection @ means[k]
    noise = rng.standard_normal(cb.dim)
    z = mean + cfg.temperature * cb.sigma * noise
    result = quantize(cb, z)
    extended = np.concatenate([history, result.quantized[None, :]], axis=0)
    _, _, eos_logit = model.encoder.forward(token_ids, extended)
    eos = _sigmoid(eos_logit) > cfg.eos_threshold
    return SampleStep(stack=result.stack, quantized=result.quantized,
                      eos=eos, component=k)


@dataclass
class GenerationResult:
    codes: np.ndarray          # (steps, depth)
    latents: np.ndarray        # (steps, dim) quantized latents
    stop_reason: str           # "eos" or "max_steps"

    @property
    def steps(self) -> int:
        return self.codes.shape[0]


def generate_codes(model: LatentLm, cb: Codebook, token_ids: np.ndarray,
                   cfg: GenerationConfig, rng) -> GenerationResult:
    """Sample steps until the EOS head fires or max_steps is reached."""
    history = np.zeros((0, cb.dim))
    stacks: list[np.ndarray] = []
    stop_reason = "max_steps"
    for _ in range(cfg.max_steps):
        step = sample_step(model, cb, token_ids, history, cfg, rng)
        stacks.append(step.stack)
        history = np.concatenate([history, step.quantized[None, :]], axis=0)
        if step.eos:
            stop_reason = "eos"
            break
    return GenerationResult(codes=np.stack(stacks), latents=history,
                            stop_reason=stop_reason)
