"""Baseline residual quantizer with exponential-moving-average codeword
updates. Codewords are stored raw (no direction/scale parameterization) so
the quantizer matches the conventional EMA-trained RVQ it is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class EmaCodebook:
    """Raw codeword table, shape (depth, vocab, dim)."""

    codewords: np.ndarray

    @property
    def depth(self) -> int:
        return self.codewords.shape[0]

    @property
    def vocab(self) -> int:
        return self.codewords.shape[1]

    @property
    def dim(self) -> int:
        return self.codewords.shape[2]

    def embedding(self, d: int) -> np.ndarray:
        return self.codewords[d]

    def embeddings(self) -> np.ndarray:
        return self.codewords

    def copy(self) -> "EmaCodebook":
        return EmaCodebook(codewords=self.codewords.copy())


@dataclass
class EmaState:
    """Running cluster statistics for the EMA update."""

    cluster_size: np.ndarray   # (depth, vocab)
    cluster_sum: np.ndarray    # (depth, vocab, dim)
    decay: float = 0.99
    epsilon: float = 1e-5

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise UsageError(f"decay must lie in (0, 1), got {self.decay}")
        if np.any(self.cluster_size < 0):
            raise UsageError("cluster sizes must be nonnegative")


def init_ema(depth: int, vocab: int, dim: int, seed: int = 0,
             codewords: np.ndarray | None = None,
             decay: float = 0.99, epsilon: float = 1e-5) -> tuple[EmaCodebook, EmaState]:
    """Create a baseline codebook plus matching statistics.

    Cluster sizes start at 1 with sums equal to the codewords, so codewords
    that receive no assignments stay (almost) where they are while their
    counts decay.
    """
    if codewords is None:
        rng = np.random.default_rng(seed)
        codewords = rng.standard_normal((depth, vocab, dim))
    codewords = np.array(codewords, dtype=np.float64)
    cb = EmaCodebook(codewords=codewords)
    state = EmaState(
        cluster_size=np.ones((depth, vocab)),
        cluster_sum=codewords.copy(),
        decay=decay,
        epsilon=epsilon,
    )
    return cb, state


def ema_update(cb: EmaCodebook, state: EmaState, Z: np.ndarray,
               stacks: np.ndarray) -> tuple[EmaCodebook, EmaState]:
    """One EMA step from a batch of latents and their greedy stacks.

    Each depth's target for codeword ``c`` is the residual entering that depth
    for the samples assigned to ``c``. Mutates ``cb`` and ``state`` in place
    (single-writer phase) and returns them.
    """
    Z = np.asarray(Z, dtype=np.float64)
    stacks = np.asarray(stacks, dtype=np.int64)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise UsageError("ema_update needs a non-empty (n, dim) batch")
    if stacks.shape != (Z.shape[0], cb.depth):
        raise UsageError(f"stacks shape {stacks.shape} does not match batch")

    n, D, V = Z.shape[0], cb.depth, cb.vocab
    gamma = state.decay
    counts = np.zeros((D, V))
    sums = np.zeros((D, V, cb.dim))
    r = Z.copy()
    for d in range(D):
        codes = stacks[:, d]
        counts[d] = np.bincount(codes, minlength=V)
        np.add.at(sums[d], codes, r)
        r -= cb.codewords[d, codes]

    state.cluster_size = gamma * state.cluster_size + (1.0 - gamma) * counts
    state.cluster_sum = gamma * state.cluster_sum + (1.0 - gamma) * sums
    cb.codewords = state.cluster_sum / (state.cluster_size + state.epsilon)[:, :, None]
    return cb, state
