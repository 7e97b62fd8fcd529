"""Exact small-instance machinery for the factorized code posterior:
coordinate ascent on the evidence lower bound, brute-force joint posteriors,
and enumeration-based evidence. Used as test oracles for the quantizer's
pointwise posterior approximation; capacity caps keep every call fast.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import logsumexp

from .codebook import _LOG_2PI
from .errors import CapacityError, UsageError
from .validation import as_vector

SWEEP_CAP = 4096       # max V**(D-1) combinations per coordinate update
TABLE_CAP = 65536      # max V**D combinations for full enumeration


def _log_density(cb, z: np.ndarray, means: np.ndarray) -> np.ndarray:
    """Gaussian log density of z at each mean, isotropic variance sigma^2."""
    diffs = z[None, :] - means
    sigma2 = cb.sigma**2
    return -np.sum(diffs * diffs, axis=1) / (2.0 * sigma2) \
        - 0.5 * cb.dim * (_LOG_2PI + np.log(sigma2))


def _combo_means(cb) -> np.ndarray:
    """Sum of one embedding per depth for every code combination,
    shape (vocab**depth, dim), lexicographic combination order."""
    if cb.vocab**cb.depth > TABLE_CAP:
        raise CapacityError(
            f"vocab**depth = {cb.vocab**cb.depth} exceeds enumeration cap {TABLE_CAP}"
        )
    means = np.zeros((1, cb.dim))
    for d in range(cb.depth):
        table = cb.embedding(d)
        means = (means[:, None, :] + table[None, :, :]).reshape(-1, cb.dim)
    return means


def uniform_posterior(depth: int, vocab: int) -> np.ndarray:
    return np.full((depth, vocab), 1.0 / vocab)


def _check_posterior(q: np.ndarray, depth: int, vocab: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (depth, vocab):
        raise UsageError(f"posterior must have shape ({depth}, {vocab}), got {q.shape}")
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-9):
        raise UsageError("posterior rows must be distributions")
    return q


def elbo(cb, z, q: np.ndarray) -> float:
    """Evidence lower bound of a factorized posterior, exact by enumeration.

    E_q[log p(z | c)] + sum_d H(q_d) + depth * log(1 / vocab).
    """
    z = as_vector(z, dim=cb.dim, name="z")
    q = _check_posterior(q, cb.depth, cb.vocab)
    logp = _log_density(cb, z, _combo_means(cb))
    combo_w = np.ones(1)
    for d in range(cb.depth):
        combo_w = (combo_w[:, None] * q[d][None, :]).ravel()
    expected = float(np.dot(combo_w, logp))
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0, q * np.log(q), 0.0)
    entropy = -float(plogp.sum())
    return expected + entropy - cb.depth * np.log(cb.vocab)


def log_evidence(cb, z) -> float:
    """log p(z) under the uniform code prior, exact by enumeration."""
    z = as_vector(z, dim=cb.dim, name="z")
    logp = _log_density(cb, z, _combo_means(cb))
    return float(logsumexp(logp)) - cb.depth * np.log(cb.vocab)


def coordinate_ascent(cb, z, sweeps: int, init: np.ndarray | None = None
                      ) -> tuple[np.ndarray, list[float]]:
    """Mean-field coordinate ascent over the factorized code posterior.

    Each sweep updates depths in ascending order with
    q_d(c) proportional to exp(E over the other depths of the log density),
    the expectation taken by enumerating the other depths' combinations.
    Returns the final posterior and the ELBO after each sweep.
    """
    z = as_vector(z, dim=cb.dim, name="z")
    D, V = cb.depth, cb.vocab
    if V ** max(D - 1, 0) > SWEEP_CAP:
        raise CapacityError(
            f"vocab**(depth-1) = {V ** (D - 1)} exceeds coordinate-ascent cap {SWEEP_CAP}"
        )
    q = uniform_posterior(D, V) if init is None else _check_posterior(init, D, V).copy()
    tables = [cb.embedding(d) for d in range(D)]
    trace: list[float] = []
    for _ in range(sweeps):
        for d in range(D):
            others = [d2 for d2 in range(D) if d2 != d]
            expected = np.zeros(V)
            for combo in product(range(V), repeat=len(others)):
                weight = 1.0
                partial = np.zeros(cb.dim)
                for d2, c2 in zip(others, combo):
                    weight *= q[d2, c2]
                    partial += tables[d2][c2]
                if weight == 0.0:
                    continue
                expected += weight * _log_density(cb, z, partial[None, :] + tables[d])
            shifted = expected - expected.max()
            q[d] = np.exp(shifted)
            q[d] /= q[d].sum()
        trace.append(elbo(cb, z, q))
    return q, trace


@dataclass
class JointPosterior:
    """Exact posterior over every code combination; probs has one axis per depth."""

    probs: np.ndarray

    def map_stack(self) -> np.ndarray:
        flat = int(np.argmax(self.probs))
        return np.array(np.unravel_index(flat, self.probs.shape), dtype=np.int64)

    def prob_of(self, stack) -> float:
        return float(self.probs[tuple(int(c) for c in stack)])


def joint_posterior(cb, z) -> JointPosterior:
    """Normalized p(code combination | z) under the Gaussian likelihood and
    uniform prior, enumerated over all vocab**depth combinations."""
    z = as_vector(z, dim=cb.dim, name="z")
    logp = _log_density(cb, z, _combo_means(cb))
    logp -= logsumexp(logp)
    shape = (cb.vocab,) * cb.depth
    return JointPosterior(probs=np.exp(logp).reshape(shape))
