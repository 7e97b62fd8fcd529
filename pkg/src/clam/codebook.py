"""Probabilistic residual vector quantizer: scale-parameterized codebook,
greedy quantization, per-depth posteriors, and analytic codebook gradients.

Codeword vectors are stored as unit directions; the effective embedding at
depth ``d`` is ``scales[d] * direction`` where the per-depth scales are a
strictly decreasing softmax-tail schedule shared by the whole codebook.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .validation import as_vector, check_finite, check_index

MIN_DIRECTION_NORM = 1e-8


def _unit_rows(x: np.ndarray, fallback: np.ndarray | None = None) -> np.ndarray:
    """Normalize rows along the last axis. Rows with norm below the floor keep
    the corresponding ``fallback`` row (which must already be unit length)."""
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    safe = norms >= MIN_DIRECTION_NORM
    out = np.where(safe, x / np.where(safe, norms, 1.0), 0.0)
    if fallback is not None:
        out = np.where(safe, out, fallback)
    elif not np.all(safe):
        raise UsageError("direction vector with near-zero norm and no fallback")
    return out


@dataclass
class Codebook:
    """Learnable state of the probabilistic quantizer.

    directions: (depth, vocab, dim) row vectors; normalized at use so the
        stored values may drift slightly off unit length (e.g. float32
        checkpoint round-trips) without affecting the effective embeddings.
    scale_logits: (depth,) logits; softmax tail sums give the scale schedule.
    max_scale_logit: log of the depth-0 scale.
    log_sigma: log of the shared observation noise scale.
    """

    directions: np.ndarray
    scale_logits: np.ndarray
    max_scale_logit: float
    log_sigma: float

    @property
    def depth(self) -> int:
        return self.directions.shape[0]

    @property
    def vocab(self) -> int:
        return self.directions.shape[1]

    @property
    def dim(self) -> int:
        return self.directions.shape[2]

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))

    def scales(self) -> np.ndarray:
        """Per-depth scales: exp(max_scale_logit) * reversed cumulative softmax."""
        logits = self.scale_logits - self.scale_logits.max()
        p = np.exp(logits)
        p /= p.sum()
        tails = np.cumsum(p[::-1])[::-1]
        return np.exp(self.max_scale_logit) * tails

    def unit_directions(self) -> np.ndarray:
        return _unit_rows(self.directions)

    def embedding(self, d: int) -> np.ndarray:
        """Effective embedding table at depth ``d``, shape (vocab, dim)."""
        return self.scales()[d] * _unit_rows(self.directions[d])

    def embeddings(self) -> np.ndarray:
        """All effective embeddings, shape (depth, vocab, dim)."""
        return self.scales()[:, None, None] * self.unit_directions()

    def set_directions(self, raw: np.ndarray) -> None:
        """Overwrite directions from arbitrary vectors, renormalizing rows.
        Rows that collapse below the norm floor keep their previous direction."""
        self.directions = _unit_rows(np.asarray(raw, dtype=np.float64),
                                     fallback=self.unit_directions())

    def copy(self) -> "Codebook":
        return Codebook(
            directions=self.directions.copy(),
            scale_logits=self.scale_logits.copy(),
            max_scale_logit=float(self.max_scale_logit),
            log_sigma=float(self.log_sigma),
        )


def init_codebook(depth: int, vocab: int, dim: int, seed: int = 0) -> Codebook:
    """Seeded initialization: unit-normalized Gaussian directions, zero logits
    (depth-0 scale 1), unit noise scale."""
    if depth < 1 or vocab < 1 or dim < 1:
        raise UsageError("depth, vocab and dim must all be >= 1")
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((depth, vocab, dim))
    return Codebook(
        directions=_unit_rows(raw),
        scale_logits=np.zeros(depth),
        max_scale_logit=0.0,
        log_sigma=0.0,
    )


def embed_code(cb, d: int, c: int) -> np.ndarray:
    """Effective embedding vector of codeword ``c`` at depth ``d``."""
    check_index(d, cb.depth, "depth")
    check_index(c, cb.vocab, "code")
    return cb.embedding(d)[c]


@dataclass
class QuantizeResult:
    stack: np.ndarray       # (depth,) selected code per depth
    quantized: np.ndarray   # (dim,) sum of selected embeddings
    residuals: np.ndarray   # (depth + 1, dim); residuals[0] is the input


@dataclass
class BatchQuantizeResult:
    stacks: np.ndarray      # (n, depth)
    quantized: np.ndarray   # (n, dim)
    residuals: np.ndarray   # (n, depth + 1, dim)


def quantize_batch(cb, Z: np.ndarray) -> BatchQuantizeResult:
    """Greedy residual quantization of a batch of latents, shape (n, dim).

    Each depth picks the codeword minimizing the squared residual error;
    exact ties resolve to the lowest code index (argmin's first hit).
    """
    Z = np.asarray(Z, dtype=np.float64)
    check_finite(Z, "latents")
    n = Z.shape[0]
    D = cb.depth
    tables = cb.embeddings()
    stacks = np.empty((n, D), dtype=np.int64)
    residuals = np.empty((n, D + 1, Z.shape[1]))
    residuals[:, 0] = Z
    r = Z.copy()
    for d in range(D):
        table = tables[d]
        # ||r - e||^2 up to the r-independent ||r||^2 term
        dists = np.sum(table * table, axis=1)[None, :] - 2.0 * (r @ table.T)
        codes = np.argmin(dists, axis=1)
        stacks[:, d] = codes
        r = r - table[codes]
        residuals[:, d + 1] = r
    return BatchQuantizeResult(stacks=stacks, quantized=Z - r, residuals=residuals)


def quantize(cb, z) -> QuantizeResult:
    """Greedy residual quantization of a single latent vector."""
    z = as_vector(z, dim=cb.dim, name="z")
    batch = quantize_batch(cb, z[None, :])
    return QuantizeResult(
        stack=batch.stacks[0],
        quantized=batch.quantized[0],
        residuals=batch.residuals[0],
    )


def _swap_bases(cb, Z: np.ndarray, stacks: np.ndarray) -> np.ndarray:
    """For each depth d: z - (z_hat - e(stack[d]; d)), i.e. the part of z left
    for depth d once every other depth keeps its greedy codeword.
    Shapes: Z (n, dim), stacks (n, depth) -> (n, depth, dim)."""
    tables = cb.embeddings()
    picked = tables[np.arange(cb.depth)[None, :], stacks]      # (n, depth, dim)
    z_hat = picked.sum(axis=1)                                 # (n, dim)
    return (Z - z_hat)[:, None, :] + picked


def _depth_sqdists(cb, Z: np.ndarray, stacks: np.ndarray) -> np.ndarray:
    """Squared distance from each depth's swap basis to every candidate
    codeword: shape (n, depth, vocab)."""
    bases = _swap_bases(cb, Z, stacks)
    tables = cb.embeddings()
    cross = np.einsum("ndm,dvm->ndv", bases, tables)
    e_sq = np.sum(tables * tables, axis=2)
    b_sq = np.sum(bases * bases, axis=2)
    return np.maximum(b_sq[:, :, None] - 2.0 * cross + e_sq[None, :, :], 0.0)


def _log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def depth_log_posteriors(cb, z, stack) -> np.ndarray:
    """Log posterior over candidate codewords at every depth, shape (depth, vocab)."""
    z = as_vector(z, dim=cb.dim, name="z")
    stack = np.asarray(stack, dtype=np.int64)
    sqd = _depth_sqdists(cb, z[None, :], stack[None, :])[0]
    return _log_softmax(-sqd / (2.0 * cb.sigma**2), axis=1)


def depth_posteriors(cb, z, stack) -> np.ndarray:
    """Posterior weights over candidate codewords at every depth, (depth, vocab)."""
    return np.exp(depth_log_posteriors(cb, z, stack))


def depth_posterior(cb, z, stack, d: int) -> np.ndarray:
    """Posterior over codewords at depth ``d`` given the greedy stack for the
    other depths: softmax of the negative swap-in squared distances."""
    check_index(d, cb.depth, "depth")
    return depth_posteriors(cb, z, stack)[d]


_LOG_2PI = float(np.log(2.0 * np.pi))


def codebook_loss(cb, z, stack, weights: np.ndarray | None = None) -> float:
    """Sum over depths of the posterior-weighted Gaussian negative log-density
    of ``z`` with one codeword swapped in.

    ``weights`` defaults to the current per-depth posteriors; pass frozen
    weights to evaluate the stop-gradient objective at perturbed parameters.
    """
    z = as_vector(z, dim=cb.dim, name="z")
    stack = np.asarray(stack, dtype=np.int64)
    sqd = _depth_sqdists(cb, z[None, :], stack[None, :])[0]
    sigma2 = cb.sigma**2
    if weights is None:
        weights = np.exp(_log_softmax(-sqd / (2.0 * sigma2), axis=1))
    nll = sqd / (2.0 * sigma2) + 0.5 * cb.dim * (_LOG_2PI + np.log(sigma2))
    return float(np.sum(weights * nll))


@dataclass
class CodebookGrad:
    directions: np.ndarray
    scale_logits: np.ndarray
    max_scale_logit: float
    log_sigma: float

    def as_dict(self) -> dict[str, np.ndarray]:
        return {
            "directions": self.directions,
            "log_sigma": np.asarray(self.log_sigma),
            "max_scale_logit": np.asarray(self.max_scale_logit),
            "scale_logits": self.scale_logits,
        }


def batch_codebook_grad(cb, Z: np.ndarray, stacks: np.ndarray) -> tuple[float, CodebookGrad]:
    """Mean codebook loss over a batch and its exact gradient.

    Posterior weights are treated as constants (no gradient flows through
    them); the gradient covers the Gaussian log-density only.
    """
    Z = np.asarray(Z, dtype=np.float64)
    stacks = np.asarray(stacks, dtype=np.int64)
    n, D, V = Z.shape[0], cb.depth, cb.vocab
    sigma2 = cb.sigma**2
    tables = cb.embeddings()
    scales = cb.scales()

    bases = _swap_bases(cb, Z, stacks)                       # (n, D, m)
    cross = np.einsum("ndm,dvm->ndv", bases, tables)
    e_sq = np.sum(tables * tables, axis=2)
    sqd = np.maximum(
        np.sum(bases * bases, axis=2)[:, :, None] - 2.0 * cross + e_sq[None, :, :], 0.0
    )
    w = np.exp(_log_softmax(-sqd / (2.0 * sigma2), axis=2))  # (n, D, V)

    nll = sqd / (2.0 * sigma2) + 0.5 * cb.dim * (_LOG_2PI + np.log(sigma2))
    loss = float(np.sum(w * nll) / n)

    # dL/dE[d, c] without materializing the (n, D, V, m) difference tensor:
    # delta[n,d,c] = bases[n,d] - tables[d,c]
    w_sum = w.sum(axis=0)                                    # (D, V)
    term1 = np.einsum("ndv,ndm->dvm", w, bases) - w_sum[:, :, None] * tables
    # per-sample weighted delta sums S[n,d] = sum_c w*delta
    S = bases - np.einsum("ndv,dvm->ndm", w, tables)         # (n, D, m)
    S_tot = S.sum(axis=1)                                    # (n, m)
    cross_term = np.zeros((D, V, Z.shape[1]))
    flat_idx = (np.arange(D)[None, :] * V + stacks).ravel()
    np.add.at(
        cross_term.reshape(D * V, -1),
        flat_idx,
        (S_tot[:, None, :] - S).reshape(n * D, -1),
    )
    g_embed = -(term1 + cross_term) / (sigma2 * n)           # (D, V, m)

    # chain through E = scale[d] * direction / ||direction||
    norms = np.linalg.norm(cb.directions, axis=2, keepdims=True)
    u = cb.directions / norms
    dot = np.sum(u * g_embed, axis=2, keepdims=True)
    g_dir = (scales[:, None, None] / norms) * (g_embed - dot * u)
    g_scale = np.sum(u * g_embed, axis=(1, 2))               # (D,) dL/d alpha_d

    logits = cb.scale_logits - cb.scale_logits.max()
    p = np.exp(logits)
    p /= p.sum()
    tails = np.cumsum(p[::-1])[::-1]
    amp = np.exp(cb.max_scale_logit)
    g_msl = float(np.sum(g_scale * scales))
    # d alpha_d / d logit_j = amp * p_j * (1[j >= d] - tails_d)
    ge_amp = g_scale * amp
    prefix = np.cumsum(ge_amp)                               # sum_{d <= j} ge_amp
    g_sl = p * (prefix - float(np.sum(ge_amp * tails)))

    g_ls = float(np.sum(w * (cb.dim - sqd / sigma2)) / n)

    return loss, CodebookGrad(
        directions=g_dir,
        scale_logits=g_sl,
        max_scale_logit=g_msl,
        log_sigma=g_ls,
    )


def codebook_grad(cb, z, stack) -> CodebookGrad:
    """Exact gradient of ``codebook_loss`` for a single latent under the
    frozen-posterior-weights convention."""
    z = as_vector(z, dim=cb.dim, name="z")
    _, grad = batch_codebook_grad(cb, z[None, :], np.asarray(stack)[None, :])
    return grad


def utilization(counts) -> tuple[np.ndarray, np.ndarray]:
    """Per-depth usage fraction and normalized perplexity of a code histogram.

    counts: (depth, vocab) nonnegative observation counts.
    Returns (usage, normalized_perplexity), each (depth,) in (0, 1].
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim == 1:
        counts = counts[None, :]
    totals = counts.sum(axis=1)
    if counts.size == 0 or np.any(totals <= 0):
        raise UsageError("every depth needs at least one code observation")
    vocab = counts.shape[1]
    usage = np.count_nonzero(counts > 0, axis=1) / vocab
    probs = counts / totals[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    pplx = np.exp(-plogp.sum(axis=1)) / vocab
    return usage, pplx
