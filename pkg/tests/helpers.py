"""Shared test oracles: central finite differences, an independent one-sided
Jacobi SVD, and seeded random-instance factories."""

from __future__ import annotations

import numpy as np

from clam import Codebook, init_codebook


def central_difference(f, x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat array."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    g = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * eps)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Vector-level relative error: sup-norm gap over the larger sup-norm."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1e-8)
    return float(np.max(np.abs(a - b), initial=0.0) / denom)


def jacobi_singular_values(M: np.ndarray, sweeps: int = 60, tol: float = 1e-14) -> np.ndarray:
    """Singular values by one-sided Jacobi rotations (orthogonalize columns)."""
    A = np.array(M, dtype=np.float64)
    n = A.shape[1]
    for _ in range(sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                a = float(A[:, i] @ A[:, i])
                b = float(A[:, j] @ A[:, j])
                c = float(A[:, i] @ A[:, j])
                off = max(off, abs(c))
                if abs(c) <= tol * np.sqrt(a * b) or c == 0.0:
                    continue
                zeta = (b - a) / (2.0 * c)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                col_i = A[:, i].copy()
                A[:, i] = cs * col_i - sn * A[:, j]
                A[:, j] = sn * col_i + cs * A[:, j]
        if off <= tol:
            break
    return np.sort(np.linalg.norm(A, axis=0))[::-1]


def random_codebook(rng, depth=None, vocab=None, dim=None,
                    log_sigma_range=(-1.0, 0.5)) -> Codebook:
    """Random small quantizer instance with moderate noise scale."""
    depth = depth if depth is not None else int(rng.integers(1, 4))
    vocab = vocab if vocab is not None else int(rng.integers(2, 9))
    dim = dim if dim is not None else int(rng.integers(2, 6))
    cb = init_codebook(depth, vocab, dim, seed=int(rng.integers(2**31)))
    cb.scale_logits = rng.normal(0.0, 0.5, size=depth)
    cb.max_scale_logit = float(rng.normal(0.0, 0.3))
    cb.log_sigma = float(rng.uniform(*log_sigma_range))
    return cb


def random_latent(rng, cb: Codebook, spread: float = 1.5) -> np.ndarray:
    return rng.normal(0.0, spread * cb.scales()[0], size=cb.dim)
