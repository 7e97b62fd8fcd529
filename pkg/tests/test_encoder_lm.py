"""Reference encoder and latent code model: shapes, determinism, analytic
backward vs finite differences, and training-step contracts."""

import numpy as np
import pytest
from helpers import central_difference, rel_error

from clam import (
    Adam,
    ReferenceEncoder,
    UsageError,
    batch_loss,
    code_loglik_diagnostic,
    encode_tokens,
    init_codebook,
    init_latent_lm,
    lm_train_step,
    stack_embeddings,
)


def _tiny_model(seed=0, latent_dim=4, K=3, n=2):
    return init_latent_lm(latent_dim, K, n, window=2, embed_dim=3, seed=seed)


def _random_batch(rng, cb, count=3, length=4):
    batch = []
    for i in range(count):
        codes = rng.integers(0, cb.vocab, size=(length, cb.depth))
        batch.append((encode_tokens(f"seq {i}"), codes))
    return batch


class TestReferenceEncoder:
    def test_output_shapes(self):
        enc = ReferenceEncoder(latent_dim=4, mixture_count=5, lowrank_dim=2,
                               window=3, embed_dim=6, seed=0)
        logits, means, eos = enc.forward(encode_tokens("hello"), np.zeros((0, 4)))
        assert logits.shape == (5,)
        assert means.shape == (5, 2)
        assert isinstance(eos, float)

    def test_deterministic_forward(self):
        enc = ReferenceEncoder(4, 3, 2, seed=1)
        rng = np.random.default_rng(0)
        hist = rng.normal(size=(6, 4))
        toks = encode_tokens("abc")
        first = enc.forward(toks, hist)
        second = enc.forward(toks, hist)
        np.testing.assert_array_equal(first[0], second[0])
        np.testing.assert_array_equal(first[1], second[1])
        assert first[2] == second[2]

    def test_window_limits_context(self):
        enc = ReferenceEncoder(4, 3, 2, window=2, seed=1)
        rng = np.random.default_rng(0)
        hist = rng.normal(size=(5, 4))
        toks = encode_tokens("abc")
        full = enc.forward(toks, hist)
        trimmed = enc.forward(toks, hist[-2:])
        np.testing.assert_allclose(full[0], trimmed[0])

    def test_param_count_reported(self):
        enc = ReferenceEncoder(4, 3, 2, window=2, embed_dim=3, seed=0)
        feat = 3 + 2 * 4
        expected = 256 * 3 + 3 * feat + 3 + (3 * 2) * feat + 6 + feat + 1
        assert enc.num_params == expected

    def test_empty_tokens_rejected(self):
        with pytest.raises(UsageError):
            encode_tokens("")


class TestLmLoss:
    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        cb = init_codebook(2, 4, 4, seed=3)
        worst = 0.0
        for trial in range(6):
            model = _tiny_model(seed=trial)
            batch = _random_batch(rng, cb, count=2, length=3)
            base, grads, frozen = batch_loss(model, cb, batch, with_grads=True)
            for name, analytic in grads.items():
                params = model.parameters()
                work = params[name].astype(np.float64).copy()

                def loss_at(x, name=name, work_params=params):
                    stash = work_params[name]
                    model.set_parameters({name: x})
                    value = batch_loss(model, cb, batch, frozen=frozen)[0].total
                    model.set_parameters({name: stash})
                    return value

                fd = central_difference(loss_at, work)
                worst = max(worst, rel_error(analytic, fd))
        assert worst < 1e-3

    def test_batch_order_invariance(self):
        rng = np.random.default_rng(11)
        cb = init_codebook(2, 4, 4, seed=5)
        model = _tiny_model(seed=2)
        batch = _random_batch(rng, cb, count=4, length=3)
        forward = batch_loss(model, cb, batch)[0]
        backward = batch_loss(model, cb, batch[::-1])[0]
        assert forward.total == pytest.approx(backward.total, rel=1e-12)

    def test_empty_batch_rejected(self):
        cb = init_codebook(2, 4, 4, seed=5)
        with pytest.raises(UsageError):
            batch_loss(_tiny_model(), cb, [])

    def test_loss_decreases_under_training(self):
        rng = np.random.default_rng(13)
        cb = init_codebook(2, 4, 4, seed=7)
        model = _tiny_model(seed=3)
        batch = _random_batch(rng, cb, count=2, length=3)
        optimizer = Adam(lr=3e-3)
        first = lm_train_step(model, cb, batch, optimizer).total
        for _ in range(300):
            last = lm_train_step(model, cb, batch, optimizer).total
        assert last < first

    def test_projection_stays_spectral_normalized(self):
        rng = np.random.default_rng(17)
        cb = init_codebook(2, 4, 4, seed=7)
        model = _tiny_model(seed=3)
        batch = _random_batch(rng, cb, count=2, length=3)
        optimizer = Adam(lr=1e-2)
        for _ in range(5):
            lm_train_step(model, cb, batch, optimizer)
        top = np.linalg.svd(model.projection, compute_uv=False)[0]
        assert abs(top - 1.0) < 1e-4


class TestDiagnostics:
    def test_code_loglik_is_nonpositive(self):
        rng = np.random.default_rng(19)
        cb = init_codebook(2, 4, 4, seed=11)
        codes = rng.integers(0, 4, size=(3, 2))
        value = code_loglik_diagnostic(cb, codes, np.random.default_rng(0), n_samples=16)
        assert value <= 0.0

    def test_stack_embeddings_match_embed_sum(self):
        from clam import embed_code

        cb = init_codebook(3, 5, 4, seed=13)
        codes = np.array([[1, 4, 2], [0, 0, 3]])
        out = stack_embeddings(cb, codes)
        for t in range(2):
            expected = sum(embed_code(cb, d, codes[t, d]) for d in range(3))
            np.testing.assert_allclose(out[t], expected, atol=1e-12)
