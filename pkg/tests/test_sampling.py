"""Nucleus filtering contracts and generation-step determinism."""

import numpy as np
import pytest

from clam import (
    GenerationConfig,
    UsageError,
    encode_tokens,
    generate_codes,
    init_codebook,
    init_latent_lm,
    quantize,
    sample_step,
    top_p_filter,
)


class TestTopPFilter:
    def test_p_one_is_identity(self):
        probs = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(top_p_filter(probs, 1.0), probs, atol=1e-12)

    def test_first_element_already_covers(self):
        out = top_p_filter(np.array([0.6, 0.3, 0.1]), 0.5)
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-12)

    def test_prefix_of_two_renormalized(self):
        out = top_p_filter(np.array([0.4, 0.4, 0.2]), 0.5)
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-12)

    def test_ties_keep_lowest_index(self):
        out = top_p_filter(np.array([0.25, 0.25, 0.25, 0.25]), 0.3)
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0, 0.0], atol=1e-12)

    def test_invalid_distribution_rejected(self):
        with pytest.raises(UsageError):
            top_p_filter(np.array([0.5, 0.2]), 0.5)
        with pytest.raises(UsageError):
            top_p_filter(np.array([0.7, -0.2, 0.5]), 0.5)
        with pytest.raises(UsageError):
            top_p_filter(np.array([0.5, 0.5]), 0.0)

    def test_fuzzed_minimality_and_renormalization(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            size = int(rng.integers(1, 12))
            probs = rng.dirichlet(np.full(size, rng.uniform(0.2, 3.0)))
            p = float(rng.uniform(0.05, 1.0))
            out = top_p_filter(probs, p)
            assert np.all(out >= 0)
            assert out.sum() == pytest.approx(1.0, abs=1e-9)
            kept = np.flatnonzero(out)
            mass = probs[kept].sum()
            assert mass >= p - 1e-12 or kept.size == size
            if kept.size > 1:
                smallest = kept[np.argmin(probs[kept])]
                assert probs[kept].sum() - probs[smallest] < p


def _setup(seed=0, K=3):
    cb = init_codebook(2, 4, 4, seed=seed)
    model = init_latent_lm(4, K, 2, window=2, embed_dim=3, seed=seed)
    return model, cb


class TestSampleStep:
    def test_fixed_seed_reproduces(self):
        model, cb = _setup()
        cfg = GenerationConfig(top_p=0.9, temperature=1.0, max_steps=8)
        toks = encode_tokens("abc")
        hist = np.zeros((0, 4))
        a = sample_step(model, cb, toks, hist, cfg, np.random.default_rng(42))
        b = sample_step(model, cb, toks, hist, cfg, np.random.default_rng(42))
        assert np.array_equal(a.stack, b.stack)
        np.testing.assert_array_equal(a.quantized, b.quantized)
        assert a.eos == b.eos

    def test_temperature_zero_single_component_deterministic(self):
        model, cb = _setup(K=1)
        cfg = GenerationConfig(top_p=0.5, temperature=0.0, max_steps=8)
        toks = encode_tokens("xyz")
        hist = np.zeros((0, 4))
        _, means, _ = model.encoder.forward(toks, hist)
        expected = quantize(cb, model.projection @ means[0]).stack
        for seed in range(5):
            step = sample_step(model, cb, toks, hist, cfg,
                               np.random.default_rng(seed))
            assert np.array_equal(step.stack, expected)

    def test_top_p_collapses_to_dominant_component(self):
        model, cb = _setup(K=3)
        # bias the weight head so component 1 has probability ~0.9
        model.encoder.params["w_weight"][:] = 0.0
        model.encoder.params["b_weight"][:] = np.array([0.0, np.log(18.0), 0.0])
        toks = encode_tokens("abc")
        hist = np.zeros((0, 4))
        probs = np.exp(model.encoder.forward(toks, hist)[0])
        probs /= probs.sum()
        assert probs[1] == pytest.approx(0.9, abs=1e-3)
        cfg = GenerationConfig(top_p=0.5, temperature=1.0, max_steps=4)
        rng = np.random.default_rng(11)
        picks = [sample_step(model, cb, toks, hist, cfg, rng).component
                 for _ in range(1000)]
        assert all(k == 1 for k in picks)

    def test_history_at_capacity_rejected(self):
        model, cb = _setup()
        cfg = GenerationConfig(max_steps=2)
        with pytest.raises(UsageError):
            sample_step(model, cb, encode_tokens("a"), np.zeros((2, 4)), cfg,
                        np.random.default_rng(0))


class TestGenerateCodes:
    def test_seeded_generation_identical(self):
        model, cb = _setup(seed=5)
        cfg = GenerationConfig(top_p=0.8, temperature=1.2, max_steps=6)
        toks = encode_tokens("same seed")
        a = generate_codes(model, cb, toks, cfg, np.random.default_rng(7))
        b = generate_codes(model, cb, toks, cfg, np.random.default_rng(7))
        assert np.array_equal(a.codes, b.codes)
        assert a.stop_reason == b.stop_reason

    def test_forced_eos_stops_after_one_step(self):
        model, cb = _setup(seed=5)
        model.encoder.params["b_eos"][:] = 20.0
        cfg = GenerationConfig(max_steps=6)
        result = generate_codes(model, cb, encode_tokens("stop"), cfg,
                                np.random.default_rng(0))
        assert result.steps == 1
        assert result.stop_reason == "eos"

    def test_max_steps_stop_reason(self):
        model, cb = _setup(seed=5)
        model.encoder.params["b_eos"][:] = -20.0
        cfg = GenerationConfig(max_steps=4)
        result = generate_codes(model, cb, encode_tokens("go"), cfg,
                                np.random.default_rng(0))
        assert result.steps == 4
        assert result.stop_reason == "max_steps"
