import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from livejam import sampling
from livejam.sampling import (
    SamplerConfig,
    ShapeError,
    cfg_combine,
    prior_combine,
    sample_pipeline,
    sample_token,
    shape_logits,
)

finite_logits = st.lists(
    st.floats(-50, 50, allow_nan=False), min_size=2, max_size=64
).map(np.array)


class TestConfig:
    def test_defaults(self):
        cfg = SamplerConfig()
        assert cfg.temperature == 1.3
        assert cfg.top_k == 40
        assert cfg.cfg_weight == 5.0

    def test_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(temperature=0.0)
        with pytest.raises(ValueError):
            SamplerConfig(top_k=0)
        with pytest.raises(ValueError):
            SamplerConfig(cfg_weight=-1.0)


class TestCfgCombine:
    def test_worked_example(self):
        # (1+5)*[2,0] - 5*[0,2] = [12,-10]
        got = cfg_combine(np.array([2.0, 0.0]), np.array([0.0, 2.0]), 5.0)
        assert np.allclose(got, [12.0, -10.0], atol=1e-12)

    @given(finite_logits)
    def test_w_zero_identity(self, pos):
        neg = np.zeros_like(pos)
        assert np.allclose(cfg_combine(pos, neg, 0.0), pos, atol=1e-12)

    @given(finite_logits)
    def test_pos_equals_neg_identity(self, logits):
        assert np.allclose(cfg_combine(logits, logits, 5.0), logits, atol=1e-12)

    @given(finite_logits, st.floats(0, 10, allow_nan=False))
    def test_affine_form(self, pos, w):
        neg = pos[::-1].copy()
        want = pos + w * (pos - neg)
        assert np.allclose(cfg_combine(pos, neg, w), want, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cfg_combine(np.zeros(3), np.zeros(4), 1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            cfg_combine(np.array([np.inf, 0.0]), np.zeros(2), 1.0)


class TestPriorCombine:
    @given(finite_logits)
    def test_zero_prior_identity(self, logits):
        assert np.allclose(prior_combine(logits, np.zeros_like(logits)), logits)

    def test_sum(self):
        got = prior_combine(np.array([1.0, 2.0]), np.array([0.5, -0.5]))
        assert np.allclose(got, [1.5, 1.5])


class TestShapeLogits:
    def test_temperature_scaling(self):
        got = shape_logits(np.array([2.6, 1.3]), temperature=1.3, top_k=2)
        assert np.allclose(got, [2.0, 1.0])

    def test_top_k_masks_rest(self):
        got = shape_logits(np.array([5.0, 1.0, 3.0, 2.0]), temperature=1.0, top_k=2)
        assert np.isneginf(got[[1, 3]]).all()
        assert np.isfinite(got[[0, 2]]).all()

    def test_top_k_ge_len_is_identity(self):
        logits = np.array([1.0, 2.0, 3.0])
        assert np.allclose(shape_logits(logits, 1.0, 10), logits)

    def test_tie_break_keeps_lowest_indices(self):
        got = shape_logits(np.array([1.0, 1.0, 1.0, 1.0]), temperature=1.0, top_k=2)
        assert np.isfinite(got[[0, 1]]).all()
        assert np.isneginf(got[[2, 3]]).all()

    @given(finite_logits, st.integers(1, 64))
    @settings(max_examples=50)
    def test_keeps_exactly_k(self, logits, k):
        got = shape_logits(logits, 1.0, k)
        assert np.isfinite(got).sum() == min(k, len(logits))


class TestSampleToken:
    def test_deterministic_for_seed(self):
        logits = np.array([0.0, 1.0, 2.0])
        a = sample_token(logits, np.random.default_rng(42))
        b = sample_token(logits, np.random.default_rng(42))
        assert a == b

    def test_skips_masked(self):
        logits = np.array([-np.inf, 5.0, -np.inf])
        for seed in range(10):
            assert sample_token(logits, np.random.default_rng(seed)) == 1

    def test_all_masked_raises(self):
        with pytest.raises(ValueError):
            sample_token(np.full(4, -np.inf), np.random.default_rng(0))

    def test_empirical_distribution(self):
        logits = np.log(np.array([0.7, 0.3]))
        rng = np.random.default_rng(0)
        draws = [sample_token(logits, rng) for _ in range(4000)]
        assert abs(np.mean(draws) - 0.3) < 0.03


class TestPipeline:
    def test_order_constant(self):
        assert sampling.PIPELINE_ORDER == (
            "cfg_combine",
            "prior_combine",
            "shape_logits",
            "sample_token",
        )

    def test_full_pipeline_deterministic(self):
        rng = np.random.default_rng(7)
        pos = rng.normal(size=1024)
        neg = rng.normal(size=1024)
        prior = rng.normal(size=1024)
        cfg = SamplerConfig()
        a = sample_pipeline(pos, np.random.default_rng(1), cfg, neg, prior)
        b = sample_pipeline(pos, np.random.default_rng(1), cfg, neg, prior)
        assert a == b

    def test_greedy_limit(self):
        # tiny temperature and top_k 1 pins the argmax
        cfg = SamplerConfig(temperature=0.01, top_k=1, cfg_weight=0.0)
        logits = np.array([0.0, 3.0, 1.0])
        assert sample_pipeline(logits, np.random.default_rng(0), cfg) == 1
