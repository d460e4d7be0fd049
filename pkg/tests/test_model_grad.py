import numpy as np
import pytest

from oracles import assert_gradient_close, central_difference
from tsvdnet import model_grad as mg
from tsvdnet.errors import NonFiniteGradient, NonFiniteInput, NonPositiveSigma


@pytest.fixture
def small():
    params = mg.init_params(4, 3, hidden_dim=8, feat_dim=6, seed=7)
    # nonzero biases move the ReLU kinks away from the probe points
    r = np.random.default_rng(3)
    for name in ("f_b1", "f_b2", "mu_b", "sigma_b"):
        setattr(params, name, 0.1 * r.standard_normal(getattr(params, name).shape))
    x = r.standard_normal((5, 4))
    return params, x


class TestForward:
    def test_shapes_and_determinism(self, small):
        params, x = small
        a, b = mg.forward(params, x), mg.forward(params, x)
        assert a.features.shape == (5, 6) and a.logits.shape == (5, 3) and a.sigma.shape == (5,)
        np.testing.assert_array_equal(a.logits, b.logits)

    def test_zero_classifier_gives_uniform(self, small):
        params, x = small
        params.mu_w[:] = 0.0
        params.mu_b[:] = 0.0
        fwd = mg.forward(params, x)
        np.testing.assert_array_equal(fwd.logits, 0.0)
        np.testing.assert_allclose(mg.softmax(fwd.logits), 1 / 3)

    def test_zero_sigma_head_gives_one(self, small):
        params, x = small
        params.sigma_w[:] = 0.0
        params.sigma_b[:] = 0.0
        np.testing.assert_array_equal(mg.forward(params, x).sigma, 1.0)

    @pytest.mark.parametrize("raw, expected", [(-50.0, mg.SIGMA_MIN), (50.0, mg.SIGMA_MAX)])
    def test_sigma_clamped(self, small, raw, expected):
        params, x = small
        params.sigma_w[:] = 0.0
        params.sigma_b[:] = raw
        fwd = mg.forward(params, x)
        np.testing.assert_array_equal(fwd.sigma, expected)
        assert not fwd.sigma_active.any()

    def test_non_finite_input(self, small):
        params, x = small
        x[0, 0] = np.nan
        with pytest.raises(NonFiniteInput):
            mg.forward(params, x)

    def test_init_bounds(self):
        p = mg.init_params(16, 5, 64, 32, seed=0)
        assert np.abs(p.f_w1).max() <= 1 / 4 and np.abs(p.f_w2).max() <= 1 / 8
        np.testing.assert_array_equal(p.f_b1, 0.0)


class TestScaledSoftmax:
    def test_unit_sigma_is_softmax(self):
        z = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(mg.scaled_softmax(z, 1.0), mg.softmax(z), atol=1e-15)

    def test_two_class_value(self):
        p = mg.scaled_softmax(np.array([2.0, 0.0]), 1.0)
        e2 = np.exp(2.0)
        np.testing.assert_allclose(p, [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-15)
        np.testing.assert_allclose(p, [0.8808, 0.1192], atol=1e-4)

    def test_large_sigma_flattens(self):
        np.testing.assert_allclose(mg.scaled_softmax(np.array([2.0, 0.0]), 1e3), 0.5, atol=1e-6)

    def test_stable_and_normalized(self, rng):
        z = 500 * rng.standard_normal((20, 4))
        p = mg.scaled_softmax(z, np.full(20, 0.01))
        assert np.all(p >= 0) and np.all(np.isfinite(p))
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_rejects_non_positive(self, sigma):
        with pytest.raises(NonPositiveSigma):
            mg.scaled_softmax(np.zeros(2), sigma)


class TestBackward:
    def test_no_upstream_gives_zero(self, small):
        params, x = small
        grads = mg.backward(params, mg.forward(params, x))
        for _, g in grads.items():
            np.testing.assert_array_equal(g, 0.0)

    @pytest.mark.parametrize("term", ["logits", "sigma", "features", "all"])
    def test_finite_differences(self, small, term):
        params, x = small
        r = np.random.default_rng(11)
        w_logits = r.standard_normal((5, 3)) if term in ("logits", "all") else None
        w_sigma = r.standard_normal(5) if term in ("sigma", "all") else None
        w_feat = r.standard_normal((5, 6)) if term in ("features", "all") else None

        def loss():
            fwd = mg.forward(params, x)
            total = 0.0
            if w_logits is not None:
                total += np.sum(w_logits * fwd.logits)
            if w_sigma is not None:
                total += np.sum(w_sigma * fwd.sigma)
            if w_feat is not None:
                total += np.sum(w_feat * fwd.features)
            return total

        grads = mg.backward(params, mg.forward(params, x), w_logits, w_sigma, w_feat)
        for name, value in params.items():
            assert_gradient_close(getattr(grads, name), central_difference(loss, value))

    def test_feature_upstream_leaves_heads_untouched(self, small):
        params, x = small
        fwd = mg.forward(params, x)
        grads = mg.backward(params, fwd, d_features=np.ones_like(fwd.features))
        for name in mg.HEAD_PARAMS:
            np.testing.assert_array_equal(getattr(grads, name), 0.0)

    def test_non_finite_gradient(self, small):
        params, x = small
        fwd = mg.forward(params, x)
        with pytest.raises(NonFiniteGradient), np.errstate(invalid="ignore"):
            mg.backward(params, fwd, d_logits=np.full((5, 3), np.inf))


class TestSgd:
    def test_zero_lr(self, small):
        params, x = small
        grads = mg.backward(params, mg.forward(params, x), d_logits=np.ones((5, 3)))
        out = mg.sgd_step(params, grads, 0.0)
        for name, value in params.items():
            np.testing.assert_array_equal(getattr(out, name), value)

    def test_scalar_arithmetic(self, small):
        params, _ = small
        params.mu_b[:] = 1.0
        grads = mg.zeros_like(params)
        grads.mu_b[:] = 2.0
        np.testing.assert_allclose(mg.sgd_step(params, grads, 0.1).mu_b, 0.8)

    def test_linear_steps_compose(self, small):
        # gradients of a loss linear in mu_b do not depend on mu_b
        params, x = small
        fwd = mg.forward(params, x)
        g1 = mg.backward(params, fwd, d_logits=np.ones((5, 3)))
        g2 = mg.backward(params, fwd, d_logits=2 * np.ones((5, 3)))
        twice = mg.sgd_step(mg.sgd_step(params, g1, 0.1), g2, 0.1)
        once = mg.sgd_step(params, g1.map(np.add, g2), 0.1)
        np.testing.assert_allclose(twice.mu_b, once.mu_b, atol=1e-15)
