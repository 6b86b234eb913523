"""Diffusion math: marginals, losses, posterior, ancestral sampling."""

import numpy as np
import pytest

from i2idiff import diffusion
from i2idiff.nn.autodiff import Tensor
from i2idiff.schedule import build_linear_schedule


class StubModel:
    """Callable denoiser returning a fixed array; records its inputs."""

    def __init__(self, value):
        self.value = np.asarray(value)
        self.calls = []

    def __call__(self, x, y_noisy, gamma):
        self.calls.append((x, y_noisy, gamma))
        return np.broadcast_to(self.value, x.shape).astype(x.dtype)


# ---------------------------------------------------------------------------
# forward marginal


def test_forward_marginal_endpoints(rng):
    y0 = rng.standard_normal((2, 1, 4, 4))
    eps = rng.standard_normal((2, 1, 4, 4))
    assert np.allclose(diffusion.forward_marginal(y0, 1.0, eps), y0, rtol=1e-15)
    assert np.allclose(diffusion.forward_marginal(y0, 0.0, eps), eps, rtol=1e-15)


def test_forward_marginal_hand_value():
    y0 = np.full((1, 1, 1, 1), 0.5)
    eps = np.full((1, 1, 1, 1), -1.0)
    out = diffusion.forward_marginal(y0, 0.64, eps)
    # 0.8 * 0.5 - 0.6 * 1.0
    assert out.reshape(()) == pytest.approx(-0.2, rel=1e-12)


def test_forward_marginal_per_sample_gamma(rng):
    y0 = rng.standard_normal((3, 2, 4, 4))
    eps = rng.standard_normal((3, 2, 4, 4))
    gammas = np.array([0.1, 0.5, 0.9])
    out = diffusion.forward_marginal(y0, gammas, eps)
    for i, g in enumerate(gammas):
        single = diffusion.forward_marginal(y0[i:i + 1], float(g), eps[i:i + 1])
        assert np.allclose(out[i:i + 1], single, rtol=1e-15)


def test_forward_marginal_preserves_dtype(rng):
    y0 = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
    eps = rng.standard_normal((1, 1, 2, 2)).astype(np.float32)
    assert diffusion.forward_marginal(y0, 0.5, eps).dtype == np.float32


def test_forward_marginal_errors(rng):
    y0 = rng.standard_normal((2, 1, 2, 2))
    with pytest.raises(ValueError, match="shape"):
        diffusion.forward_marginal(y0, 0.5, rng.standard_normal((1, 1, 2, 2)))
    eps = rng.standard_normal((2, 1, 2, 2))
    with pytest.raises(ValueError, match="0, 1"):
        diffusion.forward_marginal(y0, 1.5, eps)
    with pytest.raises(ValueError, match="0, 1"):
        diffusion.forward_marginal(y0, -0.1, eps)
    with pytest.raises(ValueError, match="scalar or 1-d"):
        diffusion.forward_marginal(y0, np.ones((2, 2)), eps)


def test_forward_marginal_moments_match_theory(rng):
    # over many eps draws the marginal has mean sqrt(g) y0, var (1 - g)
    y0 = np.full((100000, 1, 1, 1), 0.5)
    eps = rng.standard_normal(y0.shape)
    out = diffusion.forward_marginal(y0, 0.36, eps)
    assert out.mean() == pytest.approx(0.6 * 0.5, abs=3 * 0.8 / np.sqrt(1e5))
    assert out.var() == pytest.approx(0.64, rel=0.02)


# ---------------------------------------------------------------------------
# training and regression losses


def test_training_loss_zero_for_perfect_model(rng):
    y0 = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    eps = rng.standard_normal(y0.shape).astype(np.float32)
    model = lambda x, y, g: eps
    loss = diffusion.training_loss(model, y0, y0, 0.5, eps, p=2)
    assert loss.item() == 0.0


def test_training_loss_constant_offset():
    y0 = np.zeros((1, 1, 2, 2), np.float64)
    eps = np.zeros_like(y0)
    model = lambda x, y, g: eps + 0.1
    assert diffusion.training_loss(model, y0, y0, 0.5, eps, p=2).item() \
        == pytest.approx(0.01, rel=1e-12)
    assert diffusion.training_loss(model, y0, y0, 0.5, eps, p=1).item() \
        == pytest.approx(0.1, rel=1e-12)


@pytest.mark.parametrize("p", [1, 2])
def test_training_loss_elementwise_oracle(p, rng):
    y0 = rng.standard_normal((2, 1, 3, 3))
    eps = rng.standard_normal(y0.shape)
    eps_hat = rng.standard_normal(y0.shape)
    model = lambda x, y, g: eps_hat
    loss = diffusion.training_loss(model, y0, y0, 0.3, eps, p=p)
    dev = np.abs(eps_hat - eps) if p == 1 else (eps_hat - eps) ** 2
    assert loss.item() == pytest.approx(dev.mean(), rel=1e-12)


def test_training_loss_masked_mean_oracle(rng):
    y0 = rng.standard_normal((2, 1, 4, 4))
    eps = rng.standard_normal(y0.shape)
    eps_hat = rng.standard_normal(y0.shape)
    mask = (rng.random(y0.shape) < 0.5).astype(np.float64)
    model = lambda x, y, g: eps_hat
    loss = diffusion.training_loss(model, y0, y0, 0.3, eps, p=2, mask=mask)
    want = float((mask * (eps_hat - eps) ** 2).sum() / mask.sum())
    assert loss.item() == pytest.approx(want, rel=1e-12)


def test_training_loss_gradient_zero_outside_mask(rng):
    y0 = rng.standard_normal((1, 1, 4, 4))
    eps = rng.standard_normal(y0.shape)
    mask = np.zeros(y0.shape)
    mask[0, 0, :2] = 1.0
    param = Tensor(rng.standard_normal(y0.shape), requires_grad=True)
    model = lambda x, y, g: param
    loss = diffusion.training_loss(model, y0, y0, 0.3, eps, p=2, mask=mask)
    loss.backward()
    want = 2.0 * (param.data - eps) * mask / mask.sum()
    assert np.array_equal(param.grad[mask == 0.0], np.zeros(int((mask == 0).sum())))
    np.testing.assert_allclose(param.grad, want, rtol=1e-12)


def test_training_loss_validation(rng):
    y0 = rng.standard_normal((1, 1, 2, 2))
    eps = rng.standard_normal(y0.shape)
    model = lambda x, y, g: eps
    with pytest.raises(ValueError, match="p must be"):
        diffusion.training_loss(model, y0, y0, 0.5, eps, p=3)
    with pytest.raises(ValueError, match="mask shape"):
        diffusion.training_loss(model, y0, y0, 0.5, eps,
                                mask=np.ones((1, 1, 2, 3)))
    with pytest.raises(ValueError, match="binary"):
        diffusion.training_loss(model, y0, y0, 0.5, eps,
                                mask=np.full(y0.shape, 0.5))


def test_training_loss_uses_forward_marginal(rng):
    y0 = rng.standard_normal((1, 1, 2, 2))
    eps = rng.standard_normal(y0.shape)
    model = StubModel(np.zeros(y0.shape))
    diffusion.training_loss(model, y0 + 7.0, y0, 0.25, eps)
    x_seen, y_seen, g_seen = model.calls[0]
    assert np.array_equal(x_seen, y0 + 7.0)
    assert np.allclose(y_seen, 0.5 * y0 + np.sqrt(0.75) * eps, rtol=1e-12)
    assert g_seen == 0.25


def test_regression_loss_values(rng):
    y0 = rng.standard_normal((2, 1, 3, 3))
    model = lambda x, y, g: y0
    assert diffusion.regression_loss(model, y0 * 0.0, y0, p=2).item() == 0.0
    off = lambda x, y, g: y0 + 0.1
    assert diffusion.regression_loss(off, y0 * 0.0, y0, p=2).item() \
        == pytest.approx(0.01, rel=1e-10)
    assert diffusion.regression_loss(off, y0 * 0.0, y0, p=1).item() \
        == pytest.approx(0.1, rel=1e-10)


def test_regression_loss_passes_no_noise(rng):
    y0 = rng.standard_normal((1, 1, 2, 2))
    seen = {}

    def model(x, y_noisy, gamma):
        seen["y"] = y_noisy
        seen["g"] = gamma
        return y0

    diffusion.regression_loss(model, y0, y0)
    assert seen["y"] is None
    assert seen["g"] == 1.0


def test_regression_loss_masked_and_validation(rng):
    y0 = rng.standard_normal((1, 1, 4, 4))
    pred = rng.standard_normal(y0.shape)
    mask = (rng.random(y0.shape) < 0.5).astype(np.float64)
    model = lambda x, y, g: pred
    loss = diffusion.regression_loss(model, y0, y0, p=2, mask=mask)
    want = float((mask * (pred - y0) ** 2).sum() / mask.sum())
    assert loss.item() == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError, match="p must be"):
        diffusion.regression_loss(model, y0, y0, p=0)


# ---------------------------------------------------------------------------
# y0 estimate and posterior


def test_estimate_y0_inverts_forward(rng):
    y0 = rng.standard_normal((2, 1, 4, 4))
    eps = rng.standard_normal(y0.shape)
    y_t = diffusion.forward_marginal(y0, 0.37, eps)
    back = diffusion.estimate_y0(y_t, eps, 0.37)
    np.testing.assert_allclose(back, y0, rtol=1e-10, atol=1e-12)


def test_estimate_y0_gamma_one_returns_y_t(rng):
    y_t = rng.standard_normal((1, 1, 3, 3))
    assert np.allclose(diffusion.estimate_y0(y_t, y_t * 5.0, 1.0), y_t,
                       rtol=1e-15)


def test_estimate_y0_hand_value():
    y_t = np.full((1, 1, 1, 1), 1.0)
    eps_hat = np.full((1, 1, 1, 1), 0.5)
    got = diffusion.estimate_y0(y_t, eps_hat, 0.25)
    want = (1.0 - np.sqrt(0.75) * 0.5) / 0.5
    assert got.reshape(()) == pytest.approx(want, rel=1e-12)
    assert want == pytest.approx(1.1339745962, rel=1e-9)


def test_estimate_y0_rejects_gamma_zero(rng):
    y_t = rng.standard_normal((1, 1, 2, 2))
    with pytest.raises(ValueError, match="0, 1"):
        diffusion.estimate_y0(y_t, y_t, 0.0)
    with pytest.raises(ValueError, match="0, 1"):
        diffusion.estimate_y0(y_t, y_t, 1.2)


def test_posterior_params_hand_oracle():
    s = build_linear_schedule(0.05, 0.1, 2)
    y0 = np.full((1, 1, 1, 1), 1.0)
    y_t = np.full((1, 1, 1, 1), 0.5)
    mu, sigma2 = diffusion.posterior_params(y0, y_t, 2, s)
    # alphas (0.95, 0.9), gammas (0.95, 0.855)
    coef_y0 = np.sqrt(0.95) * 0.1 / 0.145
    coef_yt = np.sqrt(0.9) * 0.05 / 0.145
    assert mu.reshape(()) == pytest.approx(coef_y0 + 0.5 * coef_yt, rel=1e-12)
    assert mu.reshape(()) == pytest.approx(0.8357588, rel=1e-6)
    assert sigma2 == pytest.approx(0.05 * 0.1 / 0.145, rel=1e-12)
    assert sigma2 == pytest.approx(0.0344827586, rel=1e-8)


def test_posterior_final_step_is_deterministic_y0(rng):
    s = build_linear_schedule(0.05, 0.1, 2)
    y0 = rng.standard_normal((1, 1, 2, 2))
    y_t = rng.standard_normal(y0.shape)
    mu, sigma2 = diffusion.posterior_params(y0, y_t, 1, s)
    # gamma_0 = 1 collapses the posterior onto y0
    np.testing.assert_allclose(mu, y0, rtol=1e-12)
    assert sigma2 == 0.0


def test_posterior_params_range_check(rng):
    s = build_linear_schedule(0.05, 0.1, 2)
    y = rng.standard_normal((1, 1, 1, 1))
    with pytest.raises(ValueError, match="outside"):
        diffusion.posterior_params(y, y, 0, s)
    with pytest.raises(ValueError, match="outside"):
        diffusion.posterior_params(y, y, 3, s)


def test_posterior_matches_simulated_chain(rng):
    # simulate the 2-step forward chain; because (y1, y2) is jointly Gaussian
    # given y0, the regression of y1 on y2 recovers exactly the posterior
    # coefficients and sigma2 is the residual variance
    s = build_linear_schedule(0.3, 0.4, 2)
    y0 = 0.7
    n = 1_000_000
    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    a1, a2 = s.alphas
    y1 = np.sqrt(a1) * y0 + np.sqrt(1 - a1) * e1
    y2 = np.sqrt(a2) * y1 + np.sqrt(1 - a2) * e2
    slope = np.cov(y1, y2)[0, 1] / y2.var()
    intercept = y1.mean() - slope * y2.mean()
    resid_var = y1.var() - np.cov(y1, y2)[0, 1] ** 2 / y2.var()
    arr0 = np.full((1, 1, 1, 1), float(y0))
    mu0, sigma2 = diffusion.posterior_params(arr0, arr0 * 0.0, 2, s)
    y0_term = float(mu0.reshape(()))  # mu at y_t = 0 isolates coef_y0 * y0
    mu1, _ = diffusion.posterior_params(arr0, arr0 * 0.0 + 1.0, 2, s)
    coef_yt = float(mu1.reshape(())) - y0_term
    assert slope == pytest.approx(coef_yt, abs=5e-3)
    assert intercept == pytest.approx(y0_term, abs=5e-3)
    assert resid_var == pytest.approx(sigma2, rel=0.02)


# ---------------------------------------------------------------------------
# reverse step and sampler


def test_reverse_step_final_is_deterministic(rng):
    s = build_linear_schedule(0.05, 0.1, 2)
    x = rng.standard_normal((1, 1, 3, 3))
    y = rng.standard_normal(x.shape)
    model = StubModel(np.full(x.shape, 0.2))
    r1 = np.random.default_rng(0)
    out1 = diffusion.reverse_step(model, x, y, 1, s, r1)
    out2 = diffusion.reverse_step(model, x, y, 1, s, np.random.default_rng(1))
    assert np.array_equal(out1, out2)
    # rng untouched at t = 1
    assert r1.standard_normal() == np.random.default_rng(0).standard_normal()


def test_reverse_step_mean_formula(rng):
    s = build_linear_schedule(0.05, 0.1, 2)
    x = rng.standard_normal((1, 1, 2, 2))
    y = rng.standard_normal(x.shape)
    eps_hat = np.full(x.shape, 0.3)
    model = StubModel(eps_hat)
    got = diffusion.reverse_step(model, x, y, 1, s, np.random.default_rng(0))
    a1 = float(s.alpha(1))
    g1 = float(s.gamma(1))
    want = (y - (1 - a1) / np.sqrt(1 - g1) * eps_hat) / np.sqrt(a1)
    np.testing.assert_allclose(got, want, rtol=1e-12)


def test_reverse_step_noise_moments(rng):
    s = build_linear_schedule(0.05, 0.1, 2)
    n = 50_000
    x = np.zeros((n, 1, 1, 1))
    y = np.full(x.shape, 0.4)
    model = StubModel(np.zeros(x.shape))
    out = diffusion.reverse_step(model, x, y, 2, s, rng)
    a2 = float(s.alpha(2))
    mean_want = 0.4 / np.sqrt(a2)
    sd = np.sqrt(1 - a2)
    assert out.mean() == pytest.approx(mean_want, abs=4 * sd / np.sqrt(n))
    assert out.var() == pytest.approx(1 - a2, rel=0.05)


def test_reverse_step_range_check(rng):
    s = build_linear_schedule(0.05, 0.1, 2)
    y = rng.standard_normal((1, 1, 2, 2))
    with pytest.raises(ValueError, match="outside"):
        diffusion.reverse_step(StubModel(y), y, y, 0, s, rng)


def test_sample_single_step_hand_oracle(rng):
    s = build_linear_schedule(0.09, 0.09, 1)
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    eps_hat = np.full(x.shape, -0.1, np.float32)
    model = StubModel(eps_hat)
    got = diffusion.sample(model, x, s, np.random.default_rng(123))
    y_init = np.random.default_rng(123).standard_normal(x.shape).astype(np.float32)
    a = 0.91
    want = (y_init - (1 - a) / np.sqrt(1 - a) * eps_hat) / np.sqrt(a)
    np.testing.assert_allclose(got, want, rtol=1e-6)


def test_sample_is_deterministic_per_seed(rng):
    s = build_linear_schedule(0.01, 0.2, 5)
    x = rng.standard_normal((2, 1, 4, 4)).astype(np.float32)
    model = StubModel(np.zeros(x.shape, np.float32))
    out1 = diffusion.sample(model, x, s, np.random.default_rng(7))
    out2 = diffusion.sample(model, x, s, np.random.default_rng(7))
    assert np.array_equal(out1, out2)


def test_sample_composite_pastes_observed(rng):
    s = build_linear_schedule(0.01, 0.2, 3)
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    observed = rng.standard_normal(x.shape).astype(np.float32)
    model = StubModel(np.zeros(x.shape, np.float32))
    zeros_mask = np.zeros(x.shape, np.float32)
    out = diffusion.sample(model, x, s, np.random.default_rng(3),
                           composite=(observed, zeros_mask))
    assert np.array_equal(out, observed)
    ones_mask = np.ones(x.shape, np.float32)
    free = diffusion.sample(model, x, s, np.random.default_rng(3),
                            composite=(observed, ones_mask))
    plain = diffusion.sample(model, x, s, np.random.default_rng(3))
    assert np.array_equal(free, plain)


def test_sample_composite_partial_mix(rng):
    s = build_linear_schedule(0.01, 0.2, 3)
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    observed = rng.standard_normal(x.shape).astype(np.float32)
    mask = np.zeros(x.shape, np.float32)
    mask[..., :2, :] = 1.0
    model = StubModel(np.zeros(x.shape, np.float32))
    out = diffusion.sample(model, x, s, np.random.default_rng(3),
                           composite=(observed, mask))
    plain = diffusion.sample(model, x, s, np.random.default_rng(3))
    assert np.array_equal(out[..., :2, :], plain[..., :2, :])
    assert np.array_equal(out[..., 2:, :], observed[..., 2:, :])


def test_sample_composite_shape_errors(rng):
    s = build_linear_schedule(0.01, 0.2, 2)
    x = rng.standard_normal((1, 1, 4, 4)).astype(np.float32)
    model = StubModel(np.zeros(x.shape, np.float32))
    with pytest.raises(ValueError, match="composite mask"):
        diffusion.sample(model, x, s, rng,
                         composite=(x, np.ones((1, 1, 2, 2), np.float32)))
    bad = np.ones((1, 1, 2, 2), np.float32)
    with pytest.raises(ValueError, match="composite observed"):
        diffusion.sample(model, x, s, rng, composite=(bad, bad))
