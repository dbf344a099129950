import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imhflow.exceptions import NonFiniteError, ShapeError
from imhflow.flows import (
    AffineParams,
    DiagonalGaussian,
    MixtureProposal,
    flow_forward,
    flow_inverse,
    flow_log_prob,
    flow_log_prob_param_grad,
    flow_sample,
    flow_sample_path_grad,
    load_params,
    mixture_log_prob,
    mixture_sample,
    params_from_dict,
    params_to_dict,
    ravel,
    realnvp_init,
    save_params,
    unravel_like,
)
from imhflow.targets import gaussian_1d_target, gaussian_target

from conftest import central_diff

LN2 = math.log(2.0)


def _affine(mu, s):
    return AffineParams(np.array([mu], dtype=float), np.array([s], dtype=float))


def _random_realnvp(dim, rng, n_pairs=2, hidden=8):
    flow = realnvp_init(dim, n_pairs, hidden, rng, zero_last=False, gain=0.3)
    theta = ravel(flow)
    return unravel_like(flow, theta + 0.1 * rng.standard_normal(theta.size))


# ---------------------------------------------------------------- forward / inverse


def test_identity_initialisation(rng):
    flow = realnvp_init(6, 2, 8, rng)
    z = rng.standard_normal(6)
    x, logdet = flow_forward(flow, z)
    np.testing.assert_array_equal(x, z)
    assert logdet == 0.0
    zz, ld = flow_inverse(flow, z)
    np.testing.assert_array_equal(zz, z)
    assert ld == 0.0


def test_affine_hand_values():
    flow = _affine(1.0, LN2)
    x, logdet = flow_forward(flow, np.array([1.0]))
    assert x[0] == pytest.approx(3.0) and logdet == pytest.approx(LN2)
    z, _ = flow_inverse(flow, np.array([3.0]))
    assert z[0] == pytest.approx(1.0)


def test_realnvp_round_trip(rng):
    flow = _random_realnvp(7, rng)
    z = rng.standard_normal((20, 7))
    x, ld_f = flow_forward(flow, z)
    z_back, ld_i = flow_inverse(flow, x)
    np.testing.assert_allclose(z_back, z, atol=1e-10)
    np.testing.assert_allclose(ld_f, -ld_i, atol=1e-10)


def test_logdet_matches_numerical_jacobian(rng):
    flow = _random_realnvp(4, rng)
    z = rng.standard_normal(4)
    jac = np.array([central_diff(lambda v: float(flow_forward(flow, v)[0][i]), z, 1e-6) for i in range(4)])
    _, logdet = flow_forward(flow, z)
    assert logdet == pytest.approx(np.linalg.slogdet(jac)[1], abs=1e-6)


def test_shape_errors(rng):
    flow = realnvp_init(4, 1, 4, rng)
    with pytest.raises(ShapeError):
        flow_forward(flow, np.zeros(5))
    with pytest.raises(ShapeError):
        realnvp_init(1, 1, 4, rng)


def test_non_finite_forward_is_reported():
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        flow_forward(_affine(0.0, 800.0), np.array([1.0]))


# ---------------------------------------------------------------- densities


def test_log_prob_values():
    assert float(flow_log_prob(_affine(0.0, 0.0), np.array([0.0]))) == pytest.approx(-0.5 * math.log(2 * math.pi))
    expected = -0.5 * math.log(2 * math.pi) - 0.5 - LN2
    assert float(flow_log_prob(_affine(1.0, LN2), np.array([3.0]))) == pytest.approx(expected)
    assert expected == pytest.approx(-2.1121, abs=1e-4)


def test_affine_density_integrates_to_one():
    grid = np.linspace(-20, 20, 40001)
    dens = np.exp(flow_log_prob(_affine(0.5, LN2), grid[:, None]))
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


def test_realnvp_density_integrates_to_one(rng):
    flow = _random_realnvp(2, rng)
    g = np.linspace(-8, 8, 401)
    xx, yy = np.meshgrid(g, g)
    dens = np.exp(flow_log_prob(flow, np.column_stack([xx.ravel(), yy.ravel()]))).reshape(xx.shape)
    assert np.trapezoid(np.trapezoid(dens, g, axis=1), g) == pytest.approx(1.0, abs=1e-3)


# ---------------------------------------------------------------- sampling


def test_sampling_moments():
    x = flow_sample(realnvp_init(3, 1, 4, np.random.default_rng(0)), np.random.default_rng(1), 100_000)
    assert np.max(np.abs(x.mean(axis=0))) < 0.02
    y = flow_sample(_affine(5.0, 0.0), np.random.default_rng(2), 100_000)
    assert abs(y.mean() - 5.0) < 0.02


def test_sampling_is_deterministic(rng):
    flow = _random_realnvp(5, rng)
    a = flow_sample(flow, np.random.default_rng(7))
    b = flow_sample(flow, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        flow_sample(flow, None)


# ---------------------------------------------------------------- parameter gradients


def test_affine_param_grad_closed_form():
    g = flow_log_prob_param_grad(_affine(0.0, 0.0), np.array([2.0]))
    assert g.shift[0] == pytest.approx(2.0)
    g = flow_log_prob_param_grad(_affine(1.5, 0.3), np.array([1.5]))
    assert g.log_scale[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("dim", [2, 5])
def test_realnvp_param_grad_matches_finite_differences(rng, dim):
    flow = _random_realnvp(dim, rng)
    x = rng.standard_normal((3, dim))
    theta = ravel(flow)
    fd = central_diff(lambda t: float(np.sum(flow_log_prob(unravel_like(flow, t), x))), theta, 1e-5)
    g = ravel(flow_log_prob_param_grad(flow, x))
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6)


def test_sample_path_grad_hand_value():
    g = flow_sample_path_grad(_affine(1.0, 0.0), np.zeros((1, 1)), gaussian_1d_target(0.0, 1.0))
    assert g.shift[0] == pytest.approx(1.0)


def test_sample_path_grad_vanishes_at_optimum():
    target = gaussian_1d_target(2.0, 9.0)
    z = np.random.default_rng(3).standard_normal((100_000, 1))
    g = flow_sample_path_grad(_affine(2.0, math.log(3.0)), z, target, 1.0 / len(z))
    assert np.linalg.norm(ravel(g)) < 0.02


def test_sample_path_grad_zero_cotangent():
    g = flow_sample_path_grad(_affine(1.0, 0.2), np.ones((3, 1)), gaussian_1d_target(0.0, 1.0), 0.0)
    assert np.all(ravel(g) == 0.0)


def test_sample_path_grad_matches_finite_differences(rng):
    target = gaussian_target(np.array([0.5, -1.0]), np.array([[1.0, 0.3], [0.3, 0.5]]))
    flow = _random_realnvp(2, rng)
    z = rng.standard_normal((4, 2))

    def loss(t):
        f = unravel_like(flow, t)
        x, logdet = flow_forward(f, z)
        return float(np.sum(-target.log_density(x) - logdet))

    fd = central_diff(loss, ravel(flow), 1e-5)
    np.testing.assert_allclose(ravel(flow_sample_path_grad(flow, z, target)), fd, rtol=1e-4, atol=1e-6)


def test_sample_path_grad_needs_target_gradient(rng):
    from imhflow.targets import discrete_target

    with pytest.raises(ValueError):
        flow_sample_path_grad(_affine(0.0, 0.0), np.zeros((1, 1)), discrete_target([1.0]))


# ---------------------------------------------------------------- mixtures


def test_degenerate_mixture_equals_component(rng):
    comp = _affine(0.3, 0.2)
    mix = MixtureProposal(0.5, DiagonalGaussian(np.array([0.3]), np.array([math.exp(0.2)])), comp)
    x = rng.standard_normal((10, 1))
    np.testing.assert_allclose(mixture_log_prob(mix, x), flow_log_prob(comp, x), atol=1e-12)


def test_mixture_density_integrates_to_one():
    mix = MixtureProposal(0.2, DiagonalGaussian(np.zeros(1), np.array([3.0])), _affine(1.0, -0.5))
    grid = np.linspace(-30, 30, 60001)
    assert np.trapezoid(np.exp(mixture_log_prob(mix, grid[:, None])), grid) == pytest.approx(1.0, abs=1e-3)


def test_mixture_sampling_weights():
    mix = MixtureProposal(0.2, DiagonalGaussian(np.array([-10.0]), np.ones(1)), _affine(10.0, 0.0))
    x = mixture_sample(mix, np.random.default_rng(0), 50_000)
    assert abs(np.mean(x < 0) - 0.2) < 0.01


def test_mixture_weight_bounds():
    with pytest.raises(ValueError):
        MixtureProposal(1.0, DiagonalGaussian(np.zeros(1), np.ones(1)), _affine(0, 0))


def test_mixture_from_noise_density_matches_log_prob(rng):
    mix = MixtureProposal(0.3, DiagonalGaussian(np.zeros(2), 2 * np.ones(2)), _random_realnvp(2, rng))
    x, logq = mix.from_noise(rng.standard_normal((50, 2)), rng.random(50))
    np.testing.assert_allclose(logq, mixture_log_prob(mix, x), atol=1e-10)


# ---------------------------------------------------------------- serialisation


def test_checkpoint_round_trip(rng, tmp_path):
    mix = MixtureProposal(0.2, DiagonalGaussian(np.zeros(4), 3 * np.ones(4)), _random_realnvp(4, rng))
    save_params(mix, tmp_path / "p.json")
    back = load_params(tmp_path / "p.json")
    x = rng.standard_normal((5, 4))
    np.testing.assert_array_equal(mixture_log_prob(back, x), mixture_log_prob(mix, x))
    aff = _affine(1.0, 2.0)
    np.testing.assert_array_equal(ravel(params_from_dict(params_to_dict(aff))), ravel(aff))


def test_checkpoint_version_checked():
    d = params_to_dict(_affine(0.0, 0.0))
    d["version"] = -1
    with pytest.raises(ValueError):
        params_from_dict(d)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_round_trip_property(dim, n_pairs, seed):
    rng = np.random.default_rng(seed)
    flow = _random_realnvp(dim, rng, n_pairs, 6)
    z = rng.standard_normal((3, dim))
    x, _ = flow_forward(flow, z)
    np.testing.assert_allclose(flow_inverse(flow, x)[0], z, atol=1e-9)
