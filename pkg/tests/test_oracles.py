import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imhflow.adaptation import gaussian_exact_kl_step
from imhflow.exceptions import SupportError
from imhflow.oracles import (
    KdeProposal,
    ball_volume,
    gaussian_kl,
    gaussian_kl_flow_solution,
    gaussian_ratio_bound,
    gaussian_ratio_sup,
    kde_bound_components,
    kde_density,
    kde_doeblin,
    kde_update_improves,
)

# ---------------------------------------------------------------- Gaussian flow


def test_flow_solution_examples():
    assert gaussian_kl_flow_solution(1.0, 2.0, 0.0) == (1.0, 2.0)
    mu, sigma = gaussian_kl_flow_solution(1.0, 2.0, 50.0)
    assert abs(mu) < 1e-15 and abs(sigma - 1.0) < 1e-15
    mu, sigma = gaussian_kl_flow_solution(1.0, 2.0, math.log(2.0))
    assert mu == pytest.approx(0.5) and sigma == pytest.approx(math.sqrt(1.75))
    assert sigma == pytest.approx(1.3229, abs=1e-4)


def test_flow_solution_rejects_narrow_start():
    with pytest.raises(ValueError, match="tails"):
        gaussian_kl_flow_solution(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        gaussian_kl_flow_solution(0.0, 2.0, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(1.1, 4), st.floats(0, 5))
def test_flow_solution_solves_the_ode(mu0, sigma0, t):
    h = 1e-6
    (m1, s1), (m2, s2) = (gaussian_kl_flow_solution(mu0, sigma0, t + d) for d in (h, 2 * h))
    m0, s0 = gaussian_kl_flow_solution(mu0, sigma0, t)
    dm = (-3 * m0 + 4 * m1 - m2) / (2 * h)
    ds = (-3 * s0 + 4 * s1 - s2) / (2 * h)
    assert dm == pytest.approx(-m0, abs=1e-5)
    assert ds == pytest.approx(1 / s0 - s0, abs=1e-5)


def test_flow_is_negative_kl_gradient():
    for mu, sigma in ((1.0, 2.0), (-0.5, 1.3), (2.0, 0.7)):
        h = 1e-6
        g_mu = (gaussian_kl(mu + h, sigma) - gaussian_kl(mu - h, sigma)) / (2 * h)
        g_s = (gaussian_kl(mu, sigma + h) - gaussian_kl(mu, sigma - h)) / (2 * h)
        dt = 1e-3
        m1, s1 = gaussian_exact_kl_step(mu, sigma, dt)
        assert (m1 - mu) / dt == pytest.approx(-g_mu, rel=1e-6)
        assert (s1 - sigma) / dt == pytest.approx(-g_s, rel=1e-6)


# ---------------------------------------------------------------- ratio bound


def test_ratio_bound_examples():
    assert gaussian_ratio_bound(0.0, 1.7) == pytest.approx(1.7)
    assert gaussian_ratio_bound(1.0, 2.0) == pytest.approx(2 * math.exp(1 / 6))
    assert gaussian_ratio_bound(1.0, 2.0) == pytest.approx(2.3628, abs=1e-4)
    with pytest.raises(ValueError):
        gaussian_ratio_bound(0.0, 1.0)


def test_ratio_bound_limit_along_flow():
    limit = math.exp(1.0 / 6.0)
    assert gaussian_ratio_bound(*gaussian_kl_flow_solution(1.0, 2.0, 10.0)) == pytest.approx(limit, abs=1e-6)
    assert limit == pytest.approx(1.1814, abs=1e-4)


def test_ratio_bound_decreases_along_flow():
    ts = np.linspace(0, 3, 301)
    b = [gaussian_ratio_bound(*gaussian_kl_flow_solution(-2.0, 1.5, t)) for t in ts]
    assert np.all(np.diff(b) <= 0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(1.05, 4))
def test_ratio_sup_is_below_bound_and_matches_grid(mu, sigma):
    sup = gaussian_ratio_sup(mu, sigma)
    assert sup <= gaussian_ratio_bound(mu, sigma) * (1 + 1e-12)
    x = np.linspace(-60, 60, 200_001)
    log_r = -0.5 * x * x + 0.5 * ((x - mu) / sigma) ** 2 + math.log(sigma)
    assert math.log(sup) >= np.max(log_r) - 1e-12
    assert math.log(sup) == pytest.approx(np.max(log_r), abs=1e-6)


# ---------------------------------------------------------------- KL values


def test_kl_examples():
    assert gaussian_kl(0.0, 1.0, "reverse") == 0.0
    assert gaussian_kl(0.0, 1.0, "forward") == 0.0
    assert gaussian_kl(1.0, 2.0, "reverse") == pytest.approx(-math.log(2) + 2.0)
    assert gaussian_kl(1.0, 2.0, "reverse") == pytest.approx(1.3069, abs=1e-4)
    assert gaussian_kl(1.0, 2.0, "forward") == pytest.approx(math.log(2) + 0.25 - 0.5)
    assert gaussian_kl(1.0, 2.0, "forward") == pytest.approx(0.4431, abs=1e-4)
    with pytest.raises(ValueError):
        gaussian_kl(0.0, 1.0, "sideways")


def test_kl_matches_quadrature():
    x = np.linspace(-30, 30, 600_001)
    p = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    q = np.exp(-0.5 * ((x - 1) / 2) ** 2) / (2 * math.sqrt(2 * math.pi))
    assert np.trapezoid(q * np.log(q / p), x) == pytest.approx(gaussian_kl(1.0, 2.0, "reverse"), abs=1e-8)
    assert np.trapezoid(p * np.log(p / q), x) == pytest.approx(gaussian_kl(1.0, 2.0, "forward"), abs=1e-8)


# ---------------------------------------------------------------- KDE proposals


def test_kde_density_examples():
    kde = KdeProposal(np.array([0.3]), 0.1)
    assert kde_density(kde, np.array([0.35])) == pytest.approx(1.0 / 0.2)
    assert kde_density(kde, np.array([0.9])) == 0.0
    kde = KdeProposal(np.array([0.0, 0.4]), 0.5)
    assert kde_density(kde, np.array([0.2])) == pytest.approx(1.0)


def test_ball_volume():
    assert ball_volume(1, 0.5) == pytest.approx(1.0)
    assert ball_volume(2, 1.0) == pytest.approx(math.pi)
    assert ball_volume(3, 2.0) == pytest.approx(4 / 3 * math.pi * 8)


def test_kde_integrates_to_one():
    kde = KdeProposal(np.array([0.1, 0.5, 0.55, 2.0]), 0.3)
    x = np.linspace(-1, 3, 400_001)
    assert np.trapezoid(kde_density(kde, x[:, None]), x) == pytest.approx(1.0, abs=1e-4)


def test_components_empty_outer_region():
    grid = np.linspace(0, 1, 11)
    kde = KdeProposal(np.array([0.5]), 0.6)
    m_in, m_out = kde_bound_components(kde, lambda x: np.ones(len(x)), 0.5, grid)
    assert m_out == 0.0 and m_in == pytest.approx(1.0)


def test_components_equal_for_uniform_single_cover():
    grid = np.linspace(0, 1, 10)
    kde = KdeProposal(grid, 0.01)
    m_in, m_out = kde_bound_components(kde, lambda x: np.full(len(x), 0.1), grid[3], grid)
    assert m_in == m_out


def test_components_match_exhaustive_evaluation(rng):
    grid = np.linspace(0, 1, 30)
    for _ in range(20):
        pi = rng.dirichlet(np.ones(30))
        kde = KdeProposal(np.concatenate([grid, rng.random(3)]), 0.07)
        new = rng.random()

        def target(x, pi=pi):
            return pi[np.rint(np.ravel(x) * 29).astype(int)]

        m_in, m_out = kde_bound_components(kde, target, new, grid)
        inner = [pi[i] / kde.counts(g)[0] for i, g in enumerate(grid) if abs(g - new) <= 0.07]
        outer = [pi[i] / kde.counts(g)[0] for i, g in enumerate(grid) if abs(g - new) > 0.07]
        assert m_in == pytest.approx(max(inner, default=0.0))
        assert m_out == pytest.approx(max(outer, default=0.0))


def test_components_support_error():
    kde = KdeProposal(np.array([0.0]), 0.1)
    with pytest.raises(SupportError):
        kde_bound_components(kde, lambda x: np.ones(len(x)), 0.0, np.array([0.0, 0.5]))


def test_predicate_examples():
    assert not kde_update_improves(1.0, 2.0, 5)
    assert kde_update_improves(3.0, 1.0, 1)
    for n in (1, 10, 10**6):
        assert not kde_update_improves(2.5, 2.5, n)
    with pytest.raises(ValueError):
        kde_update_improves(1.0, 1.0, 0)


def test_predicate_matches_brute_force_on_matching_instance():
    # one ball covers both grid points; the new ball covers only the first: M' = 3 M'', n = 1
    grid = np.array([0.0, 1.0])
    kde = KdeProposal(np.array([0.5]), 0.5)
    pi = np.array([0.75, 0.25])

    def target(x):
        return pi[np.rint(np.ravel(x)).astype(int)]

    m_in, m_out = kde_bound_components(kde, target, 0.0, grid)
    assert m_in / m_out == pytest.approx(3.0)
    improves = kde_doeblin(kde.with_center(0.0), target, grid) <= kde_doeblin(kde, target, grid)
    assert kde_update_improves(m_in, m_out, kde.n) and improves


def test_kde_equivalence_study_agrees():
    from imhflow.studies import kde_equivalence_study

    r = kde_equivalence_study(100, np.random.default_rng(5))
    assert np.array_equal(r["predicate"], r["brute_force"])
    assert 0 < r["brute_force"].sum() < 100
