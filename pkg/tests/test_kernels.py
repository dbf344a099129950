import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imhflow.exceptions import NormalizationError, SupportError
from imhflow.flows import AffineParams, DiscreteProposal
from imhflow.kernels import (
    ChainState,
    RunningCovariance,
    WalkerFailure,
    doeblin_bound,
    imh_core,
    imh_discrete_kernel,
    imh_step,
    init_state,
    mala_step,
    mh_discrete_kernel,
    mixture_discrete_kernel,
    mixture_kernel_step,
    parallel_walkers_step,
    precond_mala_step,
    rwm_adaptive_step,
    tv_bound_product,
    walker_rng,
    worker_count,
)
from imhflow.targets import (
    Phi4Config,
    bimodal_target,
    discrete_target,
    gaussian_1d_target,
    gaussian_target,
    phi4_target,
)

LOG = np.log


def _std_normal(dim=1):
    return gaussian_target(np.zeros(dim), np.eye(dim))


# ---------------------------------------------------------------- IMH


def test_imh_acceptance_hand_value():
    prob, _ = imh_core(LOG([0.7]), LOG([0.5]), LOG([0.3]), LOG([0.5]), np.array([0.0]))
    assert prob[0] == pytest.approx(3.0 / 7.0)


def test_imh_accepts_everything_when_proposal_is_target(rng):
    target = discrete_target([0.25, 0.75])
    prop = DiscreteProposal(np.array([0.25, 0.75]))
    state = init_state(np.array([0.0]), target, prop)
    for _ in range(50):
        out = imh_step(state, target, prop, rng)
        assert out.accept_prob == pytest.approx(1.0)
        state = out.state


def test_imh_step_deterministic():
    target, prop = bimodal_target(), AffineParams(np.zeros(2), np.ones(2))
    state = init_state(np.array([-2.0, 2.0]), target, prop)
    a = imh_step(state, target, prop, np.random.default_rng(4))
    b = imh_step(state, target, prop, np.random.default_rng(4))
    np.testing.assert_array_equal(a.proposal, b.proposal)
    assert (a.accept_prob, a.accepted) == (b.accept_prob, b.accepted)


def test_imh_support_violation():
    with pytest.raises(SupportError):
        imh_core(LOG([0.5]), np.array([-np.inf]), LOG([0.5]), LOG([0.5]), np.array([0.5]))


def test_nan_ratio_rejects():
    prob, acc = imh_core(np.array([0.0]), np.array([0.0]), np.array([np.nan]), np.array([0.0]), np.array([0.0]))
    assert prob[0] == 0.0 and not acc[0]


def test_imh_discrete_kernel_properties():
    pi = np.array([0.2, 0.5, 0.3])
    np.testing.assert_allclose(imh_discrete_kernel(pi, pi).matrix, np.tile(pi, (3, 1)))
    k = imh_discrete_kernel(pi, np.array([0.5, 0.25, 0.25])).matrix
    np.testing.assert_allclose(pi @ k, pi, atol=1e-15)
    with pytest.raises(SupportError):
        imh_discrete_kernel(pi, np.array([0.5, 0.5, 0.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 7), st.integers(0, 2**31 - 1))
def test_imh_kernel_reversible(k, seed):
    rng = np.random.default_rng(seed)
    pi, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    m = imh_discrete_kernel(pi, q).matrix
    flux = pi[:, None] * m
    np.testing.assert_allclose(flux, flux.T, atol=1e-14)
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-14)


def test_mixture_discrete_kernel_is_convex_combination():
    pi = np.array([0.4, 0.6])
    k1 = imh_discrete_kernel(pi, np.array([0.5, 0.5]))
    k2 = mh_discrete_kernel(pi, np.array([[0.5, 0.5], [0.5, 0.5]]))
    np.testing.assert_allclose(mixture_discrete_kernel(k1, k2, 0.3).matrix, 0.3 * k1.matrix + 0.7 * k2.matrix)
    with pytest.raises(ValueError):
        mixture_discrete_kernel(k1, k2, 1.5)


# ---------------------------------------------------------------- local kernels


def test_rwm_zero_move_always_accepted():
    target = _std_normal(2)
    state = init_state(np.array([0.3, -0.2]), target)
    from imhflow.kernels import rwm_core

    _, _, prob, _ = rwm_core(state.x[None], np.array([state.log_target]), target, np.eye(2),
                             np.zeros((1, 2)), np.array([0.5]))
    assert prob[0] == 1.0


def test_rwm_acceptance_range(rng):
    target = _std_normal(1)
    state, cov, acc = init_state(np.zeros(1), target), RunningCovariance(1), []
    for _ in range(5000):
        out = rwm_adaptive_step(state, target, cov, rng)
        state = out.state
        cov = cov.update(state.x)
        acc.append(out.accepted)
    assert 0.2 <= np.mean(acc) <= 0.6


def test_running_covariance_matches_numpy(rng):
    x = rng.standard_normal((200, 3)) @ np.array([[1, 0, 0], [0.5, 1, 0], [0, 0.2, 2.0]])
    cov = RunningCovariance(3)
    for chunk in np.array_split(x, 7):
        cov = cov.update(chunk)
    np.testing.assert_allclose(cov.covariance(), np.cov(x.T), atol=1e-12)


def test_mala_small_step_always_accepts(rng):
    target = _std_normal(1)
    state, acc = init_state(np.array([0.5]), target), []
    for _ in range(2000):
        out = mala_step(state, target, 1e-8, rng)
        acc.append(out.accept_prob)
        state = out.state
    assert np.mean(acc) > 0.999


def test_mala_needs_gradient(rng):
    target = discrete_target([0.5, 0.5])
    with pytest.raises(ValueError):
        mala_step(init_state(np.array([0.0]), target), target, 0.1, rng)


def test_mala_preserves_gaussian(rng):
    target = gaussian_1d_target(1.0, 0.5)
    state, xs = init_state(np.array([1.0]), target), []
    for _ in range(20000):
        state = mala_step(state, target, 0.5, rng).state
        xs.append(state.x[0])
    xs = np.array(xs[1000:])
    assert abs(xs.mean() - 1.0) < 0.05 and abs(xs.var() - 0.5) < 0.05


def test_precond_mala_reduces_to_mala_for_identity_hessian():
    target = _std_normal(3)
    state = init_state(np.array([0.2, -0.4, 1.0]), target)
    for seed in range(5):
        a = mala_step(state, target, 0.3, np.random.default_rng(seed))
        b = precond_mala_step(state, target, 0.3, np.random.default_rng(seed))
        np.testing.assert_allclose(a.proposal, b.proposal, atol=1e-14)
        assert a.accept_prob == pytest.approx(b.accept_prob, abs=1e-12)


def test_precond_mala_handles_indefinite_hessian(rng):
    target = phi4_target(Phi4Config(n_sites=6))
    state = init_state(np.zeros(6), target)
    out = precond_mala_step(state, target, 1e-3, rng)
    assert np.all(np.isfinite(out.proposal))


# ---------------------------------------------------------------- mixture kernel


def test_mixture_alpha_one_is_imh():
    target, prop = _std_normal(2), AffineParams(np.zeros(2), np.zeros(2))
    state = init_state(np.array([0.1, 0.2]), target, prop)
    a = mixture_kernel_step(state, target, prop, 1.0, np.random.default_rng(1))
    b = imh_step(state, target, prop, np.random.default_rng(1))
    np.testing.assert_array_equal(a.proposal, b.proposal)
    assert a.kernel == "imh" and a.accepted == b.accepted


def test_mixture_alpha_zero_is_mala():
    target, prop = _std_normal(2), AffineParams(np.zeros(2), np.zeros(2))
    state = init_state(np.array([0.1, 0.2]), target, prop)
    a = mixture_kernel_step(state, target, prop, 0.0, np.random.default_rng(1), step_size=0.2)
    b = mala_step(state, target, 0.2, np.random.default_rng(1))
    np.testing.assert_array_equal(a.proposal, b.proposal)
    assert a.kernel == "mala" and a.accepted == b.accepted


def test_mixture_local_move_refreshes_proposal_density(rng):
    target, prop = _std_normal(1), AffineParams(np.ones(1), np.zeros(1))
    state = init_state(np.array([0.0]), target, prop)
    for _ in range(30):
        state = mixture_kernel_step(state, target, prop, 0.5, rng, step_size=0.5).state
        assert state.log_proposal == pytest.approx(float(prop.log_prob(state.x)))


# ---------------------------------------------------------------- walkers


def _imh_fn(target, prop):
    return lambda s, r: imh_step(s, target, prop, r)


def test_single_walker_reduces_to_kernel():
    target, prop = _std_normal(1), AffineParams(np.zeros(1), np.zeros(1))
    s = init_state(np.zeros(1), target, prop)
    out = parallel_walkers_step([s], _imh_fn(target, prop), seed=3, step_index=5)[0]
    ref = imh_step(s, target, prop, walker_rng(3, 0, 5))
    np.testing.assert_array_equal(out.proposal, ref.proposal)


def test_walker_permutation_invariance(rng):
    target, prop = _std_normal(2), AffineParams(np.zeros(2), np.zeros(2))
    states = [init_state(rng.standard_normal(2), target, prop) for _ in range(6)]
    ids = list(range(6))
    perm = rng.permutation(6)
    a = parallel_walkers_step(states, _imh_fn(target, prop), 9, 2, ids)
    b = parallel_walkers_step([states[i] for i in perm], _imh_fn(target, prop), 9, 2, [ids[i] for i in perm])
    for j, i in enumerate(perm):
        np.testing.assert_array_equal(a[i].proposal, b[j].proposal)
        assert a[i].accepted == b[j].accepted


def test_thread_pool_matches_serial(rng, monkeypatch):
    target, prop = _std_normal(2), AffineParams(np.zeros(2), np.zeros(2))
    states = [init_state(rng.standard_normal(2), target, prop) for _ in range(5)]
    serial = parallel_walkers_step(states, _imh_fn(target, prop), 1, 1, workers=1)
    monkeypatch.setenv("IMHFLOW_WORKERS", "3")
    assert worker_count() == 3
    pooled = parallel_walkers_step(states, _imh_fn(target, prop), 1, 1)
    for a, b in zip(serial, pooled):
        np.testing.assert_array_equal(a.proposal, b.proposal)


def test_failing_walker_is_reported():
    def fn(state, rng):
        if state.step == 1:
            raise RuntimeError("boom")
        return state

    states = [ChainState(np.zeros(1), 0.0), ChainState(np.zeros(1), 0.0, step=1)]
    out = parallel_walkers_step(states, fn, 0, 0, walker_ids=[4, 7])
    assert isinstance(out[1], WalkerFailure) and out[1].walker == 7
    assert out[0] is states[0]


def test_hundred_walkers_reach_two_state_target():
    from imhflow.runner import from_dict, preset_config
    from imhflow.runner.engine import run_chain

    cfg = preset_config("two-state-exact")
    cfg.update(steps=10_000, out="unused")
    cfg["walkers"]["count"] = 100
    rec = run_chain(from_dict(cfg))
    x = np.concatenate([np.ravel(v) for s, v in zip(rec.trace_steps, rec.trace_x) if s >= 100])
    assert abs(np.mean(x == 1.0) - 0.75) < 0.01


# ---------------------------------------------------------------- Doeblin constants


def test_doeblin_examples():
    target = discrete_target([0.7, 0.3])
    probes = np.array([[0.0], [1.0]])
    m, arg = doeblin_bound(target, DiscreteProposal(np.array([0.7, 0.3])), probes)
    assert m == pytest.approx(1.0)
    m, arg = doeblin_bound(target, DiscreteProposal(np.array([0.5, 0.5])), probes)
    assert m == pytest.approx(1.4) and arg[0] == 0.0


def test_doeblin_gaussian_grid():
    grid = np.linspace(-10, 10, 20001)[:, None]
    m, arg = doeblin_bound(_std_normal(1), AffineParams(np.zeros(1), np.array([math.log(2.0)])), grid)
    assert m == pytest.approx(2.0, rel=1e-12) and arg[0] == pytest.approx(0.0, abs=1e-12)


def test_doeblin_refuses_unnormalized():
    with pytest.raises(NormalizationError):
        doeblin_bound(phi4_target(Phi4Config(n_sites=4)), AffineParams(np.zeros(4), np.zeros(4)), np.zeros((1, 4)))


def test_tv_bound_product_examples():
    assert tv_bound_product([1.0]) == 0.0
    assert tv_bound_product([math.inf]) == 2.0
    assert tv_bound_product([2.0, 2.0]) == pytest.approx(0.5)
    assert tv_bound_product([]) == 2.0
    with pytest.raises(ValueError):
        tv_bound_product([0.5])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 100.0), min_size=1, max_size=20))
def test_tv_bound_product_non_increasing(ms):
    bounds = [tv_bound_product(ms[: i + 1]) for i in range(len(ms))]
    assert all(b2 <= b1 for b1, b2 in zip([2.0] + bounds, bounds))
    assert all(0.0 <= b <= 2.0 for b in bounds)
