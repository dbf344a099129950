import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from imhflow.diagnostics import (
    DiagnosticsReport,
    ess,
    exact_tv_discrete,
    geometric_mixing_bound,
    inhomogeneous_tv_curve,
    kernel_tv_distance,
    ks_noise_floor,
    ks_two_sample,
    log_ratio_sup,
    mixing_time_discrete,
    mode_weights,
    nearest_mean_classifier,
    normal_cdf_ks,
    random_projection_ks,
    sign_of_mean_classifier,
    stationarity_probe,
    symmetrize,
    tv_from_stationary,
)
from imhflow.exceptions import ContainmentViolation, NormalizationError
from imhflow.flows import DiscreteProposal
from imhflow.kernels import DiscreteKernel, imh_discrete_kernel
from imhflow.targets import Phi4Config, discrete_target, gaussian_1d_target, phi4_target


def _random_kernel(k, rng):
    pi, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    return imh_discrete_kernel(pi, q)


# ---------------------------------------------------------------- total variation


def test_tv_examples():
    assert exact_tv_discrete([0.3, 0.7], [0.3, 0.7]) == 0.0
    assert exact_tv_discrete([1, 0], [0, 1]) == 2.0
    assert exact_tv_discrete([0.7, 0.3], [0.5, 0.5]) == pytest.approx(0.4)


def test_kernel_distance_metric_properties(rng):
    for _ in range(50):
        pi = rng.dirichlet(np.ones(4))
        ks = [imh_discrete_kernel(pi, rng.dirichlet(np.ones(4))) for _ in range(3)]
        assert kernel_tv_distance(ks[0], ks[0]) == 0.0
        assert kernel_tv_distance(ks[0], ks[1]) == kernel_tv_distance(ks[1], ks[0])
        assert kernel_tv_distance(ks[0], ks[2]) <= (
            kernel_tv_distance(ks[0], ks[1]) + kernel_tv_distance(ks[1], ks[2]) + 1e-12)


def test_tv_curve_against_matrix_powers(rng):
    k = _random_kernel(4, rng)
    curve = tv_from_stationary(k, 10)
    for n in (1, 5, 10):
        p = np.linalg.matrix_power(k.matrix, n)
        assert curve[n - 1] == pytest.approx(np.max(np.abs(p - k.target).sum(axis=1)), abs=1e-14)


def test_inhomogeneous_curve_is_product(rng):
    pi = rng.dirichlet(np.ones(3))
    ks = [imh_discrete_kernel(pi, rng.dirichlet(np.ones(3))) for _ in range(4)]
    prod = ks[0].matrix @ ks[1].matrix @ ks[2].matrix
    assert inhomogeneous_tv_curve(ks)[2] == pytest.approx(np.max(np.abs(prod - pi).sum(axis=1)), abs=1e-14)


# ---------------------------------------------------------------- mixing times


def test_mixing_time_one_step_coupling():
    pi = np.array([0.2, 0.8])
    assert mixing_time_discrete(DiscreteKernel(np.tile(pi, (2, 1)), pi), 1e-6) == 1


def test_mixing_time_identity_never_mixes():
    with pytest.raises(ContainmentViolation):
        mixing_time_discrete(DiscreteKernel(np.eye(2), np.array([0.5, 0.5])), 0.1, cap=200)


def test_mixing_time_matches_brute_force():
    k = imh_discrete_kernel([0.7, 0.3], [0.5, 0.5])
    n = 1
    while np.max(np.abs(np.linalg.matrix_power(k.matrix, n) - k.target).sum(axis=1)) >= 0.01:
        n += 1
    assert mixing_time_discrete(k, 0.01) == n


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(1e-4, 1.0), st.integers(0, 2**31 - 1))
def test_mixing_time_within_geometric_bound(k, eps, seed):
    rng = np.random.default_rng(seed)
    pi, q = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    m = float(np.max(pi / q))
    bound = geometric_mixing_bound(max(m, 1.0), eps)
    assert mixing_time_discrete(imh_discrete_kernel(pi, q), eps, cap=bound + 1) <= bound


# ---------------------------------------------------------------- log-ratio


def test_log_ratio_examples():
    t = discrete_target([0.7, 0.3])
    probes = np.array([[0.0], [1.0]])
    assert log_ratio_sup(t, DiscreteProposal(np.array([0.7, 0.3])), probes) == pytest.approx(0.0, abs=1e-15)
    assert log_ratio_sup(t, DiscreteProposal(np.array([0.5, 0.5])), probes) == pytest.approx(math.log(1.4))
    with pytest.raises(NormalizationError):
        log_ratio_sup(phi4_target(Phi4Config(n_sites=3)), DiscreteProposal(np.array([1.0])), np.zeros((1, 3)))


# ---------------------------------------------------------------- KS


def test_ks_examples():
    a = np.array([1.0, 2.0, 3.0])
    assert ks_two_sample(a, a) == 0.0
    assert ks_two_sample(a, a + 10) == 1.0
    assert ks_two_sample(a, [1.5, 2.5, 3.5]) == pytest.approx(1.0 / 3.0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # scipy p-value for tiny samples
@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=40), st.lists(st.floats(-5, 5), min_size=1, max_size=40))
def test_ks_matches_scipy(a, b):
    assert ks_two_sample(a, b) == pytest.approx(stats.ks_2samp(a, b, method="asymp").statistic, abs=1e-12)


def test_one_sample_ks_matches_scipy(rng):
    x = rng.standard_normal(500) * 2 + 1
    assert normal_cdf_ks(x, 1.0, 2.0) == pytest.approx(stats.kstest(x, "norm", args=(1.0, 2.0)).statistic)


def test_projection_ks_reductions(rng):
    x = rng.standard_normal((200, 3))
    assert random_projection_ks(x, x, 10, rng) == [0.0] * 10
    a, b = rng.standard_normal((100, 1)), rng.standard_normal((120, 1)) + 0.3
    vals = random_projection_ks(a, b, 8, rng)
    assert np.allclose(vals, ks_two_sample(a, b))


def test_projection_ks_grows_with_shift():
    rng = np.random.default_rng(0)
    base = rng.standard_normal((10_000, 2))
    medians = []
    for shift in (0.0, 1.0, 3.0):
        other = rng.standard_normal((10_000, 2)) + [shift, 0.0]
        medians.append(np.median(random_projection_ks(base, other, 50, np.random.default_rng(1))))
    assert medians[0] < medians[1] < medians[2]


def test_projection_prefix_property(rng):
    a, b = rng.standard_normal((50, 4)), rng.standard_normal((60, 4))
    short = random_projection_ks(a, b, 5, np.random.default_rng(3))
    long = random_projection_ks(a, b, 12, np.random.default_rng(3))
    assert long[:5] == short


def test_noise_floor_is_mean_of_null_statistic():
    rng = np.random.default_rng(0)
    vals = [ks_two_sample(rng.random(2000), rng.random(2000)) for _ in range(400)]
    assert np.mean(vals) == pytest.approx(ks_noise_floor(2000, 2000), rel=0.05)


# ---------------------------------------------------------------- ESS


def test_ess_iid():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert 0.9 <= ess(x) / x.size <= 1.1


def test_ess_ar1():
    rng = np.random.default_rng(1)
    n, rho = 100_000, 0.5
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = rho * x[i - 1] + math.sqrt(1 - rho * rho) * e[i]
    assert ess(x) / n == pytest.approx(1.0 / 3.0, abs=0.05)


def test_ess_constant_and_errors():
    assert ess(np.ones(100)) == 1.0
    with pytest.raises(ValueError):
        ess(np.ones(3))


# ---------------------------------------------------------------- modes


def test_mode_weights_examples():
    cls = nearest_mean_classifier(np.array([[-2.0, 2.0], [2.0, -2.0]]))
    np.testing.assert_array_equal(mode_weights(np.tile([-2.0, 2.0], (5, 1)), cls, 2), [1.0, 0.0])
    alt = np.array([[-2.0, 2.0], [2.0, -2.0]] * 10)
    np.testing.assert_array_equal(mode_weights(alt, cls, 2), [0.5, 0.5])


def test_symmetrized_ensemble_is_balanced(rng):
    x = symmetrize(rng.standard_normal((101, 8)) + 1.0)
    np.testing.assert_array_equal(mode_weights(x, sign_of_mean_classifier, 2), [0.5, 0.5])


def test_sign_of_mean_labels():
    np.testing.assert_array_equal(sign_of_mean_classifier(np.array([[1.0, 1.0], [-1.0, -1.0]])), [0, 1])


# ---------------------------------------------------------------- stationarity probe


def test_probe_without_adaptation_stays_at_noise_floor():
    r = stationarity_probe("none", gaussian_1d_target(1.0, 0.5), 100, 20_000, np.random.default_rng(0),
                           checkpoints=[1, 10, 100])
    assert max(r.ks) <= 3.0 * r.noise_floor
    assert not r.low_power


def test_probe_single_replica_flagged():
    r = stationarity_probe("mle", gaussian_1d_target(1.0, 0.5), 5, 1, np.random.default_rng(0))
    assert r.low_power and len(r.ks) == len(r.checkpoints)


def test_probe_mle_departs_from_stationarity():
    r = stationarity_probe("mle", gaussian_1d_target(1.0, 0.5), 10, 20_000, np.random.default_rng(0),
                           checkpoints=[10])
    assert r.ks[0] > 3.0 * r.noise_floor


def test_probe_records_states():
    r = stationarity_probe("none", gaussian_1d_target(1.0, 0.5), 3, 50, np.random.default_rng(0),
                           checkpoints=[1, 3], record=4)
    assert r.recorded.shape == (2, 4)


# ---------------------------------------------------------------- report


def test_report_round_trip_and_validation():
    rep = DiagnosticsReport(acceptance=[0.5], ks=[0.1], mode_weights=[0.4, 0.6], extra={"a": np.float64(1.0)})
    back = DiagnosticsReport.from_dict(rep.to_dict())
    assert back.to_json() == rep.to_json()
    with pytest.raises(ValueError):
        DiagnosticsReport(ks=[1.5]).validate()
    with pytest.raises(ValueError):
        DiagnosticsReport(mode_weights=[0.5, 0.6]).validate()
