import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from imhflow.estimators import AdaptiveIMHSampler


def _small(**kw):
    params = dict(target="gaussian-1d", target_params={"mean": 1.0, "variance": 0.5}, proposal="affine",
                  rule="pseudo-likelihood", eps0=0.05, every=1, batch=64, n_steps=300, n_walkers=2,
                  random_state=0)
    params.update(kw)
    return AdaptiveIMHSampler(**params)


def test_fit_shapes_and_attributes():
    est = _small().fit()
    assert est.samples_.shape == (301, 2, 1)
    assert est.log_target_.shape == (301, 2)
    assert 0.0 < est.acceptance_rate_ <= 1.0
    assert est.n_features_in_ == 1


def test_fit_is_deterministic_and_clone_works():
    a = _small().fit()
    b = clone(_small()).fit()
    np.testing.assert_array_equal(a.samples_, b.samples_)
    assert clone(a).get_params() == a.get_params()


def test_initial_points_from_X():
    est = _small(n_steps=5).fit(np.array([[3.0], [4.0], [5.0]]))
    np.testing.assert_array_equal(est.samples_[0, :, 0], [3.0, 4.0, 5.0])


def test_proposal_moves_towards_target():
    est = _small(n_steps=2000).fit()
    draws = est.sample(20_000, random_state=1)
    assert abs(draws.mean() - 1.0) < 0.15
    assert est.score(np.array([[1.0]])) > est.score(np.array([[5.0]]))
    assert est.score_samples(np.zeros((4, 1))).shape == (4,)


def test_unfitted_sampler():
    with pytest.raises(NotFittedError):
        _small().sample(3)
