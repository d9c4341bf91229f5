import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ksjko import KellerSegelJKO
from ksjko.exceptions import ConfigurationError, ParameterError


def profile(n=20):
    x = (np.arange(n) + 0.5) / n
    return 1 + 0.5 * np.cos(np.pi * x)


def test_params_and_clone():
    est = KellerSegelJKO(chi=2.0, tau=0.005, nonlinearity="power:m=2")
    params = est.get_params()
    assert params["chi"] == 2.0 and params["nonlinearity"] == "power:m=2"
    other = clone(est).set_params(t0=0.02)
    assert other.t0 == 0.02 and est.t0 == 0.1


def test_fit_attributes():
    est = KellerSegelJKO(chi=1.0, tau=0.01, t0=0.05).fit(profile())
    assert est.status_ == "completed"
    assert est.states_.shape == (6, 20)
    np.testing.assert_allclose(est.states_.sum(axis=1) / 20, 1.0)
    np.testing.assert_allclose(est.times_, np.arange(6) * 0.01)
    assert np.all(np.diff(est.energies_) <= 1e-12)


def test_predict_at_nodes_and_between():
    est = KellerSegelJKO(chi=1.0, tau=0.01, t0=0.03).fit(profile())
    out = est.predict([0.0, 0.02, 0.025])
    np.testing.assert_array_equal(out[1], est.states_[2])
    assert out.shape == (3, 20)
    assert out[2].sum() / 20 == pytest.approx(1.0)


def test_transform_matches_fit():
    est = KellerSegelJKO(chi=0.0, tau=0.01, t0=0.02)
    terminal = est.fit_transform(profile())
    np.testing.assert_allclose(est.transform(profile()), terminal)
    stack = est.transform(np.stack([profile(), profile()[::-1]]))
    assert stack.shape == (2, 20)
    np.testing.assert_allclose(stack[1], terminal[::-1], atol=1e-10)


def test_two_dimensional_input():
    est = KellerSegelJKO(chi=1.0, tau=0.01, t0=0.01).fit(np.outer(profile(6), profile(6)))
    assert est.states_.shape == (2, 6, 6)


def test_not_fitted():
    with pytest.raises(NotFittedError):
        KellerSegelJKO().predict([0.0])


@pytest.mark.parametrize("X", [np.array([1.0, -1.0, 2.0]), np.zeros(5), np.ones((2, 2, 2)), [1.0, np.nan]])
def test_input_validation(X):
    with pytest.raises((ParameterError, ValueError)):
        KellerSegelJKO().fit(X)


@pytest.mark.parametrize("kwargs", [dict(tau=0.0), dict(chi="a"), dict(lambda_monitor=1.0), dict(extent=(1, 0))])
def test_parameter_validation(kwargs):
    with pytest.raises((ParameterError, ConfigurationError)):
        KellerSegelJKO(**kwargs).fit(profile())
