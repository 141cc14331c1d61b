import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from igaest import IgaPoissonEstimator
from igaest.cases import get_case


@pytest.fixture(scope="module")
def fitted():
    return IgaPoissonEstimator(steps=2, M=2, minorant=False).fit("ex1")


def test_params_round_trip():
    est = IgaPoissonEstimator(q=4, marking="bulk")
    params = est.get_params()
    assert params["q"] == 4 and params["marking"] == "bulk"
    copy = clone(est)
    assert copy.get_params() == params
    copy.set_params(theta=0.2)
    assert copy.theta == 0.2 and est.theta == 0.4


def test_fit_attributes(fitted):
    assert len(fitted.report_) == 3
    assert fitted.majorant_ >= fitted.error_
    assert fitted.n_features_in_ == 2
    assert not fitted.failed_
    assert fitted.score() == -fitted.majorant_


def test_predict_close_to_exact(fitted, rng):
    X = rng.random((20, 2))
    u = get_case("ex1").u(X)
    assert np.max(np.abs(fitted.predict(X) - u)) < 1e-3


def test_predict_validation(fitted):
    with pytest.raises(ValueError):
        fitted.predict([[0.5, 1.5]])
    with pytest.raises(ValueError):
        fitted.predict([[0.5, 0.5, 0.5]])


def test_not_fitted():
    with pytest.raises(NotFittedError):
        IgaPoissonEstimator().predict([[0.5, 0.5]])


def test_fit_with_case_object():
    est = IgaPoissonEstimator(steps=0, minorant=False).fit(get_case("ex2"))
    assert est.case_.name == "ex2"


def test_invalid_params_raise_on_fit():
    with pytest.raises(ValueError):
        IgaPoissonEstimator(M=3).fit("ex1")
