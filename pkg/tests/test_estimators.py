import numpy as np
import pytest

from helpers import balanced_nested, simulate_dense
from vctest.bootstrap import bootstrap_test
from vctest.estimators import VarianceComponents, VarianceContrastTest
from vctest.model import ContrastSpec
from vctest.optimizer import fit_unconstrained


@pytest.fixture()
def case():
    d = balanced_nested(5, 3, 2)
    y = simulate_dense(np.random.default_rng(0), d, [1.0, 0.4])
    return d, y


class TestVarianceComponents:
    def test_fit_sets_attributes(self, case):
        d, y = case
        est = VarianceComponents().fit(d, y)
        ref = fit_unconstrained(d, y)
        assert np.allclose(est.tau_, ref.tau_hat)
        assert est.converged_ and est.status_ == "converged"
        assert est.objective_ == ref.objective
        assert est.n_iter_ == ref.iterations
        assert est.hessian_eigenvalues_.shape == (2,)

    def test_get_set_params(self):
        est = VarianceComponents(kappa=1e-2)
        params = est.get_params()
        assert params["kappa"] == 1e-2 and "grad_tol" in params
        est.set_params(max_iter=7)
        assert est.max_iter == 7
        with pytest.raises(ValueError, match="invalid parameter"):
            est.set_params(bogus=1)

    def test_clone_compatible(self, case):
        # sklearn-style: constructing from get_params reproduces behavior
        d, y = case
        est = VarianceComponents(grad_tol=1e-8)
        clone = VarianceComponents(**est.get_params())
        assert np.allclose(clone.fit(d, y).tau_, est.fit(d, y).tau_)

    def test_input_validation(self, case):
        d, y = case
        with pytest.raises(TypeError):
            VarianceComponents().fit(np.eye(3), y)
        with pytest.raises(ValueError):
            VarianceComponents().fit(d, y[:-1])


class TestVarianceContrastTest:
    def test_matches_functional_api(self, case):
        d, y = case
        est = VarianceContrastTest(
            contrast=[[1.0, -1.0]], alternative=("greater",), n_boot=40, seed=5
        ).fit(d, y)
        ref = bootstrap_test(
            d, y,
            ContrastSpec(a=np.array([[1.0, -1.0]]), alternative=("greater",)),
            b=40, seed=5,
        )
        assert est.p_value_ == ref.p_two
        assert est.p_value_one_sided_ == ref.p_one
        assert est.statistic_ == ref.lr_obs
        assert np.allclose(est.tau_null_, ref.tau_null)

    def test_requires_contrast(self, case):
        d, y = case
        with pytest.raises(ValueError, match="contrast"):
            VarianceContrastTest().fit(d, y)
