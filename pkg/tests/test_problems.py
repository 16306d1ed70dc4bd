import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from stochgn.core import operator_norm, DenseJacobian
from stochgn.errors import InvalidParameter
from stochgn.problems import (
    ClassificationDataset,
    ReturnsDataset,
    bootstrap_resample,
    cvar_component,
    estimate_nlse_variances,
    gen_synthetic_classification,
    gen_synthetic_returns,
    make_cvar_problem,
    make_nlse_problem,
    margin_losses,
    nlse_component,
    returns_model,
)


def central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def small_dataset(n=20, p=4, seed=0, bias=False):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, p))
    y = rng.choice([-1.0, 1.0], n)
    b = rng.standard_normal(n) if bias else None
    return ClassificationDataset(sp.csr_matrix(A), y, b)


class TestNLSELosses:
    def test_zero_margin_values(self):
        expected = [1.0, 0.25, math.log(2) - math.log1p(math.exp(-1)), math.log(2)]
        np.testing.assert_allclose(margin_losses(0.0), expected, rtol=1e-15)

    def test_unit_margin_zeroes_fourth_loss(self):
        assert margin_losses(1.0)[3] == 0.0

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-700, 700))
    def test_losses_nonnegative_and_finite(self, m):
        v = margin_losses(m)
        assert np.all(np.isfinite(v)) and np.all(v >= 0)

    @pytest.mark.parametrize("loss_id", [1, 2, 3, 4])
    def test_component_gradient_matches_finite_differences(self, loss_id):
        rng = np.random.default_rng(loss_id)
        for _ in range(20):
            a, x = rng.standard_normal((2, 5))
            sample = (a, rng.standard_normal(), rng.choice([-1.0, 1.0]))
            _, g = nlse_component(loss_id, x, sample)
            fd = central_diff(lambda z: nlse_component(loss_id, z, sample)[0], x)
            assert np.linalg.norm(g - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))

    def test_invalid_loss_id(self):
        with pytest.raises(InvalidParameter):
            nlse_component(5, np.zeros(2), (np.zeros(2), 0.0, 1.0))


class TestNLSEProblem:
    def test_zero_point_values_independent_of_data(self):
        prob = make_nlse_problem(gen_synthetic_classification(30, 6, seed=4))
        np.testing.assert_allclose(prob.full_value(np.zeros(6)), margin_losses(0.0), rtol=1e-15)

    def test_single_sample_matches_component(self):
        data = small_dataset(n=1, bias=True)
        prob = make_nlse_problem(data)
        x = np.array([0.3, -0.1, 0.5, 1.0])
        a = data.A.toarray()[0]
        for k in range(4):
            val, grad = nlse_component(k + 1, x, (a, data.b[0], data.y[0]))
            assert prob.full_value(x)[k] == pytest.approx(val, rel=1e-14)
            np.testing.assert_allclose(prob.full_jacobian(x).todense()[k], grad, rtol=1e-12, atol=1e-15)

    def test_batch_jacobian_is_average_of_components(self):
        data = small_dataset(bias=True)
        prob = make_nlse_problem(data)
        x = np.random.default_rng(1).standard_normal(4)
        idx = np.array([2, 5, 11])
        A = data.A.toarray()
        manual = np.mean([[nlse_component(k + 1, x, (A[i], data.b[i], data.y[i]))[1] for k in range(4)]
                          for i in idx], axis=0)
        np.testing.assert_allclose(prob.batch_jacobian(x, idx).todense(), manual, rtol=1e-12, atol=1e-15)

    def test_defaults(self):
        prob = make_nlse_problem(small_dataset())
        assert prob.outer.kind == "l2" and prob.outer.rho == 1.0 and prob.constants.M_phi == 1.0
        assert make_nlse_problem(small_dataset(), "huber").outer.delta == 1.0
        assert prob.q == 4 and prob.regularizer is None

    def test_empty_dataset_rejected(self):
        empty = ClassificationDataset(sp.csr_matrix((0, 3)), np.zeros(0))
        with pytest.raises(InvalidParameter):
            make_nlse_problem(empty)

    def test_labels_validated(self):
        with pytest.raises(InvalidParameter):
            ClassificationDataset(sp.csr_matrix(np.eye(2)), [1.0, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_certified_constants_hold(self, seed):
        data = small_dataset(seed=seed % 7)
        prob = make_nlse_problem(data)
        rng = np.random.default_rng(seed)
        x, y = rng.standard_normal((2, 4)) * rng.choice([0.1, 1, 5])
        Jx, Jy = prob.full_jacobian(x).todense(), prob.full_jacobian(y).todense()
        dist = np.linalg.norm(x - y)
        c = prob.constants
        assert operator_norm(DenseJacobian(Jx - Jy)) <= c.L_F * dist + 1e-12
        assert np.linalg.norm(prob.full_value(x) - prob.full_value(y)) <= c.M_F * dist + 1e-12

    def test_variance_estimates_match_enumeration(self):
        data = small_dataset(n=12)
        prob = make_nlse_problem(data, estimate_variances=True)
        assert not prob.constants.certified
        x = np.zeros(4)
        sF, sD = estimate_nlse_variances(prob, x)
        F = np.array([prob.sample_value(x, i) for i in range(12)])
        J = np.array([prob.sample_jacobian(x, i).todense() for i in range(12)])
        assert sF == pytest.approx(np.sqrt(((F - F.mean(0)) ** 2).sum(1).mean()), rel=1e-12)
        assert sD == pytest.approx(np.sqrt(((J - J.mean(0)) ** 2).sum((1, 2)).mean()), rel=1e-10)


class TestCVaR:
    def test_value_when_argument_vanishes(self):
        x = np.array([0.5, 0.5, 0.3])
        xi = np.array([-0.3, -0.3])  # xi^T z + tau = 0
        assert cvar_component(x, xi, 0.1, 1e-3)[0] == pytest.approx(0.3, abs=1e-15)

    def test_small_gamma_matches_hinge(self):
        x = np.array([1.0, 0.2])
        xi = np.array([-1.2])  # w = -1
        val = cvar_component(x, xi, 0.1, 1e-8)[0]
        assert val == pytest.approx(0.2 + (abs(-1.0) + 1.0) / 0.2, abs=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(w=st.floats(-10, 10), beta=st.floats(0.01, 1), gamma=st.floats(1e-6, 1))
    def test_smoothing_error_bound(self, w, beta, gamma):
        x = np.array([1.0, 0.0])
        smooth = cvar_component(x, np.array([w]), beta, gamma)[0]
        exact = max(-w, 0.0) / beta
        assert abs(smooth - exact) <= gamma / (2 * beta) * (1 + 1e-9) + 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x, xi = rng.standard_normal(5), rng.standard_normal(4)
            _, g = cvar_component(x, xi, 0.1, 1e-3)
            fd = central_diff(lambda z: cvar_component(z, xi, 0.1, 1e-3)[0], x, h=1e-7)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(fd))

    def test_problem_matches_components(self):
        data = gen_synthetic_returns(40, 5, seed=1)
        prob = make_cvar_problem(data)
        x = prob.initial_point()
        x[-1] = 0.01
        idx = np.array([0, 7, 19])
        comps = [cvar_component(x, data.xi[i], 0.1, 1e-3) for i in idx]
        np.testing.assert_allclose(prob.batch_values(x, idx)[:, 0], [c[0] for c in comps], rtol=1e-13)
        np.testing.assert_allclose(prob.batch_jacobian(x, idx).todense()[0],
                                   np.mean([c[1] for c in comps], axis=0), rtol=1e-12, atol=1e-14)

    def test_defaults(self):
        prob = make_cvar_problem(gen_synthetic_returns(10, 3))
        assert (prob.beta, prob.gamma, prob.outer.rho, prob.outer.kind) == (0.1, 1e-3, 5.0, "hinge")
        g = prob.regularizer
        assert (g.tau_lo, g.tau_hi) == (0.0, 1.0) and prob.q == 1 and prob.p == 4

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 10_000), lam=st.floats(1e-3, 10))
    def test_regularizer_prox_feasible(self, seed, lam):
        prob = make_cvar_problem(gen_synthetic_returns(10, 4, seed=seed % 5))
        v = np.random.default_rng(seed).standard_normal(5) * 3
        assert prob.regularizer.feasible(prob.regularizer.prox(v, lam))

    def test_single_asset_forces_full_weight(self):
        prob = make_cvar_problem(gen_synthetic_returns(10, 1))
        out = prob.regularizer.prox(np.array([-4.0, 0.3]), 1.0)
        assert out[0] == 1.0

    def test_invalid_bounds(self):
        with pytest.raises(InvalidParameter):
            make_cvar_problem(gen_synthetic_returns(10, 2), tau_bounds=(1.0, 0.0))
        with pytest.raises(InvalidParameter):
            make_cvar_problem(gen_synthetic_returns(10, 2), beta=0.0)


class TestGenerators:
    def test_returns_reproducible(self):
        a, b = gen_synthetic_returns(50, 7, seed=3), gen_synthetic_returns(50, 7, seed=3)
        assert a.xi.tobytes() == b.xi.tobytes()
        assert not np.array_equal(a.xi, gen_synthetic_returns(50, 7, seed=4).xi)

    def test_returns_shape_and_mean_vector(self):
        data = gen_synthetic_returns(20, 300, seed=0)
        assert data.xi.shape == (20, 300)
        np.testing.assert_allclose(data.c, data.xi.mean(axis=0))

    def test_scenario_mean_matches_model(self):
        n, p = 20_000, 8
        data = gen_synthetic_returns(n, p, seed=9)
        model = returns_model(p, seed=9)
        se = np.sqrt(np.diag(model.covariance) / n)
        assert np.all(np.abs(data.c - model.mu) <= 3 * se)
        avg_se = math.sqrt(model.covariance.sum() / p**2 / n)
        assert abs(data.c.mean() - model.mu.mean()) <= 3 * avg_se

    def test_hinge_active_on_synthetic_returns(self):
        data = gen_synthetic_returns(2000, 20, seed=0)
        prob = make_cvar_problem(data)
        assert prob.full_value(prob.initial_point())[0] > 0

    def test_classification_generator(self):
        data = gen_synthetic_classification(100, 7, seed=2)
        assert data.A.shape == (100, 7) and set(np.unique(data.y)) == {-1.0, 1.0}
        again = gen_synthetic_classification(100, 7, seed=2)
        assert (data.A != again.A).nnz == 0 and np.array_equal(data.y, again.y)

    def test_generators_reject_empty(self):
        with pytest.raises(InvalidParameter):
            gen_synthetic_returns(0, 3)
        with pytest.raises(InvalidParameter):
            gen_synthetic_classification(3, 0)


class TestBootstrap:
    def test_degenerate_source(self):
        src = ReturnsDataset(np.array([[0.1, -0.2]]), np.array([0.1, -0.2]))
        out = bootstrap_resample(src, 5, seed=0)
        assert np.array_equal(out.xi, np.tile(src.xi, (5, 1)))

    def test_reproducible(self):
        src = small_dataset(n=10)
        a, b = bootstrap_resample(src, 30, seed=1), bootstrap_resample(src, 30, seed=1)
        assert (a.A != b.A).nnz == 0 and np.array_equal(a.y, b.y)

    def test_expected_row_frequency(self):
        n, n_out, seeds = 4, 10, 4000
        src = ReturnsDataset(np.arange(n, dtype=float)[:, None], np.array([1.5]))
        counts = np.zeros(n)
        for s in range(seeds):
            rows = bootstrap_resample(src, n_out, seed=s).xi[:, 0].astype(int)
            counts += np.bincount(rows, minlength=n)
        mean = counts / seeds
        se = math.sqrt(n_out * (1 / n) * (1 - 1 / n) / seeds)
        assert np.all(np.abs(mean - n_out / n) <= 3 * se)

    def test_empty_source_rejected(self):
        with pytest.raises(InvalidParameter):
            bootstrap_resample(ClassificationDataset(sp.csr_matrix((0, 2)), np.zeros(0)), 3)
