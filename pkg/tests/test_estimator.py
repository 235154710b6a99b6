import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from hilbert_tikhonov.estimator import (
    IllConditionedError,
    Sample,
    lambda_apriori,
    objective,
    parameter_condition,
    solve_linearized,
    theta_function,
    tikhonov_solve,
)
from hilbert_tikhonov.harness import DEFAULT_M_GRID, make_truth
from hilbert_tikhonov.operators import ForwardOp
from hilbert_tikhonov.rkhs import DesignPoints, KernelView, effective_dimension, kappa_sq
from hilbert_tikhonov.testbed import TestbedSpec


def make_sample(op, f, m, rng, sigma=0.0):
    dp = DesignPoints(op.spec, rng.uniform(size=m))
    y = dp.phi @ (np.sqrt(op.spec.mu) * op.apply(f)) + sigma * rng.normal(size=m)
    return Sample(dp, y)


def closed_form(op, sample, f_bar, lam, penalty_a=None):
    """Stacked least squares for the linear (c = 0) functional."""
    a = op.spec.a if penalty_a is None else penalty_a
    B = sample.dp.phi * (np.sqrt(op.spec.mu) * op.d) / math.sqrt(sample.m)
    Lw = math.sqrt(lam) * op.spec.index**a
    A = np.vstack([B, np.diag(Lw)])
    rhs = np.concatenate([sample.y / math.sqrt(sample.m), Lw * f_bar])
    return np.linalg.lstsq(A, rhs, rcond=None)[0]


class TestSample:
    def test_moment(self):
        spec = TestbedSpec(n=8)
        dp = DesignPoints(spec, [0.1, 0.4, 0.9])
        y = np.array([1.0, -2.0, 0.5])
        np.testing.assert_allclose(Sample(dp, y).moment, dp.phi.T @ y / 3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            Sample(DesignPoints(TestbedSpec(n=8), [0.1, 0.2]), np.zeros(3))


class TestObjective:
    op = ForwardOp(TestbedSpec(n=16), c=0.1)

    def test_vanishes_at_truth(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=16)
        s = make_sample(self.op, f, 30, rng)
        assert objective(self.op, s, f, f, 0.3) == pytest.approx(0.0, abs=1e-25)

    def test_only_misfit_when_at_prior(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=16)
        s = make_sample(self.op, f, 30, rng, sigma=0.1)
        vals = [objective(self.op, s, f, f, lam) for lam in (1e-3, 1e8)]
        assert vals[0] == vals[1] > 0

    def test_naive_summation(self):
        rng = np.random.default_rng(2)
        f, f_bar = rng.normal(size=(2, 16))
        s = make_sample(self.op, rng.normal(size=16), 25, rng, sigma=0.2)
        g = np.sqrt(self.op.spec.mu) * self.op.apply(f)
        misfit = sum((sum(g[j] * s.dp.phi[i, j] for j in range(16)) - s.y[i]) ** 2 for i in range(25)) / 25
        pen = sum(((j + 1) * (f[j] - f_bar[j])) ** 2 for j in range(16))
        assert objective(self.op, s, f, f_bar, 0.05) == pytest.approx(misfit + 0.05 * pen, rel=1e-12)

    def test_convex_quadratic_when_linear(self):
        op = ForwardOp(TestbedSpec(n=10), c=0.0)
        rng = np.random.default_rng(3)
        s = make_sample(op, rng.normal(size=10), 40, rng, sigma=0.1)
        f0, f1 = rng.normal(size=(2, 10))
        F = lambda t: objective(op, s, f0 + t * f1, np.zeros(10), 0.1)  # noqa: E731
        # second differences of a quadratic are constant and positive
        d2 = [F(t + 1) - 2 * F(t) + F(t - 1) for t in (-2.0, 0.0, 3.0)]
        assert min(d2) > 0
        np.testing.assert_allclose(d2, d2[0], rtol=1e-9)

    def test_rejects_nonpositive_lambda(self):
        rng = np.random.default_rng(4)
        s = make_sample(self.op, np.zeros(16), 5, rng)
        with pytest.raises(ValueError):
            objective(self.op, s, np.zeros(16), np.zeros(16), 0.0)


class TestLinearizedStep:
    def test_linear_case_is_global_minimizer(self):
        op = ForwardOp(TestbedSpec(n=12), c=0.0)
        rng = np.random.default_rng(0)
        s = make_sample(op, rng.normal(size=12), 50, rng, sigma=0.1)
        f_bar = rng.normal(size=12)
        got = solve_linearized(op, s, rng.normal(size=12), f_bar, 0.01)
        np.testing.assert_allclose(got, closed_form(op, s, f_bar, 0.01), rtol=1e-10, atol=1e-12)

    def test_huge_lambda_returns_prior(self):
        op = ForwardOp(TestbedSpec(n=12), c=0.1)
        rng = np.random.default_rng(1)
        s = make_sample(op, rng.normal(size=12), 50, rng)
        f_bar = rng.normal(size=12)
        got = solve_linearized(op, s, np.zeros(12), f_bar, 1e8)
        assert np.linalg.norm(got - f_bar) <= 1e-4

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_dense_minimization(self, seed):
        # n = 8, m = 40: minimize the linearized functional with a generic optimizer
        op = ForwardOp(TestbedSpec(n=8), c=0.2)
        rng = np.random.default_rng(seed)
        s = make_sample(op, rng.normal(size=8), 40, rng, sigma=0.1)
        f_k, f_bar = rng.normal(size=(2, 8))
        lam = 0.05
        J = s.dp.phi @ op.sampled_jacobian_core(f_k)
        r0 = s.dp.phi @ (np.sqrt(op.spec.mu) * op.apply(f_k)) - s.y
        ell = op.spec.index

        def F(f):
            r = r0 + J @ (f - f_k)
            return r @ r / 40 + lam * np.sum((ell * (f - f_bar)) ** 2)

        def grad(f):
            r = r0 + J @ (f - f_k)
            return 2 * J.T @ r / 40 + 2 * lam * ell**2 * (f - f_bar)

        ref = optimize.minimize(F, f_k, jac=grad, method="BFGS", options={"gtol": 1e-13, "maxiter": 10_000}).x
        np.testing.assert_allclose(solve_linearized(op, s, f_k, f_bar, lam), ref, atol=1e-8)

    def test_ill_conditioned_raises(self):
        spec = TestbedSpec(n=30, mu_law={"kind": "polynomial", "mu0": 1.0, "b": 0.05})
        op = ForwardOp(spec, c=0.0, p=6.0)
        rng = np.random.default_rng(5)
        s = make_sample(op, np.zeros(30), 3, rng)
        with pytest.raises(IllConditionedError) as info:
            solve_linearized(op, s, np.zeros(30), np.zeros(30), 1e-30, penalty_a=0.0)
        assert info.value.condition > 1e14


class TestSolve:
    @pytest.mark.parametrize("seed", range(10))
    def test_linear_converges_in_one_iteration(self, seed):
        op = ForwardOp(TestbedSpec(n=32), c=0.0)
        rng = np.random.default_rng(seed)
        s = make_sample(op, rng.normal(size=32) / np.arange(1, 33), 200, rng, sigma=0.1)
        res = tikhonov_solve(op, s, np.zeros(32), 1e-3, restarts=0)
        ref = closed_form(op, s, np.zeros(32), 1e-3)
        assert res.converged and res.iterations == 1
        assert np.linalg.norm(res.f_hat - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_noiseless_recovery(self):
        spec = TestbedSpec(n=30)
        op = ForwardOp(spec, c=0.0)
        truth = make_truth(spec, 2.0)
        s = make_sample(op, truth, 2000, np.random.default_rng(0))
        res = tikhonov_solve(op, s, np.zeros(30), 1e-10, restarts=0)
        assert np.linalg.norm(res.f_hat - truth) < 1e-4

    def test_objective_trace_non_increasing(self):
        spec = TestbedSpec(n=40)
        op = ForwardOp(spec, c=0.5)
        rng = np.random.default_rng(1)
        s = make_sample(op, make_truth(spec, 2.0), 300, rng, sigma=0.1)
        res = tikhonov_solve(op, s, np.zeros(40), 0.01, restarts=2, rng=rng)
        assert np.all(np.diff(res.objective_trace) <= 0)
        assert res.objective == min(res.restart_objectives)

    def test_restarts_agree_for_mild_nonlinearity(self):
        spec = TestbedSpec(n=40)
        op = ForwardOp(spec, c=0.1)
        rng = np.random.default_rng(2)
        s = make_sample(op, make_truth(spec, 2.0), 500, rng, sigma=0.1)
        res = tikhonov_solve(op, s, np.zeros(40), 0.02, restarts=3, rng=rng)
        assert len(res.restart_objectives) == 4
        assert res.restart_spread < 1e-6

    def test_identity_penalty(self):
        op = ForwardOp(TestbedSpec(n=20), c=0.0)
        rng = np.random.default_rng(3)
        s = make_sample(op, rng.normal(size=20) / np.arange(1, 21), 100, rng, sigma=0.1)
        res = tikhonov_solve(op, s, np.zeros(20), 0.01, restarts=0, penalty_a=0.0)
        np.testing.assert_allclose(res.f_hat, closed_form(op, s, np.zeros(20), 0.01, penalty_a=0.0), atol=1e-10)

    def test_permutation_invariance(self):
        spec = TestbedSpec(n=30)
        op = ForwardOp(spec, c=0.1)
        rng = np.random.default_rng(4)
        s = make_sample(op, make_truth(spec, 2.0), 200, rng, sigma=0.1)
        order = rng.permutation(200)
        a = tikhonov_solve(op, s, np.zeros(30), 0.03, restarts=0).f_hat
        b = tikhonov_solve(op, s.permuted(order), np.zeros(30), 0.03, restarts=0).f_hat
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_stationary_start_counts_as_converged(self):
        op = ForwardOp(TestbedSpec(n=10), c=0.0)
        rng = np.random.default_rng(5)
        s = make_sample(op, rng.normal(size=10), 40, rng, sigma=0.1)
        ref = closed_form(op, s, np.zeros(10), 0.1)
        res = tikhonov_solve(op, s, np.zeros(10), 0.1, restarts=0, start=ref)
        assert res.converged and res.iterations == 0

    def test_max_iter_zero_reports_not_converged(self):
        op = ForwardOp(TestbedSpec(n=10), c=0.1)
        rng = np.random.default_rng(6)
        s = make_sample(op, rng.normal(size=10), 40, rng, sigma=0.1)
        res = tikhonov_solve(op, s, np.zeros(10), 0.1, restarts=0, max_iter=0)
        assert not res.converged and res.iterations == 0


class TestRules:
    def test_trivial_value(self):
        assert lambda_apriori("trivial", 1, 2, 10_000) == pytest.approx(10**-1.6, rel=1e-12)

    def test_poly_value(self):
        assert lambda_apriori("poly", 1, 2, 10_000, b=0.5) == pytest.approx(0.01, rel=1e-12)

    def test_log_value(self):
        m = 5000
        assert lambda_apriori("log", 1, 2, m) == pytest.approx((math.log(m) / m) ** (2 / 3), rel=1e-12)

    def test_general_with_trivial_bound(self):
        mu = TestbedSpec().mu
        k2 = kappa_sq(KernelView(TestbedSpec()))[1]
        p, q = 1.0, 2.0
        for m in (1e2, 1e3, 1e4, 1e5, 1e6):
            general = lambda_apriori("theta_general", p, q, m, mu=mu, n_eff=lambda lam: k2 / lam)
            trivial = lambda_apriori("trivial", p, q, m)
            assert general == pytest.approx(trivial * k2 ** ((p + 1) / (2 * p + q + 1)), rel=1e-8)

    def test_general_solves_theta_equation(self):
        mu = TestbedSpec().mu
        lam = lambda_apriori("theta_general", 1.0, 2.0, 4000, mu=mu)
        val = theta_function(lam, 1.0, 2.0, lambda t: effective_dimension(mu, t))
        assert val == pytest.approx(1 / math.sqrt(4000), rel=1e-9)

    def test_theta_increasing(self):
        mu = TestbedSpec().mu
        lam = np.logspace(-10, 0, 200)
        th = [theta_function(t, 1.0, 2.0, lambda s: effective_dimension(mu, s)) for t in lam]
        assert np.all(np.diff(th) > 0)

    @settings(max_examples=40, deadline=None)
    @given(
        st.sampled_from(["trivial", "poly", "log", "theta_general"]),
        st.floats(0.5, 2.0),
        st.floats(0.0, 1.0),
        st.integers(10, 10**6),
    )
    def test_non_increasing_in_m(self, rule, p, qfrac, m):
        q = 1.0 + qfrac * (1.0 + p)
        mu = TestbedSpec().mu
        lams = [lambda_apriori(rule, p, q, mm, mu=mu, b=0.5) for mm in (m, 2 * m)]
        assert lams[1] <= lams[0]

    @pytest.mark.parametrize("q", [0.5, 3.5])
    def test_rejects_q_outside_range(self, q):
        with pytest.raises(ValueError):
            lambda_apriori("trivial", 1.0, q, 100)

    def test_rejects_small_m_and_bad_b(self):
        with pytest.raises(ValueError):
            lambda_apriori("trivial", 1.0, 2.0, 1)
        with pytest.raises(ValueError):
            lambda_apriori("poly", 1.0, 2.0, 100, b=1.0)
        with pytest.raises(ValueError):
            lambda_apriori("cubic", 1.0, 2.0, 100)

    def test_bracket_failure(self):
        # a single tiny eigenvalue leaves theta far above 1/sqrt(m) on the whole bracket
        mu = np.array([1e-20])
        with pytest.raises(ValueError):
            lambda_apriori("theta_general", 1.0, 2.0, 10, mu=mu)


class TestCondition:
    mu = TestbedSpec().mu

    def test_top_eigenvalue_with_large_m(self):
        assert parameter_condition(self.mu[0], 1e9, self.mu).holds

    def test_tiny_lambda_small_m(self):
        c = parameter_condition(1e-12, 10, self.mu)
        assert not c.holds and c.dimension_slack < 0

    def test_poly_rule_on_grid(self):
        for m in DEFAULT_M_GRID:
            lam = lambda_apriori("poly", 1.0, 2.0, m, b=0.5)
            assert parameter_condition(lam, m, self.mu).holds

    def test_general_rule_on_grid(self):
        for m in DEFAULT_M_GRID:
            lam = lambda_apriori("theta_general", 1.0, 2.0, m, mu=self.mu)
            assert parameter_condition(lam, m, self.mu).holds
