"""Bernoulli family: Laplace approximation against quadrature oracles."""

import math

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from bangstats.glmm import (Covariate, Family, FitOptions, Intercept,
                            ModelSpec, RandomTerm, build_design, fit, loglik,
                            predict)
from conftest import make_event
from engine_fixtures import (bernoulli_intercept_data, bernoulli_slope_data,
                             _bern_event)
from oracles import (bernoulli_loglik_aghq, bernoulli_loglik_quad,
                     fit_bernoulli_aghq)


@pytest.fixture(scope="module")
def bern_fit():
    events, spec = bernoulli_intercept_data(seed=101)
    bundle = build_design(events, spec)
    return bundle, fit(bundle)


def glm_logistic_by_hand(X, y):
    """Plain logistic MLE via direct minimization, independent of PIRLS."""
    def negll(beta):
        eta = X @ beta
        return float(np.sum(np.logaddexp(0.0, eta) - y * eta))

    res = minimize(negll, np.zeros(X.shape[1]), method="BFGS",
                   options={"gtol": 1e-10, "maxiter": 500})
    return res.x, res.fun


class TestDegenerateGLM:
    def test_forced_zero_variance_matches_glm(self):
        events, spec = bernoulli_intercept_data(seed=7, n_groups=8,
                                                per_group=30)
        bundle = build_design(events, spec)
        model = fit(bundle, options=FitOptions(fix_theta=np.array([-np.inf])))
        beta_glm, dev_half = glm_logistic_by_hand(bundle.X, bundle.y)
        np.testing.assert_allclose(model.beta, beta_glm, atol=1e-6)
        assert model.log_likelihood == pytest.approx(-dev_half, abs=1e-8)
        for effs in model.ranef("batter").values():
            assert effs["intercept"] == 0.0

    def test_no_random_terms_matches_glm(self):
        events, spec = bernoulli_intercept_data(seed=8, n_groups=6,
                                                per_group=25)
        bundle = build_design(events, spec.with_random(()))
        model = fit(bundle)
        beta_glm, _ = glm_logistic_by_hand(bundle.X, bundle.y)
        np.testing.assert_allclose(model.beta, beta_glm, atol=1e-6)

    def test_glm_se_from_fisher_information(self):
        events, spec = bernoulli_intercept_data(seed=9, n_groups=6,
                                                per_group=40)
        bundle = build_design(events, spec.with_random(()))
        model = fit(bundle)
        mu = expit(bundle.X @ model.beta)
        W = mu * (1 - mu)
        cov = np.linalg.inv(bundle.X.T @ (bundle.X * W[:, None]))
        np.testing.assert_allclose(model.vcov_beta, cov, rtol=1e-6)


class TestLaplaceVsQuadrature:
    def test_loglik_matches_aghq_at_truth(self, bern_fit):
        bundle, _ = bern_fit
        beta = np.array([-1.0, 0.5])
        sigma = 0.7
        mine = loglik(bundle, beta, [np.array([[sigma ** 2]])])
        groups = bundle.Z.toarray().argmax(axis=1)
        oracle = bernoulli_loglik_aghq(bundle.y, bundle.X, beta, groups,
                                       np.ones(bundle.n), sigma)
        assert mine == pytest.approx(oracle, rel=1e-3)

    def test_tiny_variance_toy_matches_exact_integral(self):
        # Laplace becomes exact as the random-effect variance shrinks
        events = [_bern_event(0, 1, 0.2), _bern_event(0, 0, 0.7),
                  _bern_event(0, 1, 0.9)]
        spec = ModelSpec(name="toy", response="swing",
                         family=Family.BERNOULLI_LOGIT,
                         fixed=(Intercept(), Covariate("csp")),
                         random=(RandomTerm("batter", ("intercept",)),))
        bundle = build_design(events, spec)
        beta = np.array([0.3, -0.6])
        sigma = 0.01
        mine = loglik(bundle, beta, [np.array([[sigma ** 2]])])
        exact = bernoulli_loglik_quad(bundle.y, bundle.X @ beta,
                                      np.ones(3), sigma)
        assert mine == pytest.approx(exact, abs=1e-6)

    def test_moderate_variance_toy_close_to_exact(self):
        events = [_bern_event(0, 1, 0.2), _bern_event(0, 0, 0.7),
                  _bern_event(0, 1, 0.9), _bern_event(0, 0, 0.1)]
        spec = ModelSpec(name="toy", response="swing",
                         family=Family.BERNOULLI_LOGIT,
                         fixed=(Intercept(),),
                         random=(RandomTerm("batter", ("intercept",)),))
        bundle = build_design(events, spec)
        beta = np.array([0.1])
        mine = loglik(bundle, beta, [np.array([[0.8 ** 2]])])
        exact = bernoulli_loglik_quad(bundle.y, bundle.X @ beta,
                                      np.ones(4), 0.8)
        # Laplace is approximate here; just require closeness, not equality
        assert mine == pytest.approx(exact, rel=5e-3)

    def test_fit_matches_aghq_fit(self):
        events, spec = bernoulli_intercept_data(seed=21, n_groups=25,
                                                per_group=40, sigma=0.6)
        bundle = build_design(events, spec)
        model = fit(bundle)
        groups = np.array([e.batter_id for e in events])
        beta_o, sigma_o, ll_o = fit_bernoulli_aghq(bundle.y, bundle.X, groups,
                                                   np.ones(bundle.n))
        assert model.log_likelihood == pytest.approx(ll_o, rel=0.01)
        np.testing.assert_allclose(model.beta, beta_o, atol=0.05)
        assert model.variance_components[0].sd[0] == pytest.approx(sigma_o,
                                                                   abs=0.05)

    def test_oversized_variance_decreases_loglik(self, bern_fit):
        bundle, model = bern_fit
        beta = model.beta
        sd_hat = model.variance_components[0].sd[0]
        lls = [loglik(bundle, beta, [np.array([[s ** 2]])])
               for s in (sd_hat, 3.0, 6.0, 12.0)]
        assert lls[0] > lls[1] > lls[2] > lls[3]


class TestRecovery:
    def test_twenty_simulations_within_3_mc_ses(self):
        beta_true = np.array([-1.0, 0.5])
        sigma_true = 0.7
        betas, sigmas = [], []
        for rep in range(20):
            events, spec = bernoulli_intercept_data(seed=500 + rep,
                                                    beta=tuple(beta_true),
                                                    sigma=sigma_true)
            bundle = build_design(events, spec)
            model = fit(bundle, options=FitOptions(polish=False))
            betas.append(model.beta)
            sigmas.append(model.variance_components[0].sd[0])
        betas = np.array(betas)
        sigmas = np.array(sigmas)
        for j in range(2):
            mc_se = betas[:, j].std(ddof=1) / math.sqrt(20)
            assert abs(betas[:, j].mean() - beta_true[j]) < 3 * mc_se + 0.02
        mc_se = sigmas.std(ddof=1) / math.sqrt(20)
        assert abs(sigmas.mean() - sigma_true) < 3 * mc_se + 0.03

    def test_slope_model_recovers(self):
        events, spec = bernoulli_slope_data(seed=33, n_groups=30,
                                            per_group=80)
        bundle = build_design(events, spec)
        model = fit(bundle)
        assert model.converged
        np.testing.assert_allclose(model.beta, [-0.5, 0.8, -0.4], atol=0.35)
        assert model.variance_components[0].sd[0] == pytest.approx(0.5,
                                                                   abs=0.25)


class TestInvarianceAndDeterminism:
    def test_covariate_shift_absorbed_by_intercept(self):
        events, spec = bernoulli_intercept_data(seed=55, n_groups=12,
                                                per_group=40)
        shifted = [make_event(
            batter_id=e.batter_id, batter_name=e.batter_name,
            csp=e.csp * 0.5 + 0.25, swing=e.swing, contact=e.contact,
            description=e.description) for e in events]
        # affine x' = a x + c: slope' = slope / a, intercept' = int - c slope'
        b0 = build_design(events, spec)
        b1 = build_design(shifted, spec)
        m0 = fit(b0)
        m1 = fit(b1)
        slope0, slope1 = m0.beta[1], m1.beta[1]
        assert slope1 == pytest.approx(slope0 / 0.5, abs=1e-6)
        assert m1.beta[0] == pytest.approx(m0.beta[0] - 0.25 * slope1,
                                           abs=1e-6)
        assert m1.variance_components[0].sd[0] == pytest.approx(
            m0.variance_components[0].sd[0], abs=1e-6)
        np.testing.assert_allclose(m1.eta, m0.eta, atol=1e-6)

    def test_bitwise_reproducible(self):
        events, spec = bernoulli_intercept_data(seed=77, n_groups=10,
                                                per_group=30)
        bundle = build_design(events, spec)
        m1 = fit(bundle)
        m2 = fit(bundle)
        assert m1.beta.tobytes() == m2.beta.tobytes()
        assert m1.theta.tobytes() == m2.theta.tobytes()
        assert m1.u.tobytes() == m2.u.tobytes()


class TestBlupsShrinkageAndPredict:
    def test_extreme_group_blup_largest_but_shrunk(self):
        rng = np.random.default_rng(3)
        events = []
        for g in range(10):
            x = rng.uniform(0, 1, 30)
            eta = -0.2 + 0.4 * x + (2.5 if g == 0 else 0.0)
            y = rng.random(30) < expit(eta)
            events.extend(_bern_event(g, y[i], x[i]) for i in range(30))
        spec = ModelSpec(name="m", response="swing",
                         family=Family.BERNOULLI_LOGIT,
                         fixed=(Intercept(), Covariate("csp")),
                         random=(RandomTerm("batter", ("intercept",)),))
        bundle = build_design(events, spec)
        model = fit(bundle)
        blup_vals = {lvl: effs["intercept"]
                     for lvl, effs in model.ranef("batter").items()}
        extreme = blup_vals[1000]
        assert extreme == max(blup_vals.values())
        assert abs(extreme) == max(abs(v) for v in blup_vals.values())
        # unpooled per-group GLM estimate of the same offset
        sel = np.array([e.batter_id == 1000 for e in events])
        Xg = np.column_stack([np.ones(sel.sum()),
                              np.array([e.csp for e in events])[sel]])
        yg = bundle.y[sel]
        beta_g, _ = glm_logistic_by_hand(Xg, yg)
        unpooled_offset = beta_g[0] - model.beta[0]
        assert 0 < extreme < unpooled_offset

    def test_predict_intercept_only_half(self):
        events = [_bern_event(0, 1, 0.5), _bern_event(0, 0, 0.5),
                  _bern_event(1, 1, 0.4), _bern_event(1, 0, 0.6)]
        spec = ModelSpec(name="m", response="swing",
                         family=Family.BERNOULLI_LOGIT, fixed=(Intercept(),))
        bundle = build_design(events, spec)
        model = fit(bundle)
        assert model.beta[0] == pytest.approx(0.0, abs=1e-8)
        probs = predict(model, events[:1], "response")
        assert probs[0] == pytest.approx(0.5, abs=1e-8)

    def test_mean_fitted_near_observed_rate(self, bern_fit):
        bundle, model = bern_fit
        assert float(np.mean(model.fitted)) == pytest.approx(
            float(np.mean(bundle.y)), abs=1e-2)

    def test_logit_round_trip(self):
        from scipy.special import logit
        p = np.concatenate([np.array([1e-8, 1 - 1e-8]),
                            np.linspace(1e-6, 1 - 1e-6, 101)])
        np.testing.assert_allclose(expit(logit(p)), p, atol=1e-12)


class TestConvergenceReporting:
    def test_iteration_cap_reported_honestly(self):
        events, spec = bernoulli_intercept_data(seed=13, n_groups=8,
                                                per_group=20)
        bundle = build_design(events, spec)
        model = fit(bundle, options=FitOptions(max_outer=1, polish=False))
        assert not model.converged
        assert "maximum outer iterations" in model.convergence.message

    def test_boundary_flagged_when_variance_collapses(self):
        # identical response pattern in every group: no between-group signal
        events = []
        for g in range(6):
            for i in range(12):
                events.append(_bern_event(g, i % 2, 0.3 + 0.04 * i))
        spec = ModelSpec(name="m", response="swing",
                         family=Family.BERNOULLI_LOGIT,
                         fixed=(Intercept(), Covariate("csp")),
                         random=(RandomTerm("batter", ("intercept",)),))
        bundle = build_design(events, spec)
        model = fit(bundle, options=FitOptions(
            theta0=np.array([-2.0]), polish=False))
        assert model.boundary
        assert model.variance_components[0].sd[0] < 1e-4
        assert model.variance_components[0].boundary[0]
