import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cbob.acquisition import (
    AcquisitionSpec,
    Emub,
    NoIncumbentError,
    Pob,
    SurrogateBundle,
    acquisition_value,
    adapt_gamma,
    dpof,
    dpof_factors,
    dynamic_threshold,
    eic,
    eicb,
    expected_improvement,
    exploration_emub,
    exploration_pob,
    log_acquisition,
    log_expected_improvement,
    pof,
    resolve_gammas,
    sobol_probes,
)
from cbob.core_math import KernelParams, MeanParams
from cbob.demos import fig1_bundle
from cbob.gp import GpTrainingSet, build_gp

EI_Z0 = 0.398942280401432677939946059934
EI_Z1 = 1.08331547058768410958106916099  # Phi(1) + phi(1)
POF_196 = 0.975002104851779563787176307604
POB_196 = 0.950004209703558999549262218426  # Phi(1.96) - Phi(-1.96)
EMUB_196 = 1.18100557888  # quadrature of E[max(1.96 - |g|, 0)], g ~ N(0, 1)


def emub_quad(mu, sigma, beta):
    eps = beta * sigma

    def f(g):
        return (eps - abs(g)) * stats.norm.pdf(g, mu, sigma)

    return integrate.quad(f, -eps, eps, points=[0.0], epsabs=0.0, epsrel=1e-12, limit=200)[0]


class Const:
    """Surrogate with a fixed Gaussian prediction everywhere."""

    def __init__(self, mean, var):
        self.mean, self.var = mean, var

    def predict(self, X):
        n = np.atleast_2d(X).shape[0]
        return np.full(n, float(self.mean)), np.full(n, float(self.var))


class Affine:
    """Objective surrogate with best - mean and std both scaled by c."""

    def __init__(self, base, best, c):
        self.base, self.best, self.c = base, best, c

    def predict(self, X):
        mu, var = self.base.predict(X)
        return self.best - self.c * (self.best - mu), self.c**2 * var


def random_bundle(seed, n_constraints=2):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(6, 1))
    kernel = KernelParams(1.0, [0.3])

    def model(y):
        return build_gp(GpTrainingSet.noise_free(X, y), kernel, MeanParams(0.0))

    cons = [model(rng.normal(size=6)) for _ in range(n_constraints)]
    fy = rng.normal(size=6)
    return SurrogateBundle(model(fy), cons, float(fy.min())), rng


class TestExpectedImprovement:
    def test_examples(self):
        assert expected_improvement(0.0, 0.0, 1.0) == 0.0
        assert expected_improvement(1.0, 1.0, 1.0) == pytest.approx(EI_Z0, rel=1e-12)
        assert expected_improvement(0.0, 1.0, 1.0) == pytest.approx(EI_Z1, rel=1e-12)

    def test_degenerate_cutoff(self):
        assert expected_improvement(-5.0, 1e-13, 0.0) == 0.0

    @given(st.floats(-20, 20), st.floats(1e-6, 10), st.floats(-20, 20))
    def test_nonnegative(self, mean, std, best):
        assert expected_improvement(mean, std, best) >= 0.0

    def test_log_matches_and_survives_tail(self):
        mean = np.array([0.0, 1.0, 3.0, 8.0])
        np.testing.assert_allclose(
            np.exp(log_expected_improvement(mean, np.ones(4), 0.0)),
            expected_improvement(mean, np.ones(4), 0.0),
            rtol=1e-10,
        )
        deep = log_expected_improvement(60.0, 1.0, 0.0)
        # h(z) ~ phi(z) / z^2 for z -> -inf
        assert deep == pytest.approx(-1800.0 - 0.5 * math.log(2 * math.pi) - 2 * math.log(60.0), rel=1e-3)


class TestPof:
    def test_examples(self):
        assert pof([0.0], [1.0]) == 0.5
        assert pof([0.0, 0.0], [1.0, 2.0]) == 0.25
        assert pof([-1.96], [1.0]) == pytest.approx(POF_196, rel=1e-12)

    def test_threshold(self):
        assert pof([1.0], [1.0], lam=1.0) == 0.5


class TestExploration:
    def test_pob_examples(self):
        assert exploration_pob(0.0, 1.0, 1.96) == pytest.approx(POB_196, rel=1e-12)
        assert exploration_pob(10.0, 1.0, 1.96) < 1e-12
        assert exploration_pob(0.3, 0.0) == 0.0

    def test_pob_deep_tail_relative_precision(self):
        g = 40.0
        expected = stats.norm.sf(g - 1.96) - stats.norm.sf(g + 1.96)
        assert exploration_pob(g, 1.0) == pytest.approx(expected, rel=1e-10)
        assert exploration_pob(-g, 1.0) == pytest.approx(expected, rel=1e-10)

    def test_emub_example(self):
        assert emub_quad(0.0, 1.0, 1.96) == pytest.approx(EMUB_196, rel=1e-10)
        assert exploration_emub(0.0, 1.0, 1.96, 1.0) == pytest.approx(EMUB_196, rel=1e-6)
        assert exploration_emub(10.0, 1.0, 1.96, 1.0) < 1e-12
        assert exploration_emub(0.0, 1.0, 1.96, 2.0) == pytest.approx(EMUB_196 / 2, rel=1e-6)

    def test_emub_linear_in_std(self):
        for g in (-1.5, 0.0, 0.7, 2.2):
            one = exploration_emub(g * 0.8, 0.8, 1.3)
            two = exploration_emub(g * 1.6, 1.6, 1.3)
            assert two == pytest.approx(2 * one, rel=1e-12)

    def test_emub_vs_quadrature_100_triples(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            sigma = rng.uniform(0.1, 3.0)
            beta = rng.uniform(0.2, 3.0)
            mu = sigma * rng.uniform(-(beta + 2.5), beta + 2.5)
            assert exploration_emub(mu, sigma, beta) == pytest.approx(emub_quad(mu, sigma, beta), rel=1e-6)

    def test_emub_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            exploration_emub(0.0, 1.0, 1.96, 0.0)
        with pytest.raises(ValueError):
            Emub(1.96, "auto")

    @given(st.floats(-5, 5), st.floats(0.1, 3))
    def test_vanish_as_std_shrinks(self, g, beta):
        # exploration must vanish as std -> 0 at a fixed nonzero mean
        mean = g if abs(g) > 1e-3 else 1e-3
        assert exploration_pob(mean, 1e-8, beta) < 1e-12
        assert exploration_emub(mean, 1e-8, beta) < 1e-12
        assert exploration_pob(mean, 0.0, beta) == 0.0
        assert exploration_emub(mean, 0.0, beta) == 0.0

    @given(st.floats(-10, 10), st.floats(1e-3, 10), st.floats(0.1, 3))
    def test_pob_bounded(self, mean, std, beta):
        assert 0.0 <= exploration_pob(mean, std, beta) <= 1.0


class TestSpec:
    def test_eic_has_no_exploration(self):
        assert AcquisitionSpec.eic().exploration is None
        with pytest.raises(ValueError):
            AcquisitionSpec("EIC", Pob())
        with pytest.raises(ValueError):
            AcquisitionSpec("EICB", None)
        with pytest.raises(ValueError):
            AcquisitionSpec("EICB", Pob(-1.0))

    def test_default_beta(self):
        assert AcquisitionSpec().exploration.beta == 1.96


class TestDpof:
    def test_equals_pof_without_exploration(self):
        bundle, rng = random_bundle(0)
        X = rng.uniform(size=(50, 1))
        moments = [c.predict(X) for c in bundle.constraints]
        expected = [pof([m[0][j] for m in moments], [math.sqrt(m[1][j]) for m in moments]) for j in range(len(X))]
        np.testing.assert_allclose(dpof(bundle, AcquisitionSpec.eic(), X), expected, rtol=1e-15, atol=1e-300)

    def test_clipping_branch(self):
        # Phi factor 0.6 at mu = -0.2533; POB there is about 0.95 -> clipped to 1
        mu = -stats.norm.ppf(0.6)
        bundle = SurrogateBundle(None, [Const(mu, 1.0)])
        assert float(dpof(bundle, AcquisitionSpec("EICB", Pob()), [[0.0]])[0]) == 1.0

    def test_boundary_doubles_at_most(self):
        bundle = SurrogateBundle(None, [Const(0.0, 1.0)])
        value = float(dpof(bundle, AcquisitionSpec("EICB", Pob(1.96)), [[0.0]])[0])
        assert value == pytest.approx(0.5 * (1 + POB_196), rel=1e-12)
        assert value == pytest.approx(0.975, abs=1e-5)

    def test_dynamic_threshold_inverts_factor(self):
        bundle = SurrogateBundle(None, [Const(0.4, 0.25)])
        lam = dynamic_threshold(bundle, AcquisitionSpec("EICB", Pob()), [[0.0]])
        factor = float(dpof(bundle, AcquisitionSpec("EICB", Pob()), [[0.0]])[0])
        assert float(stats.norm.cdf((lam[0, 0] - 0.4) / 0.5)) == pytest.approx(factor, rel=1e-10)
        assert lam[0, 0] > 0.0


class TestEicb:
    def test_dpof_one_region_is_raw_ei(self):
        obj = Const(0.0, 1.0)
        bundle = SurrogateBundle(obj, [Const(-50.0, 1.0)], 0.5)
        x = [[0.0]]
        ei = expected_improvement(0.0, 1.0, 0.5)
        assert float(eicb(bundle, AcquisitionSpec("EICB", Pob()), x)[0]) == pytest.approx(ei, rel=1e-14)

    def test_zero_objective_std(self):
        bundle = SurrogateBundle(Const(-3.0, 0.0), [Const(-1.0, 1.0)], 0.0)
        assert float(eicb(bundle, AcquisitionSpec("EICB", Pob()), [[0.0]])[0]) == 0.0

    def test_exploration_none_equals_eic(self):
        bundle, rng = random_bundle(1)
        X = rng.uniform(size=(40, 1))
        a = eicb(bundle, AcquisitionSpec("EIC", None), X)
        b = eic(bundle, X)
        ei = expected_improvement(*[f(v) for f, v in zip((np.asarray, np.sqrt), bundle.objective.predict(X))], bundle.best_feasible)
        np.testing.assert_array_equal(a, b)
        np.testing.assert_allclose(a, ei * dpof(bundle, AcquisitionSpec.eic(), X), rtol=1e-15)

    def test_no_incumbent(self):
        bundle = SurrogateBundle(None, [Const(0.0, 1.0)])
        spec = AcquisitionSpec("EICB", Pob())
        with pytest.raises(NoIncumbentError):
            eicb(bundle, spec, [[0.0]])
        # fallback: DPOF alone
        assert float(acquisition_value(bundle, spec, [[0.0]])[0]) == pytest.approx(0.975, abs=1e-5)
        assert float(log_acquisition(bundle, spec, [[0.0]])[0]) == pytest.approx(math.log(0.5 * (1 + POB_196)))

    def test_illustrative_unknown_region(self):
        bundle = fig1_bundle()
        x = [[3.15]]
        b = float(eicb(bundle, AcquisitionSpec("EICB", Pob(1.96)), x)[0])
        e = float(eic(bundle, x)[0])
        assert b > e > 0

    def test_log_acquisition_matches(self):
        bundle, rng = random_bundle(2)
        X = rng.uniform(size=(30, 1))
        for spec in (AcquisitionSpec.eic(), AcquisitionSpec("EICB", Pob(1.0)), AcquisitionSpec("EICB", Emub(1.96, 0.5))):
            exact = acquisition_value(bundle, spec, X)
            keep = exact > 1e-250
            np.testing.assert_allclose(np.exp(log_acquisition(bundle, spec, X)[keep]), exact[keep], rtol=1e-9)


class TestInvariants:
    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["pob", "emub"]), st.floats(0.1, 3.0))
    def test_dpof_factor_dominates_pof(self, seed, kind, beta):
        bundle, rng = random_bundle(seed)
        spec = AcquisitionSpec("EICB", Pob(beta) if kind == "pob" else Emub(beta, rng.uniform(0.1, 2.0)))
        X = rng.uniform(-0.2, 1.2, size=(64, 1))
        logd, logp = dpof_factors(bundle, spec, X)
        assert np.all(logd >= logp)
        assert np.all(logd <= 0.0)
        # log-space DPOF vs direct product differ only by roundoff
        assert np.all(eicb(bundle, spec, X) >= eic(bundle, X) * (1 - 1e-12))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_pob_factor_bound(self, seed):
        bundle, rng = random_bundle(seed)
        X = rng.uniform(-0.2, 1.2, size=(64, 1))
        logd, logp = dpof_factors(bundle, AcquisitionSpec("EICB", Pob(rng.uniform(0.1, 3.0))), X)
        assert np.all(np.exp(logd) <= np.minimum(1.0, 2.0 * np.exp(logp)) * (1 + 1e-12))
        ei = expected_improvement(bundle.objective.predict(X)[0], np.sqrt(bundle.objective.predict(X)[1]), bundle.best_feasible)
        assert np.all(eicb(bundle, AcquisitionSpec("EICB", Pob()), X) <= ei)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.3, 2.5))
    def test_adapt_bounds_emub_times_factor(self, seed, beta):
        bundle, rng = random_bundle(seed, n_constraints=1)
        box = np.array([[0.0, 1.0]])
        gamma = adapt_gamma(bundle.constraints[0], beta, box, probe_count=256, seed=seed % 1000)
        P = sobol_probes(box, 256, seed % 1000)
        mu, var = bundle.constraints[0].predict(P)
        sd = np.sqrt(var)
        rho = exploration_emub(mu, sd, beta, gamma)
        assert np.all(rho * stats.norm.cdf(-mu / sd) <= 1.0 + 1e-12)
        assert gamma >= 1e-12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.05, 20.0))
    def test_argmax_invariance(self, seed, c):
        bundle, rng = random_bundle(seed)
        X = np.linspace(0, 1, 201).reshape(-1, 1)
        spec = AcquisitionSpec("EICB", Pob())
        base = eicb(bundle, spec, X)
        scaled_bundle = SurrogateBundle(
            Affine(bundle.objective, bundle.best_feasible, c), bundle.constraints, bundle.best_feasible
        )
        scaled = eicb(scaled_bundle, spec, X)
        np.testing.assert_allclose(scaled, c * base, rtol=1e-9, atol=1e-300)
        if base.max() > 1e-200:
            assert np.argmax(scaled) == np.argmax(base)


class TestAdapt:
    def test_constant_surrogate(self):
        s = Const(0.3, 0.49)
        expected = exploration_emub(0.3, 0.7, 1.96) * stats.norm.cdf(-0.3 / 0.7)
        assert adapt_gamma(s, 1.96, [[0.0, 1.0]], probe_count=16) == pytest.approx(expected, rel=1e-12)

    def test_single_probe(self):
        bundle = fig1_bundle()
        model = bundle.constraints[0]
        box = np.array([[0.0, 10.0]])
        p = sobol_probes(box, 1, 3)
        mu, var = model.predict(p)
        expected = exploration_emub(mu[0], math.sqrt(var[0]), 1.0) * stats.norm.cdf(-mu[0] / math.sqrt(var[0]))
        assert adapt_gamma(model, 1.0, box, probe_count=1, seed=3) == pytest.approx(expected, rel=1e-12)

    def test_illustrative_surrogate_matches_dense_grid(self):
        model = fig1_bundle().constraints[0]
        box = np.array([[0.0, 10.0]])
        X = np.linspace(0, 10, 10001).reshape(-1, 1)
        mu, var = model.predict(X)
        sd = np.sqrt(var)
        for beta in (0.5, 1.0, 1.96):
            grid = np.max(exploration_emub(mu, sd, beta) * stats.norm.cdf(-mu / sd))
            gamma = adapt_gamma(model, beta, box)
            assert abs(gamma - grid) <= 0.02 * grid

    def test_resolve_gammas(self):
        bundle, _ = random_bundle(3)
        resolve_gammas(bundle, AcquisitionSpec("EICB", Emub(1.0, "adapt")), [[0.0, 1.0]], probe_count=64)
        assert len(bundle.gammas) == 2 and all(g > 0 for g in bundle.gammas)
        with pytest.raises(ValueError):
            dpof(SurrogateBundle(None, bundle.constraints), AcquisitionSpec("EICB", Emub()), [[0.5]])
