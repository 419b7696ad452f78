import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixopt.acquisition import (
    CandidatesExhausted,
    MaxValueSamples,
    argmax_with_ties,
    ei_values,
    expected_improvement,
    gumbel_max_samples,
    mes_score,
    mes_terms,
    mes_values,
    sample_max_values,
    score_candidates,
    select_next,
)
from mixopt.gp import FittedGP, GPHyperparams, PosteriorGaussian
from mixopt.types import make_fidelities, make_mixture

from . import oracles


def small_gp(seed=0, ls=0.3, n=4, d=3, noise=1e-2):
    rng = np.random.default_rng(seed)
    X = rng.dirichlet(np.ones(d), n)
    return FittedGP(X, 1.0, rng.normal(size=n), GPHyperparams(lengthscale=ls, noise_var=noise)), rng


class TestExpectedImprovement:
    def test_at_incumbent(self):
        assert expected_improvement(PosteriorGaussian(0.7, 1.0), 0.7) == pytest.approx(1 / math.sqrt(2 * math.pi))
        assert abs(expected_improvement(PosteriorGaussian(0.7, 1.0), 0.7) - 0.3989) < 1e-4

    def test_zero_variance(self):
        assert expected_improvement(PosteriorGaussian(0.2, 0.0), 0.5) == 0.0
        assert expected_improvement(PosteriorGaussian(0.9, 0.0), 0.5) == pytest.approx(0.4)

    @pytest.mark.parametrize("triple", sorted(oracles.EI_FROZEN))
    def test_frozen_quadrature_values(self, triple):
        mu, sd, inc = triple
        assert ei_values(mu, sd, inc) == pytest.approx(oracles.EI_FROZEN[triple], rel=1e-12)

    def test_against_monte_carlo(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            mu, sd, inc = rng.normal(), rng.uniform(0.1, 2), rng.normal()
            est, se = oracles.ei_monte_carlo(mu, sd, inc, 200_000, rng)
            assert abs(float(ei_values(mu, sd, inc)) - est) <= 3 * se + 1e-12

    @given(st.floats(-5, 5), st.floats(0, 5), st.floats(-5, 5))
    def test_nonnegative_and_zero_iff(self, mu, sd, inc):
        v = float(ei_values(mu, sd, inc))
        assert v >= 0
        if sd == 0 and mu <= inc:
            assert v == 0

    def test_monotone_in_sigma(self):
        sds = np.linspace(0, 5, 501)
        for mu, inc in [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0)]:
            assert np.all(np.diff(ei_values(np.full_like(sds, mu), sds, inc)) >= -1e-14)


class TestMES:
    @pytest.mark.parametrize("gamma", sorted(oracles.MES_TERM_FROZEN))
    def test_frozen_values(self, gamma):
        assert float(mes_terms(gamma)) == pytest.approx(oracles.MES_TERM_FROZEN[gamma], rel=1e-10)

    @pytest.mark.parametrize("gamma", [-3.0, 0.0, 1.0, 3.0])
    def test_matches_plain_formula(self, gamma):
        assert abs(float(mes_terms(gamma)) - oracles.mes_term_plain(gamma)) <= 1e-10

    def test_gamma_zero_is_log2(self):
        post = PosteriorGaussian(1.3, 0.25)
        assert mes_score(post, MaxValueSamples((1.3,)), 4.0) == pytest.approx(math.log(2) / 4.0, rel=1e-14)

    def test_halving_cost_doubles(self):
        post = PosteriorGaussian(0.1, 0.3)
        m = MaxValueSamples((0.5, 0.9, 1.4))
        assert mes_score(post, m, 0.5) == 2 * mes_score(post, m, 1.0)

    def test_non_increasing_for_positive_gamma(self):
        g = np.linspace(0, 30, 3001)
        t = mes_terms(g)
        assert np.all(np.diff(t) <= 1e-15)
        assert t[-1] < 1e-12

    def test_extreme_tail_finite(self):
        t = mes_terms(np.array([-1e3, -200.0, -40.0, 40.0, 1e3]))
        assert np.all(np.isfinite(t))

    @given(st.floats(-6, 60))
    def test_summand_nonnegative(self, gamma):
        assert float(mes_terms(gamma)) >= -1e-12

    def test_rejects_nonpositive_cost(self):
        with pytest.raises(ValueError):
            mes_values([0.0], [1.0], [1.0], 0.0)


class TestMaxValueSampling:
    def test_single_deterministic_candidate(self):
        vals = gumbel_max_samples(np.array([0.4]), np.array([0.0]), 7, np.random.default_rng(0))
        assert np.all(vals == 0.4)

    def test_degenerate_gp_collapses(self):
        x = np.array([[0.5, 0.5]])
        gp = FittedGP(x, 1.0, [2.0], GPHyperparams(noise_var=1e-8))
        m = sample_max_values(gp, x, 1.0, 5, 0)
        assert len(m.values) == 5 and np.all(np.isfinite(m.values))

    def test_deterministic_per_seed(self):
        gp, rng = small_gp(1)
        C = rng.dirichlet(np.ones(3), 6)
        for sampler in ("gumbel", "gumbel-quartiles", "posterior-grid"):
            assert sample_max_values(gp, C, 1.0, 10, 3, sampler) == sample_max_values(gp, C, 1.0, 10, 3, sampler)

    def test_dominates_best_mean(self):
        gp, rng = small_gp(2)
        C = rng.dirichlet(np.ones(3), 8)
        mean, var = gp.predict(C, 1.0)
        joint = np.mean(sample_max_values(gp, C, 1.0, 20_000, 0, "posterior-grid").values)
        gum = np.mean(sample_max_values(gp, C, 1.0, 20_000, 0, "gumbel").values)
        se = np.sqrt(var.max() / 20_000)
        assert joint >= mean.max() - 3 * se
        assert gum >= mean.max() - 3 * se

    def test_gumbel_matches_joint_oracle_on_five_candidates(self):
        # weakly correlated posteriors: the Gumbel target assumes independent marginals
        for seed in range(5):
            gp, rng = small_gp(seed, ls=0.02)
            C = rng.dirichlet(np.ones(3), 5)
            _, var = gp.predict(C, 1.0)
            g = np.mean(sample_max_values(gp, C, 1.0, 40_000, seed, "gumbel").values)
            j = np.mean(sample_max_values(gp, C, 1.0, 40_000, seed + 100, "posterior-grid").values)
            assert abs(g - j) < 0.05 * np.sqrt(var).mean()

    def test_gumbel_mean_of_iid_maximum(self):
        # E[max of 5 iid N(0,1)] = 1.162964...
        vals = gumbel_max_samples(np.zeros(5), np.ones(5), 400_000, np.random.default_rng(0))
        assert abs(vals.mean() - 1.1629644736) < 0.01

    def test_rejects_bad_arguments(self):
        gp, rng = small_gp(0)
        with pytest.raises(ValueError):
            sample_max_values(gp, np.empty((0, 3)), 1.0, 3, 0)
        with pytest.raises(ValueError):
            sample_max_values(gp, rng.dirichlet(np.ones(3), 2), 1.0, 0, 0)
        with pytest.raises(ValueError):
            sample_max_values(gp, rng.dirichlet(np.ones(3), 2), 1.0, 3, 0, "nope")
        with pytest.raises(ValueError):
            MaxValueSamples(())


class TestSelection:
    def test_tie_break_cost_then_lexicographic(self):
        X = np.array([[0.6, 0.4], [0.4, 0.6], [0.5, 0.5]])
        assert argmax_with_ties([1.0, 1.0, 1.0], [2.0, 2.0, 1.0], X) == 2
        assert argmax_with_ties([1.0, 1.0, 0.0], None, X) == 1
        assert argmax_with_ties([1.0, 1.0 + 1e-13, 0.0], None, X) == 1
        assert argmax_with_ties([1.0, 1.0 + 1e-9, 0.0], None, X) == 1
        assert argmax_with_ties([1.0 + 1e-9, 1.0, 0.0], None, X) == 0

    def test_order_independent(self):
        rng = np.random.default_rng(0)
        X = rng.dirichlet(np.ones(3), 20)
        vals = np.round(rng.uniform(size=20), 1)
        best = tuple(X[argmax_with_ties(vals, None, X)])
        p = rng.permutation(20)
        assert tuple(X[p][argmax_with_ties(vals[p], None, X[p])]) == best

    def _fids(self, costs=(1.0, 10.0)):
        return {f.id: f for f in make_fidelities(["lo", "hi"], [1e6, 1e9], costs)}

    def test_singleton(self):
        gp, _ = small_gp(0)
        m = make_mixture([0.2, 0.3, 0.5])
        fids = self._fids()
        assert select_next(gp, [(m, "hi")], fids, "EI", 0.0) == (m, "hi")

    def test_ei_prefers_higher_mean(self):
        # a hand-built GP with one point per candidate, tiny lengthscale so they do not interact
        a, b = make_mixture([0.9, 0.1]), make_mixture([0.1, 0.9])
        h = GPHyperparams(lengthscale=0.01, noise_var=1e-6)
        gp = FittedGP([a.as_array(), b.as_array()], 1.0, [1.0, -1.0], h)
        fids = self._fids()
        mean, var = gp.predict(np.array([a.as_array(), b.as_array()]), 1.0)
        assert select_next(gp, [(b, "hi"), (a, "hi")], fids, "EI", float(mean.mean())) == (a, "hi")
        inc = 0.0
        assert ei_values(inc + 1, 0.1, inc) > ei_values(inc - 1, 0.1, inc)

    def test_mes_prefers_cheaper_under_equal_posteriors(self):
        # scales 0.999 and 1 with delta = 5: (1 - s)^(1 + delta) ~ 1e-18, so both posteriors coincide
        fids = {f.id: f for f in make_fidelities(["lo", "mid", "hi"], [1_000_000, 999_001_000, 1_000_000_000], [1.0, 3.0, 9.0])}
        h = GPHyperparams(ds_offset=1.0, ds_exponent=5.0)
        gp = FittedGP(np.array([[0.3, 0.7]]), [1.0], [0.0], h)
        m = make_mixture([0.5, 0.5])
        pm, pv = gp.predict(m.as_array(), fids["mid"].scale)
        hm, hv = gp.predict(m.as_array(), fids["hi"].scale)
        assert abs(pm[0] - hm[0]) < 1e-15 and abs(pv[0] - hv[0]) < 1e-15
        maxima = MaxValueSamples((0.5, 1.0))
        assert select_next(gp, [(m, "hi"), (m, "mid")], fids, "MES", maxima) == (m, "mid")

    def test_excludes_observed_and_signals_exhaustion(self):
        gp, _ = small_gp(0)
        a, b = make_mixture([0.2, 0.3, 0.5]), make_mixture([0.5, 0.3, 0.2])
        fids = self._fids()
        assert select_next(gp, [(a, "hi"), (b, "hi")], fids, "EI", 10.0, observed=[(a, "hi")]) == (b, "hi")
        with pytest.raises(CandidatesExhausted):
            select_next(gp, [(a, "hi")], fids, "EI", 0.0, observed=[(a, "hi")])

    def test_ei_rejects_mixed_fidelities(self):
        gp, _ = small_gp(0)
        a = make_mixture([0.2, 0.3, 0.5])
        with pytest.raises(ValueError):
            select_next(gp, [(a, "hi"), (a, "lo")], self._fids(), "EI", 0.0)

    def test_pure(self):
        gp, rng = small_gp(3)
        X = rng.dirichlet(np.ones(3), 10)
        m = sample_max_values(gp, X, 1.0, 10, 0)
        v1 = score_candidates(gp, X, np.ones(10), np.ones(10), "MES", maxima=m)
        v2 = score_candidates(gp, X, np.ones(10), np.ones(10), "MES", maxima=m)
        assert np.array_equal(v1, v2)
