import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tallbms.glm import (
    Dataset,
    Family,
    batch_score,
    deviance,
    link,
    link_inverse,
    log_likelihood,
    score,
    working_quantities,
)
from tallbms.optim import irls

from conftest import make_dataset


def central_diff(f, beta, h=1e-6):
    g = np.empty_like(beta)
    for j in range(beta.size):
        e = np.zeros_like(beta)
        e[j] = h
        g[j] = (f(beta + e) - f(beta - e)) / (2 * h)
    return g


def loglik_by_terms(x, y, beta):
    """Elementwise Bernoulli log-likelihood written out row by row."""
    total = 0.0
    for xi, yi in zip(x, y):
        eta = float(np.dot(xi, beta))
        mu = 1.0 / (1.0 + math.exp(-eta))
        total += yi * math.log(mu) + (1 - yi) * math.log(1 - mu)
    return total


class TestDataset:
    def test_shapes(self, rng):
        d = make_dataset(rng, 20, 4, "gaussian")
        assert (d.n, d.m, d.p) == (20, 4, 3)
        assert d.family is Family.GAUSSIAN

    @pytest.mark.parametrize("bad", [
        dict(x=np.ones((3, 4)), y=np.zeros(3)),           # n < m
        dict(x=np.ones((4, 2)), y=np.zeros(3)),           # length mismatch
        dict(x=np.column_stack([np.zeros(4), np.ones(4)]), y=np.zeros(4)),  # no intercept
        dict(x=np.column_stack([np.ones(4), [1, 2, np.nan, 4]]), y=np.zeros(4)),
    ])
    def test_rejects_invalid(self, bad):
        with pytest.raises(ValueError):
            Dataset(bad["x"], bad["y"], "gaussian")

    def test_bernoulli_response_must_be_binary(self):
        x = np.column_stack([np.ones(4), np.arange(4.0)])
        with pytest.raises(ValueError, match="0 or 1"):
            Dataset(x, [0, 1, 0.5, 1], "bernoulli")

    def test_immutable(self, rng):
        d = make_dataset(rng, 10, 2, "gaussian")
        with pytest.raises(ValueError):
            d.x[0, 0] = 5.0

    def test_columns_subset(self, rng):
        d = make_dataset(rng, 10, 4, "gaussian")
        sub = d.columns([0, 2])
        np.testing.assert_array_equal(sub.x, d.x[:, [0, 2]])
        with pytest.raises(ValueError):
            d.columns([1, 2])

    def test_family_aliases(self):
        assert Family.parse("binomial") is Family.BERNOULLI
        assert Family.parse("Normal") is Family.GAUSSIAN
        with pytest.raises(ValueError):
            Family.parse("poisson")


class TestLinks:
    def test_logistic_at_zero(self):
        assert link_inverse("bernoulli", [0.0])[0] == 0.5

    def test_identity(self):
        np.testing.assert_array_equal(link_inverse("gaussian", [-3.2, 7]), [-3.2, 7])

    def test_logistic_ln3(self):
        assert link_inverse("bernoulli", [math.log(3)])[0] == pytest.approx(0.75, abs=1e-15)

    def test_clamped(self):
        mu = link_inverse("bernoulli", [-800.0, 800.0])
        assert mu[0] == 1e-12 and mu[1] == 1 - 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            link_inverse("bernoulli", [np.inf])

    @given(st.floats(-13.8, 13.8))
    def test_round_trip(self, eta):
        for fam in Family:
            assert link(fam, link_inverse(fam, [eta]))[0] == pytest.approx(eta, abs=1e-10)

    @given(st.floats(-27.6, 27.6))
    def test_round_trip_near_saturation(self, eta):
        # A double mu near 1 only resolves 1 - mu to about 1.1e-16, so the
        # recoverable eta degrades like eps * exp(eta); beyond |eta| ~ 27.63
        # the mean clamp takes over.
        back = link("bernoulli", link_inverse("bernoulli", [eta]))[0]
        assert abs(back - eta) <= 1e-10 + 4 * np.finfo(float).eps * math.exp(abs(eta))

    def test_clamp_bounds_link(self):
        assert link("bernoulli", link_inverse("bernoulli", [30.0]))[0] == pytest.approx(
            math.log((1 - 1e-12) / 1e-12), rel=1e-3)


class TestLikelihood:
    def test_null_bernoulli(self):
        x = np.column_stack([np.ones(8), np.arange(8.0)])
        d = Dataset(x, [0, 1] * 4, "bernoulli")
        assert log_likelihood(d, [0, 0]) == pytest.approx(8 * math.log(0.5), rel=1e-14)
        assert deviance(d, [0, 0]) == pytest.approx(-16 * math.log(0.5), rel=1e-14)
        assert deviance(d, [0, 0]) == pytest.approx(11.0904, abs=1e-4)

    def test_perfect_gaussian_fit_is_finite(self):
        x = np.column_stack([np.ones(6), np.arange(6.0)])
        d = Dataset(x, 1 + 2 * np.arange(6.0), "gaussian")
        ll = log_likelihood(d, [1, 2])
        # RSS = 0, so only the normalising term at the floored variance remains.
        assert ll == pytest.approx(-3 * math.log(2 * math.pi * 1e-12), rel=1e-12)
        assert deviance(d, [1, 2]) == 0.0

    def test_bernoulli_matches_term_by_term(self, rng):
        d = make_dataset(rng, 20, 3, "bernoulli")
        beta = rng.standard_normal(3)
        assert log_likelihood(d, beta) == pytest.approx(loglik_by_terms(d.x, d.y, beta), rel=1e-12)

    def test_gaussian_profiled(self, rng):
        d = make_dataset(rng, 30, 3, "gaussian")
        beta = rng.standard_normal(3)
        rss = np.sum((d.y - d.x @ beta) ** 2)
        s2 = rss / d.n
        expected = -0.5 * d.n * (math.log(2 * math.pi * s2) + 1)
        assert log_likelihood(d, beta) == pytest.approx(expected, rel=1e-12)
        assert deviance(d, beta) == pytest.approx(rss, rel=1e-12)

    def test_deviance_matches_reference_glm(self, rng):
        sm = pytest.importorskip("statsmodels.api")
        d = make_dataset(rng, 30, 3, "bernoulli")
        beta = rng.standard_normal(3) * 0.5
        model = sm.GLM(d.y, d.x, family=sm.families.Binomial())
        mu = model.predict(beta)
        assert deviance(d, beta) == pytest.approx(model.family.deviance(d.y, mu), rel=1e-10)

    def test_dimension_mismatch(self, rng):
        d = make_dataset(rng, 10, 3, "gaussian")
        with pytest.raises(ValueError):
            log_likelihood(d, [1.0, 2.0])


class TestScore:
    def test_zero_at_gaussian_mle(self, rng):
        d = make_dataset(rng, 50, 4, "gaussian")
        beta = np.linalg.lstsq(d.x, d.y, rcond=None)[0]
        np.testing.assert_allclose(score(d, beta), 0, atol=1e-10)

    def test_canonical_at_zero(self, rng):
        d = make_dataset(rng, 25, 3, "bernoulli")
        np.testing.assert_allclose(score(d, np.zeros(3)), d.x.T @ (d.y - 0.5), rtol=1e-14)

    @pytest.mark.parametrize("family", ["gaussian", "bernoulli"])
    def test_finite_differences(self, rng, family):
        d = make_dataset(rng, 15, 4, family)
        beta = rng.standard_normal(4) * 0.5
        fd = central_diff(lambda b: log_likelihood(d, b), beta)
        np.testing.assert_allclose(score(d, beta), fd, rtol=1e-5, atol=1e-7)

    def test_batch_score_full_batch(self, rng):
        d = make_dataset(rng, 12, 3, "bernoulli")
        beta = rng.standard_normal(3)
        np.testing.assert_allclose(batch_score(d, beta, np.arange(12)), score(d, beta), rtol=1e-13)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["gaussian", "bernoulli"]))
    def test_finite_difference_property(self, seed, family):
        r = np.random.default_rng(seed)
        n, m = int(r.integers(10, 51)), int(r.integers(1, 7))
        d = make_dataset(r, n, m, family)
        beta = r.standard_normal(m) * 0.5
        fd = central_diff(lambda b: log_likelihood(d, b), beta)
        g = score(d, beta)
        err = np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)
        assert err.max() < 1e-5


class TestWorkingQuantities:
    def test_gaussian_collapse(self, rng):
        d = make_dataset(rng, 10, 2, "gaussian")
        st_ = working_quantities(d, rng.standard_normal(2))
        np.testing.assert_array_equal(st_.w, 1.0)
        np.testing.assert_allclose(st_.z, d.y, rtol=1e-15, atol=1e-15)
        np.testing.assert_array_equal(st_.xi, 1.0)

    def test_bernoulli_at_half(self):
        x = np.column_stack([np.ones(4), [0.0, 1, 2, 3]])
        d = Dataset(x, [0, 1, 1, 0], "bernoulli")
        st_ = working_quantities(d, [0.0, 0.0])
        np.testing.assert_allclose(st_.xi, 0.25)
        np.testing.assert_allclose(st_.var_mu, 0.25)
        np.testing.assert_allclose(st_.w, 0.25)
        np.testing.assert_allclose(st_.z, 4 * (d.y - 0.5))

    def test_sqrt_variant(self):
        x = np.column_stack([np.ones(2), [0.0, 1]])
        d = Dataset(x, [0, 1], "bernoulli")
        np.testing.assert_allclose(working_quantities(d, [0, 0], sqrt_weights=True).w, 0.5)

    def test_saturated_mean_finite(self):
        x = np.column_stack([np.ones(3), [0.0, 1, 2]])
        d = Dataset(x, [0, 1, 1], "bernoulli")
        st_ = working_quantities(d, [40.0, 0.0])
        for v in (st_.mu, st_.xi, st_.var_mu, st_.w, st_.z):
            assert np.all(np.isfinite(v))
        assert st_.mu.max() == 1 - 1e-12

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_working_invariants(self, seed):
        r = np.random.default_rng(seed)
        d = make_dataset(r, 20, 3, "bernoulli", scale=3)
        st_ = working_quantities(d, r.normal(scale=3, size=3))
        np.testing.assert_allclose(st_.mu, link_inverse("bernoulli", st_.eta))
        assert np.all(st_.var_mu > 0)
        ok = st_.xi != 0
        np.testing.assert_allclose(st_.z[ok], (st_.eta + (d.y - st_.mu) / st_.xi)[ok])


class TestMleOptimality:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["gaussian", "bernoulli"]))
    def test_deviance_minimised_at_mle(self, seed, family):
        r = np.random.default_rng(seed)
        d = make_dataset(r, 60, 3, family, scale=0.5)
        mle = irls(d).beta
        other = mle + r.normal(scale=0.1, size=3)
        assert deviance(d, other) > deviance(d, mle)
