import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.glm import Dataset
from tallbms.optim import irls
from tallbms.posterior import (
    PosteriorEstimates,
    VisitedModelStore,
    enumerate_all,
    enumerate_log_evidence,
    estimates_from_log_evidence,
    inclusion_probabilities,
    mc_estimates,
    rm_estimates,
)
from tallbms.space import (
    ModelPrior,
    hamming,
    inclusion_matrix,
    model_bits,
    model_columns,
    model_from_bits,
    model_hex,
    model_log_prior,
)

from conftest import make_dataset

models_p6 = st.integers(0, 63)


class TestModelRepresentation:
    def test_columns(self):
        np.testing.assert_array_equal(model_columns(0b101, 3), [0, 1, 3])
        np.testing.assert_array_equal(model_columns(0, 3), [0])

    @given(models_p6)
    def test_bits_round_trip(self, m):
        assert model_from_bits(model_bits(m, 6)) == m

    def test_hex_width(self):
        assert model_hex(5, 15) == "0005"
        assert model_hex(0, 1) == "0"
        assert model_hex((1 << 64) - 1, 64) == "f" * 16

    def test_inclusion_matrix_high_bits(self):
        m = inclusion_matrix([1 << 63], 64)
        assert m[0, 63] and m.sum() == 1

    @given(models_p6, models_p6)
    def test_hamming_symmetric(self, a, b):
        assert hamming(a, b) == hamming(b, a) == bin(a ^ b).count("1")


class TestPrior:
    def test_uniform(self):
        for m in (0, 5, (1 << 15) - 1):
            assert model_log_prior(m, ModelPrior(0.5), 15) == pytest.approx(15 * math.log(0.5))

    def test_direct_substitution(self):
        assert model_log_prior(0b001, ModelPrior(0.2), 3) == pytest.approx(
            math.log(0.2) + 2 * math.log(0.8), rel=1e-15)

    @pytest.mark.parametrize("q", [0.05, 0.3, 0.5, 0.9])
    def test_normalised(self, q):
        total = math.fsum(math.exp(model_log_prior(m, ModelPrior(q), 10)) for m in range(1 << 10))
        assert total == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("q", [0.0, 1.0, -0.1])
    def test_invalid(self, q):
        with pytest.raises(ValueError):
            ModelPrior(q)


class TestStore:
    def test_first_and_second_visit(self):
        s = VisitedModelStore(4)
        s.record_visit(3, -10.0, [1.0])
        assert s.best(3) == -10.0 and s.entries[3].visits == 1
        s.record_visit(3, -12.0, [2.0])
        assert s.best(3) == -10.0 and s.entries[3].visits == 2
        np.testing.assert_array_equal(s.entries[3].last_beta, [1.0])
        s.record_visit(3, -9.0, [3.0])
        np.testing.assert_array_equal(s.entries[3].last_beta, [3.0])

    def test_fold_max(self, rng):
        s = VisitedModelStore(3)
        values = rng.normal(size=20)
        for v in values:
            s.record_visit(5, float(v))
        running = values[0]
        for v in values[1:]:
            running = v if v > running else running
        assert s.best(5) == running and s.entries[5].visits == 20

    def test_unvisited(self):
        assert VisitedModelStore(3).best(2) is None

    def test_rejects_nan_and_out_of_range(self):
        s = VisitedModelStore(3)
        with pytest.raises(ValueError):
            s.record_visit(1, math.nan)
        with pytest.raises(ValueError):
            s.record_visit(8, 0.0)

    def test_text_round_trip(self, rng):
        s = VisitedModelStore(9)
        for m, v in zip(rng.integers(0, 512, 30), rng.normal(scale=100, size=30)):
            s.record_visit(int(m), float(v))
        text = s.to_text()
        assert text.splitlines()[0].split()[0] == model_hex(min(s.entries), 9)
        back = VisitedModelStore.from_text(text, 9)
        assert back.to_text() == text
        assert back.log_evidence_map() == s.log_evidence_map()

    def test_from_text_malformed(self):
        with pytest.raises(ValueError, match="line 2"):
            VisitedModelStore.from_text("01 -1.5 2\n02 -3\n", 4)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 7), st.floats(-1e6, 1e6)), min_size=1, max_size=50))
    def test_monotone_property(self, updates):
        s = VisitedModelStore(3)
        history = {}
        for m, v in updates:
            before = s.best(m)
            s.record_visit(m, v)
            if before is not None:
                assert s.best(m) >= before
            history.setdefault(m, []).append(v)
        for m, vs in history.items():
            assert s.best(m) == max(vs) and s.entries[m].visits == len(vs)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 15), st.floats(-100, 100)), max_size=30),
           st.lists(st.tuples(st.integers(0, 15), st.floats(-100, 100)), max_size=30),
           st.lists(st.tuples(st.integers(0, 15), st.floats(-100, 100)), max_size=30))
    def test_merge_associative_commutative(self, a, b, c):
        stores = []
        for ups in (a, b, c):
            s = VisitedModelStore(4)
            for m, v in ups:
                s.record_visit(m, v)
            stores.append(s)
        x, y, z = stores
        left = x.merge(y).merge(z)
        right = x.merge(y.merge(z))
        swapped = z.merge(x).merge(y)
        assert left.to_text() == right.to_text() == swapped.to_text()


class TestEstimators:
    def test_rm_singleton(self):
        s = VisitedModelStore(3)
        s.record_visit(6, -123.0)
        est = rm_estimates(s)
        assert est.model_probs == {6: 1.0}
        np.testing.assert_array_equal(est.inclusion_probs, [0, 1, 1])

    def test_rm_symmetric(self):
        s = VisitedModelStore(2)
        s.record_visit(1, -5.0)
        s.record_visit(2, -5.0)
        assert rm_estimates(s).model_probs == {1: 0.5, 2: 0.5}

    def test_rm_empty(self):
        with pytest.raises(ValueError):
            rm_estimates(VisitedModelStore(2))

    def test_rm_ignores_minus_inf(self):
        s = VisitedModelStore(2)
        s.record_visit(1, -5.0)
        s.record_visit(3, -math.inf)
        assert rm_estimates(s).model_probs[3] == 0.0

    def test_mc_counting(self):
        est = mc_estimates([3, 3, 3, 1], 2)
        assert est.model_probs == {3: 0.75, 1: 0.25}
        np.testing.assert_allclose(est.inclusion_probs, [1.0, 0.75])
        assert mc_estimates([2] * 7, 2).model_probs == {2: 1.0}
        with pytest.raises(ValueError):
            mc_estimates([], 2)

    def test_inclusion_direct(self):
        # bit 0 = covariate 1; "110" over (γ1, γ2, γ3) is 0b011.
        est = PosteriorEstimates(3, "rm", {0b011: 0.7, 0b110: 0.3}, np.zeros(3))
        np.testing.assert_allclose(inclusion_probabilities(est), [0.7, 1.0, 0.3])
        full = PosteriorEstimates(3, "rm", {0b111: 1.0}, np.zeros(3))
        np.testing.assert_array_equal(inclusion_probabilities(full), [1, 1, 1])

    def test_marginalisation_p4(self, rng):
        log_ev = rng.normal(scale=3, size=16)
        est = estimates_from_log_evidence(log_ev, ModelPrior(0.3), 4)
        # Brute force with explicit loops over bit tuples.
        weights = {}
        for bits in itertools.product([0, 1], repeat=4):
            m = sum(b << j for j, b in enumerate(bits))
            k = sum(bits)
            weights[bits] = math.exp(log_ev[m]) * 0.3 ** k * 0.7 ** (4 - k)
        z = sum(weights.values())
        incl = [sum(w for bits, w in weights.items() if bits[j]) / z for j in range(4)]
        np.testing.assert_allclose(est.inclusion_probs, incl, rtol=1e-12)

    def test_enumerate_p1_symmetric(self):
        s = VisitedModelStore(1)
        s.record_visit(0, -3.0)
        s.record_visit(1, -3.0)
        assert rm_estimates(s).model_probs == {0: 0.5, 1: 0.5}
        est = estimates_from_log_evidence(np.array([-3.0, -3.0]), ModelPrior(), 1)
        assert est.model_probs == {0: 0.5, 1: 0.5}

    def test_enumerate_p3_aic_independent(self, rng):
        d = make_dataset(rng, 400, 4, "bernoulli")
        est = enumerate_all(Evaluator(d, EvidenceSpec("aic")))
        # Independent script: fit each of the 8 models with Newton on its columns.
        logw = []
        for m in range(8):
            cols = [0] + [j + 1 for j in range(3) if m >> j & 1]
            x = d.x[:, cols]
            b = np.zeros(len(cols))
            for _ in range(30):
                mu = 1 / (1 + np.exp(-x @ b))
                b = b + np.linalg.solve(x.T @ (x * (mu * (1 - mu))[:, None]), x.T @ (d.y - mu))
            mu = 1 / (1 + np.exp(-x @ b))
            dev = -2 * np.sum(d.y * np.log(mu) + (1 - d.y) * np.log(1 - mu))
            logw.append(-0.5 * (dev + 2 * (len(cols) - 1)))
        w = np.exp(np.array(logw) - max(logw))
        w /= w.sum()
        for m in range(8):
            assert est.model_probs[m] == pytest.approx(w[m], abs=1e-10)

    def test_rm_equals_enumeration_p5(self, rng):
        d = make_dataset(rng, 300, 6, "gaussian")
        ev = Evaluator(d, EvidenceSpec("bic"))
        prior = ModelPrior(0.4)
        exact = enumerate_all(ev, prior)
        s = VisitedModelStore(5)
        for m in rng.permutation(32):
            s.record_visit(int(m), ev(int(m))[0])
        rm = rm_estimates(s, prior)
        for m in range(32):
            assert rm.model_probs[m] == pytest.approx(exact.model_probs[m], abs=1e-12)
        np.testing.assert_allclose(rm.inclusion_probs, exact.inclusion_probs, atol=1e-12)

    def test_enumeration_guard(self, rng):
        d = make_dataset(rng, 40, 27, "gaussian")
        with pytest.raises(ValueError, match="allow_large"):
            enumerate_log_evidence(Evaluator(d, EvidenceSpec("bic")))

    def test_stochastic_enumeration_needs_rng(self, rng):
        from tallbms.optim import SirlsSgdConfig
        d = make_dataset(rng, 400, 3, "bernoulli")
        with pytest.raises(ValueError):
            enumerate_log_evidence(Evaluator(d, EvidenceSpec("bic"), SirlsSgdConfig()))

    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_perturbation_bound(self, rng, delta):
        s, t = VisitedModelStore(6), VisitedModelStore(6)
        for m in range(64):
            v = rng.normal(scale=5)
            s.record_visit(m, v)
            t.record_visit(m, v + rng.uniform(-delta, delta))
        a, b = rm_estimates(s).model_probs, rm_estimates(t).model_probs
        for m in range(64):
            ratio = b[m] / a[m]
            assert math.exp(-2 * delta) <= ratio * (1 + 1e-12) and ratio <= math.exp(2 * delta) * (1 + 1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.dictionaries(st.integers(0, 255), st.floats(-500, 500), min_size=1, max_size=60))
    def test_normalisation_property(self, values):
        s = VisitedModelStore(8)
        for m, v in values.items():
            s.record_visit(m, v)
        for est in (rm_estimates(s), mc_estimates(list(values), 8)):
            assert math.fsum(est.model_probs.values()) == pytest.approx(1.0, abs=1e-10)
            assert np.all((est.inclusion_probs >= 0) & (est.inclusion_probs <= 1))
