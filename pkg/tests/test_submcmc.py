import math

import numpy as np
import pytest
from scipy import stats

from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.glm import Dataset
from tallbms.mjmcmc import KernelMix, run_chain
from tallbms.optim import SirlsSgdConfig
from tallbms.posterior import VisitedModelStore, enumerate_all
from tallbms.space import ModelPrior
from tallbms.submcmc import Algo3Config, SubsampledScore, algo3_step, run_algo3

from conftest import make_dataset
from test_mjmcmc import enumerate_kernel


@pytest.fixture(scope="module")
def data():
    r = np.random.default_rng(21)
    n = 2000
    cov = r.standard_normal((n, 5))
    eta = 0.2 + 0.7 * cov[:, 0] - 0.5 * cov[:, 1] + 0.08 * cov[:, 3]
    y = (r.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    return Dataset.from_covariates(cov, y, "bernoulli")


def sgd(fraction=0.025):
    return SirlsSgdConfig.for_family("bernoulli", fraction=fraction)


class TestConfig:
    def test_defaults(self):
        cfg = Algo3Config()
        assert (cfg.p_rand, cfg.sigma_rand, cfg.restart) == (0.01, 0.01, "fresh")

    @pytest.mark.parametrize("kw", [dict(p_rand=0.0), dict(p_rand=1.5), dict(sigma_rand=0.0),
                                    dict(restart="lukewarm"), dict(iterations=0),
                                    dict(optimizer="newton"), dict(block=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            Algo3Config(**kw)

    def test_fresh_without_randomisation_allowed_for_irls(self):
        Algo3Config(optimizer="irls", p_rand=0.0)
        Algo3Config(p_rand=0.0, restart="warm")


class TestScore:
    def test_failure_leaves_store_untouched(self, rng):
        d = make_dataset(rng, 400, 3, "bernoulli")
        dup = Dataset(np.column_stack([d.x, d.x[:, 1]]), d.y, "bernoulli")
        store = VisitedModelStore(3)
        score = SubsampledScore(dup, ModelPrior(), Algo3Config(optimizer=sgd(0.1)), store, rng)
        assert score(0b101) == -math.inf
        assert 0b101 not in store and score.failures == 1

    def test_warm_restart_resumes(self, data):
        cfg = Algo3Config(optimizer=sgd(), restart="warm", p_rand=0.0)
        store = VisitedModelStore(5)
        score = SubsampledScore(data, ModelPrior(), cfg, store, np.random.default_rng(0))
        score(0b11)
        first = store.entries[0b11].resume_step
        assert first == 500
        score(0b11)
        assert store.entries[0b11].resume_step == 1000

    def test_fresh_restart_keeps_step_zero_offset(self, data):
        store = VisitedModelStore(5)
        score = SubsampledScore(data, ModelPrior(), Algo3Config(optimizer=sgd()), store,
                                np.random.default_rng(0))
        score(0b11)
        score(0b11)
        assert store.entries[0b11].resume_step == 500 and store.entries[0b11].visits == 2

    def test_explore_uses_cache(self, data):
        store = VisitedModelStore(5)
        score = SubsampledScore(data, ModelPrior(), Algo3Config(optimizer=sgd()), store,
                                np.random.default_rng(0))
        v = score(0b1)
        fits = score.fits
        assert score.explore(0b1) == v and score.fits == fits
        score.explore(0b10)
        assert score.fits == fits + 1


class TestStep:
    def test_reduces_to_mjmcmc(self, data):
        cfg = Algo3Config(optimizer="irls", p_rand=0.0, iterations=400, seed=13)
        a = run_algo3(data, ModelPrior(), cfg)
        b = run_chain(Evaluator(data, EvidenceSpec("bic")), ModelPrior(), cfg.mix, 400, 13)
        assert a.trace == b.trace
        assert a.store.log_evidence_map() == b.store.log_evidence_map()

    def test_requires_stored_state(self, data):
        store = VisitedModelStore(5)
        cfg = Algo3Config(optimizer=sgd())
        score = SubsampledScore(data, ModelPrior(), cfg, store, np.random.default_rng(0))
        with pytest.raises(ValueError):
            algo3_step(3, score, cfg, np.random.default_rng(0))

    def test_cache_monotone_and_dominated(self, data):
        cfg = Algo3Config(optimizer=sgd(), p_rand=0.3, sigma_rand=0.05)
        rng = np.random.default_rng(4)
        store = VisitedModelStore(5)
        score = SubsampledScore(data, ModelPrior(), cfg, store, rng)
        state = 0b11
        score(state)
        seen = {}
        for _ in range(600):
            state = algo3_step(state, score, cfg, rng).model
            for m, v in store.log_evidence_map().items():
                assert v >= seen.get(m, -math.inf)
                seen[m] = v
        exact = Evaluator(data, EvidenceSpec("bic"))
        for m, v in seen.items():
            assert v <= exact(m)[0] + 1e-8

    def test_single_iteration(self, data):
        cfg = Algo3Config(optimizer=sgd(), iterations=1, seed=2,
                          mix=KernelMix(mode_jump_prob=0.0))
        res = run_algo3(data, ModelPrior(), cfg)
        assert len(res.trace) == 1 and len(res.store) <= 2

    def test_blocks_and_curves(self, data):
        truth = enumerate_all(Evaluator(data, EvidenceSpec("bic"))).inclusion_probs
        cfg = Algo3Config(optimizer=sgd(), iterations=250, block=100, seed=5)
        res = run_algo3(data, ModelPrior(), cfg, truth=truth)
        np.testing.assert_array_equal(res.block_ends, [100, 200, 250])
        assert res.rm_blocks.shape == res.mc_blocks.shape == (3, 5)
        np.testing.assert_allclose(res.rm_blocks[-1], res.rm.inclusion_probs)
        np.testing.assert_allclose(res.mc_blocks[-1], res.mc.inclusion_probs)
        expected = np.sqrt(np.mean((res.rm_blocks - truth) ** 2, axis=1))
        np.testing.assert_allclose(res.rmse_curve["rm"], expected)
        with pytest.raises(ValueError):
            run_algo3(data, ModelPrior(), cfg, truth=truth[:3])

    def test_seeded(self, data):
        cfg = Algo3Config(optimizer=sgd(), iterations=150, seed=8)
        a, b = run_algo3(data, ModelPrior(), cfg), run_algo3(data, ModelPrior(), cfg)
        assert a.trace == b.trace and a.store.to_text() == b.store.to_text()


class TestPositivity:
    def test_two_step_reachability_p6(self):
        r = np.random.default_rng(6)
        Q, _ = enumerate_kernel(r.normal(size=64), KernelMix(), 6)
        assert np.all(Q @ Q > 0)


class TestRestartModes:
    def test_fresh_and_warm_agree(self, data):
        prior = ModelPrior()
        finals = {}
        for restart in ("fresh", "warm"):
            rows = []
            for seed in range(20):
                cfg = Algo3Config(optimizer=sgd(), restart=restart, iterations=600, seed=seed)
                rows.append(run_algo3(data, prior, cfg).rm.inclusion_probs)
            finals[restart] = np.array(rows)
        diff = finals["fresh"] - finals["warm"]
        for j in range(5):
            if np.allclose(diff[:, j], 0, atol=1e-12):
                continue
            # Paired comparison per covariate, Bonferroni over 5 covariates.
            assert stats.ttest_rel(finals["fresh"][:, j], finals["warm"][:, j]).pvalue > 0.01 / 5

    def test_converges_towards_exact(self, data):
        truth = enumerate_all(Evaluator(data, EvidenceSpec("bic"))).inclusion_probs
        cfg = Algo3Config(optimizer=sgd(0.05), iterations=3000, block=500, seed=1)
        res = run_algo3(data, ModelPrior(), cfg, truth=truth)
        assert res.rmse_curve["rm"][-1] < 0.02
