"""Mode-jumping Metropolis-Hastings over the binary model space.

A score oracle maps a model to its unnormalised log posterior (log evidence
plus log prior, -inf for models that cannot be fitted).  Oracles may expose
a ``cached(model)`` method returning the value to use for the current state
in the acceptance ratio, and an ``explore(model)`` method used by the local
optimiser; plain callables are used as-is.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

from tallbms.evidence import Evaluator
from tallbms.posterior import VisitedModelStore
from tallbms.space import ModelPrior, check_p, model_from_bits, model_hex, model_log_prior

Score = Callable[[int], float]


@dataclass(frozen=True)
class KernelMix:
    mode_jump_prob: float = 0.05
    # (number of uniformly chosen bits to flip, kernel weight)
    swap_kernels: Tuple[Tuple[int, float], ...] = ((1, 0.75), (2, 0.25))
    rho: float = 0.1
    jump_fraction_range: Tuple[float, float] = (0.2, 0.5)
    # Local optimisation budget is local_budget_per_p * p score evaluations.
    local_budget_per_p: int = 20

    def __post_init__(self):
        if not 0 <= self.mode_jump_prob <= 1:
            raise ValueError("mode_jump_prob must lie in [0, 1]")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        lo, hi = self.jump_fraction_range
        if not 0 < lo <= hi < 1:
            raise ValueError("jump_fraction_range must satisfy 0 < lo <= hi < 1")
        if self.mode_jump_prob < 1:
            if not self.swap_kernels:
                raise ValueError("at least one swap kernel is required")
            weights = np.array([w for _, w in self.swap_kernels], dtype=float)
            if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
                raise ValueError("swap kernel weights must be nonnegative and sum to 1")
            if any(k < 1 for k, _ in self.swap_kernels):
                raise ValueError("swap kernels must flip at least one bit")
        if self.local_budget_per_p < 0:
            raise ValueError("local_budget_per_p must be nonnegative")


@dataclass
class ProposalRecord:
    proposed: int
    log_q_forward: float
    log_q_backward: float
    # (after forward jump, after forward optimisation, after reverse jump, after reverse optimisation)
    intermediates: Tuple[int, int, int, int]
    flips: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


@dataclass
class Transition:
    model: int
    log_post: float
    accepted: bool
    kind: str  # "swap" or "jump"


def jump_size(fraction: float, p: int) -> int:
    """ceil(fraction * p), clamped to [1, p]; the tiny offset absorbs float noise."""
    return min(p, max(1, math.ceil(fraction * p - 1e-9)))


def flip(model: int, positions) -> int:
    for j in positions:
        model ^= 1 << int(j)
    return model


def large_jump(model: int, fraction: float, p: int, rng) -> Tuple[int, np.ndarray]:
    """Flip ceil(fraction * p) distinct uniformly chosen bits; returns (model, flip set)."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    idx = np.sort(rng.choice(p, size=jump_size(fraction, p), replace=False))
    return flip(model, idx), idx


def local_opt(start: int, score: Score, p: int, budget: int) -> int:
    """Greedy one-flip ascent, lowest index winning ties, at most ``budget`` evaluations."""
    if budget <= 0:
        return start
    current, current_score = start, score(start)
    used = 0
    while used < budget:
        best, best_score = None, current_score
        for j in range(p):
            if used >= budget:
                break
            cand = current ^ (1 << j)
            s = score(cand)
            used += 1
            if s > best_score:
                best, best_score = cand, s
        if best is None:
            break
        current, current_score = best, best_score
    return current


def small_randomisation_log_density(src: int, dst: int, rho: float, p: int) -> float:
    h = bin(src ^ dst).count("1")
    return h * math.log(rho) + (p - h) * math.log1p(-rho)


def small_randomisation(model: int, rho: float, p: int, rng) -> Tuple[int, float]:
    """Flip every bit independently with probability rho; returns (model, log density)."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    mask = rng.random(p) < rho
    out = flip(model, np.flatnonzero(mask))
    return out, small_randomisation_log_density(model, out, rho, p)


def mode_jump_proposal(current: int, mix: KernelMix, score: Score, p: int, rng,
                       fraction: Optional[float] = None) -> ProposalRecord:
    """Large jump, local optimisation, small randomisation, plus the reverse path.

    The reverse path reuses the forward flip set.  Only the randomisation
    densities enter the acceptance ratio; the optimiser is deterministic.
    """
    if fraction is None:
        fraction = rng.uniform(*mix.jump_fraction_range)
    budget = mix.local_budget_per_p * p
    opt_score = getattr(score, "explore", score)
    m0s, idx = large_jump(current, fraction, p, rng)
    m1s = local_opt(m0s, opt_score, p, budget)
    proposed, log_qf = small_randomisation(m1s, mix.rho, p, rng)
    m0 = flip(proposed, idx)
    m1 = local_opt(m0, opt_score, p, budget)
    log_qb = small_randomisation_log_density(m1, current, mix.rho, p)
    return ProposalRecord(proposed, log_qf, log_qb, (m0s, m1s, m0, m1), idx)


def swap_proposal(current: int, mix: KernelMix, p: int, rng) -> int:
    weights = np.array([w for _, w in mix.swap_kernels])
    k = mix.swap_kernels[rng.choice(len(weights), p=weights)][0]
    return flip(current, rng.choice(p, size=min(k, p), replace=False))


def _cached(score: Score, model: int) -> float:
    return getattr(score, "cached", score)(model)


def mh_step(current: int, mix: KernelMix, score: Score, p: int, rng) -> Transition:
    """One Metropolis-Hastings step with the mixed proposal."""
    if rng.random() < mix.mode_jump_prob:
        rec = mode_jump_proposal(current, mix, score, p, rng)
        cand, kind = rec.proposed, "jump"
        log_q = rec.log_q_backward - rec.log_q_forward
    else:
        cand, kind, log_q = swap_proposal(current, mix, p, rng), "swap", 0.0
    cand_score = score(cand)
    cur_score = _cached(score, current)
    if not math.isfinite(cur_score):
        raise ValueError("current state has non-finite score")
    if cand_score == -math.inf:
        return Transition(current, cur_score, False, kind)
    log_r = cand_score - cur_score + log_q
    if log_r >= 0 or rng.random() < math.exp(log_r):
        return Transition(cand, _cached(score, cand), True, kind)
    return Transition(current, cur_score, False, kind)


class MemoScore:
    """Log posterior backed by a visited-model store.

    Deterministic evaluators are fitted once per model; stochastic ones
    refit on every call and the store keeps the running maximum.
    """

    def __init__(self, evaluator: Evaluator, prior: ModelPrior, store: VisitedModelStore, rng=None):
        self.evaluator = evaluator
        self.prior = prior
        self.store = store
        self.rng = rng
        self.p = evaluator.data.p
        self.fits = 0

    def _log_prior(self, model: int) -> float:
        return model_log_prior(model, self.prior, self.p)

    def __call__(self, model: int) -> float:
        best = self.store.best(model)
        if best is not None and self.evaluator.deterministic:
            self.store.record_visit(model, best)
        else:
            value, beta = self.evaluator(model, self.rng)
            self.fits += 1
            self.store.record_visit(model, value, beta)
        return self.cached(model)

    def cached(self, model: int) -> float:
        best = self.store.best(model)
        if best is None:
            return self(model)
        return best + self._log_prior(model)


@dataclass
class ChainResult:
    trace: List[int]
    store: VisitedModelStore
    accepted: int = 0
    fits: int = 0


def initial_model(score: Score, p: int, rng, attempts: int = 100) -> int:
    """Uniformly random model with a finite score (falls back to the null model)."""
    for _ in range(attempts):
        model = model_from_bits(rng.integers(0, 2, size=p))
        if math.isfinite(score(model)):
            return model
    if math.isfinite(score(0)):
        return 0
    raise ValueError("could not find a starting model with finite evidence")


def run_chain(evaluator: Evaluator, prior: ModelPrior = ModelPrior(), mix: KernelMix = KernelMix(),
              iterations: int = 1000, rng_seed=None, start: Optional[int] = None) -> ChainResult:
    """MJMCMC chain on exact evidence; the trace keeps every state (no burn-in)."""
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    p = evaluator.data.p
    check_p(p)
    rng = np.random.default_rng(rng_seed)
    store = VisitedModelStore(p)
    score = MemoScore(evaluator, prior, store, rng)
    current = initial_model(score, p, rng) if start is None else start
    if not math.isfinite(score(current)):
        raise ValueError("starting model has non-finite evidence")
    trace, accepted = [], 0
    for _ in range(iterations):
        step = mh_step(current, mix, score, p, rng)
        current = step.model
        accepted += step.accepted
        trace.append(current)
    return ChainResult(trace, store, accepted, score.fits)


def trace_to_text(trace, p: int) -> str:
    return "".join(model_hex(m, p) + "\n" for m in trace)


def _chain_task(args):
    evaluator, prior, mix, iterations, seed_seq = args
    return run_chain(evaluator, prior, mix, iterations, np.random.default_rng(seed_seq))


def run_chains(evaluator: Evaluator, prior: ModelPrior = ModelPrior(), mix: KernelMix = KernelMix(),
               iterations: int = 1000, chains: int = 1, seed=None, workers: int = 1):
    """Independent chains with spawned seeds; returns (results, max-merged store)."""
    if chains < 1:
        raise ValueError("chains must be at least 1")
    seqs = np.random.SeedSequence(seed).spawn(chains)
    tasks = [(evaluator, prior, mix, iterations, s) for s in seqs]
    if workers > 1 and chains > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(min(workers, chains)) as pool:
            results = list(pool.map(_chain_task, tasks))
    else:
        results = [_chain_task(t) for t in tasks]
    merged = results[0].store
    for res in results[1:]:
        merged = merged.merge(res.store)
    return results, merged
