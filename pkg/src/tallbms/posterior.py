"""Visited-model store and posterior estimators over the model space."""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional

import numpy as np

from tallbms.evidence import Evaluator
from tallbms.space import ModelPrior, check_p, inclusion_matrix, model_hex, model_log_prior

ENUMERATION_LIMIT = 25


@dataclass
class StoreEntry:
    best_log_evidence: float
    visits: int = 0
    last_beta: Optional[np.ndarray] = None
    # Coefficients and BSGD schedule position for warm restarts.
    resume_beta: Optional[np.ndarray] = None
    resume_step: int = 0


class VisitedModelStore:
    """Best log evidence ever seen per model, plus visit counts.

    ``record_visit`` only ever raises the stored value; ``visits`` counts how
    often a model was scored.  ``last_beta`` belongs to the best evaluation.
    """

    def __init__(self, p: int):
        check_p(p)
        self.p = p
        self.entries: Dict[int, StoreEntry] = {}

    def __len__(self):
        return len(self.entries)

    def __contains__(self, model: int):
        return model in self.entries

    def __iter__(self):
        return iter(self.entries)

    def best(self, model: int) -> Optional[float]:
        entry = self.entries.get(model)
        return None if entry is None else entry.best_log_evidence

    def record_visit(self, model: int, log_evidence: float, beta=None, count: bool = True) -> StoreEntry:
        """Max-update the stored evidence; ``count`` adds one to the visit tally."""
        if not 0 <= model < 1 << self.p:
            raise ValueError(f"model {model} outside the space of {self.p} covariates")
        if math.isnan(log_evidence):
            raise ValueError("log evidence is NaN")
        entry = self.entries.get(model)
        improved = entry is None or log_evidence > entry.best_log_evidence
        if entry is None:
            entry = self.entries[model] = StoreEntry(log_evidence)
        elif improved:
            entry.best_log_evidence = log_evidence
        if count:
            entry.visits += 1
        if improved and beta is not None:
            entry.last_beta = np.array(beta, dtype=np.float64)
        return entry

    def set_resume(self, model: int, beta, step: int):
        entry = self.entries[model]
        entry.resume_beta = np.array(beta, dtype=np.float64)
        entry.resume_step = int(step)

    def log_evidence_map(self) -> Dict[int, float]:
        return {m: e.best_log_evidence for m, e in self.entries.items()}

    def merge(self, other: "VisitedModelStore") -> "VisitedModelStore":
        """Union keeping the larger evidence and summing visits."""
        if other.p != self.p:
            raise ValueError("stores cover different model spaces")
        out = VisitedModelStore(self.p)
        for src in (self, other):
            for model, e in src.entries.items():
                dst = out.entries.get(model)
                if dst is None:
                    out.entries[model] = StoreEntry(e.best_log_evidence, e.visits, e.last_beta,
                                                    e.resume_beta, e.resume_step)
                else:
                    dst.best_log_evidence = max(dst.best_log_evidence, e.best_log_evidence)
                    dst.visits += e.visits
        return out

    def to_text(self) -> str:
        """One line per model: hex bitmask, log evidence (%.17g), visits; sorted."""
        lines = [f"{model_hex(m, self.p)} {e.best_log_evidence:.17g} {e.visits}"
                 for m, e in sorted(self.entries.items())]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, p: int) -> "VisitedModelStore":
        store = cls(p)
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields, got {len(parts)}")
            model = int(parts[0], 16)
            store.record_visit(model, float(parts[1]), count=False)
            store.entries[model].visits = int(parts[2])
        return store


@dataclass
class PosteriorEstimates:
    p: int
    estimator: str
    model_probs: Dict[int, float]
    inclusion_probs: np.ndarray
    log_evidence: Dict[int, float] = field(default_factory=dict)

    def top(self, k: int = 10):
        return sorted(self.model_probs.items(), key=lambda kv: -kv[1])[:k]


def inclusion_from_probs(model_probs: Dict[int, float], p: int) -> np.ndarray:
    if not model_probs:
        return np.zeros(p)
    models = np.fromiter(model_probs.keys(), dtype=np.uint64, count=len(model_probs))
    probs = np.fromiter(model_probs.values(), dtype=np.float64, count=len(model_probs))
    # Rounding in the matrix product can leave values a few ulps outside [0, 1].
    return np.clip(probs @ inclusion_matrix(models, p), 0.0, 1.0)


def inclusion_probabilities(est: PosteriorEstimates) -> np.ndarray:
    """Marginal inclusion probability of every covariate."""
    return inclusion_from_probs(est.model_probs, est.p)


def _normalise(models, log_weights, p: int, estimator: str, log_evidence=None) -> PosteriorEstimates:
    log_weights = np.asarray(log_weights, dtype=np.float64)
    finite = np.isfinite(log_weights)
    if not finite.any():
        raise ValueError("no model has finite evidence")
    probs = np.zeros_like(log_weights)
    # Shift by the max, then divide: exact for ties, stable for large spreads.
    w = np.exp(log_weights[finite] - log_weights[finite].max())
    probs[finite] = w / math.fsum(w)
    model_probs = {int(m): float(q) for m, q in zip(models, probs)}
    return PosteriorEstimates(p, estimator, model_probs, inclusion_from_probs(model_probs, p),
                              dict(log_evidence or {}))


def rm_estimates(store: VisitedModelStore, prior: ModelPrior = ModelPrior()) -> PosteriorEstimates:
    """Renormalised evidence x prior over the visited models."""
    if not len(store):
        raise ValueError("store is empty")
    models = list(store.entries)
    lw = [store.entries[m].best_log_evidence + model_log_prior(m, prior, store.p) for m in models]
    return _normalise(models, lw, store.p, "rm", store.log_evidence_map())


def mc_estimates(trace: Iterable[int], p: int) -> PosteriorEstimates:
    """Visit frequencies along a chain trace."""
    counts: Dict[int, int] = {}
    total = 0
    for m in trace:
        counts[int(m)] = counts.get(int(m), 0) + 1
        total += 1
    if not total:
        raise ValueError("trace is empty")
    model_probs = {m: c / total for m, c in counts.items()}
    return PosteriorEstimates(p, "mc", model_probs, inclusion_from_probs(model_probs, p))


def estimates_from_log_evidence(log_evidence: np.ndarray, prior: ModelPrior, p: int) -> PosteriorEstimates:
    """Exact posterior from an evidence vector indexed by model bitmask."""
    log_evidence = np.asarray(log_evidence, dtype=np.float64)
    if log_evidence.shape != (1 << p,):
        raise ValueError(f"expected {1 << p} evidence values")
    models = np.arange(1 << p)
    k = inclusion_matrix(models, p).sum(axis=1)
    lw = log_evidence + k * math.log(prior.q) + (p - k) * math.log1p(-prior.q)
    return _normalise(models, lw, p, "exact", dict(zip(models.tolist(), log_evidence.tolist())))


def enumerate_log_evidence(evaluator: Evaluator, rng=None, allow_large: bool = False,
                           progress=None) -> np.ndarray:
    """Log evidence of all 2^p models (-inf where the fit fails)."""
    p = evaluator.data.p
    if p > ENUMERATION_LIMIT and not allow_large:
        raise ValueError(f"refusing to enumerate 2^{p} models; pass allow_large=True")
    if rng is None and not evaluator.deterministic:
        raise ValueError("a stochastic evaluator needs an rng")
    out = np.empty(1 << p)
    for model in range(1 << p):
        out[model], _ = evaluator(model, rng)
        if progress is not None:
            progress(model)
    return out


def enumerate_all(evaluator: Evaluator, prior: ModelPrior = ModelPrior(), rng=None,
                  allow_large: bool = False) -> PosteriorEstimates:
    log_ev = enumerate_log_evidence(evaluator, rng, allow_large)
    return estimates_from_log_evidence(log_ev, prior, evaluator.data.p)
