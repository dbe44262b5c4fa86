"""MLE optimizers for GLMs: IRLS, GD, BSGD, S-IRLS and S-IRLS-SGD.

Step sizes act on the mean log-likelihood: a BSGD step moves by
``alpha_t * ghat / n`` where ``ghat`` is the n/b-scaled batch score, so the
same alpha schedule is meaningful regardless of n.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from tallbms import _kernels as K
from tallbms.glm import Dataset, Family, RankDeficientError


class DivergenceError(FloatingPointError):
    """The objective became non-finite; ``beta`` holds the last finite iterate."""

    def __init__(self, message: str, beta: np.ndarray):
        super().__init__(message)
        self.beta = beta


@dataclass(frozen=True)
class StepSchedule:
    """alpha_t = alpha0 * decay**t, t = 0, 1, ..."""

    alpha0: float = 0.05
    decay: float = 0.99

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")

    def alpha(self, t: int) -> float:
        return self.alpha0 * self.decay ** t

    def shifted(self, t: int) -> "StepSchedule":
        """The same schedule resumed at position t."""
        return StepSchedule(self.alpha(t), self.decay)


# Step schedules of the compared optimizers (n = 1e6, 16 parameters).
BSGD_SCHEDULE = StepSchedule(alpha0=0.20, decay=0.99995)
SGD_SCHEDULE = StepSchedule(alpha0=0.05, decay=0.99)


@dataclass(frozen=True)
class CoolingSchedule:
    """Constant then exponential decay: tau_t = tau0 * tau_d**max(t - t_const, 0)."""

    tau0: float = 1.0
    tau_d: float = 0.95
    t_const: int = 5

    def __post_init__(self):
        if not 0 < self.tau0 <= 1:
            raise ValueError("tau0 must lie in (0, 1]")
        if not 0 < self.tau_d <= 1:
            raise ValueError("tau_d must lie in (0, 1]")
        if self.t_const < 0:
            raise ValueError("t_const must be nonnegative")

    def tau(self, t: int) -> float:
        return self.tau0 * self.tau_d ** max(t - self.t_const, 0)


@dataclass(frozen=True)
class SirlsConfig:
    n_s: int
    T: int = 75
    cooling: CoolingSchedule = CoolingSchedule()
    delta_expl: float = 0.5
    eps_w: float = 1e-3
    # Weight w = (xi^2 / var_mu)^0.5 instead of the Fisher-scoring xi^2 / var_mu.
    sqrt_weights: bool = False

    def check(self, n: int):
        if not 1 <= self.n_s <= n:
            raise ValueError(f"subsample size {self.n_s} outside [1, {n}]")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.delta_expl > 0:
            raise ValueError("delta_expl must be positive")
        if not self.eps_w > 0:
            raise ValueError("eps_w must be positive")


@dataclass
class OptimResult:
    beta: np.ndarray
    deviance_trace: np.ndarray
    iterations: int
    converged: bool
    full_data_deviance: float
    full_data_loglik: float
    path: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


def subsample_size(n: int, fraction: float) -> int:
    return int(min(n, max(1, round(fraction * n))))


def _rng(seed):
    return np.random.default_rng(seed)


def _finish(data: Dataset, beta, trace, iterations, converged, path=None, **extras) -> OptimResult:
    ll, dev = K.loglik_deviance(data.x, data.y, data.family.code, beta, -1.0)
    return OptimResult(beta=beta, deviance_trace=np.asarray(trace), iterations=int(iterations),
                       converged=bool(converged), full_data_deviance=float(dev),
                       full_data_loglik=float(ll), path=path, extras=extras)


def _start(data: Dataset, beta0) -> np.ndarray:
    beta0 = np.ascontiguousarray(beta0, dtype=np.float64).ravel()
    if beta0.shape[0] != data.m:
        raise ValueError(f"start has {beta0.shape[0]} entries, design has {data.m} columns")
    return beta0


def irls(data: Dataset, tol: float = 1e-8, max_iter: int = 25, sqrt_weights: bool = False,
         model: Optional[int] = None) -> OptimResult:
    """Full-data IRLS (Fisher scoring) from the family's starting mean.

    Stops once the sup-norm of the unit-dispersion score drops below ``tol``.
    """
    beta, trace, it, converged, status = K.irls_kernel(
        data.x, data.y, data.family.code, float(tol), int(max_iter), bool(sqrt_weights))
    if status == K.RANK_DEFICIENT:
        raise RankDeficientError("X^T W X is singular for this design", model=model)
    if status == K.DIVERGED:
        raise DivergenceError("IRLS deviance became non-finite", beta)
    return _finish(data, beta, trace, it, converged)


def gd(data: Dataset, beta0, schedule: StepSchedule, tol: float = 1e-8,
       max_iter: int = 10_000) -> OptimResult:
    """Full-gradient ascent; stops when the sup-norm step is at most ``tol``."""
    beta, path, trace, it, status = K.ascent_kernel(
        data.x, data.y, data.family.code, _start(data, beta0), schedule.alpha0,
        schedule.decay, int(max_iter), data.n, float(tol), _rng(0), True)
    if status == K.DIVERGED:
        raise DivergenceError(f"gradient descent diverged after {it} iterations", beta)
    steps = np.abs(np.diff(np.vstack([beta0, path]), axis=0)).max(axis=1) if it else []
    converged = bool(it and steps[-1] <= tol)
    return _finish(data, beta, trace, it, converged, path=path)


def bsgd(data: Dataset, beta0, batch_size: int, schedule: StepSchedule, iterations: int,
         rng_seed=None, keep_trace: bool = True) -> OptimResult:
    """Batch SGD with rows drawn uniformly without replacement each iteration.

    batch_size=1 is plain SGD; batch_size=n with decay=1 reproduces :func:`gd`.
    ``keep_trace=False`` skips the per-step batch deviance.
    """
    if not 1 <= batch_size <= data.n:
        raise ValueError(f"batch size {batch_size} outside [1, {data.n}]")
    beta, path, trace, it, status = K.ascent_kernel(
        data.x, data.y, data.family.code, _start(data, beta0), schedule.alpha0,
        schedule.decay, int(iterations), int(batch_size), -1.0, _rng(rng_seed), bool(keep_trace))
    if status == K.DIVERGED:
        raise DivergenceError(f"BSGD diverged after {it} iterations", beta)
    return _finish(data, beta, trace, it, True, path=path)


def s_irls(data: Dataset, config: SirlsConfig, rng_seed=None, model: Optional[int] = None,
           full_eval: bool = True) -> OptimResult:
    """Subsampling IRLS with cooling and exploding-deviance backtracking.

    ``extras`` carries the per-iteration temperature and a flag marking
    iterations where the subsample deviance exploded and the iterate was
    rolled back two steps.  ``full_eval=False`` skips the final full-data
    pass (the result then reports NaN deviance and log-likelihood).
    """
    config.check(data.n)
    c = config.cooling
    beta, path, dev, tau, exploded, it, status = K.sirls_kernel(
        data.x, data.y, data.family.code, int(config.n_s), int(config.T), c.tau0, c.tau_d,
        int(c.t_const), config.delta_expl, config.eps_w, bool(config.sqrt_weights),
        _rng(rng_seed))
    if status == K.RANK_DEFICIENT:
        raise RankDeficientError("subsample WLS singular twice in a row", model=model)
    if not full_eval:
        return OptimResult(beta, dev, int(it), True, math.nan, math.nan, path,
                           dict(tau=tau, exploded=exploded))
    return _finish(data, beta, dev, it, True, path=path, tau=tau, exploded=exploded)


def s_irls_sgd(data: Dataset, n_init: int, sirls: Optional[SirlsConfig], sgd_batch: int,
               sgd_sched: StepSchedule, sgd_iters: int, rng_seed=None,
               beta_start=None, model: Optional[int] = None, keep_trace: bool = True) -> OptimResult:
    """S-IRLS warm start (or N(0,1) start when n_init == 0) followed by BSGD.

    ``beta_start`` skips the initialisation phase entirely (warm restart).
    The returned deviance/log-likelihood are evaluated once on the full data.
    """
    rng = _rng(rng_seed)
    if beta_start is not None:
        start = _start(data, beta_start)
        init_iters = 0
    elif n_init > 0:
        if sirls is None:
            raise ValueError("n_init > 0 requires an S-IRLS configuration")
        res = s_irls(data, replace(sirls, T=n_init), rng, model=model, full_eval=False)
        start = res.beta
        init_iters = res.iterations
    else:
        start = rng.standard_normal(data.m)
        init_iters = 0
    res = bsgd(data, start, sgd_batch, sgd_sched, sgd_iters, rng, keep_trace)
    res.extras.update(start=start, init_iterations=init_iters)
    return res


@dataclass(frozen=True)
class SirlsSgdConfig:
    """S-IRLS-SGD settings with the subsample given as a share of n.

    The same subsample size is used for S-IRLS and for the BSGD batch.
    """

    fraction: float = 0.01
    n_init: int = 75
    sgd_iters: int = 500
    schedule: StepSchedule = SGD_SCHEDULE
    cooling: CoolingSchedule = CoolingSchedule()
    delta_expl: float = 0.5
    eps_w: float = 1e-3
    sqrt_weights: bool = False

    @classmethod
    def for_family(cls, family, **overrides) -> "SirlsSgdConfig":
        """20 + 250 iterations for Gaussian models, 75 + 500 for logistic ones."""
        if Family.parse(family) is Family.GAUSSIAN:
            base = dict(n_init=20, sgd_iters=250)
        else:
            base = dict(n_init=75, sgd_iters=500)
        base.update(overrides)
        return cls(**base)

    def subsample(self, n: int) -> int:
        return subsample_size(n, self.fraction)

    def sirls(self, n: int) -> SirlsConfig:
        return SirlsConfig(n_s=self.subsample(n), T=max(self.n_init, 1), cooling=self.cooling,
                           delta_expl=self.delta_expl, eps_w=self.eps_w,
                           sqrt_weights=self.sqrt_weights)

    def run(self, data: Dataset, rng=None, beta_start=None, model=None,
            keep_trace: bool = False) -> OptimResult:
        return s_irls_sgd(data, self.n_init, self.sirls(data.n), self.subsample(data.n),
                          self.schedule, self.sgd_iters, rng, beta_start=beta_start, model=model,
                          keep_trace=keep_trace)
