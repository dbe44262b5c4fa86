"""Log marginal likelihood evaluators.

Values are natural-log and may drop model-independent constants; only
differences between models are ever used.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from tallbms import _kernels as K
from tallbms.glm import Dataset, Family, RankDeficientError, log_likelihood, working_quantities
from tallbms.optim import DivergenceError, SirlsSgdConfig, irls
from tallbms.space import model_columns, model_size

KINDS = ("bic", "laplace", "gprior", "aic")


class CurvatureError(np.linalg.LinAlgError):
    """Negative Hessian at the mode is not positive definite."""


@dataclass(frozen=True)
class EvidenceSpec:
    kind: str = "bic"
    g: Optional[float] = None
    # Precision of an independent N(0, 1/prior_precision) prior on every
    # coefficient; 0 means flat (only used by the full Laplace evaluator).
    prior_precision: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"evidence kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "gprior" and not (self.g is not None and self.g > 0):
            raise ValueError("g-prior evidence needs g > 0")
        if self.prior_precision < 0:
            raise ValueError("prior_precision must be nonnegative")

    def check(self, family: Family):
        if self.kind == "gprior" and Family.parse(family) is not Family.GAUSSIAN:
            raise ValueError("g-prior evidence is only defined for Gaussian data")


@dataclass(frozen=True)
class LogEvidence:
    value: float
    exact: bool = False


def _sub(data: Dataset, model: int, beta=None) -> Dataset:
    sub = data.columns(model_columns(model, data.p))
    if beta is not None and np.size(beta) != sub.m:
        raise ValueError(f"model uses {sub.m} coefficients, got {np.size(beta)}")
    return sub


def log_mlik_bic(data: Dataset, model: int, beta_hat) -> LogEvidence:
    """log p(y | beta_hat) - (|theta| / 2) log n, |theta| = 1 + covariates."""
    sub = _sub(data, model, beta_hat)
    ll = log_likelihood(sub, beta_hat)
    return LogEvidence(ll - 0.5 * sub.m * math.log(data.n))


def log_mlik_laplace_full(data: Dataset, model: int, mode, log_prior_at_mode: float,
                          prior_precision=0.0, dispersion: Optional[float] = None) -> LogEvidence:
    """Laplace approximation with the observed information at ``mode``.

    The negative Hessian is X^T W X / dispersion plus the prior precision
    (scalar or matrix).  Gaussian dispersion defaults to the profiled RSS/n
    at the mode, held fixed.
    """
    mode = np.asarray(mode, dtype=np.float64)
    if mode.size == 0:
        raise ValueError("Laplace approximation needs at least one parameter")
    sub = _sub(data, model, mode)
    if sub.family is Family.GAUSSIAN and dispersion is None:
        resid = sub.y - sub.x @ mode
        dispersion = max(float(resid @ resid) / sub.n, K.SIGMA2_FLOOR)
    phi = 1.0 if dispersion is None else float(dispersion)
    state = working_quantities(sub, mode)
    S = (sub.x.T * state.w) @ sub.x / phi
    S = S + (np.eye(sub.m) * prior_precision if np.ndim(prior_precision) == 0 else prior_precision)
    try:
        chol = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise CurvatureError("negative Hessian at the mode is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    ll = log_likelihood(sub, mode, dispersion=dispersion)
    value = ll + log_prior_at_mode + 0.5 * sub.m * math.log(2 * math.pi) - 0.5 * logdet
    return LogEvidence(float(value))


def r_squared(data: Dataset, model: int, beta=None) -> float:
    """Coefficient of determination of ``model`` (OLS fit unless ``beta`` given)."""
    if data.family is not Family.GAUSSIAN:
        raise ValueError("R^2 is only defined for Gaussian data")
    yc = data.y - data.y.mean()
    tss = float(yc @ yc)
    if tss <= 0:
        raise ValueError("response is constant")
    if beta is None and model == 0:
        return 0.0
    sub = _sub(data, model, beta)
    if beta is None:
        beta, ok = K.wls_solve(sub.x, np.arange(sub.n), np.ones(sub.n), sub.y)
        if not ok:
            raise RankDeficientError("design is rank deficient", model=model)
    resid = sub.y - sub.x @ np.asarray(beta, dtype=np.float64)
    return 1.0 - float(resid @ resid) / tss


def log_mlik_gprior(data: Dataset, model: int, g: float, beta=None) -> LogEvidence:
    """Zellner g-prior evidence ((n-p-1)/2) log(1+g) - ((n-1)/2) log(1+g(1-R^2)).

    Exact for the OLS fit; with ``beta`` the R^2 is evaluated at those
    coefficients instead (an approximation that can only lower the value).
    """
    if data.family is not Family.GAUSSIAN:
        raise ValueError("g-prior evidence is only defined for Gaussian data")
    if not g > 0:
        raise ValueError("g must be positive")
    n, p = data.n, model_size(model)
    r2 = r_squared(data, model, beta)
    value = 0.5 * (n - p - 1) * math.log1p(g) - 0.5 * (n - 1) * math.log1p(g * (1.0 - r2))
    return LogEvidence(value, exact=beta is None)


def log_mlik_aic(deviance: float, model: int) -> LogEvidence:
    """-(deviance + 2 * number of selected covariates) / 2."""
    if deviance < 0:
        raise ValueError("deviance must be nonnegative")
    return LogEvidence(-0.5 * (deviance + 2 * model_size(model)))


class Evaluator:
    """Fits a model and scores it on the full data.

    ``fitter`` is ``"irls"`` (exact MLE) or a :class:`SirlsSgdConfig`
    (subsampled, stochastic).  Failures surface as RankDeficientError or
    DivergenceError from :meth:`fit`.
    """

    def __init__(self, data: Dataset, spec: EvidenceSpec, fitter="irls"):
        spec.check(data.family)
        if not (fitter == "irls" or isinstance(fitter, SirlsSgdConfig)):
            raise ValueError(f"unknown fitter {fitter!r}")
        self.data = data
        self.spec = spec
        self.fitter = fitter

    @property
    def deterministic(self) -> bool:
        return self.fitter == "irls"

    def design(self, model: int) -> Dataset:
        return _sub(self.data, model)

    def fit(self, model: int, rng=None, beta_start=None, schedule_offset: int = 0, sub=None):
        """Fit ``model``; a warm start may resume the BSGD schedule at ``schedule_offset``."""
        sub = self.design(model) if sub is None else sub
        if self.fitter == "irls":
            return irls(sub, model=model)
        cfg = self.fitter
        if schedule_offset:
            cfg = replace(cfg, schedule=cfg.schedule.shifted(schedule_offset))
        return cfg.run(sub, rng, beta_start=beta_start, model=model)

    def evaluate_at(self, model: int, beta, sub=None, full_loglik: Optional[float] = None) -> float:
        """Log evidence of ``model`` at coefficients ``beta``.

        ``full_loglik`` may carry the already computed full-data
        log-likelihood at exactly these coefficients.
        """
        spec, data = self.spec, self.data
        if spec.kind == "gprior":
            if self.fitter == "irls":
                return log_mlik_gprior(data, model, spec.g).value
            return log_mlik_gprior(data, model, spec.g, beta).value
        sub = _sub(data, model, beta) if sub is None else sub
        beta = np.ascontiguousarray(beta, dtype=np.float64)
        if spec.kind == "bic":
            if full_loglik is None:
                return log_mlik_bic(data, model, beta).value
            return full_loglik - 0.5 * sub.m * math.log(data.n)
        if spec.kind == "aic":
            _, dev = K.loglik_deviance(sub.x, sub.y, sub.family.code, beta, -1.0)
            return log_mlik_aic(float(dev), model).value
        log_prior = 0.0
        if spec.prior_precision > 0:
            k = np.size(beta)
            log_prior = (0.5 * k * math.log(spec.prior_precision / (2 * math.pi))
                         - 0.5 * spec.prior_precision * float(np.dot(beta, beta)))
        return log_mlik_laplace_full(data, model, beta, log_prior, spec.prior_precision).value

    def __call__(self, model: int, rng=None, beta_start=None):
        """(log evidence, beta); -inf with beta None when the fit fails."""
        try:
            sub = self.design(model)
            res = self.fit(model, rng, beta_start, sub=sub)
            return self.evaluate_at(model, res.beta, sub, res.full_data_loglik), res.beta
        except (RankDeficientError, DivergenceError, CurvatureError):
            return -math.inf, None
