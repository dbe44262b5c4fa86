"""GLM primitives for the Gaussian-identity and Bernoulli-logit families."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from tallbms import _kernels as K


class Family(Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"

    @property
    def code(self) -> int:
        return K.GAUSSIAN if self is Family.GAUSSIAN else K.BERNOULLI

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"gaussian": cls.GAUSSIAN, "normal": cls.GAUSSIAN, "identity": cls.GAUSSIAN,
                   "bernoulli": cls.BERNOULLI, "logistic": cls.BERNOULLI, "binomial": cls.BERNOULLI,
                   "logit": cls.BERNOULLI}
        if key not in aliases:
            raise ValueError(f"unknown family {value!r}")
        return aliases[key]


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when X^T W X is singular for the columns in use."""

    def __init__(self, message: str, model: Optional[int] = None):
        super().__init__(message)
        self.model = model


@dataclass(frozen=True)
class Dataset:
    """Design matrix with an all-ones intercept in column 0, plus response.

    ``p`` (number of candidate covariates) is ``x.shape[1] - 1``.
    """

    x: np.ndarray
    y: np.ndarray
    family: Family
    names: Sequence[str] = field(default=())

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.float64).ravel()
        family = Family.parse(self.family)
        if x.ndim != 2:
            raise ValueError("x must be a 2-D array")
        n, m = x.shape
        if y.shape[0] != n:
            raise ValueError(f"x has {n} rows but y has {y.shape[0]} entries")
        if m < 1 or n < m:
            raise ValueError(f"need n >= m >= 1, got n={n}, m={m}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite entries")
        if not np.all(x[:, 0] == 1.0):
            raise ValueError("column 0 of x must be the all-ones intercept")
        if family is Family.BERNOULLI and not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("Bernoulli responses must be exactly 0 or 1")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "names", tuple(self.names))

    @classmethod
    def from_covariates(cls, covariates, y, family, names=()) -> "Dataset":
        """Build a dataset by prepending the intercept column to ``covariates``."""
        covariates = np.asarray(covariates, dtype=np.float64)
        if covariates.ndim == 1:
            covariates = covariates[:, None]
        x = np.column_stack([np.ones(covariates.shape[0]), covariates])
        return cls(x, y, family, names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def m(self) -> int:
        return self.x.shape[1]

    @property
    def p(self) -> int:
        return self.x.shape[1] - 1

    def columns(self, cols) -> "Dataset":
        """Dataset restricted to the given column indices (0 must be included)."""
        cols = np.asarray(cols, dtype=np.int64)
        if cols.ndim != 1 or cols.size == 0 or cols[0] != 0:
            raise ValueError("column subsets must start with the intercept column 0")
        if cols.min() < 0 or cols.max() >= self.m:
            raise IndexError("column index out of range")
        names = tuple(self.names[c - 1] for c in cols[1:]) if self.names else ()
        if self.n < cols.size:
            return Dataset(self.x[:, cols], self.y, self.family, names)
        # Entries were validated on construction; skip the O(n m) checks.
        x = self.x.take(cols, axis=1)
        x.setflags(write=False)
        sub = object.__new__(Dataset)
        for key, value in (("x", x), ("y", self.y), ("family", self.family), ("names", names)):
            object.__setattr__(sub, key, value)
        return sub

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.family, self.names)


@dataclass
class GlmState:
    eta: np.ndarray
    mu: np.ndarray
    xi: np.ndarray
    var_mu: np.ndarray
    w: np.ndarray
    z: np.ndarray


def _beta(data: Dataset, beta) -> np.ndarray:
    beta = np.ascontiguousarray(beta, dtype=np.float64).ravel()
    if beta.shape[0] != data.m:
        raise ValueError(f"beta has {beta.shape[0]} entries, design has {data.m} columns")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta contains non-finite entries")
    return beta


def link(family: Family, mu) -> np.ndarray:
    """The link h(mu)."""
    family = Family.parse(family)
    mu = np.asarray(mu, dtype=np.float64)
    if family is Family.GAUSSIAN:
        return mu.copy()
    return np.log(mu) - np.log1p(-mu)


def link_inverse(family: Family, eta) -> np.ndarray:
    family = Family.parse(family)
    eta = np.asarray(eta, dtype=np.float64)
    if not np.all(np.isfinite(eta)):
        raise ValueError("eta contains non-finite entries")
    if family is Family.GAUSSIAN:
        return eta.copy()
    mu = np.empty_like(eta)
    pos = eta >= 0
    mu[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    mu[~pos] = e / (1.0 + e)
    return np.clip(mu, K.MU_EPS, 1.0 - K.MU_EPS)


def log_likelihood(data: Dataset, beta, dispersion: Optional[float] = None) -> float:
    """Log-likelihood at ``beta``.

    Gaussian uses the profiled dispersion RSS/n (floored at 1e-12) unless
    ``dispersion`` is given.
    """
    beta = _beta(data, beta)
    phi = -1.0 if dispersion is None else float(dispersion)
    ll, _ = K.loglik_deviance(data.x, data.y, data.family.code, beta, phi)
    return float(ll)


def deviance(data: Dataset, beta) -> float:
    """RSS for Gaussian, -2 log-likelihood for Bernoulli."""
    beta = _beta(data, beta)
    _, dev = K.loglik_deviance(data.x, data.y, data.family.code, beta, -1.0)
    return float(dev)


def score(data: Dataset, beta, dispersion: Optional[float] = None) -> np.ndarray:
    """X^T D V^{-1} (y - mu); gradient of :func:`log_likelihood`.

    For both canonical links D V^{-1} reduces to 1/dispersion, so the
    Bernoulli score is X^T (y - mu).  Gaussian V defaults to the profiled
    RSS/n, matching the profiled log-likelihood.
    """
    beta = _beta(data, beta)
    g = K.unit_score(data.x, data.y, data.family.code, beta, np.arange(data.n))
    if data.family is Family.GAUSSIAN:
        if dispersion is None:
            resid = data.y - data.x @ beta
            dispersion = max(float(resid @ resid) / data.n, K.SIGMA2_FLOOR)
        g = g / dispersion
    return g


def batch_score(data: Dataset, beta, rows) -> np.ndarray:
    """Unit-dispersion score of ``rows`` scaled by n/len(rows).

    Unbiased for the full unit-dispersion score under uniform sampling of
    ``rows`` without replacement.
    """
    beta = _beta(data, beta)
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    g = K.unit_score(data.x, data.y, data.family.code, beta, rows)
    return g * (data.n / rows.shape[0])


def working_quantities(data: Dataset, beta, sqrt_weights: bool = False) -> GlmState:
    """IRLS working quantities; w = xi^2 / var_mu (square-rooted if requested)."""
    beta = _beta(data, beta)
    eta = data.x @ beta
    out = K.working_all(data.family.code, eta, data.y, bool(sqrt_weights))
    return GlmState(eta=eta, mu=out[0], xi=out[1], var_mu=out[2], w=out[3], z=out[4])
