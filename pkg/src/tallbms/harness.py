"""Synthetic data, CSV ingestion, error metrics and the optimizer benchmark."""

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import List, Optional, Sequence, Tuple

import numpy as np

from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.glm import Dataset, Family, deviance
from tallbms.optim import (
    BSGD_SCHEDULE,
    SGD_SCHEDULE,
    SirlsConfig,
    SirlsSgdConfig,
    StepSchedule,
    bsgd,
    irls,
    s_irls,
    s_irls_sgd,
    subsample_size,
)
from tallbms.posterior import enumerate_log_evidence, estimates_from_log_evidence
from tallbms.space import ModelPrior, model_columns, model_hex

EXAMPLE1_BETA = (0.48, 8.72, 1.76, 1.87, 0, 0, 0, 0, 4, 0, 0, 0, 0, 0, 0)
WORKERS_ENV = "TALLBMS_WORKERS"
MISSING = {"", "na", "nan", "null", "none", "?"}

# Canonical crime CSV (built by scripts/make_crime_csv.py, not shipped): the
# 47-state UScrime table with every column but So on the log scale.  The
# first column is the response used for the g-prior study; the other 15 are
# the candidate covariates in this order.
CRIME_COLUMNS = ("M", "So", "Ed", "Po1", "Po2", "LF", "M.F", "Pop", "NW", "U1", "U2", "GDP",
                 "Ineq", "Prob", "Time", "y")
CRIME_RESPONSE = "M"
CRIME_SHA256 = "7d32bbbb5fb861fa56fdb7373ab700618658c549bda08fa27f4234987bbd49c9"


class LoadError(ValueError):
    """Malformed or incomplete input data."""


def read_matrix_csv(path) -> np.ndarray:
    """Numeric matrix from a CSV file with a header row."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise LoadError(f"{path}: no data rows")
    return np.array([[float(v) for v in row] for row in rows[1:]])


def default_correlation() -> np.ndarray:
    """Shipped 15 x 15 correlation: 0.2 everywhere except Corr(x2, x9) = 0.99."""
    ref = resources.files("tallbms") / "data" / "example1_correlation.csv"
    with resources.as_file(ref) as path:
        return read_matrix_csv(path)


def check_correlation(corr: np.ndarray) -> np.ndarray:
    corr = np.asarray(corr, dtype=np.float64)
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError("correlation matrix must be square")
    if not np.allclose(corr, corr.T, atol=1e-12):
        raise ValueError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
        raise ValueError("correlation matrix must have a unit diagonal")
    eig = np.linalg.eigvalsh(corr)
    if eig[0] <= 0:
        raise ValueError(f"correlation matrix is not positive definite: eigenvalue {eig[0]:.6g}")
    return corr


@dataclass(frozen=True)
class Example1Spec:
    n: int = 10_000
    seed: int = 0
    beta_base: Tuple[float, ...] = EXAMPLE1_BETA
    # None selects the shipped default matrix.
    correlation: Optional[np.ndarray] = field(default=None, compare=False)
    target: str = "both"

    def scaled_beta(self) -> np.ndarray:
        """beta / sqrt(n / 100): keeps the signal strength of n = 100."""
        return np.asarray(self.beta_base, dtype=np.float64) / math.sqrt(self.n / 100)


def gen_example1(spec: Example1Spec = Example1Spec()):
    """Correlated Gaussian covariates with Gaussian and centred-logit Bernoulli responses.

    Returns the datasets selected by ``spec.target``: a single Dataset for
    "gaussian" or "logistic", a (gaussian, logistic) pair for "both".
    """
    if spec.target not in ("gaussian", "logistic", "both"):
        raise ValueError(f"unknown target {spec.target!r}")
    if spec.n < 1:
        raise ValueError("n must be positive")
    corr = check_correlation(default_correlation() if spec.correlation is None else spec.correlation)
    beta = spec.scaled_beta()
    p = beta.shape[0]
    if corr.shape != (p, p):
        raise ValueError(f"correlation must be {p} x {p}")
    rng = np.random.default_rng(spec.seed)
    x = rng.standard_normal((spec.n, p)) @ np.linalg.cholesky(corr).T
    y = x @ beta + rng.standard_normal(spec.n)
    prob = 1.0 / (1.0 + np.exp(-(y - y.mean())))
    y_bin = (rng.random(spec.n) < prob).astype(np.float64)
    names = tuple(f"x{j + 1}" for j in range(p))
    gauss = Dataset.from_covariates(x, y, Family.GAUSSIAN, names)
    logit = Dataset.from_covariates(x, y_bin, Family.BERNOULLI, names)
    return {"gaussian": gauss, "logistic": logit, "both": (gauss, logit)}[spec.target]


def load_csv(path, response_column, family, columns: Optional[Sequence[str]] = None) -> Dataset:
    """Read a header-first numeric CSV; every column except the response is a covariate.

    ``columns`` restricts (and orders) the covariates.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if response_column not in header:
        raise LoadError(f"{path}: response column {response_column!r} not in header")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if not body:
        raise LoadError(f"{path}: no data rows")
    values = np.empty((len(body), len(header)))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(header):
            raise LoadError(f"{path}: line {line} has {len(row)} fields, header has {len(header)}")
        for j, cell in enumerate(row):
            text = cell.strip()
            if text.lower() in MISSING:
                raise LoadError(f"{path}: missing value at line {line}, column {header[j]!r}")
            try:
                values[i, j] = float(text)
            except ValueError:
                raise LoadError(f"{path}: non-numeric value {text!r} at line {line}, "
                                f"column {header[j]!r}") from None
            if not math.isfinite(values[i, j]):
                raise LoadError(f"{path}: non-finite value at line {line}, column {header[j]!r}")
    covs = [h for h in header if h != response_column] if columns is None else list(columns)
    missing = [c for c in covs if c not in header]
    if missing:
        raise LoadError(f"{path}: unknown columns {missing}")
    idx = [header.index(c) for c in covs]
    y = values[:, header.index(response_column)]
    try:
        return Dataset.from_covariates(values[:, idx], y, family, covs)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None


def write_csv(data: Dataset, path, response_name: str = "y"):
    """Covariates then response, 17 significant digits (round-trips exactly)."""
    names = list(data.names) or [f"x{j + 1}" for j in range(data.p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + [response_name])
        for xi, yi in zip(data.x[:, 1:], data.y):
            w.writerow([f"{v:.17g}" for v in xi] + [f"{yi:.17g}"])


def rmse(estimates, truth) -> np.ndarray:
    """Per-covariate sqrt(mean_k (estimate_k - truth)^2) over K runs."""
    est = np.atleast_2d(np.asarray(estimates, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape[0] < 1 or est.shape[1:] != truth.shape:
        raise ValueError(f"estimates {est.shape} do not match truth {truth.shape}")
    return np.sqrt(np.mean((est - truth) ** 2, axis=0))


@dataclass(frozen=True)
class OptimizerSetting:
    name: str
    kind: str  # irls | bsgd | sirls | sirls_sgd
    iterations: int = 0
    fraction: float = 0.001
    schedule: Optional[StepSchedule] = None
    n_init: int = 0


# Optimizer grid of the deviance benchmark (16 parameters, n = 1e6 in the original setting).
TABLE1 = (
    OptimizerSetting("IRLS", "irls", 25, 1.0),
    OptimizerSetting("BSGD 500", "bsgd", 500, 0.001, BSGD_SCHEDULE),
    OptimizerSetting("BSGD 1K", "bsgd", 1_000, 0.001, BSGD_SCHEDULE),
    OptimizerSetting("BSGD 5K", "bsgd", 5_000, 0.001, BSGD_SCHEDULE),
    OptimizerSetting("BSGD 10K", "bsgd", 10_000, 0.001, BSGD_SCHEDULE),
    OptimizerSetting("BSGD 20K", "bsgd", 20_000, 0.001, BSGD_SCHEDULE),
    OptimizerSetting("S-IRLS", "sirls", 75, 0.001),
    OptimizerSetting("SGD", "bsgd", 500, 0.001, SGD_SCHEDULE),
    OptimizerSetting("S-IRLS-SGD", "sirls_sgd", 500, 0.001, SGD_SCHEDULE, n_init=75),
)


def run_setting(data: Dataset, setting: OptimizerSetting, rng):
    """Fit one model with one optimizer setting; returns the OptimResult."""
    b = subsample_size(data.n, setting.fraction)
    if setting.kind == "irls":
        return irls(data, max_iter=setting.iterations)
    if setting.kind == "bsgd":
        return bsgd(data, rng.standard_normal(data.m), b, setting.schedule, setting.iterations, rng)
    if setting.kind == "sirls":
        return s_irls(data, SirlsConfig(n_s=b, T=setting.iterations), rng)
    if setting.kind == "sirls_sgd":
        return s_irls_sgd(data, setting.n_init, SirlsConfig(n_s=b, T=max(setting.n_init, 1)), b,
                          setting.schedule, setting.iterations, rng)
    raise ValueError(f"unknown optimizer kind {setting.kind!r}")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _bench_model(args):
    data, model, table, repeats, seed_seq = args
    sub = data.columns(model_columns(model, data.p))
    rows = []
    try:
        ref = irls(sub).full_data_deviance
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        return [dict(model_hex=model_hex(model, data.p), optimizer="IRLS", repeat=0,
                     deviance=math.nan, deviance_error=math.nan, seconds=math.nan,
                     status=f"failed: {exc}")]
    for setting, child in zip(table, seed_seq.spawn(len(table))):
        for rep, rep_seq in enumerate(child.spawn(repeats)):
            rng = np.random.default_rng(rep_seq)
            t0 = time.perf_counter()
            try:
                res = run_setting(sub, setting, rng)
                dev, status = res.full_data_deviance, "ok"
            except (np.linalg.LinAlgError, FloatingPointError) as exc:
                dev, status = math.nan, f"failed: {exc}"
            rows.append(dict(model_hex=model_hex(model, data.p), optimizer=setting.name,
                             repeat=rep, deviance=dev, deviance_error=dev - ref,
                             seconds=time.perf_counter() - t0, status=status))
    return rows


def benchmark_optimizers(data: Dataset, models: Sequence[int], table=TABLE1, repeats: int = 20,
                         seed: int = 0, workers: Optional[int] = None) -> List[dict]:
    """Long-format rows (one per model x optimizer x repeat) of deviance error and time.

    The deviance error is relative to full-data IRLS on the same model.
    Failed fits are kept with status "failed: ..." and NaN numbers.
    """
    if repeats < 1:
        raise ValueError("repeats must be positive")
    seqs = np.random.SeedSequence(seed).spawn(len(models))
    tasks = [(data, int(m), tuple(table), repeats, s) for m, s in zip(models, seqs)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            chunks = list(pool.map(_bench_model, tasks))
    else:
        chunks = [_bench_model(t) for t in tasks]
    return [row for chunk in chunks for row in chunk]


def write_rows(rows: List[dict], path, fields: Optional[Sequence[str]] = None):
    fields = list(fields or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.17g}" if isinstance(v, float) else v) for k, v in row.items()})


def deviance_gap(data: Dataset, model: int, beta) -> float:
    """Full-data deviance at ``beta`` minus the IRLS optimum for ``model``."""
    sub = data.columns(model_columns(model, data.p))
    return deviance(sub, beta) - irls(sub).full_data_deviance


@dataclass
class EnumerationStudy:
    truth: np.ndarray  # exact inclusion probabilities
    fractions: Tuple[float, ...]
    # fraction -> (runs, 2^p) log evidence
    log_evidence: dict
    # fraction -> (runs, p) inclusion probabilities
    inclusion: dict
    seconds: dict

    def abs_errors(self, fraction: float) -> np.ndarray:
        return np.abs(self.inclusion[fraction] - self.truth)

    def median_error(self, fraction: float) -> float:
        return float(np.median(self.abs_errors(fraction)))

    def best_of(self, fraction: float, k: int, prior=None) -> np.ndarray:
        """Inclusion probabilities from the per-model maximum over the first k runs."""
        runs = self.log_evidence[fraction]
        if k > runs.shape[0]:
            raise ValueError(f"only {runs.shape[0]} runs available")
        p = self.truth.shape[0]
        best = runs[:k].max(axis=0)
        return estimates_from_log_evidence(best, prior or ModelPrior(), p).inclusion_probs

    def best_of_median_error(self, fraction: float, k: int) -> float:
        return float(np.median(np.abs(self.best_of(fraction, k) - self.truth)))


def enumeration_study(data: Dataset, fractions: Sequence[float], runs, seed: int = 0,
                      evidence=None, prior=None, progress=None) -> EnumerationStudy:
    """Full enumeration with exact IRLS and with S-IRLS-SGD at several subsample fractions.

    ``runs`` is an int or a per-fraction sequence of repeat counts.
    """
    evidence = evidence or EvidenceSpec("bic")
    prior = prior or ModelPrior()
    runs = [runs] * len(fractions) if isinstance(runs, int) else list(runs)
    exact = enumerate_log_evidence(Evaluator(data, evidence))
    truth = estimates_from_log_evidence(exact, prior, data.p).inclusion_probs
    log_ev, incl, secs = {}, {}, {}
    seqs = np.random.SeedSequence(seed).spawn(len(fractions))
    for f, k, seq in zip(fractions, runs, seqs):
        ev = Evaluator(data, evidence, SirlsSgdConfig.for_family(data.family, fraction=f))
        arr, inc, tt = [], [], []
        for r, run_seq in enumerate(seq.spawn(k)):
            t0 = time.perf_counter()
            le = enumerate_log_evidence(ev, np.random.default_rng(run_seq))
            tt.append(time.perf_counter() - t0)
            arr.append(le)
            inc.append(estimates_from_log_evidence(le, prior, data.p).inclusion_probs)
            if progress is not None:
                progress(f, r, tt[-1])
        log_ev[f], incl[f], secs[f] = np.array(arr), np.array(inc), np.array(tt)
    return EnumerationStudy(truth, tuple(fractions), log_ev, incl, secs)


@dataclass
class RunReport:
    """JSON summary of one CLI run."""

    config: dict
    inclusion: dict = field(default_factory=dict)  # estimator -> p probabilities
    rmse_curves: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)  # seconds
    store: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, probs in self.inclusion.items():
            a = np.asarray(probs, dtype=np.float64)
            if np.any(~(a >= 0) | ~(a <= 1)):
                raise ValueError(f"{name} inclusion probabilities outside [0, 1]")
        for name, sec in self.timings.items():
            if not sec >= 0:
                raise ValueError(f"timing {name} is negative")

    def to_dict(self) -> dict:
        def plain(v):  # JSON-safe copy
            if isinstance(v, dict):
                return {str(k): plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple, np.ndarray)):
                return [plain(x) for x in v]
            if isinstance(v, (np.floating, np.integer, np.bool_)):
                return v.item()
            if isinstance(v, (str, int, float, bool)) or v is None:
                return v
            return str(v)

        return plain(dict(config=self.config, inclusion=self.inclusion,
                          rmse_curves=self.rmse_curves, timings=self.timings, store=self.store))

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
