"""Binary model space: a model is an int whose bit j includes covariate j+1.

The intercept (design column 0) is implicit and never part of the bitmask.
"""

import math
from dataclasses import dataclass

import numpy as np

MAX_P = 64


def model_columns(model: int, p: int) -> np.ndarray:
    """Design-column indices used by ``model``: 0 plus j+1 for every set bit j."""
    cols = [0] + [j + 1 for j in range(p) if model >> j & 1]
    return np.array(cols, dtype=np.int64)


def model_size(model: int) -> int:
    return bin(model).count("1")


def model_bits(model: int, p: int) -> np.ndarray:
    return np.array([model >> j & 1 for j in range(p)], dtype=np.int8)


def model_from_bits(bits) -> int:
    out = 0
    for j, b in enumerate(bits):
        if b:
            out |= 1 << j
    return out


def model_hex(model: int, p: int) -> str:
    return format(model, f"0{max(1, math.ceil(p / 4))}x")


def hamming(a: int, b: int) -> int:
    return model_size(a ^ b)


def inclusion_matrix(models, p: int) -> np.ndarray:
    """Boolean (len(models), p) matrix of inclusion indicators."""
    models = np.asarray(models, dtype=np.uint64).reshape(-1, 1)
    return ((models >> np.arange(p, dtype=np.uint64)) & np.uint64(1)).astype(bool)


def check_p(p: int):
    if not 1 <= p <= MAX_P:
        raise ValueError(f"number of covariates must lie in [1, {MAX_P}], got {p}")


@dataclass(frozen=True)
class ModelPrior:
    """Independent Bernoulli(q) inclusion of every covariate."""

    q: float = 0.5

    def __post_init__(self):
        if not 0 < self.q < 1:
            raise ValueError("q must lie in (0, 1)")


def model_log_prior(model: int, prior: ModelPrior, p: int) -> float:
    k = model_size(model)
    return k * math.log(prior.q) + (p - k) * math.log1p(-prior.q)
