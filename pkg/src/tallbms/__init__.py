"""Bayesian model selection for GLMs on tall data via subsampling optimizers."""

from tallbms.glm import Dataset, Family, RankDeficientError
from tallbms.optim import (
    CoolingSchedule,
    DivergenceError,
    OptimResult,
    SirlsConfig,
    SirlsSgdConfig,
    StepSchedule,
    bsgd,
    gd,
    irls,
    s_irls,
    s_irls_sgd,
)
from tallbms.space import ModelPrior

__version__ = "0.1.0"
