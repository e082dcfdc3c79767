"""Relativistic f-divergences on finite distributions: exact sups, estimators, bias lab."""

from reldiv.losses import ConcaveLoss, get_loss, f_eval, f_grad, f_props_check
from reldiv.estimators import ScoreBatch, MomentSpec, EstimateResult, estimate
from reldiv.oracle import DiscreteDist, CriticTable, OracleResult, solve_divergence

__version__ = "0.1.0"

__all__ = [
    "ConcaveLoss",
    "get_loss",
    "f_eval",
    "f_grad",
    "f_props_check",
    "ScoreBatch",
    "MomentSpec",
    "EstimateResult",
    "estimate",
    "DiscreteDist",
    "CriticTable",
    "OracleResult",
    "solve_divergence",
    "__version__",
]
