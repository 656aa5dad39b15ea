"""E-values for sharp hypotheses: optimization, Monte Carlo mass, standardization and composition."""
from .errors import ConfigError, DataError, McmcFailure, OptimizerFailure, WeightDegeneracy
from .fbst import (BilatticePoint, EvalueConfig, EvalueReport, HypothesisSpec, ModelSpec, compute_evalue,
                   conjunction_evalue, decision_threshold, inconsistency_index, mellin_convolve,
                   possibilistic_disjunction, qq, sev_standardize)
from .mc import EvEstimate, SurpriseSample, TruthFunction

__version__ = "0.1.0"

__all__ = [
    "BilatticePoint", "ConfigError", "DataError", "EvEstimate", "EvalueConfig", "EvalueReport",
    "HypothesisSpec", "McmcFailure", "ModelSpec", "OptimizerFailure", "SurpriseSample", "TruthFunction",
    "WeightDegeneracy", "compute_evalue", "conjunction_evalue", "decision_threshold", "inconsistency_index",
    "mellin_convolve", "possibilistic_disjunction", "qq", "sev_standardize",
]
