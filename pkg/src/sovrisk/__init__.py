"""Copula-coupled piecewise Markov reward model for sovereign credit-spread risk."""

from .changepoint import ChangePointDetector, bic_score, find_changepoints, lrt_statistic, model_select
from .copula import CopulaModel, GaussianCopula, fit_copula, sample_joint
from .marginals import ClassMarginal, ClassMarginals, build_marginals, ecdf, quantile
from .markov import (
    PiecewiseMarkovChain,
    SegmentedChainModel,
    TransitionMatrix,
    estimate_matrix,
    js_distance,
    mobility_metric,
    piecewise_propagate,
)
from .montecarlo import SimulationConfig, SimulationResult, run_simulation
from .panel import RatingPanel, RatePanel, RatingScale, SpreadPanel, align, compute_spreads
from .risk import RewardModel, theil_decompose, theil_index

__version__ = "0.1.0"
