"""Asynchronous diffusion adaptation over networks: models, stability analysis and Monte Carlo."""

from .config import ExperimentConfig, load_fixture, parse_config
from .costs import NoiseParams, QuadraticCost
from .engine import ExperimentRecord, Scenario, run_experiment, steady_state
from .netmodel import (Bernoulli, BernoulliLink, Beta, BetaWeight, CombinationModel, Constant, MeanGraph,
                       StepSizeModel)
from .stability import StabilityReport, build_report

__all__ = [
    "Bernoulli", "BernoulliLink", "Beta", "BetaWeight", "CombinationModel", "Constant",
    "ExperimentConfig", "ExperimentRecord", "MeanGraph", "NoiseParams", "QuadraticCost", "Scenario",
    "StabilityReport", "StepSizeModel", "build_report", "load_fixture", "parse_config",
    "run_experiment", "steady_state",
]
