"""Confidence functions that estimate the expected accuracy of multi-label predictions."""

from .candidates import ALL_CANDIDATES, CandidateKind, CandidateScorer, raw_statistic, score, score_all
from .classifiers import ClassifierChain, EnsembleOfChains, IndependentClassifier, load_model, make_classifier
from .exceptions import ArffError, ConfigError, DataError, NumericalError
from .labelsets import LabelsetDistribution, make_distribution, marginals, mode, point_mass, uniform
from .metrics import ALL_METRICS, Metric, best_prediction, dataset_accuracy, expected_accuracy, similarity

__version__ = "0.1.0"

__all__ = [
    "ALL_CANDIDATES",
    "ALL_METRICS",
    "ArffError",
    "CandidateKind",
    "CandidateScorer",
    "ClassifierChain",
    "ConfigError",
    "DataError",
    "EnsembleOfChains",
    "IndependentClassifier",
    "LabelsetDistribution",
    "Metric",
    "NumericalError",
    "best_prediction",
    "dataset_accuracy",
    "expected_accuracy",
    "load_model",
    "make_classifier",
    "make_distribution",
    "marginals",
    "mode",
    "point_mass",
    "raw_statistic",
    "score",
    "score_all",
    "similarity",
    "uniform",
]
