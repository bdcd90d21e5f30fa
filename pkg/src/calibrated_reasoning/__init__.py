"""Calibration metrics, confidence-weighted answer aggregation, self-evaluation
data curation, answer-format decoding constraints and weight interpolation for
LLM reasoning pipelines."""

from .confidence import ConfidenceQuery, sigmoid, verbalized_confidence
from .ensemble import EnsembleDecision, EnsembleInput, cisc, self_consistency
from .metrics import CalibrationReport, ScoredOutcome, auroc, brier, ece, full_report
from .records import GenerationRecord, Problem, RunFile, RunMetadata
from .temperature import TemperatureFit, apply_temperature, fit_temperature

__version__ = "0.1.0"

__all__ = [
    "CalibrationReport",
    "ConfidenceQuery",
    "EnsembleDecision",
    "EnsembleInput",
    "GenerationRecord",
    "Problem",
    "RunFile",
    "RunMetadata",
    "ScoredOutcome",
    "TemperatureFit",
    "apply_temperature",
    "auroc",
    "brier",
    "cisc",
    "ece",
    "fit_temperature",
    "full_report",
    "self_consistency",
    "sigmoid",
    "verbalized_confidence",
]
