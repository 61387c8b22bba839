"""Risk-controlled anomaly detection with abstention for time-series sensor streams."""

from __future__ import annotations

from .baselines import Method, SingleThreshold, calibrate_single, threshold_f1, threshold_gmean, threshold_zscore
from .errors import (
    CalibrationError,
    ConfigurationError,
    DataError,
    FitError,
    MetricError,
    OrderingError,
    RiskgateError,
    ShapeError,
)
from .evaluation import ConfusionWithAbstain, MetricReport, aupr, auroc, evaluate, mc_validate
from .risk_control import (
    Decision,
    RiskKind,
    RiskSpec,
    ThresholdPair,
    build_grid,
    calibrate_xltt,
    decide_abstain,
    empirical_risk,
    hb_pvalue,
    select_optimal,
)
from .scorer import ConditionalGaussianFlow, ScorerConfig, fit, score_dr, score_l
from .synth import AnomalyKind, GeneratorConfig, ScoredSample, generate_dataset, generate_day, inject_anomaly

__version__ = "0.1.0"
