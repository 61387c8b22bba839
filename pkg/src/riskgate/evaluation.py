"""Metrics with abstention, ranking metrics, coverage certification and deployment simulation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from . import baselines
from .errors import CalibrationError, ConfigurationError, MetricError
from .risk_control import (
    ABSTAIN,
    ANOMALOUS,
    FALLBACK,
    NORMAL,
    Decision,
    RiskKind,
    RiskSpec,
    ThresholdPair,
    calibrate_xltt_full,
    decide_codes,
)
from .scorer import ScorerConfig, fit, score_array
from .synth import GeneratorConfig, ScoredSample, generate_labeled_day

METHODS = ("xltt", "f1", "gmean", "zscore")
DAYS_PER_MONTH = 30


# --------------------------------------------------------------------------
# confusion with abstention

@dataclass(frozen=True)
class ConfusionWithAbstain:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    abstain_normal: int = 0
    abstain_anomalous: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn + self.abstain_normal + self.abstain_anomalous

    @property
    def n_normal(self) -> int:
        return self.fp + self.tn + self.abstain_normal

    @property
    def n_anomalous(self) -> int:
        return self.tp + self.fn + self.abstain_anomalous

    @property
    def fpr(self) -> float:
        return self.fp / self.n_normal if self.n_normal else 0.0

    @property
    def fnr(self) -> float:
        return self.fn / self.n_anomalous if self.n_anomalous else 0.0

    @property
    def abstention_rate(self) -> float:
        return (self.abstain_normal + self.abstain_anomalous) / self.total if self.total else 0.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        # decided samples only; zero when nothing is flagged
        if self.tp + self.fp == 0:
            return 0.0
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn)

    @property
    def gmean(self) -> float:
        return math.sqrt(self.precision * self.recall)


def confusion_from_codes(codes: np.ndarray, labels: np.ndarray) -> ConfusionWithAbstain:
    codes = np.asarray(codes)
    labels = np.asarray(labels)
    if np.any((labels != 0) & (labels != 1)):
        raise MetricError("labels must be 0 or 1")
    pos = labels == 1
    neg = ~pos
    return ConfusionWithAbstain(
        tp=int(np.sum(pos & (codes == ANOMALOUS))),
        fp=int(np.sum(neg & (codes == ANOMALOUS))),
        tn=int(np.sum(neg & (codes == NORMAL))),
        fn=int(np.sum(pos & (codes == NORMAL))),
        abstain_normal=int(np.sum(neg & (codes == ABSTAIN))),
        abstain_anomalous=int(np.sum(pos & (codes == ABSTAIN))),
    )


def confusion(decisions: Iterable[tuple[Decision | str, int]]) -> ConfusionWithAbstain:
    rows = list(decisions)
    if not rows:
        return ConfusionWithAbstain()
    codes = np.array([Decision(d).code for d, _ in rows])
    labels = np.array([int(z) for _, z in rows])
    return confusion_from_codes(codes, labels)


# --------------------------------------------------------------------------
# ranking metrics

def _scores_labels(scores_labels) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(scores_labels, tuple) and len(scores_labels) == 2 and isinstance(scores_labels[0], np.ndarray):
        s, y = scores_labels
    else:
        rows = list(scores_labels)
        s = np.array([r[0] for r in rows], dtype=float)
        y = np.array([r[1] for r in rows], dtype=int)
    return np.asarray(s, dtype=float), np.asarray(y, dtype=int)


def auroc(scores_labels) -> float:
    """Mann-Whitney AUROC; tied cross-class pairs count one half."""
    s, y = _scores_labels(scores_labels)
    n1 = int(np.sum(y == 1))
    n0 = int(np.sum(y == 0))
    if n0 == 0 or n1 == 0:
        raise MetricError("AUROC needs both classes")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


def aupr(scores_labels) -> float:
    """Average precision with tied scores handled as one block."""
    s, y = _scores_labels(scores_labels)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        raise MetricError("AUPR needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each block of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[ends]
    seen = ends + 1
    precision = tp / seen
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(precision * recall_gain))


# --------------------------------------------------------------------------
# reports

@dataclass(frozen=True)
class MetricReport:
    fpr: float
    fnr: float
    f1: float
    gmean: float
    abstention_rate: float
    auroc: float | None
    aupr: float | None
    risk_value: float
    risk_kind: str
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def risk_of(conf: ConfusionWithAbstain, kind: RiskKind | str) -> float:
    return conf.fpr if RiskKind(kind) is RiskKind.FPR else 1.0 - conf.f1


def report_from_codes(codes, scores, labels, kind: RiskKind | str = RiskKind.FPR) -> MetricReport:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    conf = confusion_from_codes(codes, labels)
    both = conf.n_normal > 0 and conf.n_anomalous > 0
    return MetricReport(
        fpr=conf.fpr,
        fnr=conf.fnr,
        f1=conf.f1,
        gmean=conf.gmean,
        abstention_rate=conf.abstention_rate,
        auroc=auroc((scores, labels)) if both else None,
        aupr=aupr((scores, labels)) if conf.n_anomalous > 0 else None,
        risk_value=risk_of(conf, kind),
        risk_kind=RiskKind(kind).value,
        counts=asdict(conf),
    )


def evaluate(pair: ThresholdPair, scores, labels, kind: RiskKind | str = RiskKind.FPR) -> MetricReport:
    return report_from_codes(decide_codes(pair.lo, pair.hi, scores), scores, labels, kind)


# --------------------------------------------------------------------------
# calibration dispatch

@dataclass(frozen=True)
class Calibrated:
    """Output of any calibration method, usable as a decision rule."""

    method: str
    pair: ThresholdPair | None = None
    single: baselines.SingleThreshold | None = None
    fallback_used: bool = False

    def codes(self, scores: np.ndarray) -> np.ndarray:
        if self.pair is not None:
            return decide_codes(self.pair.lo, self.pair.hi, scores)
        return baselines.decide_single_array(self.single, scores)


def calibrate(method: str, cal: tuple[np.ndarray, np.ndarray], val: tuple[np.ndarray, np.ndarray],
              spec: RiskSpec, grid_size: int = 50, zscore_k: float = 3.0) -> Calibrated:
    if method == "xltt":
        res = calibrate_xltt_full(cal, val, spec, grid_size)
        return Calibrated("xltt", pair=res.chosen, fallback_used=res.feasible.fallback_used)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return Calibrated(method, single=baselines.calibrate_single(method, val, zscore_k))


# --------------------------------------------------------------------------
# Monte Carlo coverage

@dataclass(frozen=True)
class ScoredPool:
    """Scores for a sampling pool and a disjoint held-out pool used for true risk."""

    pool_scores: np.ndarray
    pool_labels: np.ndarray
    holdout_scores: np.ndarray
    holdout_labels: np.ndarray


def generate_scored(
    generator: GeneratorConfig,
    scorer: ScorerConfig,
    n_samples: int,
    *,
    train_days: int = 30,
    score_kind: str = "dr",
):
    """Fit on ``train_days`` clean-filtered days, then score further days until ``n_samples`` are collected.

    Returns the fitted model and the scored samples (grouped by whole days).
    """
    train: list[ScoredSample] = []
    for d in range(train_days):
        train.extend(s for s in generate_labeled_day(generator, d) if s.label == 0)
    model = fit(train, config=scorer)
    samples: list[ScoredSample] = []
    day = train_days
    while len(samples) < n_samples:
        samples.extend(generate_labeled_day(generator, day))
        day += 1
    scores = score_array(model, samples, score_kind)
    return model, samples, scores


def prepare_pool(
    generator: GeneratorConfig,
    scorer: ScorerConfig = ScorerConfig(),
    *,
    pool_size: int = 20_000,
    holdout_size: int = 50_000,
    train_days: int = 30,
    score_kind: str = "dr",
) -> ScoredPool:
    _, samples, scores = generate_scored(
        generator, scorer, pool_size + holdout_size, train_days=train_days, score_kind=score_kind
    )
    labels = np.array([s.label for s in samples], dtype=int)
    days = np.array([s.day_id for s in samples])
    # split on a day boundary so that no day feeds both pools
    split_day = days[min(pool_size, days.size - 1)]
    in_pool = days < split_day
    return ScoredPool(scores[in_pool], labels[in_pool], scores[~in_pool], labels[~in_pool])


@dataclass(frozen=True)
class CoverageReport:
    method: str
    risk_kind: str
    alpha: float
    delta: float
    replications: int
    violation_fraction: float
    bound: float
    mean_risk: float
    mean_abstention: float
    mean_f1: float
    fallback_count: int
    error_count: int
    rows: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.violation_fraction <= self.bound

    def to_dict(self, rows: bool = True) -> dict:
        d = asdict(self)
        if not rows:
            d.pop("rows")
        return d


def slack_bound(delta: float, replications: int) -> float:
    return delta + 2.0 * math.sqrt(delta * (1.0 - delta) / replications)


def mc_validate_pool(
    pool: ScoredPool,
    spec: RiskSpec,
    method: str = "xltt",
    replications: int = 500,
    seed: int = 0,
    *,
    n_calibration: int = 500,
    n_validation: int = 500,
    share_validation: bool = False,
    grid_size: int = 50,
    zscore_k: float = 3.0,
) -> CoverageReport:
    """Repeatedly calibrate on fresh draws from ``pool`` and measure risk on the held-out pool.

    Each replication's draws come from ``(seed, replication)`` alone.
    """
    if replications < 1:
        raise ValueError("replications must be positive")
    need = n_calibration + (0 if share_validation else n_validation)
    if pool.pool_scores.size < need:
        raise ConfigurationError(f"pool of {pool.pool_scores.size} is smaller than the {need} samples per replication")
    rows = []
    for r in range(replications):
        rng = np.random.default_rng([seed, r])
        idx = rng.choice(pool.pool_scores.size, size=need, replace=False)
        cal_idx = idx[:n_calibration]
        val_idx = cal_idx if share_validation else idx[n_calibration:]
        cal = (pool.pool_scores[cal_idx], pool.pool_labels[cal_idx])
        val = (pool.pool_scores[val_idx], pool.pool_labels[val_idx])
        error = None
        try:
            rule = calibrate(method, cal, val, spec, grid_size, zscore_k)
        except CalibrationError as exc:
            rule = Calibrated(method, pair=FALLBACK, fallback_used=True)
            error = str(exc)
        conf = confusion_from_codes(rule.codes(pool.holdout_scores), pool.holdout_labels)
        risk = risk_of(conf, spec.kind)
        rows.append({
            "replication": r,
            "true_risk": risk,
            "violation": bool(risk > spec.alpha),
            "abstention_rate": conf.abstention_rate,
            "f1": conf.f1,
            "fpr": conf.fpr,
            "fnr": conf.fnr,
            "fallback": rule.fallback_used,
            "thresholds": rule.pair.to_dict() if rule.pair is not None else rule.single.to_dict(),
            "error": error,
        })
    return CoverageReport(
        method=method,
        risk_kind=spec.kind.value,
        alpha=spec.alpha,
        delta=spec.delta,
        replications=replications,
        violation_fraction=float(np.mean([r["violation"] for r in rows])),
        bound=slack_bound(spec.delta, replications),
        mean_risk=float(np.mean([r["true_risk"] for r in rows])),
        mean_abstention=float(np.mean([r["abstention_rate"] for r in rows])),
        mean_f1=float(np.mean([r["f1"] for r in rows])),
        fallback_count=int(sum(r["fallback"] for r in rows)),
        error_count=int(sum(r["error"] is not None for r in rows)),
        rows=rows,
    )


def mc_validate(
    generator: GeneratorConfig,
    scorer: ScorerConfig,
    spec: RiskSpec,
    method: str = "xltt",
    replications: int = 500,
    seed: int = 0,
    *,
    score_kind: str = "dr",
    pool_size: int = 20_000,
    holdout_size: int = 50_000,
    train_days: int = 30,
    **kwargs,
) -> CoverageReport:
    if replications < 100:
        raise ConfigurationError("mc_validate needs at least 100 replications")
    pool = prepare_pool(
        generator, scorer, pool_size=pool_size, holdout_size=holdout_size,
        train_days=train_days, score_kind=score_kind,
    )
    return mc_validate_pool(pool, spec, method, replications, seed, **kwargs)


# --------------------------------------------------------------------------
# rolling deployment

@dataclass(frozen=True)
class DeploymentWindow:
    window_id: int
    calibration_days: tuple[int, int]
    evaluation_days: tuple[int, int]
    thresholds: ThresholdPair
    fallback_used: bool
    report: MetricReport

    def to_dict(self) -> dict:
        return {
            "window_id": self.window_id,
            "calibration_days": list(self.calibration_days),
            "evaluation_days": list(self.evaluation_days),
            "thresholds": self.thresholds.to_dict(),
            "fallback_used": self.fallback_used,
            "report": self.report.to_dict(),
        }


def _month_calibration(month_mask, days, scores, labels, spec, grid_size, share):
    month_days = np.unique(days[month_mask])
    # alternate days between calibration and validation
    cal_days = month_days[0::2]
    val_days = month_days if share else month_days[1::2]
    cal = np.isin(days, cal_days) & month_mask
    val = np.isin(days, val_days) & month_mask
    return calibrate_xltt_full((scores[cal], labels[cal]), (scores[val], labels[val]), spec, grid_size)


def deploy_sim_rolling(
    dataset: Sequence[ScoredSample],
    model=None,
    spec: RiskSpec = RiskSpec(),
    months: int = 6,
    *,
    score_kind: str = "dr",
    grid_size: int = 50,
    recalibrate: bool = False,
    share_validation: bool = False,
    days_per_month: int = DAYS_PER_MONTH,
) -> list[DeploymentWindow]:
    """Calibrate on the first month, then evaluate each following month.

    With ``model=None`` the samples' existing scores are used. With
    ``recalibrate`` each month is evaluated with thresholds calibrated on the
    month before it.
    """
    if months < 1:
        raise ConfigurationError("months must be positive")
    if model is not None:
        scores = score_array(model, dataset, score_kind)
    else:
        if any(s.score is None for s in dataset):
            raise ConfigurationError("unscored samples and no model given")
        scores = np.array([s.score for s in dataset], dtype=float)
    labels = np.array([s.label for s in dataset], dtype=int)
    days = np.array([s.day_id for s in dataset])
    first = int(days.min())
    month = (days - first) // days_per_month
    if np.unique(days[month == months]).size < days_per_month:
        raise ConfigurationError(f"dataset spans fewer than {months + 1} full months")

    def span(w: int) -> tuple[int, int]:
        return first + w * days_per_month, first + (w + 1) * days_per_month - 1

    windows = []
    result = _month_calibration(month == 0, days, scores, labels, spec, grid_size, share_validation)
    cal_window = 0
    for w in range(1, months + 1):
        if recalibrate and w > 1:
            result = _month_calibration(month == w - 1, days, scores, labels, spec, grid_size, share_validation)
            cal_window = w - 1
        mask = month == w
        report = evaluate(result.chosen, scores[mask], labels[mask], spec.kind)
        windows.append(DeploymentWindow(w, span(cal_window), span(w), result.chosen,
                                        result.feasible.fallback_used, report))
    return windows


def run_deployment(
    generator: GeneratorConfig,
    scorer: ScorerConfig,
    spec: RiskSpec,
    months: int = 6,
    *,
    train_days: int = 30,
    score_kind: str = "dr",
    **kwargs,
) -> list[DeploymentWindow]:
    """Fit on ``train_days`` days, then simulate ``months`` of deployment on the days after."""
    train: list[ScoredSample] = []
    for d in range(train_days):
        train.extend(s for s in generate_labeled_day(generator, d) if s.label == 0)
    model = fit(train, config=scorer)
    data: list[ScoredSample] = []
    for d in range(train_days, train_days + (months + 1) * DAYS_PER_MONTH):
        data.extend(generate_labeled_day(generator, d))
    return deploy_sim_rolling(data, model, spec, months, score_kind=score_kind, **kwargs)
