"""Risk-controlled paired thresholds with abstention (extended Learn-then-Test).

A pair ``(lo, hi)`` splits the score line into three regions::

    s <= lo        -> normal
    s >= hi        -> anomalous
    lo < s < hi    -> abstain

Calibration tests, for every pair on a quantile grid, the null hypothesis
that its risk exceeds ``alpha`` using a Hoeffding-Bentkus p-value, keeps the
pairs that survive a Bonferroni correction at level ``delta``, and finally
picks the surviving pair minimizing FNR + FPR + abstention rate on a
validation set. If no pair survives, the all-abstain pair ``(-inf, +inf)`` is
returned.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .errors import CalibrationError

NORMAL, ANOMALOUS, ABSTAIN = 0, 1, 2
DEFAULT_GRID_SIZE = 50
# guards ceil(n * risk) against representation error when n * risk is integral
_CEIL_TOL = 1e-9


class Decision(str, enum.Enum):
    NORMAL = "normal"
    ANOMALOUS = "anomalous"
    ABSTAIN = "abstain"

    @property
    def code(self) -> int:
        return _DECISION_CODES[self]


_DECISION_CODES = {Decision.NORMAL: NORMAL, Decision.ANOMALOUS: ANOMALOUS, Decision.ABSTAIN: ABSTAIN}
DECISIONS_BY_CODE = {v: k for k, v in _DECISION_CODES.items()}


class RiskKind(str, enum.Enum):
    FPR = "fpr"
    ONE_MINUS_F1 = "f1"


@dataclass(frozen=True)
class RiskSpec:
    kind: RiskKind = RiskKind.FPR
    alpha: float = 0.1
    delta: float = 0.1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", RiskKind(self.kind))
        if not 0.0 <= self.alpha <= 1.0 or not 0.0 <= self.delta <= 1.0:
            raise ValueError("alpha and delta must lie in [0, 1]")


def format_bound(x: float) -> float | str:
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    return x


def parse_bound(x: float | str) -> float:
    if isinstance(x, str):
        return float(x.replace("+", ""))
    return float(x)


@dataclass(frozen=True, order=True)
class ThresholdPair:
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if math.isnan(self.lo) or math.isnan(self.hi) or self.lo > self.hi:
            raise ValueError(f"invalid threshold pair ({self.lo}, {self.hi})")

    @property
    def width(self) -> float:
        return 0.0 if self.lo == self.hi else self.hi - self.lo

    @property
    def is_trivial(self) -> bool:
        return self.lo == -math.inf and self.hi == math.inf

    def to_dict(self) -> dict:
        return {"lo": format_bound(self.lo), "hi": format_bound(self.hi)}

    @classmethod
    def from_dict(cls, doc: dict) -> ThresholdPair:
        return cls(parse_bound(doc["lo"]), parse_bound(doc["hi"]))


FALLBACK = ThresholdPair(-math.inf, math.inf)


def decide_abstain(pair: ThresholdPair, score: float) -> Decision:
    if score <= pair.lo:
        return Decision.NORMAL
    if score >= pair.hi:
        return Decision.ANOMALOUS
    return Decision.ABSTAIN


def decide_codes(lo: float, hi: float, scores: np.ndarray) -> np.ndarray:
    """Vectorized :func:`decide_abstain` returning integer codes."""
    scores = np.asarray(scores, dtype=float)
    out = np.full(scores.shape, ABSTAIN, dtype=np.int8)
    out[scores >= hi] = ANOMALOUS
    out[scores <= lo] = NORMAL
    return out


def region_counts(lo: np.ndarray, hi: np.ndarray, sorted_scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Numbers of scores decided normal and anomalous for each pair.

    ``sorted_scores`` must be ascending. Both regions can only overlap when
    ``lo == hi``, in which case ties go to normal.
    """
    n = sorted_scores.size
    n_normal = np.searchsorted(sorted_scores, lo, side="right")
    n_ge_hi = n - np.searchsorted(sorted_scores, hi, side="left")
    overlap = np.where(lo >= hi, np.maximum(n_normal - (n - n_ge_hi), 0), 0)
    return n_normal, n_ge_hi - overlap


# --------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class ThresholdGrid:
    values: np.ndarray
    pairs: tuple[ThresholdPair, ...]

    @property
    def lo(self) -> np.ndarray:
        return np.array([p.lo for p in self.pairs])

    @property
    def hi(self) -> np.ndarray:
        return np.array([p.hi for p in self.pairs])


def build_grid(calibration_scores: Iterable[float], m: int = DEFAULT_GRID_SIZE) -> ThresholdGrid:
    scores = np.asarray(list(calibration_scores) if not isinstance(calibration_scores, np.ndarray) else calibration_scores, dtype=float)
    if scores.size == 0:
        raise CalibrationError("cannot build a grid from no scores")
    if m < 2:
        raise ValueError("grid size must be at least 2")
    values = np.unique(np.quantile(scores, np.arange(m) / (m - 1)))
    ext = np.concatenate([[-np.inf], values, [np.inf]])
    a, b = np.triu_indices(ext.size)
    pairs = tuple(ThresholdPair(float(ext[i]), float(ext[j])) for i, j in zip(a, b))
    return ThresholdGrid(values, pairs)


# --------------------------------------------------------------------------
# risks

def _as_arrays(data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        scores, labels = data
    else:
        rows = list(data)
        scores = np.array([r[0] for r in rows], dtype=float)
        labels = np.array([r[1] for r in rows], dtype=int)
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if scores.shape != labels.shape:
        raise CalibrationError("scores and labels differ in length")
    return scores, labels


def risk_counts(lo: np.ndarray, hi: np.ndarray, scores: np.ndarray, labels: np.ndarray) -> dict[str, np.ndarray]:
    """Per-pair confusion counts with abstention."""
    s0 = np.sort(scores[labels == 0])
    s1 = np.sort(scores[labels == 1])
    tn, fp = region_counts(lo, hi, s0)
    fn, tp = region_counts(lo, hi, s1)
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn, "n0": s0.size, "n1": s1.size}


def f1_from_counts(tp, fp, fn) -> np.ndarray:
    tp, fp, fn = (np.asarray(x, dtype=float) for x in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where((tp + fp) > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    return f1


def empirical_risks(
    lo: np.ndarray, hi: np.ndarray, scores: np.ndarray, labels: np.ndarray, kind: RiskKind
) -> tuple[np.ndarray, int]:
    """Empirical risk of every pair and the sample size backing it.

    The FPR is a mean of per-normal losses, so its sample size is the number
    of normals. 1 - F1 is computed over decided samples only (F1 = 0 when
    nothing is decided anomalous) and uses the full calibration size.
    """
    kind = RiskKind(kind)
    c = risk_counts(np.asarray(lo, float), np.asarray(hi, float), scores, labels)
    if kind is RiskKind.FPR:
        if c["n0"] == 0:
            raise CalibrationError("FPR risk needs at least one normal calibration sample")
        return c["fp"] / c["n0"], int(c["n0"])
    if c["n0"] == 0 or c["n1"] == 0:
        raise CalibrationError("F1 risk needs both classes in the calibration set")
    return 1.0 - f1_from_counts(c["tp"], c["fp"], c["fn"]), int(scores.size)


def empirical_risk(pair: ThresholdPair, calibration, spec: RiskSpec) -> float:
    scores, labels = _as_arrays(calibration)
    risks, _ = empirical_risks(np.array([pair.lo]), np.array([pair.hi]), scores, labels, spec.kind)
    return float(risks[0])


# --------------------------------------------------------------------------
# p-values

def _h1(a: np.ndarray, b: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(a > 0, a * np.log(a / b), 0.0)
        t2 = np.where(a < 1, (1 - a) * np.log((1 - a) / (1 - b)), 0.0)
    return t1 + t2


def hb_pvalues(risks: np.ndarray, n: int, alpha: float) -> np.ndarray:
    """Hoeffding-Bentkus p-values for ``H: risk > alpha`` given empirical risks.

    ``p = min(1, exp(-n h1(min(r, alpha), alpha)), e * P[Bin(n, alpha) <= ceil(n r)])``.
    """
    r = np.clip(np.asarray(risks, dtype=float), 0.0, 1.0)
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha >= 1.0:
        # risks never exceed 1, so the null is impossible
        return np.zeros_like(r)
    if alpha <= 0.0:
        return np.ones_like(r)
    hoeffding = np.exp(-n * _h1(np.minimum(r, alpha), alpha))
    k = np.clip(np.ceil(n * r - _CEIL_TOL), 0, n)
    bentkus = math.e * stats.binom.cdf(k, n, alpha)
    return np.minimum(1.0, np.minimum(hoeffding, bentkus))


def hb_pvalue(empirical_risk: float, n: int, alpha: float) -> float:
    if not 0.0 <= empirical_risk <= 1.0:
        raise ValueError("empirical risk must lie in [0, 1]")
    return float(hb_pvalues(np.array([empirical_risk]), n, alpha)[0])


# --------------------------------------------------------------------------
# multiple testing and selection

@dataclass(frozen=True)
class FeasibleSet:
    members: tuple[ThresholdPair, ...]
    pairs: tuple[ThresholdPair, ...]
    p_values: np.ndarray
    empirical_risks: np.ndarray
    fallback_used: bool
    cutoff: float


def bonferroni_select(
    pairs: Sequence[ThresholdPair],
    p_values: Sequence[float],
    delta: float,
    empirical_risks: Sequence[float] | None = None,
) -> FeasibleSet:
    pairs = tuple(pairs)
    p = np.asarray(p_values, dtype=float)
    if len(pairs) != p.size or p.size == 0:
        raise ValueError("need one p-value per pair and at least one pair")
    cutoff = delta / len(pairs)
    keep = np.flatnonzero(p <= cutoff)
    members = tuple(pairs[i] for i in keep)
    fallback = not members
    risks = np.full(p.size, np.nan) if empirical_risks is None else np.asarray(empirical_risks, dtype=float)
    return FeasibleSet(
        members=(FALLBACK,) if fallback else members,
        pairs=pairs,
        p_values=p,
        empirical_risks=risks,
        fallback_used=fallback,
        cutoff=cutoff,
    )


def objective_counts(pairs: Sequence[ThresholdPair], scores: np.ndarray, labels: np.ndarray) -> dict[str, np.ndarray]:
    lo = np.array([p.lo for p in pairs])
    hi = np.array([p.hi for p in pairs])
    c = risk_counts(lo, hi, scores, labels)
    c["abstain"] = (c["n0"] - c["tn"] - c["fp"]) + (c["n1"] - c["tp"] - c["fn"])
    return c


def select_optimal(feasible: FeasibleSet | Sequence[ThresholdPair], validation) -> ThresholdPair:
    """Member minimizing FNR + FPR + abstention rate on ``validation``.

    Abstained samples enter only the abstention term. Ties are broken by
    fewer abstentions, then a narrower band, then ``(lo, hi)`` order. The
    objective is compared exactly in integer arithmetic.
    """
    members = feasible.members if isinstance(feasible, FeasibleSet) else tuple(feasible)
    if not members:
        raise CalibrationError("empty feasible set")
    scores, labels = _as_arrays(validation)
    n1 = int(np.sum(labels == 1))
    n0 = int(np.sum(labels == 0))
    if n0 == 0 or n1 == 0:
        raise CalibrationError("validation set must contain both classes")
    n = n0 + n1
    c = objective_counts(members, scores, labels)
    best_key = None
    best = None
    for i, pair in enumerate(members):
        fn, fp, ab = int(c["fn"][i]), int(c["fp"][i]), int(c["abstain"][i])
        # objective * n0 * n1 * n
        obj = fn * n0 * n + fp * n1 * n + ab * n0 * n1
        key = (obj, ab, pair.width, pair.lo, pair.hi)
        if best_key is None or key < best_key:
            best_key, best = key, pair
    return best


@dataclass(frozen=True)
class CalibrationResult:
    chosen: ThresholdPair
    feasible: FeasibleSet
    spec: RiskSpec
    grid_size: int
    n_effective: int


def calibrate_xltt(
    calibration,
    validation,
    spec: RiskSpec = RiskSpec(),
    m: int = DEFAULT_GRID_SIZE,
) -> tuple[ThresholdPair, FeasibleSet]:
    result = calibrate_xltt_full(calibration, validation, spec, m)
    return result.chosen, result.feasible


def calibrate_xltt_full(calibration, validation, spec: RiskSpec = RiskSpec(), m: int = DEFAULT_GRID_SIZE) -> CalibrationResult:
    scores, labels = _as_arrays(calibration)
    grid = build_grid(scores, m)
    risks, n_eff = empirical_risks(grid.lo, grid.hi, scores, labels, spec.kind)
    p = hb_pvalues(risks, n_eff, spec.alpha)
    feasible = bonferroni_select(grid.pairs, p, spec.delta, risks)
    chosen = FALLBACK if feasible.fallback_used else select_optimal(feasible, validation)
    return CalibrationResult(chosen, feasible, spec, m, n_eff)


def threshold_document(result: CalibrationResult, *, diagnostics: bool = True) -> dict:
    """JSON-ready description of a calibration run; infinities become strings."""
    doc = {
        "method": "xltt",
        "chosen": result.chosen.to_dict(),
        "fallback_used": result.feasible.fallback_used,
        "risk": result.spec.kind.value,
        "alpha": result.spec.alpha,
        "delta": result.spec.delta,
        "grid_size": result.grid_size,
        "n_tested": len(result.feasible.pairs),
        "bonferroni_cutoff": result.feasible.cutoff,
        "feasible_count": 0 if result.feasible.fallback_used else len(result.feasible.members),
        "n_effective": result.n_effective,
        "validity": "exact" if result.spec.kind is RiskKind.FPR else "heuristic-valid",
        "f1_convention": "decided-samples-only",
    }
    if diagnostics:
        doc["diagnostics"] = [
            {**pair.to_dict(), "risk": float(r), "p": float(pv)}
            for pair, r, pv in zip(result.feasible.pairs, result.feasible.empirical_risks, result.feasible.p_values)
        ]
    return doc
