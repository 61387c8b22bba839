"""Single-threshold selectors without risk guarantees (F1, G-Mean, Z-score)."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import CalibrationError
from .risk_control import _as_arrays, format_bound, parse_bound


class Method(str, enum.Enum):
    F1 = "f1"
    GMEAN = "gmean"
    ZSCORE = "zscore"


@dataclass(frozen=True)
class SingleThreshold:
    lam: float
    method: Method
    zscore_k: float | None = None
    mu_s: float | None = None
    sigma_s: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "method", Method(self.method))
        z_fields = (self.zscore_k, self.mu_s, self.sigma_s)
        if self.method is Method.ZSCORE:
            if any(v is None for v in z_fields):
                raise ValueError("z-score thresholds need k, mu and sigma")
            if not self.sigma_s > 0:
                raise ValueError("sigma must be positive")
        elif any(v is not None for v in z_fields):
            raise ValueError("k, mu and sigma are only meaningful for z-score thresholds")

    def to_dict(self) -> dict:
        doc = {"method": self.method.value, "lambda": format_bound(self.lam)}
        if self.method is Method.ZSCORE:
            doc.update(k=self.zscore_k, mu=self.mu_s, sigma=self.sigma_s)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> SingleThreshold:
        return cls(
            lam=parse_bound(doc["lambda"]),
            method=Method(doc["method"]),
            zscore_k=doc.get("k"),
            mu_s=doc.get("mu"),
            sigma_s=doc.get("sigma"),
        )


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """``-inf``, midpoints between consecutive distinct scores, ``+inf``."""
    u = np.unique(scores)
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def _counts(cands: np.ndarray, scores: np.ndarray, labels: np.ndarray):
    # predicted anomalous iff score > lambda
    s1 = np.sort(scores[labels == 1])
    s0 = np.sort(scores[labels == 0])
    tp = s1.size - np.searchsorted(s1, cands, side="right")
    fp = s0.size - np.searchsorted(s0, cands, side="right")
    fn = s1.size - tp
    return tp.astype(float), fp.astype(float), fn.astype(float)


def f1_objective(tp, fp, fn) -> np.ndarray:
    denom = 2 * tp + fp + fn
    return np.where(tp + fp > 0, 2 * tp / np.where(denom > 0, denom, 1.0), 0.0)


def gmean_squared(tp, fp, fn) -> np.ndarray:
    """Squared geometric mean of precision and recall, as one exact-integer ratio."""
    denom = (tp + fp) * (tp + fn)
    return np.where(denom > 0, tp * tp / np.where(denom > 0, denom, 1.0), 0.0)


def _check_validation(validation) -> tuple[np.ndarray, np.ndarray]:
    scores, labels = _as_arrays(validation)
    if not (np.any(labels == 0) and np.any(labels == 1)):
        raise CalibrationError("validation set must contain both classes")
    return scores, labels


def _argmax_threshold(validation, objective) -> tuple[float, float]:
    scores, labels = _check_validation(validation)
    cands = candidate_thresholds(scores)
    values = objective(*_counts(cands, scores, labels))
    i = int(np.argmax(values))  # first maximum, i.e. the smallest lambda
    return float(cands[i]), float(values[i])


def threshold_f1(validation) -> SingleThreshold:
    lam, _ = _argmax_threshold(validation, f1_objective)
    return SingleThreshold(lam, Method.F1)


def threshold_gmean(validation) -> SingleThreshold:
    lam, _ = _argmax_threshold(validation, gmean_squared)
    return SingleThreshold(lam, Method.GMEAN)


def threshold_zscore(validation_normals, k: float = 3.0) -> SingleThreshold:
    s = np.asarray(list(validation_normals) if not isinstance(validation_normals, np.ndarray) else validation_normals, dtype=float)
    if s.size < 2:
        raise CalibrationError("z-score calibration needs at least two normal scores")
    mu = float(s.mean())
    sigma = float(s.std())
    if not sigma > 0:
        raise CalibrationError("normal scores have zero variance")
    return SingleThreshold(mu + k * sigma, Method.ZSCORE, zscore_k=float(k), mu_s=mu, sigma_s=sigma)


def zscore(threshold: SingleThreshold, score):
    return np.abs((np.asarray(score, dtype=float) - threshold.mu_s) / threshold.sigma_s)


def decide_single(threshold: SingleThreshold, score: float) -> int:
    if threshold.method is Method.ZSCORE:
        return int(zscore(threshold, score) > threshold.zscore_k)
    return int(score > threshold.lam)


def decide_single_array(threshold: SingleThreshold, scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if threshold.method is Method.ZSCORE:
        return (zscore(threshold, scores) > threshold.zscore_k).astype(np.int8)
    return (scores > threshold.lam).astype(np.int8)


def calibrate_single(method: Method | str, validation, k: float = 3.0) -> SingleThreshold:
    method = Method(method)
    if method is Method.F1:
        return threshold_f1(validation)
    if method is Method.GMEAN:
        return threshold_gmean(validation)
    scores, labels = _as_arrays(validation)
    return threshold_zscore(scores[labels == 0], k)


def objective_at(threshold_value: float, validation, method: Method | str) -> float:
    """F1 or G-Mean obtained by thresholding ``validation`` at ``threshold_value``."""
    scores, labels = _check_validation(validation)
    tp, fp, fn = _counts(np.array([threshold_value]), scores, labels)
    if Method(method) is Method.F1:
        return float(f1_objective(tp, fp, fn)[0])
    return math.sqrt(float(gmean_squared(tp, fp, fn)[0]))
