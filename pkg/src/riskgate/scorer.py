"""Conditional-Gaussian density scorer.

The model is a single affine conditional flow

    y = g(v; c, t) = L v + W c + W_t psi(t) + b,   v ~ N(0, I)

where ``c`` is an exponentially weighted summary of the preceding samples of
the same day and ``psi(t)`` encodes the current sample's inter-arrival and
in-day times. Its inverse gives the latent ``v`` in closed form, and the
change of variables gives the exact conditional log-density. Two anomaly
scores are derived from it: the negative log-likelihood (``dr``) and the
latent Euclidean norm (``l``).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

from .errors import FitError, OrderingError, ShapeError
from .synth import ScoredSample

EPS = 1e-5
LOG_2PI = float(np.log(2.0 * np.pi))
SCORE_KINDS = ("dr", "l")


@dataclass(frozen=True)
class ScorerConfig:
    K: int = 30
    ridge: float = 1e-2
    cov_ridge: float = 1e-6
    shrinkage: float = 0.1
    rho: float = 0.9
    d_t: int = 64
    base: float = 10000.0
    use_tau: bool = True
    use_gamma: bool = True

    def __post_init__(self) -> None:
        if self.d_t < 2 or self.d_t % 2:
            raise ValueError("d_t must be a positive even integer")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ValueError("shrinkage must lie in [0, 1]")
        if self.ridge < 0 or self.cov_ridge < 0:
            raise ValueError("ridge and cov_ridge must be nonnegative")

    @classmethod
    def from_dict(cls, data: dict) -> ScorerConfig:
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "K": self.K, "ridge": self.ridge, "cov_ridge": self.cov_ridge, "shrinkage": self.shrinkage, "rho": self.rho,
            "d_t": self.d_t, "base": self.base, "use_tau": self.use_tau, "use_gamma": self.use_gamma,
        }


# --------------------------------------------------------------------------
# time encoding and context

def frequencies(d_t: int, base: float) -> np.ndarray:
    j = np.arange(d_t // 2)
    return base ** (-2.0 * j / d_t)


def sinusoid(u: np.ndarray | float, d_t: int = 8, base: float = 10000.0) -> np.ndarray:
    """``[sin(w_j u)..., cos(w_j u)...]`` along the last axis."""
    arg = np.asarray(u, dtype=float)[..., None] * frequencies(d_t, base)
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)


@dataclass(frozen=True)
class TimeEncoding:
    tau: float
    gamma: float
    psi_tau: np.ndarray
    psi_gamma: np.ndarray

    def vector(self, use_tau: bool = True, use_gamma: bool = True) -> np.ndarray:
        return np.concatenate([
            self.psi_tau if use_tau else np.zeros_like(self.psi_tau),
            self.psi_gamma if use_gamma else np.zeros_like(self.psi_gamma),
        ])


def encode_time(
    t: float,
    t_prev: float | None,
    t_day_start: float,
    *,
    d_t: int = 64,
    base: float = 10000.0,
) -> TimeEncoding:
    """Encode a timestamp; ``t_prev=None`` marks the first sample of a day.

    Zero elapsed times are replaced by ``EPS``.
    """
    if t_prev is None:
        tau = gamma = EPS
    else:
        if t < t_prev or t_prev < t_day_start:
            raise OrderingError(f"timestamps out of order: {t_day_start}, {t_prev}, {t}")
        tau = max(t - t_prev, EPS)
        gamma = max(t - t_day_start, EPS)
    return TimeEncoding(tau, gamma, sinusoid(tau, d_t, base), sinusoid(gamma, d_t, base))


def elapsed_times(minutes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inter-arrival and since-day-start times for one day's timestamps."""
    minutes = np.asarray(minutes, dtype=float)
    if minutes.size and np.any(np.diff(minutes) < 0):
        raise OrderingError("timestamps within a day must be nondecreasing")
    tau = np.empty_like(minutes)
    gamma = np.empty_like(minutes)
    if minutes.size:
        tau[0] = gamma[0] = EPS
        tau[1:] = np.maximum(np.diff(minutes), EPS)
        gamma[1:] = np.maximum(minutes[1:] - minutes[0], EPS)
    return tau, gamma


def time_features(minutes: np.ndarray, cfg: ScorerConfig) -> np.ndarray:
    """Per-sample ``psi(tau) + psi(gamma)`` rows, shape ``(n, 2 d_t)``."""
    tau, gamma = elapsed_times(minutes)
    pt = sinusoid(tau, cfg.d_t, cfg.base)
    pg = sinusoid(gamma, cfg.d_t, cfg.base)
    if not cfg.use_tau:
        pt = np.zeros_like(pt)
    if not cfg.use_gamma:
        pg = np.zeros_like(pg)
    return np.hstack([pt, pg])


@dataclass(frozen=True)
class ContextWindow:
    embeddings: np.ndarray
    aggregated: np.ndarray


def _decay_weights(n: int, rho: float) -> np.ndarray:
    # oldest first; newest gets weight 1
    return rho ** np.arange(n - 1, -1, -1, dtype=float)


def build_context(
    history: Sequence[ScoredSample],
    K: int | None = None,
    *,
    rho: float | None = None,
    d_prime: int | None = None,
    config: ScorerConfig | None = None,
) -> ContextWindow:
    """Aggregate the last ``K`` samples of ``history`` into a fixed-length vector.

    ``history`` must hold every earlier sample of the same day, oldest first,
    so that the inter-arrival and in-day times of each embedded sample can be
    recovered.
    """
    cfg = config or ScorerConfig()
    K = cfg.K if K is None else K
    rho = cfg.rho if rho is None else rho
    if not history:
        if d_prime is None:
            raise ShapeError("d_prime is required to build an empty context")
        width = d_prime + 2 * cfg.d_t
        return ContextWindow(np.zeros((0, width)), np.zeros(width))
    feats = np.array([s.features for s in history], dtype=float)
    minutes = np.array([s.timestamp for s in history], dtype=float)
    emb = np.hstack([feats, time_features(minutes, cfg)])[-K:]
    w = _decay_weights(emb.shape[0], rho)
    return ContextWindow(emb, (w / w.sum()) @ emb)


def day_design(features: np.ndarray, minutes: np.ndarray, cfg: ScorerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Context vectors and current-time features for every sample of one day.

    Row ``i`` of the context equals ``build_context(day[:i])``.
    """
    tfeat = time_features(minutes, cfg)
    emb = np.hstack([features, tfeat])
    n = emb.shape[0]
    ctx = np.zeros_like(emb)
    wsum = np.zeros(n)
    for k in range(1, min(cfg.K, n - 1) + 1):
        w = cfg.rho ** (k - 1)
        ctx[k:] += w * emb[:-k]
        wsum[k:] += w
    nz = wsum > 0
    ctx[nz] /= wsum[nz, None]
    return ctx, tfeat


def group_days(samples: Sequence[ScoredSample]) -> dict[int, np.ndarray]:
    """Sample indices per day, each in timestamp order."""
    days: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        days.setdefault(s.day_id, []).append(i)
    out = {}
    for d, idx in days.items():
        idx_arr = np.asarray(idx)
        ts = np.array([samples[i].timestamp for i in idx])
        out[d] = idx_arr[np.argsort(ts, kind="stable")]
    return out


def design_matrices(samples: Sequence[ScoredSample], cfg: ScorerConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Targets, contexts and time features aligned with ``samples``."""
    if not samples:
        raise ShapeError("no samples")
    Y = np.array([s.features for s in samples], dtype=float)
    d_prime = Y.shape[1]
    C = np.zeros((len(samples), d_prime + 2 * cfg.d_t))
    T = np.zeros((len(samples), 2 * cfg.d_t))
    for idx in group_days(samples).values():
        minutes = np.array([samples[i].timestamp for i in idx])
        C[idx], T[idx] = day_design(Y[idx], minutes, cfg)
    return Y, C, T


# --------------------------------------------------------------------------
# the flow

@dataclass(frozen=True)
class ConditionalGaussianFlow:
    weight: np.ndarray       # (d', d' + 2 d_t), acts on the context
    time_weight: np.ndarray  # (d', 2 d_t), acts on the current time encoding
    bias: np.ndarray
    cholesky: np.ndarray
    ridge: float
    cov_ridge: float
    shrinkage: float
    config: ScorerConfig = field(default_factory=ScorerConfig)

    @property
    def d_prime(self) -> int:
        return self.bias.shape[0]

    @property
    def log_det(self) -> float:
        return float(np.sum(np.log(np.diag(self.cholesky))))

    def mean(self, c: np.ndarray, t_vec: np.ndarray) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        t_vec = np.asarray(t_vec, dtype=float)
        if c.shape[-1] != self.weight.shape[1] or t_vec.shape[-1] != self.time_weight.shape[1]:
            raise ShapeError(
                f"expected context of {self.weight.shape[1]} and time encoding of "
                f"{self.time_weight.shape[1]}, got {c.shape[-1]} and {t_vec.shape[-1]}"
            )
        return c @ self.weight.T + t_vec @ self.time_weight.T + self.bias

    def _check_y(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape[-1] != self.d_prime:
            raise ShapeError(f"expected {self.d_prime} features, got {y.shape[-1]}")
        return y

    def to_latent(self, y: np.ndarray, c: np.ndarray, t_vec: np.ndarray) -> np.ndarray:
        """Batched inverse map; rows of ``y``, ``c``, ``t_vec`` are samples."""
        resid = self._check_y(y) - self.mean(c, t_vec)
        return linalg.solve_triangular(self.cholesky, resid.T, lower=True).T

    def from_latent(self, v: np.ndarray, c: np.ndarray, t_vec: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float) @ self.cholesky.T + self.mean(c, t_vec)

    def log_prob(self, y: np.ndarray, c: np.ndarray, t_vec: np.ndarray) -> np.ndarray:
        v = self.to_latent(y, c, t_vec)
        return -0.5 * np.sum(v**2, axis=-1) - 0.5 * self.d_prime * LOG_2PI - self.log_det

    def sample(self, c: np.ndarray, t_vec: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        c = np.atleast_2d(c)
        v = rng.standard_normal((c.shape[0], self.d_prime))
        return self.from_latent(v, c, t_vec)

    # persistence
    def to_dict(self) -> dict:
        rows, cols = np.tril_indices(self.d_prime)
        return {
            "d_prime": self.d_prime,
            "context_dim": int(self.weight.shape[1]),
            "time_dim": int(self.time_weight.shape[1]),
            "weight": self.weight.ravel().tolist(),
            "time_weight": self.time_weight.ravel().tolist(),
            "bias": self.bias.tolist(),
            "cholesky": self.cholesky[rows, cols].tolist(),
            "ridge": self.ridge,
            "cov_ridge": self.cov_ridge,
            "shrinkage": self.shrinkage,
            "hyperparameters": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ConditionalGaussianFlow:
        d = int(doc["d_prime"])
        p = int(doc["context_dim"])
        q = int(doc["time_dim"])
        L = np.zeros((d, d))
        L[np.tril_indices(d)] = doc["cholesky"]
        return cls(
            weight=np.asarray(doc["weight"], dtype=float).reshape(d, p),
            time_weight=np.asarray(doc["time_weight"], dtype=float).reshape(d, q),
            bias=np.asarray(doc["bias"], dtype=float),
            cholesky=L,
            ridge=float(doc["ridge"]),
            cov_ridge=float(doc["cov_ridge"]),
            shrinkage=float(doc["shrinkage"]),
            config=ScorerConfig.from_dict(doc["hyperparameters"]),
        )


def fit_arrays(
    contexts: np.ndarray,
    targets: np.ndarray,
    time_feats: np.ndarray | None = None,
    *,
    ridge: float = 1e-2,
    cov_ridge: float = 1e-6,
    shrinkage: float = 0.1,
    config: ScorerConfig | None = None,
) -> ConditionalGaussianFlow:
    """Ridge regression of targets on [context, time] plus a shrunk residual covariance.

    The regression minimizes ``mean ||y - W x - b||^2 + ridge ||W||^2`` (the
    penalty is per sample, so it does not fade with ``n``; the intercept is not
    penalized). The covariance is
    ``(1 - shrinkage) S + shrinkage diag(S) + cov_ridge I`` with ``S`` the
    residual covariance.
    """
    C = np.asarray(contexts, dtype=float)
    Y = np.asarray(targets, dtype=float)
    n, d = Y.shape
    T = np.zeros((n, 0)) if time_feats is None else np.asarray(time_feats, dtype=float)
    X = np.hstack([C, T])
    if n <= X.shape[1]:
        raise FitError(f"need more than {X.shape[1]} training samples, got {n}")

    x_mean = X.mean(axis=0)
    y_mean = Y.mean(axis=0)
    Xc = X - x_mean
    Yc = Y - y_mean
    gram = Xc.T @ Xc / n + ridge * np.eye(X.shape[1])
    try:
        beta = linalg.solve(gram, Xc.T @ Yc / n, assume_a="pos")
    except (linalg.LinAlgError, ValueError) as exc:
        raise FitError(f"singular design: {exc}") from exc
    bias = y_mean - x_mean @ beta

    resid = Yc - Xc @ beta
    cov = resid.T @ resid / n
    cov = (1.0 - shrinkage) * cov + shrinkage * np.diag(np.diag(cov)) + cov_ridge * np.eye(d)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise FitError("residual covariance is not positive definite") from exc
    if not np.all(np.diag(L) > 0):
        raise FitError("degenerate residual covariance")

    W = beta.T
    return ConditionalGaussianFlow(
        weight=W[:, :C.shape[1]].copy(),
        time_weight=W[:, C.shape[1]:].copy(),
        bias=bias,
        cholesky=L,
        ridge=ridge,
        cov_ridge=cov_ridge,
        shrinkage=shrinkage,
        config=config or ScorerConfig(ridge=ridge, cov_ridge=cov_ridge, shrinkage=shrinkage),
    )


def fit(
    train: Sequence[ScoredSample],
    K: int = 30,
    ridge: float = 1e-2,
    shrinkage: float = 0.1,
    *,
    config: ScorerConfig | None = None,
) -> ConditionalGaussianFlow:
    """Fit on (predominantly normal) samples; contexts never cross day boundaries."""
    cfg = config or ScorerConfig(K=K, ridge=ridge, shrinkage=shrinkage)
    Y, C, T = design_matrices(train, cfg)
    return fit_arrays(C, Y, T, ridge=cfg.ridge, cov_ridge=cfg.cov_ridge, shrinkage=cfg.shrinkage, config=cfg)


# --------------------------------------------------------------------------
# single-sample API

def _condition(model: ConditionalGaussianFlow, sample: ScoredSample, history: Sequence[ScoredSample]):
    cfg = model.config
    ctx = build_context(history, cfg.K, rho=cfg.rho, d_prime=model.d_prime, config=cfg).aggregated
    if history:
        t_enc = encode_time(sample.timestamp, history[-1].timestamp, history[0].timestamp, d_t=cfg.d_t, base=cfg.base)
    else:
        t_enc = encode_time(sample.timestamp, None, sample.timestamp, d_t=cfg.d_t, base=cfg.base)
    return ctx, t_enc.vector(cfg.use_tau, cfg.use_gamma)


def latent(model: ConditionalGaussianFlow, y, c, t_enc: TimeEncoding | np.ndarray) -> np.ndarray:
    t_vec = t_enc.vector(model.config.use_tau, model.config.use_gamma) if isinstance(t_enc, TimeEncoding) else t_enc
    return model.to_latent(y, c, t_vec)


def log_density(model: ConditionalGaussianFlow, y, c, t_enc: TimeEncoding | np.ndarray) -> float:
    t_vec = t_enc.vector(model.config.use_tau, model.config.use_gamma) if isinstance(t_enc, TimeEncoding) else t_enc
    return float(model.log_prob(y, c, t_vec))


def score_dr(model: ConditionalGaussianFlow, sample: ScoredSample, history: Sequence[ScoredSample]) -> float:
    c, t_vec = _condition(model, sample, history)
    return -float(model.log_prob(np.asarray(sample.features), c, t_vec))


def score_l(model: ConditionalGaussianFlow, sample: ScoredSample, history: Sequence[ScoredSample]) -> float:
    c, t_vec = _condition(model, sample, history)
    return float(np.linalg.norm(model.to_latent(np.asarray(sample.features), c, t_vec)))


# --------------------------------------------------------------------------
# batch API

def score_array(model: ConditionalGaussianFlow, samples: Sequence[ScoredSample], kind: str = "dr") -> np.ndarray:
    """Scores aligned with ``samples``; each day's context uses only that day's earlier samples."""
    if kind not in SCORE_KINDS:
        raise ValueError(f"score kind must be one of {SCORE_KINDS}")
    Y, C, T = design_matrices(samples, model.config)
    if kind == "dr":
        return -model.log_prob(Y, C, T)
    return np.linalg.norm(model.to_latent(Y, C, T), axis=1)


def with_scores(samples: Iterable[ScoredSample], scores: Iterable[float], kind: str | None = None) -> list[ScoredSample]:
    return [replace(s, score=float(v), score_kind=kind) for s, v in zip(samples, scores)]
