"""Synthetic concentrated-solar-plant receiver data.

Each operational day is a sequence of irregularly sampled panel-temperature
vectors (normalized to [0, 1]) that follow a four-phase daily schedule with a
spatial gradient along the panel axis, overlaid with AR(1) noise. Labeled
anomalies are injected on top of the clean days.

Timestamps are minutes since epoch; day ``k`` spans ``[1440 k, 1440 (k + 1))``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError

MINUTES_PER_DAY = 1440
MIN_GAP, MAX_GAP = 1.0, 5.0
MIN_ANOMALY_LEN, MAX_ANOMALY_LEN = 3, 15


class Phase(str, enum.Enum):
    PREHEATING = "Preheating"
    FILLING = "Filling"
    POWER = "Power"
    DRAINING = "Draining"


class AnomalyKind(str, enum.Enum):
    COLD_PANEL = "ColdPanel"
    HOT_SPOT = "HotSpot"
    SENSOR_DROPOUT = "SensorDropout"
    PHASE_INCONSISTENT = "PhaseInconsistent"


@dataclass(frozen=True)
class PhaseSchedule:
    """One phase of the daily operating cycle.

    ``mean_level`` and ``gradient_slope`` are the values reached at the end of
    the phase. When ``ramp`` is set they are linearly interpolated from the
    previous phase's values over the phase's duration.
    """

    phase: Phase
    start_minute: float
    end_minute: float
    mean_level: float
    gradient_slope: float
    ramp: bool = False


DEFAULT_SCHEDULE: tuple[PhaseSchedule, ...] = (
    PhaseSchedule(Phase.PREHEATING, 360.0, 480.0, 0.2, 0.01),
    PhaseSchedule(Phase.FILLING, 480.0, 540.0, 0.7, 0.03, ramp=True),
    PhaseSchedule(Phase.POWER, 540.0, 1140.0, 0.7, 0.03),
    PhaseSchedule(Phase.DRAINING, 1140.0, 1200.0, 0.2, 0.01, ramp=True),
)


def validate_schedule(schedule: tuple[PhaseSchedule, ...]) -> None:
    order = [Phase.PREHEATING, Phase.FILLING, Phase.POWER, Phase.DRAINING]
    if [p.phase for p in schedule] != order:
        raise ConfigurationError("schedule must list Preheating, Filling, Power, Draining in order")
    for prev, cur in zip(schedule, schedule[1:]):
        if prev.end_minute != cur.start_minute:
            raise ConfigurationError("schedule phases must be contiguous")
    for p in schedule:
        if not 0 <= p.start_minute < p.end_minute <= MINUTES_PER_DAY:
            raise ConfigurationError(f"bad bounds for phase {p.phase.value}")
    if schedule[0].ramp:
        raise ConfigurationError("the first phase cannot ramp")
    if schedule[2].mean_level <= schedule[0].mean_level:
        raise ConfigurationError("Power level must exceed Preheating level")


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 0
    n_days: int = 30
    d_prime: int = 8
    contamination: float = 0.1
    anomaly_magnitude: float = 4.0
    noise_sigma: float = 0.02
    ar_coefficient: float = 0.3
    anomaly_kinds: tuple[AnomalyKind, ...] = tuple(AnomalyKind)
    schedule: tuple[PhaseSchedule, ...] = field(default=DEFAULT_SCHEDULE, compare=True)

    def validate(self) -> None:
        if not 0.0 <= self.contamination <= 0.5:
            raise ConfigurationError("contamination must lie in [0, 0.5]")
        if not 0.0 <= self.ar_coefficient < 1.0:
            raise ConfigurationError("ar_coefficient must lie in [0, 1)")
        if self.n_days < 1 or self.d_prime < 1:
            raise ConfigurationError("n_days and d_prime must be positive")
        if self.noise_sigma < 0 or self.anomaly_magnitude < 0:
            raise ConfigurationError("noise_sigma and anomaly_magnitude must be nonnegative")
        if not self.anomaly_kinds:
            raise ConfigurationError("anomaly_kinds must not be empty")
        validate_schedule(self.schedule)

    @classmethod
    def from_dict(cls, data: dict) -> GeneratorConfig:
        known = {k: v for k, v in data.items() if k in _GENERATOR_KEYS}
        if "anomaly_kinds" in known:
            known["anomaly_kinds"] = tuple(AnomalyKind(k) for k in known["anomaly_kinds"])
        unknown = set(data) - _GENERATOR_KEYS
        if unknown:
            raise ConfigurationError(f"unknown generator keys: {sorted(unknown)}")
        cfg = cls(**known)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        doc = {k: getattr(self, k) for k in sorted(_GENERATOR_KEYS)}
        doc["anomaly_kinds"] = [k.value for k in self.anomaly_kinds]
        return doc


_GENERATOR_KEYS = {
    "seed", "n_days", "d_prime", "contamination",
    "anomaly_magnitude", "noise_sigma", "ar_coefficient", "anomaly_kinds",
}


@dataclass(frozen=True)
class ScoredSample:
    timestamp: float
    day_id: int
    features: tuple[float, ...]
    label: int | None = None
    anomaly_kind: AnomalyKind | None = None
    score: float | None = None
    score_kind: str | None = None


def phase_at(minute: np.ndarray | float, schedule=DEFAULT_SCHEDULE) -> np.ndarray:
    """Index into ``schedule`` of the phase active at each minute of day."""
    bounds = np.array([p.end_minute for p in schedule[:-1]])
    return np.searchsorted(bounds, np.asarray(minute, dtype=float), side="right")


def mean_curve(minute: np.ndarray | float, d_prime: int, schedule=DEFAULT_SCHEDULE) -> np.ndarray:
    """Noise-free panel temperatures, shape ``(n, d_prime)``."""
    minute = np.atleast_1d(np.asarray(minute, dtype=float))
    idx = phase_at(minute, schedule)
    level = np.empty_like(minute)
    slope = np.empty_like(minute)
    for i, p in enumerate(schedule):
        mask = idx == i
        if not mask.any():
            continue
        if p.ramp:
            prev = schedule[i - 1]
            frac = np.clip((minute[mask] - p.start_minute) / (p.end_minute - p.start_minute), 0.0, 1.0)
            level[mask] = prev.mean_level + frac * (p.mean_level - prev.mean_level)
            slope[mask] = prev.gradient_slope + frac * (p.gradient_slope - prev.gradient_slope)
        else:
            level[mask] = p.mean_level
            slope[mask] = p.gradient_slope
    panels = np.arange(d_prime)
    return level[:, None] + slope[:, None] * panels[None, :]


def _phase_profile(phase: Phase, d_prime: int, schedule) -> np.ndarray:
    p = next(s for s in schedule if s.phase == phase)
    return p.mean_level + p.gradient_slope * np.arange(d_prime)


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng([int(k) % 2**64 for k in keys])


def generate_day(config: GeneratorConfig, day_id: int) -> list[ScoredSample]:
    """One clean operational day; every label is 0."""
    config.validate()
    rng = _rng(config.seed, day_id)
    start = config.schedule[0].start_minute
    end = config.schedule[-1].end_minute

    n_max = int(np.ceil((end - start) / MIN_GAP)) + 1
    gaps = rng.uniform(MIN_GAP, MAX_GAP, size=n_max)
    minutes = start + np.concatenate([[0.0], np.cumsum(gaps)])
    minutes = minutes[minutes < end]
    n = minutes.size

    phi = config.ar_coefficient
    innov = rng.standard_normal((n, config.d_prime)) * config.noise_sigma
    innov[1:] *= np.sqrt(1.0 - phi**2)
    noise = lfilter([1.0], [1.0, -phi], innov, axis=0)

    feats = np.clip(mean_curve(minutes, config.d_prime, config.schedule) + noise, 0.0, 1.0)
    base = day_id * MINUTES_PER_DAY
    return [
        ScoredSample(timestamp=float(base + m), day_id=day_id, features=tuple(f), label=0)
        for m, f in zip(minutes.tolist(), feats.tolist())
    ]


def inject_anomaly(
    day: list[ScoredSample],
    kind: AnomalyKind | str,
    start_index: int,
    duration: int,
    magnitude: float,
    seed: int,
    *,
    noise_sigma: float = 0.02,
    panel: int | None = None,
    schedule: tuple[PhaseSchedule, ...] = DEFAULT_SCHEDULE,
) -> list[ScoredSample]:
    """Return a copy of ``day`` with ``duration`` samples perturbed and labeled 1.

    ``panel`` defaults to one drawn from ``seed``. Features are clipped to
    [0, 1] after perturbation.
    """
    kind = AnomalyKind(kind)
    if start_index < 0 or duration < 0 or start_index + duration > len(day):
        raise IndexError(f"anomaly window [{start_index}, {start_index + duration}) out of range for day of {len(day)}")
    if magnitude < 0:
        raise ValueError("magnitude must be nonnegative")
    if duration == 0:
        return list(day)

    d_prime = len(day[0].features)
    if panel is None:
        panel = int(_rng(seed).integers(d_prime))
    if not 0 <= panel < d_prime:
        raise IndexError(f"panel {panel} out of range")

    window = day[start_index:start_index + duration]
    x = np.array([s.features for s in window], dtype=float)
    if kind is AnomalyKind.COLD_PANEL:
        x[:, panel] -= magnitude * noise_sigma
    elif kind is AnomalyKind.HOT_SPOT:
        x[:, panel] += magnitude * noise_sigma
    elif kind is AnomalyKind.SENSOR_DROPOUT:
        x[:, panel] = 0.0
    else:
        minutes = np.array([s.timestamp - s.day_id * MINUTES_PER_DAY for s in window])
        current = mean_curve(minutes, d_prime, schedule)
        low = _phase_profile(Phase.PREHEATING, d_prime, schedule)
        high = _phase_profile(Phase.POWER, d_prime, schedule)
        # swap to whichever operating level the sample is farther from
        use_high = current.mean(axis=1) < 0.5 * (low.mean() + high.mean())
        target = np.where(use_high[:, None], high[None, :], low[None, :])
        x += target - current
    x = np.clip(x, 0.0, 1.0)

    out = list(day)
    for i, (s, f) in enumerate(zip(window, x.tolist())):
        out[start_index + i] = replace(s, features=tuple(f), label=1, anomaly_kind=kind)
    return out


def _anomaly_windows(n: int, target: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    durations: list[int] = []
    while sum(durations) < target:
        durations.append(int(rng.integers(MIN_ANOMALY_LEN, MAX_ANOMALY_LEN + 1)))
    if durations:
        durations[-1] -= sum(durations) - target
    gaps = rng.multinomial(n - target, np.full(len(durations) + 1, 1.0 / (len(durations) + 1)))
    windows = []
    pos = 0
    for gap, dur in zip(gaps, durations):
        pos += int(gap)
        windows.append((pos, dur))
        pos += dur
    return windows


def generate_labeled_day(config: GeneratorConfig, day_id: int) -> list[ScoredSample]:
    """A day with anomalies injected so round(contamination * n) samples are labeled 1."""
    day = generate_day(config, day_id)
    target = int(round(config.contamination * len(day)))
    if target == 0:
        return day
    rng = _rng(config.seed, day_id, 1)
    kinds = list(config.anomaly_kinds)
    for start, dur in _anomaly_windows(len(day), target, rng):
        kind = kinds[int(rng.integers(len(kinds)))]
        day = inject_anomaly(
            day, kind, start, dur, config.anomaly_magnitude, int(rng.integers(2**63)),
            noise_sigma=config.noise_sigma, schedule=config.schedule,
        )
    return day


def generate_dataset(config: GeneratorConfig, first_day: int = 0) -> list[ScoredSample]:
    config.validate()
    out: list[ScoredSample] = []
    for day_id in range(first_day, first_day + config.n_days):
        out.extend(generate_labeled_day(config, day_id))
    return out
