"""Run configuration, presets and day-level dataset splitting."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .risk_control import RiskSpec
from .scorer import ScorerConfig
from .synth import GeneratorConfig, ScoredSample

SEED_ENV = "RISKGATE_SEED"
PARTITIONS = ("train", "validation", "calibration", "test")

DEFAULTS: dict[str, Any] = {
    "seed": 2,
    "generator": {
        "n_days": 60,
        "d_prime": 8,
        "contamination": 0.1,
        "anomaly_magnitude": 4.0,
        "noise_sigma": 0.02,
        "ar_coefficient": 0.3,
    },
    "scorer": ScorerConfig().to_dict(),
    "risk": {"kind": "fpr", "alpha": 0.1, "delta": 0.1},
    "method": "xltt",
    "score_kind": "dr",
    "grid_size": 50,
    "zscore_k": 3.0,
    "share_validation": False,
    "splits": {"train": 0.5, "validation": 0.2, "calibration": 0.2, "test": 0.1},
    "paths": {
        "data": "data.jsonl",
        "model": "model.json",
        "scored": "scored.jsonl",
        "thresholds": "thresholds.json",
        "decisions": "decisions.jsonl",
        "report": "report.json",
        "windows": "windows.jsonl",
        "summary": "summary.csv",
    },
    "mc": {
        "replications": 500,
        "n_calibration": 500,
        "n_validation": 500,
        "pool_size": 20000,
        "holdout_size": 50000,
        "train_days": 30,
    },
    "deploy": {"months": 6, "train_days": 30, "recalibrate": False},
}

# heavily overlapping score distributions: only subtle single-panel faults, many of them
PRESETS: dict[str, dict[str, Any]] = {
    "default": {},
    "hard-overlap": {
        "generator": {
            "anomaly_magnitude": 1.5,
            "contamination": 0.3,
            "anomaly_kinds": ["ColdPanel", "HotSpot"],
        },
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_dotted(doc: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            raise ConfigurationError(f"unknown config section {k!r} in {dotted!r}")
        node = node[k]
    if keys[-1] not in node and node is doc:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    node[keys[-1]] = value


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def generator(self) -> GeneratorConfig:
        return GeneratorConfig.from_dict({**self.raw["generator"], "seed": self.seed})

    @property
    def scorer(self) -> ScorerConfig:
        try:
            return ScorerConfig.from_dict(self.raw["scorer"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad scorer config: {exc}") from exc

    @property
    def risk(self) -> RiskSpec:
        try:
            return RiskSpec(**self.raw["risk"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"bad risk config: {exc}") from exc

    @property
    def splits(self) -> dict[str, float]:
        return dict(self.raw["splits"])

    def path(self, name: str) -> Path:
        return Path(self.raw["paths"][name])

    def __getitem__(self, key: str) -> Any:
        return self.raw[key]

    def validate(self) -> None:
        self.generator.validate()
        self.scorer
        self.risk
        validate_splits(self.splits)
        if self.raw["method"] not in ("xltt", "f1", "gmean", "zscore"):
            raise ConfigurationError(f"unknown method {self.raw['method']!r}")
        if self.raw["score_kind"] not in ("dr", "l"):
            raise ConfigurationError(f"unknown score kind {self.raw['score_kind']!r}")


def load_config(
    path: str | os.PathLike | None = None,
    overrides: dict[str, Any] | None = None,
    preset: str | None = None,
    env: dict[str, str] | None = None,
) -> RunConfig:
    """Defaults, then preset, then file, then dotted overrides, then the seed env variable."""
    doc = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        doc = deep_merge(doc, PRESETS[preset])
    if path is not None:
        try:
            with open(path) as fh:
                doc = deep_merge(doc, json.load(fh))
        except FileNotFoundError as exc:
            raise ConfigurationError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
    for k, v in (overrides or {}).items():
        set_dotted(doc, k, v)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            doc["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigurationError(f"{SEED_ENV} must be an integer") from exc
    cfg = RunConfig(doc)
    cfg.validate()
    return cfg


def validate_splits(splits: dict[str, float]) -> None:
    if set(splits) != set(PARTITIONS):
        raise ConfigurationError(f"splits must name exactly {PARTITIONS}")
    fr = [float(splits[p]) for p in PARTITIONS]
    if any(f <= 0 for f in fr):
        raise ConfigurationError("split fractions must be positive")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigurationError("split fractions must sum to 1")


def assign_days(day_ids: Sequence[int], splits: dict[str, float], seed: int) -> dict[str, np.ndarray]:
    """Shuffle the distinct days and cut them proportionally into the four partitions."""
    validate_splits(splits)
    days = np.unique(np.asarray(day_ids))
    rng = np.random.default_rng([int(seed) % 2**64, 0x5EED])
    shuffled = rng.permutation(days)
    cuts = np.round(np.cumsum([splits[p] for p in PARTITIONS]) * days.size).astype(int)
    cuts[-1] = days.size
    out = {}
    start = 0
    for p, end in zip(PARTITIONS, cuts):
        out[p] = np.sort(shuffled[start:end])
        if out[p].size == 0:
            raise DataError(f"too few days ({days.size}) for four nonempty partitions")
        start = end
    return out


def split_dataset(
    data: Sequence[ScoredSample], splits: dict[str, float], seed: int
) -> dict[str, list[ScoredSample]]:
    """Day-level partitions. The training partition keeps only normal samples, unlabeled."""
    if not data:
        raise DataError("empty dataset")
    assignment = assign_days([s.day_id for s in data], splits, seed)
    lookup = {int(d): p for p, ds in assignment.items() for d in ds}
    parts: dict[str, list[ScoredSample]] = {p: [] for p in PARTITIONS}
    for s in data:
        parts[lookup[s.day_id]].append(s)
    parts["train"] = [replace(s, label=None, anomaly_kind=None) for s in parts["train"] if s.label != 1]
    return parts
