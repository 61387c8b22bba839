"""JSON and JSON Lines persistence with atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import DataError
from .synth import AnomalyKind, ScoredSample


def sample_to_dict(s: ScoredSample, **extra: Any) -> dict:
    doc = {
        "timestamp": s.timestamp,
        "day_id": s.day_id,
        "features": list(s.features),
        "label": s.label,
        "anomaly_kind": s.anomaly_kind.value if s.anomaly_kind is not None else None,
        "score": s.score,
    }
    if s.score_kind is not None:
        doc["score_kind"] = s.score_kind
    doc.update(extra)
    return doc


def sample_from_dict(doc: dict) -> ScoredSample:
    try:
        kind = doc.get("anomaly_kind")
        label = doc.get("label")
        if label not in (None, 0, 1):
            raise DataError(f"label must be 0, 1 or null, got {label!r}")
        return ScoredSample(
            timestamp=float(doc["timestamp"]),
            day_id=int(doc["day_id"]),
            features=tuple(float(x) for x in doc["features"]),
            label=label,
            anomaly_kind=AnomalyKind(kind) if kind is not None else None,
            score=None if doc.get("score") is None else float(doc["score"]),
            score_kind=doc.get("score_kind"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed sample record: {exc}") from exc


def _atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj: Any) -> str:
    return json.dumps(obj, allow_nan=False)


def write_json(path: str | os.PathLike, obj: Any) -> None:
    _atomic_write(path, json.dumps(obj, indent=2, allow_nan=False) + "\n")


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from exc


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> None:
    _atomic_write(path, "".join(dumps(r) + "\n" for r in records))


def iter_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def write_samples(path: str | os.PathLike, samples: Iterable[ScoredSample]) -> None:
    write_jsonl(path, (sample_to_dict(s) for s in samples))


def read_samples(path: str | os.PathLike) -> list[ScoredSample]:
    return [sample_from_dict(d) for d in iter_jsonl(path)]
