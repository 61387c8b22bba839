"""Command-line entry point: ``riskgate <subcommand> [options]``.

Subcommands chain through files::

    simulate -> fit-scorer -> score -> calibrate -> decide -> evaluate

plus the self-contained ``mc-validate`` and ``deploy-sim``. Any config key can
be overridden with a dotted flag such as ``--risk.alpha 0.05``.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .baselines import SingleThreshold
from .config import PRESETS, RunConfig, assign_days, load_config, parse_value, split_dataset
from .errors import CalibrationError, ConfigurationError, DataError, FitError, MetricError, OrderingError, ShapeError
from .evaluation import (
    calibrate as calibrate_rule,
    mc_validate,
    report_from_codes,
    run_deployment,
)
from .risk_control import (
    DECISIONS_BY_CODE,
    Decision,
    ThresholdPair,
    calibrate_xltt_full,
    decide_codes,
    threshold_document,
)
from .scorer import ConditionalGaussianFlow, fit, score_array, with_scores
from .synth import generate_dataset

EXIT_CONFIG, EXIT_DATA, EXIT_CALIBRATION = 2, 3, 4

# explicit flag -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "alpha": "risk.alpha",
    "delta": "risk.delta",
    "risk": "risk.kind",
    "grid_size": "grid_size",
    "method": "method",
    "score": "score_kind",
    "replications": "mc.replications",
    "months": "deploy.months",
    "recalibrate": "deploy.recalibrate",
    "share_validation": "share_validation",
    "use_tau": "scorer.use_tau",
    "use_gamma": "scorer.use_gamma",
    "zscore_k": "zscore_k",
}
PATH_FLAGS = {"data", "model", "scored", "thresholds", "decisions"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="riskgate", description="Risk-controlled anomaly thresholds with abstention.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--preset", choices=sorted(PRESETS))
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file")
        return p

    p = common(sub.add_parser("simulate", help="generate a labeled synthetic dataset"))

    p = common(sub.add_parser("fit-scorer", help="fit the density scorer on the training partition"))
    p.add_argument("--data")
    p.add_argument("--use-tau", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--use-gamma", action=argparse.BooleanOptionalAction, default=None)

    p = common(sub.add_parser("score", help="score samples with a fitted model"))
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--score", choices=["dr", "l"])

    p = common(sub.add_parser("calibrate", help="select thresholds on the calibration/validation partitions"))
    p.add_argument("--scored")
    p.add_argument("--method", choices=["xltt", "f1", "gmean", "zscore"])
    p.add_argument("--risk", choices=["fpr", "f1"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--zscore-k", type=float)
    p.add_argument("--share-validation", action=argparse.BooleanOptionalAction, default=None)

    p = common(sub.add_parser("decide", help="append decisions to a scored stream"))
    p.add_argument("--scored")
    p.add_argument("--thresholds")
    p.add_argument("--partition", choices=["all", "train", "validation", "calibration", "test"], default="all")

    p = common(sub.add_parser("evaluate", help="metrics for a decided stream"))
    p.add_argument("--decisions")
    p.add_argument("--risk", choices=["fpr", "f1"])
    p.add_argument("--partition", choices=["all", "train", "validation", "calibration", "test"], default="test")

    p = common(sub.add_parser("mc-validate", help="Monte Carlo certification of risk control"))
    p.add_argument("--method", choices=["xltt", "f1", "gmean", "zscore"])
    p.add_argument("--risk", choices=["fpr", "f1"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--score", choices=["dr", "l"])
    p.add_argument("--replications", type=int)
    p.add_argument("--no-rows", action="store_true", help="omit per-replication rows")

    p = common(sub.add_parser("deploy-sim", help="rolling month-by-month deployment simulation"))
    p.add_argument("--risk", choices=["fpr", "f1"])
    p.add_argument("--alpha", type=float)
    p.add_argument("--delta", type=float)
    p.add_argument("--grid-size", type=int)
    p.add_argument("--score", choices=["dr", "l"])
    p.add_argument("--months", type=int)
    p.add_argument("--recalibrate", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--csv", help="CSV summary path")
    return parser


def parse_overrides(extra: Sequence[str]) -> dict:
    """Turn ``--a.b value`` / ``--a.b=value`` pairs into dotted overrides."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise UsageError(f"unrecognized argument {tok!r}")
        if "=" in tok:
            key, val = tok[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"missing value for {tok}")
            key, val = tok[2:], extra[i + 1]
            i += 2
        out[key] = parse_value(val)
    return out


def resolve_config(args: argparse.Namespace, extra: Sequence[str]) -> RunConfig:
    overrides = parse_overrides(extra)
    for attr, key in FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            overrides[key] = val
    for attr in PATH_FLAGS:
        val = getattr(args, attr, None)
        if val is not None:
            overrides[f"paths.{attr}"] = val
    return load_config(args.config, overrides, args.preset)


def _require(*paths: Path) -> None:
    for p in paths:
        if not p.exists():
            raise ConfigurationError(f"input file not found: {p}")


def _out(args, cfg: RunConfig, name: str) -> Path:
    return Path(args.out) if args.out else cfg.path(name)


def _warn(msg: str) -> None:
    print(f"riskgate: warning: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args, cfg: RunConfig) -> None:
    io.write_samples(_out(args, cfg, "data"), generate_dataset(cfg.generator))


def cmd_fit_scorer(args, cfg: RunConfig) -> None:
    _require(cfg.path("data"))
    data = io.read_samples(cfg.path("data"))
    train = split_dataset(data, cfg.splits, cfg.seed)["train"]
    model = fit(train, config=cfg.scorer)
    io.write_json(_out(args, cfg, "model"), model.to_dict())


def cmd_score(args, cfg: RunConfig) -> None:
    _require(cfg.path("data"), cfg.path("model"))
    data = io.read_samples(cfg.path("data"))
    model = ConditionalGaussianFlow.from_dict(io.read_json(cfg.path("model")))
    kind = cfg["score_kind"]
    io.write_samples(_out(args, cfg, "scored"), with_scores(data, score_array(model, data, kind), kind))


def _scored_arrays(samples):
    if any(s.score is None for s in samples):
        raise DataError("input contains unscored samples")
    if any(s.label is None for s in samples):
        raise DataError("calibration needs labeled samples")
    return np.array([s.score for s in samples], dtype=float), np.array([s.label for s in samples], dtype=int)


def cmd_calibrate(args, cfg: RunConfig) -> None:
    _require(cfg.path("scored"))
    parts = split_dataset(io.read_samples(cfg.path("scored")), cfg.splits, cfg.seed)
    val = _scored_arrays(parts["validation"])
    cal = val if cfg["share_validation"] else _scored_arrays(parts["calibration"])
    spec = cfg.risk
    method = cfg["method"]
    if method == "xltt":
        result = calibrate_xltt_full(cal, val, spec, cfg["grid_size"])
        doc = threshold_document(result)
        if result.feasible.fallback_used:
            _warn("no threshold pair passed the test; using the all-abstain fallback (-inf, +inf)")
    else:
        rule = calibrate_rule(method, cal, val, spec, zscore_k=cfg["zscore_k"])
        doc = {**rule.single.to_dict(), "risk": spec.kind.value, "alpha": spec.alpha, "delta": spec.delta}
    doc["score_kind"] = cfg["score_kind"]
    doc["share_validation"] = bool(cfg["share_validation"])
    io.write_json(_out(args, cfg, "thresholds"), doc)


def load_rule(doc: dict):
    """Threshold document -> function mapping scores to decision codes."""
    if doc.get("method", "xltt") == "xltt":
        pair = ThresholdPair.from_dict(doc["chosen"])
        return lambda s: decide_codes(pair.lo, pair.hi, s)
    single = SingleThreshold.from_dict(doc)
    from .baselines import decide_single_array

    return lambda s: np.where(decide_single_array(single, s) == 1, 1, 0)


def _partition_filter(samples, partition: str, cfg: RunConfig):
    if partition == "all":
        return samples
    days = set(int(d) for d in assign_days([s.day_id for s in samples], cfg.splits, cfg.seed)[partition])
    return [s for s in samples if s.day_id in days]


def cmd_decide(args, cfg: RunConfig) -> None:
    _require(cfg.path("scored"), cfg.path("thresholds"))
    samples = io.read_samples(cfg.path("scored"))
    samples = _partition_filter(samples, args.partition, cfg)
    if any(s.score is None for s in samples):
        raise DataError("input contains unscored samples")
    rule = load_rule(io.read_json(cfg.path("thresholds")))
    codes = rule(np.array([s.score for s in samples], dtype=float))
    io.write_jsonl(
        _out(args, cfg, "decisions"),
        (io.sample_to_dict(s, decision=DECISIONS_BY_CODE[int(c)].value) for s, c in zip(samples, codes)),
    )


def cmd_evaluate(args, cfg: RunConfig) -> None:
    _require(cfg.path("decisions"))
    records = list(io.iter_jsonl(cfg.path("decisions")))
    samples = [io.sample_from_dict(r) for r in records]
    try:
        decisions = {id(s): Decision(r["decision"]).code for s, r in zip(samples, records)}
    except (KeyError, ValueError) as exc:
        raise DataError(f"decision records are malformed: {exc}") from exc
    samples = _partition_filter(samples, args.partition, cfg)
    if not samples:
        raise DataError("no samples to evaluate")
    scores, labels = _scored_arrays(samples)
    codes = np.array([decisions[id(s)] for s in samples])
    report = report_from_codes(codes, scores, labels, cfg.risk.kind)
    io.write_json(_out(args, cfg, "report"), {"partition": args.partition, "n": len(samples), **report.to_dict()})


def cmd_mc_validate(args, cfg: RunConfig) -> None:
    mc = cfg["mc"]
    report = mc_validate(
        cfg.generator, cfg.scorer, cfg.risk, cfg["method"], int(mc["replications"]), cfg.seed,
        score_kind=cfg["score_kind"], pool_size=int(mc["pool_size"]), holdout_size=int(mc["holdout_size"]),
        train_days=int(mc["train_days"]), n_calibration=int(mc["n_calibration"]),
        n_validation=int(mc["n_validation"]), share_validation=bool(cfg["share_validation"]),
        grid_size=int(cfg["grid_size"]), zscore_k=float(cfg["zscore_k"]),
    )
    doc = report.to_dict(rows=not args.no_rows)
    doc["passed"] = report.passed
    io.write_json(_out(args, cfg, "report"), doc)


SUMMARY_COLUMNS = ("window_id", "risk", "fpr", "fnr", "f1", "abstention_rate", "auroc", "aupr")


def cmd_deploy_sim(args, cfg: RunConfig) -> None:
    dep = cfg["deploy"]
    windows = run_deployment(
        cfg.generator, cfg.scorer, cfg.risk, int(dep["months"]),
        train_days=int(dep["train_days"]), score_kind=cfg["score_kind"],
        grid_size=int(cfg["grid_size"]), recalibrate=bool(dep["recalibrate"]),
        share_validation=bool(cfg["share_validation"]),
    )
    io.write_jsonl(_out(args, cfg, "windows"), (w.to_dict() for w in windows))
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for w in windows:
        r = w.report
        writer.writerow([w.window_id, r.risk_value, r.fpr, r.fnr, r.f1, r.abstention_rate, r.auroc, r.aupr])
    csv_path = Path(args.csv) if args.csv else cfg.path("summary")
    io._atomic_write(csv_path, buf.getvalue())


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-scorer": cmd_fit_scorer,
    "score": cmd_score,
    "calibrate": cmd_calibrate,
    "decide": cmd_decide,
    "evaluate": cmd_evaluate,
    "mc-validate": cmd_mc_validate,
    "deploy-sim": cmd_deploy_sim,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args, extra = build_parser().parse_known_args(argv)
        cfg = resolve_config(args, extra)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"riskgate: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"riskgate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"riskgate: calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (DataError, OrderingError, ShapeError, FitError, MetricError, OSError) as exc:
        print(f"riskgate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
