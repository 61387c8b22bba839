from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import aupr_manual, auroc_pairs

from riskgate.errors import ConfigurationError, MetricError
from riskgate.evaluation import (
    ConfusionWithAbstain,
    ScoredPool,
    aupr,
    auroc,
    confusion,
    deploy_sim_rolling,
    evaluate,
    mc_validate,
    mc_validate_pool,
    slack_bound,
)
from riskgate.risk_control import FALLBACK, Decision, RiskKind, RiskSpec, ThresholdPair
from riskgate.scorer import ScorerConfig
from riskgate.synth import GeneratorConfig, ScoredSample


# --------------------------------------------------------------------------
# confusion

def test_empty_confusion():
    c = confusion([])
    assert c == ConfusionWithAbstain()
    assert c.fpr == c.fnr == c.abstention_rate == c.f1 == 0.0


def test_all_abstain():
    c = confusion([(Decision.ABSTAIN, 0), (Decision.ABSTAIN, 1), (Decision.ABSTAIN, 0)])
    assert c.fpr == 0 and c.fnr == 0 and c.abstention_rate == 1


def test_perfect_decisions():
    c = confusion([("anomalous", 1), ("normal", 0), ("normal", 0), ("anomalous", 1)])
    assert c.f1 == 1 and c.fpr == 0 and c.fnr == 0


def test_hand_tabulated_case():
    rows = [
        ("normal", 0), ("normal", 0), ("normal", 1), ("anomalous", 0), ("anomalous", 1),
        ("anomalous", 1), ("abstain", 0), ("abstain", 1), ("normal", 0), ("anomalous", 0),
    ]
    c = confusion(rows)
    # tp=2 fp=2 tn=3 fn=1 abstain: 1 normal, 1 anomalous
    assert (c.tp, c.fp, c.tn, c.fn, c.abstain_normal, c.abstain_anomalous) == (2, 2, 3, 1, 1, 1)
    assert c.fpr == pytest.approx(2 / 6)
    assert c.fnr == pytest.approx(1 / 4)
    assert c.abstention_rate == pytest.approx(0.2)
    assert c.f1 == pytest.approx(2 * 2 / (2 * 2 + 2 + 1))
    assert c.gmean == pytest.approx(np.sqrt(0.5 * 2 / 3))


@settings(max_examples=50, deadline=None)
@given(rows=st.lists(st.tuples(st.sampled_from(list(Decision)), st.integers(0, 1)), max_size=60),
       seed=st.integers(0, 1000))
def test_confusion_permutation_invariant(rows, seed):
    c = confusion(rows)
    shuffled = list(rows)
    np.random.default_rng(seed).shuffle(shuffled)
    assert confusion(shuffled) == c
    assert c.total == len(rows)
    for v in (c.fpr, c.fnr, c.f1, c.gmean, c.abstention_rate):
        assert 0.0 <= v <= 1.0


# --------------------------------------------------------------------------
# ranking metrics

def test_auroc_examples():
    assert auroc([(0.1, 0), (0.2, 0), (0.8, 1)]) == 1.0
    assert auroc([(0.5, 0), (0.5, 1), (0.5, 1), (0.5, 0)]) == 0.5
    with pytest.raises(MetricError):
        auroc([(0.1, 1), (0.2, 1)])


def test_auroc_matches_pairwise_oracle():
    rng = np.random.default_rng(10)
    for _ in range(100):
        n = int(rng.integers(2, 80))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        s = np.round(rng.normal(size=n) + y, int(rng.integers(0, 3)))
        assert auroc((s, y)) == pytest.approx(auroc_pairs(s.tolist(), y.tolist()), abs=1e-12)


def test_aupr_matches_manual_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        y = rng.integers(0, 2, n)
        y[0] = 1
        s = np.round(rng.normal(size=n) + y, int(rng.integers(0, 3)))
        assert aupr((s, y)) == pytest.approx(aupr_manual(s.tolist(), y.tolist()), abs=1e-12)


def test_aupr_twenty_sample_hand_case():
    s = [0.95, 0.9, 0.9, 0.85, 0.8, 0.7, 0.7, 0.7, 0.6, 0.55, 0.5, 0.45, 0.4, 0.3, 0.3, 0.2, 0.15, 0.1, 0.05, 0.0]
    y = [1, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0]
    # positives: 6. Walk the blocks from the top:
    # 0.95 -> P=1/1, +1; 0.9 -> P=2/3, +1; 0.8 -> P=3/5, +1; 0.7 -> P=4/8, +1; 0.55 -> P=5/10, +1; 0.3 -> P=6/15, +1
    expected = (1 + 2 / 3 + 3 / 5 + 4 / 8 + 5 / 10 + 6 / 15) / 6
    assert aupr(list(zip(s, y))) == pytest.approx(expected, abs=1e-12)


def test_aupr_edge_cases():
    assert aupr([(0.9, 1), (0.8, 1), (0.1, 0)]) == 1.0
    with pytest.raises(MetricError):
        aupr([(0.9, 0), (0.1, 0)])


def test_aupr_random_scores_approach_prevalence():
    rng = np.random.default_rng(12)
    n = 200_000
    y = (rng.random(n) < 0.1).astype(int)
    s = rng.random(n)
    assert aupr((s, y)) == pytest.approx(y.mean(), abs=0.005)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_auroc_monotone_transform_invariant(seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, 50)
    y[:2] = (0, 1)
    s = rng.normal(size=50) + y
    assert auroc((np.exp(s), y)) == pytest.approx(auroc((s, y)), abs=1e-15)
    assert auroc((3 * s - 7, y)) == pytest.approx(auroc((s, y)), abs=1e-15)


def test_top_ranked_positive_alone_does_not_bound_aupr():
    # one positive on top, then five negatives, then the remaining positives
    y = [1] + [0] * 5 + [1] * 14
    s = list(range(20, 0, -1))
    assert aupr(list(zip(s, y))) < np.mean(y)
    assert aupr(list(zip(s, y))) == pytest.approx(aupr_manual(s, y), abs=1e-12)


def test_aupr_one_when_positives_lead():
    rng = np.random.default_rng(13)
    for _ in range(20):
        y = np.sort(rng.integers(0, 2, 40))[::-1].copy()
        y[0] = 1
        assert aupr((np.arange(40, 0, -1.0), y)) == 1.0


# --------------------------------------------------------------------------
# Monte Carlo coverage on a synthetic score pool

def gaussian_pool(seed=0, n_pool=20_000, n_hold=50_000, shift=3.0, p1=0.1):
    rng = np.random.default_rng(seed)

    def draw(n):
        y = (rng.random(n) < p1).astype(int)
        return rng.normal(size=n) + shift * y, y

    ps, pl = draw(n_pool)
    hs, hl = draw(n_hold)
    return ScoredPool(ps, pl, hs, hl)


def test_mc_validate_xltt_controls_fpr():
    pool = gaussian_pool()
    rep = mc_validate_pool(pool, RiskSpec(RiskKind.FPR, 0.1, 0.1), "xltt", replications=200, seed=1)
    assert rep.violation_fraction <= slack_bound(0.1, 200)
    assert rep.passed
    assert len(rep.rows) == 200


def test_mc_validate_alpha_one_never_violates():
    pool = gaussian_pool(seed=2)
    rep = mc_validate_pool(pool, RiskSpec(RiskKind.FPR, 1.0, 0.1), "xltt", replications=100, seed=0)
    assert rep.violation_fraction == 0.0


def test_mc_validate_reproducible():
    pool = gaussian_pool(seed=3)
    a = mc_validate_pool(pool, RiskSpec(), "f1", replications=100, seed=4)
    b = mc_validate_pool(pool, RiskSpec(), "f1", replications=100, seed=4)
    assert a == b


def test_mc_validate_errors_become_fallbacks():
    # a pool with no anomalies makes the F1 baseline uncalibratable
    rng = np.random.default_rng(0)
    pool = ScoredPool(rng.normal(size=2000), np.zeros(2000, int), rng.normal(size=2000), np.zeros(2000, int))
    rep = mc_validate_pool(pool, RiskSpec(), "f1", replications=100, seed=0)
    assert rep.fallback_count == 100 and rep.error_count == 100


def test_mc_validate_needs_replications():
    with pytest.raises(ConfigurationError):
        mc_validate(GeneratorConfig(), ScorerConfig(), RiskSpec(), "xltt", replications=50, seed=0)


# --------------------------------------------------------------------------
# deployment

def scored_stream(n_days, seed=0, per_day=40):
    rng = np.random.default_rng(seed)
    out = []
    for d in range(n_days):
        for k in range(per_day):
            y = int(rng.random() < 0.1)
            out.append(ScoredSample(d * 1440.0 + 360 + 3 * k, d, (0.0,), y, None, float(rng.normal() + 3 * y)))
    return out


def test_deploy_single_month_equals_direct_evaluate():
    data = scored_stream(60)
    (w,) = deploy_sim_rolling(data, None, RiskSpec(), months=1)
    month1 = [s for s in data if 30 <= s.day_id < 60]
    direct = evaluate(w.thresholds, np.array([s.score for s in month1]), np.array([s.label for s in month1]))
    assert w.report == direct
    assert w.calibration_days == (0, 29) and w.evaluation_days == (30, 59)


def test_deploy_windows_are_chronological_and_disjoint():
    data = scored_stream(30 * 4, seed=1)
    for recal in (False, True):
        windows = deploy_sim_rolling(data, None, RiskSpec(), months=3, recalibrate=recal)
        assert [w.window_id for w in windows] == [1, 2, 3]
        for w in windows:
            assert w.calibration_days[1] < w.evaluation_days[0]
            assert 0.0 <= w.report.abstention_rate <= 1.0


def test_deploy_insufficient_span():
    with pytest.raises(ConfigurationError):
        deploy_sim_rolling(scored_stream(45), None, RiskSpec(), months=1)


def test_fallback_stream_metrics():
    rng = np.random.default_rng(0)
    s = rng.normal(size=500)
    y = rng.integers(0, 2, 500)
    rep = evaluate(FALLBACK, s, y)
    assert rep.abstention_rate == 1.0 and rep.fpr == 0.0
    rep = evaluate(ThresholdPair(0.0, 0.0), s, y, RiskKind.ONE_MINUS_F1)
    assert rep.risk_value == pytest.approx(1 - rep.f1)
