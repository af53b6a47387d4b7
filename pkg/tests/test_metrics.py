"""Tests for AUC, LogLoss, sliced reports, and the paired t-test.

Oracles: an O(n^2) pairwise AUC, direct summation for LogLoss, ternary
search for the constant-predictor optimum, and high-precision numerical
integration of the t density for p-values.
"""

import json

import numpy as np
import pytest

from fedud import metrics as m
from fedud.errors import ShapeError, UndefinedMetricError
from fedud.trainer import PredictionSet


def pairwise_auc(scores, labels):
    """Brute-force mean over all positive/negative pairs."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_ranking(self):
        assert m.auc([0.9, 0.8, 0.2], [1, 1, 0]) == 1.0

    def test_all_tied_scores(self):
        assert m.auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        # quantized scores force plenty of ties
        scores = rng.integers(0, 20, size=200) / 20.0
        labels = (rng.random(200) < 0.4).astype(float)
        assert abs(m.auc(scores, labels) - pairwise_auc(scores, labels)) < 1e-12

    def test_monotone_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.integers(0, 15, size=120) / 15.0
        labels = (rng.random(120) < 0.5).astype(float)
        base = m.auc(scores, labels)
        for transform in (np.exp, lambda s: s ** 3, lambda s: 2 * s + 3,
                          np.tanh):
            assert abs(m.auc(transform(scores), labels) - base) < 1e-15

    def test_complement_without_ties(self):
        rng = np.random.default_rng(2)
        scores = rng.permutation(np.arange(80)).astype(float)
        labels = (rng.random(80) < 0.5).astype(float)
        assert abs(m.auc(-scores, labels) - (1 - m.auc(scores, labels))) < 1e-12

    def test_single_class_undefined(self):
        with pytest.raises(UndefinedMetricError):
            m.auc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            m.auc([0.1, 0.2], [0, 0])

    def test_non_binary_labels_rejected(self):
        with pytest.raises(ShapeError):
            m.auc([0.1, 0.2], [0, 2])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            m.auc([0.1, 0.2, 0.3], [0, 1])


class TestLogloss:
    def test_half_scores_give_ln2(self):
        assert abs(m.logloss([0.5] * 4, [0, 1, 1, 0]) - np.log(2.0)) < 1e-12

    def test_perfect_scores_clamp_residual(self):
        # clamp floor leaves -ln(1 - 1e-7) per row, about 1e-7
        assert m.logloss([0.0, 1.0, 1.0], [0, 1, 1]) <= 2e-7

    def test_matches_summation_oracle(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(0.001, 0.999, size=77)
        y = (rng.random(77) < 0.3).astype(float)
        acc = sum(-yi * np.log(si) - (1 - yi) * np.log(1 - si)
                  for si, yi in zip(s, y))
        assert abs(m.logloss(s, y) - acc / 77) < 1e-12

    def test_constant_predictor_minimized_at_base_rate(self):
        rng = np.random.default_rng(4)
        y = (rng.random(400) < 0.31).astype(float)
        base_rate = float(np.mean(y))

        def f(c):
            return m.logloss(np.full(400, c), y)

        lo, hi = 1e-6, 1.0 - 1e-6
        for _ in range(200):
            m1 = lo + (hi - lo) / 3
            m2 = hi - (hi - lo) / 3
            if f(m1) < f(m2):
                hi = m2
            else:
                lo = m1
        assert abs((lo + hi) / 2 - base_rate) < 1e-5
        assert f(base_rate) <= f(0.5)

    def test_empty_undefined(self):
        with pytest.raises(UndefinedMetricError):
            m.logloss([], [])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            m.logloss([0.5], [0, 1])


def make_preds(n_aligned, n_unaligned, seed=0):
    rng = np.random.default_rng(seed)
    n = n_aligned + n_unaligned
    return PredictionSet(
        keys=[f"k{i}" for i in range(n)],
        labels=(rng.random(n) < 0.5).astype(float),
        scores=rng.uniform(0.01, 0.99, size=n),
        slice_tags=["aligned"] * n_aligned + ["unaligned"] * n_unaligned,
    )


class TestSliceReport:
    def test_all_aligned_equals_overall(self):
        report = m.slice_report(make_preds(50, 0))
        assert report.slices["aligned"] == report.slices["overall"]
        assert report.slices["unaligned"].n == 0
        assert report.slices["unaligned"].auc is None
        assert report.slices["unaligned"].logloss is None

    def test_counts_additive(self):
        report = m.slice_report(make_preds(30, 20))
        s = report.slices
        assert s["overall"].n == s["aligned"].n + s["unaligned"].n == 50
        assert s["overall"].n_pos == s["aligned"].n_pos + s["unaligned"].n_pos

    def test_overall_recomputable_from_slice_rows(self):
        preds = make_preds(40, 25, seed=5)
        report = m.slice_report(preds)
        tags = np.asarray(preds.slice_tags)
        rows = np.concatenate([np.flatnonzero(tags == "aligned"),
                               np.flatnonzero(tags == "unaligned")])
        recomputed = m.auc(preds.scores[rows], preds.labels[rows])
        assert abs(report.slices["overall"].auc - recomputed) < 1e-15

    def test_single_class_slice_absent_but_counted(self):
        preds = PredictionSet(["a", "b", "c"], np.array([1.0, 1.0, 0.0]),
                              np.array([0.6, 0.7, 0.2]),
                              ["aligned", "aligned", "unaligned"])
        report = m.slice_report(preds)
        assert report.slices["aligned"].auc is None
        assert report.slices["aligned"].n == 2
        assert report.slices["aligned"].n_pos == 2
        assert report.slices["unaligned"].auc is None

    def test_metric_ranges(self):
        for seed in range(5):
            report = m.slice_report(make_preds(60, 40, seed=seed))
            for s in report.slices.values():
                if s.auc is not None:
                    assert 0.0 <= s.auc <= 1.0
                if s.logloss is not None:
                    assert s.logloss >= 0.0

    def test_json_round_trip_and_key_set(self):
        report = m.slice_report(make_preds(30, 20, seed=6), method="fedud",
                                seeds={"data": 7}, config_digest="abc123")
        text = report.to_json()
        doc = json.loads(text)
        assert set(doc) == {"method", "seeds", "config_digest", "slices"}
        assert set(doc["slices"]) == {"overall", "aligned", "unaligned"}
        for body in doc["slices"].values():
            assert set(body) == {"auc", "logloss", "n", "n_pos"}
        assert m.MetricsReport.from_json(text) == report

    def test_empty_prediction_set_rejected(self):
        empty = PredictionSet([], np.zeros(0), np.zeros(0), [])
        with pytest.raises(UndefinedMetricError):
            m.slice_report(empty)


class TestPairedTtest:
    def test_identical_runs_degenerate(self):
        t, p = m.paired_ttest([0.7, 0.8, 0.9], [0.7, 0.8, 0.9])
        assert t == 0.0 and p == 1.0

    def test_zero_variance_shift(self):
        a = [0.71, 0.72, 0.73, 0.74, 0.75]
        b = [x - 0.01 for x in a]
        t, p = m.paired_ttest(a, b)
        assert t == float("inf")
        assert p < 1e-12
        t2, _ = m.paired_ttest(b, a)
        assert t2 == float("-inf")

    def test_matches_numerical_integration_oracle(self):
        import mpmath as mp

        rng = np.random.default_rng(8)
        a = 0.80 + 0.01 * rng.standard_normal(8)
        b = a - 0.004 + 0.006 * rng.standard_normal(8)
        t, p = m.paired_ttest(a, b)

        mp.mp.dps = 40
        d = [mp.mpf(float(x)) - mp.mpf(float(y)) for x, y in zip(a, b)]
        n = len(d)
        mean = mp.fsum(d) / n
        var = mp.fsum((x - mean) ** 2 for x in d) / (n - 1)
        t_ref = mean / mp.sqrt(var / n)
        nu = n - 1
        coef = mp.gamma((nu + 1) / 2) / (mp.sqrt(nu * mp.pi) * mp.gamma(nu / 2))

        def pdf(x):
            return coef * (1 + x * x / nu) ** (-(nu + 1) / 2)

        p_ref = 2 * mp.quad(pdf, [abs(t_ref), mp.inf])
        assert abs(t - float(t_ref)) < 1e-8
        assert abs(p - float(p_ref)) < 1e-8

    def test_short_input_rejected(self):
        with pytest.raises(ShapeError):
            m.paired_ttest([0.5], [0.4])

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            m.paired_ttest([0.5, 0.6], [0.4])
