import numpy as np
import pytest

from dagad.evaluation import (ConfusionCounts, aggregate_runs, auc_pairwise, confusion,
                              macro_metrics, metric_report, roc_auc)

import oracles


class TestConfusion:
    def test_perfect(self):
        c = confusion([0, 1, 1, 0], [0, 1, 1, 0])
        assert c.fp_a == c.fn_a == 0

    def test_inverted(self):
        c = confusion([1, 0, 0], [0, 1, 1])
        assert c.tp_a == c.tp_n == 0

    def test_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            m = int(rng.integers(1, 40))
            pred, truth = rng.integers(0, 2, m), rng.integers(0, 2, m)
            c = confusion(pred, truth)
            assert c.as_dict() == oracles.loop_confusion(pred, truth)
            assert macro_metrics(c) == oracles.hand_macro(c.as_dict())

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0])


class TestMacro:
    def test_perfect(self):
        assert macro_metrics(confusion([0, 1], [0, 1])) == (1.0, 1.0, 1.0)

    def test_stated_counts(self):
        p, r, _ = macro_metrics(ConfusionCounts(8, 2, 2, 88, 2, 2))
        expected = (0.8 + 88 / 90) / 2
        assert p == pytest.approx(expected) and r == pytest.approx(expected)
        assert round(p, 4) == 0.8889

    def test_all_normal_predictions(self):
        truth = np.array([1, 1, 0, 0, 0, 0])
        p, r, f = macro_metrics(confusion(np.zeros(6, int), truth))
        # anomaly class contributes 0, normal class has P=4/6, R=1
        assert p == pytest.approx(4 / 6 / 2)
        assert r == pytest.approx(0.5)
        assert f == pytest.approx(0.8 / 2)


class TestAuc:
    def test_perfect(self):
        assert roc_auc([1.0, 0.0, 1.0, 0.0], [1, 0, 1, 0])[1] == 1.0

    def test_all_tied(self):
        assert roc_auc(np.full(7, 0.3), [1, 0, 0, 1, 0, 0, 0])[1] == 0.5

    def test_pairwise_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            m = int(rng.integers(2, 201))
            truth = rng.integers(0, 2, m)
            truth[:2] = [0, 1]
            # coarse grid so ties are common
            scores = rng.integers(0, int(rng.integers(2, 30)), m) / 7.0
            assert abs(roc_auc(scores, truth)[1] - auc_pairwise(scores, truth)) <= 1e-12

    def test_monotone_transform(self):
        rng = np.random.default_rng(2)
        s, t = rng.random(80), rng.integers(0, 2, 80)
        assert roc_auc(s, t)[1] == roc_auc(np.exp(3 * s) - 4, t)[1]

    def test_curve_shape(self):
        rng = np.random.default_rng(3)
        curve, _ = roc_auc(rng.random(50), rng.integers(0, 2, 50) | np.r_[1, np.zeros(49, int)])
        assert curve.fpr[0] == 0.0 and curve.tpr[0] == 0.0
        assert curve.fpr[-1] == 1.0 and curve.tpr[-1] == 1.0
        assert (np.diff(curve.fpr) >= 0).all() and (np.diff(curve.tpr) >= 0).all()

    def test_single_class(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [0, 0])

    def test_csv_and_svg(self):
        curve, auc = roc_auc([0.9, 0.1, 0.5], [1, 0, 0])
        text = curve.to_csv(fingerprint="abc")
        assert text.splitlines()[:2] == ["# fingerprint=abc", "threshold,fpr,tpr"]
        assert text.splitlines()[2].split(",")[1:] == ["0.0", "0.0"]
        assert "fingerprint=abc" in curve.to_svg(auc, fingerprint="abc")


class TestReport:
    def test_metric_report(self):
        out = metric_report([1, 0, 0, 1], [0.9, 0.2, 0.4, 0.6], [1, 0, 1, 0])
        assert out["num_samples"] == 4 and out["num_anomalies"] == 2
        assert out["auc"] == 0.75

    def test_aggregate_single(self):
        s = aggregate_runs([{"f1": 0.7, "name": "x"}])
        assert s == {"f1": {"mean": 0.7, "std": 0.0, "n": 1}}

    def test_aggregate_pair(self):
        assert aggregate_runs([{"f1": 0.8}, {"f1": 0.9}])["f1"]["mean"] == pytest.approx(0.85)

    def test_aggregate_loop(self):
        rng = np.random.default_rng(4)
        vals = rng.random(10)
        s = aggregate_runs([{"auc": float(v)} for v in vals])["auc"]
        total = 0.0
        for v in vals:
            total += v
        assert abs(s["mean"] - total / 10) <= 1e-12
        assert abs(s["std"] - np.std(vals, ddof=1)) <= 1e-12

    def test_aggregate_empty(self):
        with pytest.raises(ValueError):
            aggregate_runs([])
