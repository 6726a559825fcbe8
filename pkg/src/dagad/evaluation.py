"""Macro precision/recall/F1, ROC curves and AUC.

Anomalies (label 1) are the positive class for the ``_a`` counts and normal
nodes (label 0) for the ``_n`` counts.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp_a: int
    fp_a: int
    fn_a: int
    tp_n: int
    fp_n: int
    fn_n: int

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[0] is +inf, i.e. nothing flagged

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, fingerprint=None):
        buf = io.StringIO()
        if fingerprint:
            buf.write(f"# fingerprint={fingerprint}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()):
            w.writerow([repr(t), repr(f), repr(p)])
        return buf.getvalue()

    def to_svg(self, auc=None, title="ROC", fingerprint=None, size=320):
        pad = 40
        span = size - 2 * pad

        def xy(f, t):
            return f"{pad + f * span:.2f},{size - pad - t * span:.2f}"

        pts = " ".join(xy(f, t) for f, t in zip(self.fpr, self.tpr))
        label = title if auc is None else f"{title} (AUC={auc:.4f})"
        desc = f"<desc>fingerprint={fingerprint}</desc>" if fingerprint else ""
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
            f'viewBox="0 0 {size} {size}">{desc}'
            f'<rect width="{size}" height="{size}" fill="white"/>'
            f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>'
            f'<line x1="{pad}" y1="{size - pad}" x2="{size - pad}" y2="{pad}" '
            f'stroke="grey" stroke-dasharray="4 4"/>'
            f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>'
            f'<text x="{size / 2}" y="{pad / 2 + 5}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="13">{label}</text>'
            f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">false positive rate</text>'
            f'<text x="12" y="{size / 2}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11" transform="rotate(-90 12 {size / 2})">true positive rate</text>'
            "</svg>\n"
        )


def confusion(pred, truth):
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError(f"length mismatch: pred {pred.shape}, truth {truth.shape}")
    if len(pred) == 0:
        raise ValueError("empty prediction vector")
    tp_a = int(((pred == 1) & (truth == 1)).sum())
    fp_a = int(((pred == 1) & (truth == 0)).sum())
    fn_a = int(((pred == 0) & (truth == 1)).sum())
    tp_n = int(((pred == 0) & (truth == 0)).sum())
    # a false anomaly alarm is a missed normal and vice versa
    return ConfusionCounts(tp_a, fp_a, fn_a, tp_n, fp_n=fn_a, fn_n=fp_a)


def _ratio(num, den):
    return num / den if den else 0.0


def _f1(p, r):
    return _ratio(2.0 * p * r, p + r)


def per_class(c):
    p_a, r_a = _ratio(c.tp_a, c.tp_a + c.fp_a), _ratio(c.tp_a, c.tp_a + c.fn_a)
    p_n, r_n = _ratio(c.tp_n, c.tp_n + c.fp_n), _ratio(c.tp_n, c.tp_n + c.fn_n)
    return {"anomalous": (p_a, r_a, _f1(p_a, r_a)), "normal": (p_n, r_n, _f1(p_n, r_n))}


def macro_metrics(c):
    """(precision, recall, f1), each the unweighted mean over the two classes."""
    pc = per_class(c)
    (p_a, r_a, f_a), (p_n, r_n, f_n) = pc["anomalous"], pc["normal"]
    return (p_a + p_n) / 2.0, (r_a + r_n) / 2.0, (f_a + f_n) / 2.0


def roc_auc(scores, truth):
    """ROC curve over every distinct threshold plus the trapezoidal AUC.

    Tied scores move along the diagonal, so the area equals the pairwise
    probability with ties counted half.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.int64)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError("scores and truth must be equal-length vectors")
    pos = int((truth == 1).sum())
    neg = len(truth) - pos
    if pos == 0 or neg == 0:
        raise ValueError("ROC/AUC needs both classes in the ground truth")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], truth[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    # integer trapezoid sum, one division at the end
    twice_area = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    auc = twice_area / (2.0 * pos * neg)
    curve = RocCurve(fp / neg, tp / pos, np.r_[np.inf, s[last]])
    return curve, auc


def auc_pairwise(scores, truth):
    """Brute-force P(score_anomaly > score_normal) + 0.5 P(tie)."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    a, n = scores[truth == 1], scores[truth == 0]
    diff = a[:, None] - n[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def metric_report(pred, scores, truth):
    """JSON-ready dict with macro metrics, AUC and confusion counts."""
    c = confusion(pred, truth)
    p, r, f = macro_metrics(c)
    out = {"precision": p, "recall": r, "f1": f, "auc": None, "confusion": c.as_dict(),
           "num_samples": int(len(truth)), "num_anomalies": int(np.sum(truth))}
    if 0 < out["num_anomalies"] < len(truth):
        out["auc"] = roc_auc(scores, truth)[1]
    return out


def aggregate_runs(reports, keys=None):
    """Mean and sample standard deviation of each numeric metric."""
    reports = list(reports)
    if not reports:
        raise ValueError("no runs to aggregate")
    keys = keys or [k for k, v in reports[0].items()
                    if isinstance(v, (int, float)) and not isinstance(v, bool)]
    summary = {}
    for k in keys:
        vals = [r[k] for r in reports if r.get(k) is not None]
        if not vals:
            summary[k] = {"mean": None, "std": None, "n": 0}
            continue
        mean = math.fsum(vals) / len(vals)
        std = 0.0
        if len(vals) > 1:
            std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1))
        summary[k] = {"mean": mean, "std": std, "n": len(vals)}
    return summary
