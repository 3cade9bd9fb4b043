"""Detection and decoding metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class ScoreSample:
    score: float
    label: str

    def __post_init__(self):
        if self.label not in ("watermarked", "null"):
            raise ValueError("label must be 'watermarked' or 'null'")
        if not np.isfinite(self.score):
            raise ValueError("scores must be finite")


def _finite(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float).ravel()
    if a.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite scores")
    return a


def split_samples(samples: Sequence[ScoreSample]) -> Tuple[np.ndarray, np.ndarray]:
    pos = [s.score for s in samples if s.label == "watermarked"]
    neg = [s.score for s in samples if s.label == "null"]
    return np.asarray(pos), np.asarray(neg)


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney estimate of Pr[pos > neg] + Pr[pos = neg] / 2."""
    pos = _finite(pos_scores, "pos_scores")
    neg = _finite(neg_scores, "neg_scores")
    ranks = rankdata(np.concatenate([pos, neg]))
    n1, n0 = pos.size, neg.size
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def tpr_at_fpr(pos_scores, neg_scores, fpr: float = 0.01) -> float:
    if not 0.0 <= fpr <= 1.0:
        raise ValueError("fpr must lie in [0, 1]")
    pos = _finite(pos_scores, "pos_scores")
    neg = _finite(neg_scores, "neg_scores")
    thr = np.quantile(neg, 1.0 - fpr, method="higher")
    return float(np.mean(pos > thr))


def roc_points(pos_scores, neg_scores) -> Tuple[np.ndarray, np.ndarray]:
    """(FPR, TPR) for the rule score >= t at every distinct score, plus both corners."""
    pos = _finite(pos_scores, "pos_scores")
    neg = _finite(neg_scores, "neg_scores")
    thr = np.unique(np.concatenate([pos, neg]))[::-1]
    ps, ns = np.sort(pos), np.sort(neg)
    tpr = (pos.size - np.searchsorted(ps, thr, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(ns, thr, side="left")) / neg.size
    return np.r_[0.0, fpr, 1.0], np.r_[0.0, tpr, 1.0]


def _upper_hull(x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    hull: list = []
    for p in sorted(set(zip(x.tolist(), y.tolist()))):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    h = np.asarray(hull)
    return h[:, 0], h[:, 1]


def empirical_eer(pos_scores, neg_scores) -> float:
    """Point where FPR = FNR on the convex hull of the empirical ROC.

    Thresholds are scanned at every score value; the hull interpolates
    between neighbouring operating points (randomised thresholds), which
    gives an exact crossing instead of the nearest grid point.
    """
    fpr, tpr = roc_points(pos_scores, neg_scores)
    hx, hy = _upper_hull(fpr, tpr)
    # d = FPR - FNR = x + y - 1 is non-decreasing along the hull
    d = hx + hy - 1.0
    i = int(np.searchsorted(d, 0.0, side="left"))
    if i == 0:
        return float(hx[0])
    if d[i] == 0.0:
        return float(hx[i])
    x0, x1, d0, d1 = hx[i - 1], hx[i], d[i - 1], d[i]
    return float(x0 + (x1 - x0) * (-d0) / (d1 - d0))


def bit_accuracy(decoded, truth, m: int) -> float:
    d = np.asarray(getattr(decoded, "symbols", decoded), dtype=np.int64)
    t = np.asarray(getattr(truth, "symbols", truth), dtype=np.int64)
    if d.shape != t.shape:
        raise ValueError("decoded and truth must have the same length")
    if d.size == 0:
        raise ValueError("empty message")
    shifts = np.arange(m)
    same = ((d[:, None] >> shifts) & 1) == ((t[:, None] >> shifts) & 1)
    return float(same.mean())


def bootstrap_ci(
    values,
    stat: Callable[[np.ndarray], float] = np.mean,
    n_resamples: int = 1000,
    level: float = 0.90,
    seed=0,
) -> Tuple[float, float]:
    """Percentile bootstrap interval for ``stat`` over the rows of ``values``."""
    x = np.asarray(values)
    if x.shape[0] == 0:
        raise ValueError("need at least one value")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, x.shape[0], size=(n_resamples, x.shape[0]))
    reps = np.array([stat(x[i]) for i in idx])
    a = (1.0 - level) / 2.0
    return float(np.quantile(reps, a)), float(np.quantile(reps, 1.0 - a))


def bootstrap_metric_ci(pos_scores, neg_scores, metric: Callable, n_resamples: int = 1000, level: float = 0.90, seed=0):
    """Percentile interval for a two-sample metric, resampling each class independently."""
    pos = _finite(pos_scores, "pos_scores")
    neg = _finite(neg_scores, "neg_scores")
    rng = np.random.default_rng(seed)
    reps = np.empty(n_resamples)
    for r in range(n_resamples):
        reps[r] = metric(pos[rng.integers(0, pos.size, pos.size)], neg[rng.integers(0, neg.size, neg.size)])
    a = (1.0 - level) / 2.0
    return float(np.quantile(reps, a)), float(np.quantile(reps, 1.0 - a))
