"""AUC, horizon AUCs, bootstrap intervals, paired DeLong test, ROC points and splits."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm, rankdata

HORIZONS = {"cumulative": ({1}, {1, 2}, {1, 2, 3}), "exclusive": ({1}, {2}, {3})}


def _check_binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be matching 1-d arrays")
    if not (y == 1).any() or not (y == 0).any():
        raise ValueError("AUC needs at least one positive and one negative")
    return s, y


def auc(scores, labels) -> float:
    """Mann-Whitney U / (n+ n-), ties counted one half (via midranks)."""
    s, y = _check_binary(scores, labels)
    ranks = rankdata(s)
    n1, n0 = int(y.sum()), int((1 - y).sum())
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def horizon_aucs(scores, categories, mode: str = "cumulative") -> tuple:
    """AUCs for ``(1y, 2y, >2y)`` case groups against all controls; ``None`` if a group is empty."""
    s = np.asarray(scores, dtype=np.float64)
    c = np.asarray(categories).astype(int)
    controls = c == 0
    out = []
    for group in HORIZONS[mode]:
        cases = np.isin(c, list(group))
        if not cases.any() or not controls.any():
            out.append(None)
            continue
        keep = cases | controls
        out.append(auc(s[keep], cases[keep].astype(int)))
    return tuple(out)


def bootstrap_ci(scores, labels, n_boot: int = 1000, alpha: float = 0.05, seed: int = 0) -> tuple[float, float]:
    """Percentile interval over patient-level resamples; single-class resamples are redrawn."""
    s, y = _check_binary(scores, labels)
    rng = np.random.default_rng(seed)
    n = len(s)
    stats = np.empty(n_boot)
    for b in range(n_boot):
        while True:
            idx = rng.integers(0, n, n)
            yb = y[idx]
            if 0 < yb.sum() < n:
                break
        stats[b] = auc(s[idx], yb)
    return float(np.quantile(stats, alpha / 2)), float(np.quantile(stats, 1 - alpha / 2))


def _placements(s, y):
    """Structural components V10 (per positive) and V01 (per negative)."""
    pos, neg = s[y == 1], s[y == 0]
    allr = rankdata(np.concatenate([pos, neg]))
    rp, rn = rankdata(pos), rankdata(neg)
    m, n = len(pos), len(neg)
    v10 = (allr[:m] - rp) / n
    v01 = 1.0 - (allr[m:] - rn) / m
    return v10, v01


def delong_test(scores_a, scores_b, labels) -> tuple[float, float, float]:
    """Paired DeLong test; returns ``(auc_a, auc_b, two-sided p)``."""
    a, y = _check_binary(scores_a, labels)
    b, _ = _check_binary(scores_b, labels)
    va10, va01 = _placements(a, y)
    vb10, vb01 = _placements(b, y)
    auc_a, auc_b = float(va10.mean()), float(vb10.mean())
    if np.array_equal(a, b):
        return auc_a, auc_b, 1.0
    m, n = len(va10), len(va01)
    s10 = np.cov(np.vstack([va10, vb10]))
    s01 = np.cov(np.vstack([va01, vb01]))
    var = (s10[0, 0] + s10[1, 1] - 2 * s10[0, 1]) / m + (s01[0, 0] + s01[1, 1] - 2 * s01[0, 1]) / n
    diff = auc_a - auc_b
    if var <= 0:
        return auc_a, auc_b, 1.0 if diff == 0 else 0.0
    z = diff / math.sqrt(var)
    return auc_a, auc_b, float(min(1.0, 2 * norm.sf(abs(z))))


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """``(fpr, tpr)`` from (0, 0) to (1, 1), one point per distinct threshold."""
    s, y = _check_binary(scores, labels)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s)), len(s) - 1]
    P, N = tp[-1], fp[-1]
    return [(0.0, 0.0)] + [(float(fp[i] / N), float(tp[i] / P)) for i in last]


def trapezoid_area(points) -> float:
    x = np.array([p[0] for p in points])
    y = np.array([p[1] for p in points])
    return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


@dataclass(frozen=True)
class SplitPlan:
    test: list
    folds: list
    seed: int


def _stratified_chunks(ids, labels, k, rng):
    """Deal shuffled ids of each class round-robin into ``k`` groups."""
    groups = [[] for _ in range(k)]
    offset = 0
    for cls in (1, 0):
        members = [i for i, l in zip(ids, labels) if l == cls]
        members = [members[j] for j in rng.permutation(len(members))]
        for j, pid in enumerate(members):
            groups[(j + offset) % k].append(pid)
        offset += len(members)
    return groups


def split(ids, labels, seed: int = 0, test_fraction: float = 0.2, n_folds: int = 5) -> SplitPlan:
    ids = list(ids)
    labels = np.asarray(labels).astype(int)
    if len(ids) < 10:
        raise ValueError(f"need at least 10 patients to split, got {len(ids)}")
    if not (labels == 1).any() or not (labels == 0).any():
        raise ValueError("both cases and controls are required for a stratified split")
    rng = np.random.default_rng(seed)
    test = []
    for cls in (1, 0):
        members = [i for i, l in zip(ids, labels) if l == cls]
        n_test = int(round(test_fraction * len(members)))
        test += [members[j] for j in rng.permutation(len(members))[:n_test]]
    test_set = set(test)
    rest = [(i, l) for i, l in zip(ids, labels) if i not in test_set]
    folds = _stratified_chunks([i for i, _ in rest], [l for _, l in rest], n_folds, rng)
    return SplitPlan(test, folds, seed)
