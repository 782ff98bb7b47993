"""Prediction and classification scores."""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DiagnosticError


def _vec(a, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.size == 0:
        raise ValueError(f"{name} must be non-empty")
    return a


def mspe(truth, pred):
    """Mean squared prediction error."""
    truth = _vec(truth, "truth")
    pred = _vec(pred, "pred")
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.size} vs {pred.size}")
    return float(np.mean((truth - pred) ** 2))


def crps_sample(samples, obs):
    """Sample CRPS, ``mean|X - z| - (1 / 2m^2) sum_ij |X_i - X_j|``.

    Exact double sum; O(m^2) memory and time.
    """
    x = _vec(samples, "samples")
    m = x.size
    return float(np.mean(np.abs(x - obs)) - np.abs(x[:, None] - x[None, :]).sum() / (2.0 * m * m))


def crps_sorted(samples, obs):
    """Same value as :func:`crps_sample` via the sorted-sample identity.

    ``obs`` may be a vector, in which case ``samples`` has shape
    ``(m, len(obs))`` and one score per column is returned.
    """
    x = np.asarray(samples, dtype=float)
    obs_arr = np.asarray(obs, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("samples must be non-empty")
    vector = obs_arr.ndim > 0
    if not vector:
        x = x.reshape(-1, 1)
        obs_arr = obs_arr.reshape(1)
    m = x.shape[0]
    xs = np.sort(x, axis=0)
    w = (2.0 * np.arange(1, m + 1) - m - 1.0)[:, None]
    pair = 2.0 * np.sum(w * xs, axis=0)
    out = np.mean(np.abs(x - obs_arr[None, :]), axis=0) - pair / (2.0 * m * m)
    return out if vector else float(out[0])


def _probs(a, name):
    a = np.asarray(a, dtype=float).reshape(-1)
    if np.any(~((a >= 0) & (a <= 1))):
        raise ValueError(f"{name} must lie in [0, 1]")
    return a


def hellinger_per_location(p, q):
    p = _probs(p, "p")
    q = _probs(q, "q")
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")
    bc = np.sqrt(p * q) + np.sqrt((1.0 - p) * (1.0 - q))
    return np.sqrt(np.clip(1.0 - bc, 0.0, 1.0))


def hellinger_bernoulli(p, q):
    """Hellinger distances between Bernoulli(p_k) and Bernoulli(q_k).

    Returns ``(sum, mean)`` over locations.
    """
    h = hellinger_per_location(p, q)
    return float(h.sum()), float(h.mean()) if h.size else 0.0


def interval_score(lower, upper, obs, alpha=0.05):
    """Interval score of a central ``(1 - alpha)`` prediction interval.

    Vectorizes over arrays of equal shape.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    obs = np.asarray(obs, dtype=float)
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if np.any(lower > upper):
        raise ValueError("interval lower bound exceeds upper bound")
    score = (upper - lower) + (2.0 / alpha) * (lower - obs) * (obs < lower) \
        + (2.0 / alpha) * (obs - upper) * (obs > upper)
    return float(score) if score.ndim == 0 else score


@dataclass
class ROC:
    auc: float
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    @property
    def curve(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc_auc(scores, labels):
    """ROC curve and AUC (Mann-Whitney form, ties counted one half).

    The curve starts at ``(0, 0)`` with threshold ``+inf`` and has one point
    per distinct score, ending at ``(1, 1)``.
    """
    s = np.asarray(scores, dtype=float).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    y = y.astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DiagnosticError("ROC/AUC needs both classes present")
    # midranks give the tie-corrected Mann-Whitney statistic
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size)
    ss = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and ss[j + 1] == ss[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    auc = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    desc = np.argsort(-s, kind="mergesort")
    sd, yd = s[desc], y[desc]
    distinct = np.flatnonzero(np.diff(sd) != 0)
    cut = np.concatenate([distinct, [s.size - 1]])
    tps = np.cumsum(yd)[cut]
    fps = (cut + 1) - tps
    tpr = np.concatenate([[0.0], tps / n_pos])
    fpr = np.concatenate([[0.0], fps / n_neg])
    thr = np.concatenate([[np.inf], sd[cut]])
    return ROC(float(auc), fpr, tpr, thr)


def auc_bruteforce(scores, labels):
    """O(n^2) pairwise AUC; reference implementation."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    pos, neg = s[y], s[~y]
    if pos.size == 0 or neg.size == 0:
        raise DiagnosticError("ROC/AUC needs both classes present")
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (pos.size * neg.size)


@dataclass
class ScoreReport:
    """Per-replicate raw scores and their mean/sd per metric.

    ``raw`` maps ``(method, metric)`` to an array over replicates.
    """

    raw: dict = field(default_factory=dict)

    def add(self, method, metric, value):
        self.raw.setdefault((method, metric), []).append(float(value))

    def summary(self):
        out = {}
        for key, vals in self.raw.items():
            v = np.asarray(vals, dtype=float)
            sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
            out[key] = (float(v.mean()), sd, int(v.size))
        return out

    def check_finite(self):
        bad = [k for k, (m, s, _) in self.summary().items() if not (np.isfinite(m) and np.isfinite(s))]
        if bad:
            raise DiagnosticError(f"non-finite metrics: {bad}")
