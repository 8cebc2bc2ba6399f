"""Performance and fairness metrics for binarized classifier outputs.

Fairness with respect to a continuous attribute is expressed through
univariate logistic regressions of a binary outcome on the attribute, so no
quantization of the attribute is required. Binary attributes additionally get
equalized odds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import InputError, MetricUndefinedError

LR_RIDGE = 1e-6
LR_TOL = 1e-10
LR_MAX_ITER = 100

# Default age buckets: [18,30), [30,45), [45,65), [65,100)
DEFAULT_BUCKET_EDGES = (18.0, 30.0, 45.0, 65.0, 100.0)
BINARY_BUCKET_EDGES = (-0.5, 0.5, 1.5)


# ---------------------------------------------------------------------------
# Logistic regression


@dataclass(frozen=True)
class LRFit:
    intercept: float
    slope: float
    converged: bool
    n_iterations: int
    degenerate: bool = False


def _penalized_loglik(c0: float, c1: float, t: np.ndarray, y: np.ndarray) -> float:
    z = c0 + c1 * t
    # log sigma(z) = -logaddexp(0, -z)
    ll = np.sum(y * -np.logaddexp(0.0, -z) + (1.0 - y) * -np.logaddexp(0.0, z))
    return float(ll - 0.5 * LR_RIDGE * c1 * c1)


def fit_lr_1d(x, y) -> LRFit:
    """Fit ``P(y=1|x) = sigmoid(intercept + slope * x)`` by Newton-Raphson.

    ``x`` is standardized internally; a ridge penalty of 1e-6 on the
    standardized slope keeps perfectly separated data from diverging. The
    reported slope is per unit of ``x``.

    A constant outcome (or constant ``x``) has nothing to explain: the fit
    returns slope 0 with ``degenerate=True`` rather than raising.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InputError(f"x and y lengths differ: {x.size} != {y.size}")
    if x.size < 2:
        raise InputError("logistic regression needs at least 2 observations")
    if not np.all(np.isfinite(x)):
        raise InputError("non-finite attribute values")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("outcome must be binary")

    n = y.size
    k = y.sum()
    smoothed = math.log((k + 0.5) / (n - k + 0.5))
    if k == 0 or k == n:
        return LRFit(smoothed, 0.0, True, 0, degenerate=True)
    mu = x.mean()
    sd = x.std()
    if sd == 0.0:
        return LRFit(math.log(k / (n - k)), 0.0, True, 0, degenerate=True)
    t = (x - mu) / sd

    c0, c1 = math.log(k / (n - k)), 0.0
    ll = _penalized_loglik(c0, c1, t, y)
    converged = False
    it = 0
    for it in range(1, LR_MAX_ITER + 1):
        p = expit(c0 + c1 * t)
        r = y - p
        w = p * (1.0 - p)
        g0 = r.sum()
        g1 = (r * t).sum() - LR_RIDGE * c1
        h00 = w.sum()
        h01 = (w * t).sum()
        h11 = (w * t * t).sum() + LR_RIDGE
        det = h00 * h11 - h01 * h01
        if det <= 0.0 or not np.isfinite(det):
            break
        d0 = (h11 * g0 - h01 * g1) / det
        d1 = (h00 * g1 - h01 * g0) / det
        step = 1.0
        while True:
            n0, n1 = c0 + step * d0, c1 + step * d1
            new_ll = _penalized_loglik(n0, n1, t, y)
            if new_ll >= ll - 1e-12 * abs(ll) or step < 1e-8:
                break
            step *= 0.5
        delta = max(abs(n0 - c0), abs(n1 - c1))
        c0, c1, ll = n0, n1, new_ll
        if delta < LR_TOL:
            converged = True
            break

    slope = c1 / sd
    intercept = c0 - c1 * mu / sd
    return LRFit(float(intercept), float(slope), converged, it)


# ---------------------------------------------------------------------------
# Ranking metrics


def auroc(scores, labels, axis: int = -1):
    """Mann-Whitney AUROC; tied scores contribute 1/2.

    Works along ``axis`` for batched input. Batched rows lacking a class give
    NaN; a 1-d input lacking a class raises ``MetricUndefinedError``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise InputError("scores and labels must have the same shape")
    pos = labels == 1
    n_pos = pos.sum(axis=axis)
    n_neg = scores.shape[axis] - n_pos
    ranks = rankdata(scores, axis=axis)
    rank_sum = np.where(pos, ranks, 0.0).sum(axis=axis)
    with np.errstate(invalid="ignore", divide="ignore"):
        auc = (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    if scores.ndim == 1:
        if n_pos == 0 or n_neg == 0:
            raise MetricUndefinedError("AUROC needs both classes present")
        return float(auc)
    return np.where((n_pos > 0) & (n_neg > 0), auc, np.nan)


def max_f1_threshold(scores, labels) -> float:
    """Decision threshold maximizing F1; predictions are ``scores > threshold``.

    Candidates are the midpoints between adjacent sorted unique scores plus a
    point just below the minimum (predict everything positive). Ties go to the
    higher threshold.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise MetricUndefinedError("max-F1 threshold needs at least one positive label")
    uniq = np.unique(scores)
    below = np.nextafter(uniq[0], -np.inf)
    candidates = np.concatenate([[below], (uniq[:-1] + uniq[1:]) / 2.0])
    # Count positives/total with score >= uniq[j]: predicted positive set for candidate j.
    order = np.searchsorted(uniq, scores)
    tp_at = np.bincount(order, weights=(labels == 1).astype(np.float64), minlength=uniq.size)
    all_at = np.bincount(order, minlength=uniq.size).astype(np.float64)
    tp = np.cumsum(tp_at[::-1])[::-1]
    pp = np.cumsum(all_at[::-1])[::-1]
    f1 = 2.0 * tp / (pp + n_pos)
    best = np.flatnonzero(f1 >= f1.max() - 1e-15)
    return float(candidates[best[-1]])


# ---------------------------------------------------------------------------
# Fairness metrics


def _binary(arr, name: str) -> np.ndarray:
    arr = np.asarray(arr).ravel()
    if not np.all((arr == 0) | (arr == 1)):
        raise InputError(f"{name} must be binary 0/1")
    return arr.astype(np.int8)


def separation(predictions, labels, attribute) -> tuple[float, float, float]:
    """Return ``(s, tpr_slope, fpr_slope)``.

    ``tpr_slope`` is the LR slope of a positive prediction on the attribute
    among label==1 examples, ``fpr_slope`` the same among label==0, and
    ``s`` the mean of their absolute values.
    """
    pred = _binary(predictions, "predictions")
    lab = _binary(labels, "labels")
    a = np.asarray(attribute, dtype=np.float64).ravel()
    for cls, name in ((1, "positive (label=1)"), (0, "negative (label=0)")):
        if (lab == cls).sum() < 2:
            raise MetricUndefinedError(f"separation undefined: {name} class has fewer than 2 examples")
    tpr = fit_lr_1d(a[lab == 1], pred[lab == 1]).slope
    fpr = fit_lr_1d(a[lab == 0], pred[lab == 0]).slope
    return (abs(tpr) + abs(fpr)) / 2.0, tpr, fpr


def percent_change_per_delta(s: float, delta: float) -> float:
    """Fractional performance change over an attribute difference: ``e^(s*delta) - 1``."""
    if s < 0:
        raise InputError("separation coefficient must be nonnegative")
    return math.expm1(s * delta)


def independence(predictions, attribute) -> float:
    pred = _binary(predictions, "predictions")
    return abs(fit_lr_1d(np.asarray(attribute, dtype=np.float64), pred).slope)


def sufficiency(predictions, labels, attribute) -> float:
    """Attribute dependence of PPV: |LR slope| of label==1 among predicted positives."""
    pred = _binary(predictions, "predictions")
    lab = _binary(labels, "labels")
    a = np.asarray(attribute, dtype=np.float64).ravel()
    sel = pred == 1
    if sel.sum() < 2:
        raise MetricUndefinedError("sufficiency undefined: fewer than 2 positive predictions")
    return abs(fit_lr_1d(a[sel], lab[sel]).slope)


@dataclass(frozen=True)
class MaxGap:
    value: float
    per_bucket: dict
    excluded: list


def max_gap(scores, labels, attribute, bucket_edges: Sequence[float] = DEFAULT_BUCKET_EDGES,
            mode: str = "auroc", threshold: float | None = None) -> MaxGap:
    """Largest difference in per-bucket performance across attribute buckets.

    Buckets are half-open ``[lo, hi)``. ``mode="auroc"`` scores each bucket
    by AUROC; ``mode="accuracy"`` by accuracy of ``scores > threshold``.
    Buckets without both classes are dropped and listed in ``excluded``.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    lab = _binary(labels, "labels")
    a = np.asarray(attribute, dtype=np.float64).ravel()
    if mode not in ("auroc", "accuracy"):
        raise InputError(f"unknown max_gap mode {mode!r}")
    if mode == "accuracy" and threshold is None:
        raise InputError("accuracy mode needs a threshold")
    per_bucket = {}
    excluded = []
    for lo, hi in zip(bucket_edges[:-1], bucket_edges[1:]):
        sel = (a >= lo) & (a < hi)
        ys = lab[sel]
        if ys.size == 0 or ys.min() == ys.max():
            excluded.append((lo, hi))
            continue
        if mode == "auroc":
            per_bucket[(lo, hi)] = auroc(scores[sel], ys)
        else:
            per_bucket[(lo, hi)] = float(np.mean((scores[sel] > threshold) == ys))
    if len(per_bucket) < 2:
        raise MetricUndefinedError(f"max_gap needs at least 2 buckets with both classes, got {len(per_bucket)}")
    vals = list(per_bucket.values())
    return MaxGap(max(vals) - min(vals), per_bucket, excluded)


def _rates(pred: np.ndarray, lab: np.ndarray) -> tuple[float, float]:
    return float(pred[lab == 1].mean()), float(pred[lab == 0].mean())


def equalized_odds(predictions, labels, group) -> float:
    """``max(|TPR_0 - TPR_1|, |FPR_0 - FPR_1|)`` between two groups."""
    pred = _binary(predictions, "predictions")
    lab = _binary(labels, "labels")
    grp = _binary(group, "group")
    rates = []
    for g in (0, 1):
        sel = grp == g
        if not (np.any(lab[sel] == 1) and np.any(lab[sel] == 0)):
            raise MetricUndefinedError(f"equalized odds undefined: group {g} lacks a class")
        rates.append(_rates(pred[sel], lab[sel]))
    return max(abs(rates[0][0] - rates[1][0]), abs(rates[0][1] - rates[1][1]))


# ---------------------------------------------------------------------------
# Resampling


@dataclass(frozen=True)
class BootstrapCI:
    lo: float
    hi: float
    n_redrawn: int


def bootstrap_ci(statistic: Callable, data: Sequence, n_resamples: int = 1000, level: float = 0.95,
                 seed: int = 0, vectorized: bool = False, max_rounds: int = 100) -> BootstrapCI:
    """Percentile bootstrap interval of ``statistic(*data)`` over examples.

    ``data`` is a sequence of arrays aligned on axis 0. With ``vectorized``
    the statistic receives arrays with a leading resample axis and returns
    one value per resample. Resamples where the statistic is undefined (NaN
    or ``MetricUndefinedError``) are redrawn; the redraw count is returned.
    """
    arrays = [np.asarray(d) for d in data]
    n = arrays[0].shape[0]
    if n == 0 or any(arr.shape[0] != n for arr in arrays):
        raise InputError("bootstrap data must be nonempty and aligned")
    if n_resamples < 1:
        raise InputError("n_resamples must be positive")
    rng = np.random.default_rng(seed)

    def evaluate(idx: np.ndarray) -> np.ndarray:
        if vectorized:
            return np.asarray(statistic(*[arr[idx] for arr in arrays]), dtype=np.float64)
        out = np.empty(idx.shape[0])
        for r, row in enumerate(idx):
            try:
                out[r] = statistic(*[arr[row] for arr in arrays])
            except MetricUndefinedError:
                out[r] = np.nan
        return out

    values = evaluate(rng.integers(0, n, size=(n_resamples, n)))
    redrawn = 0
    for _ in range(max_rounds):
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size == 0:
            break
        redrawn += bad.size
        values[bad] = evaluate(rng.integers(0, n, size=(bad.size, n)))
    else:
        raise MetricUndefinedError("statistic undefined on too many bootstrap resamples")
    tail = (1.0 - level) / 2.0 * 100.0
    lo, hi = np.percentile(values, [tail, 100.0 - tail])
    return BootstrapCI(float(lo), float(hi), redrawn)


# ---------------------------------------------------------------------------
# Per-model report


@dataclass
class FairnessReport:
    separation: float = math.nan
    tpr_slope: float = math.nan
    fpr_slope: float = math.nan
    independence: float = math.nan
    sufficiency: float = math.nan
    equalized_odds: float = math.nan
    max_gap: float = math.nan
    clinical_auc: float = math.nan
    threshold: float = math.nan
    undefined: dict = field(default_factory=dict)

    def value(self, metric: str) -> float:
        if metric not in FAIRNESS_METRICS:
            raise InputError(f"unknown fairness metric {metric!r}")
        return getattr(self, metric)


FAIRNESS_METRICS = ("separation", "independence", "sufficiency", "equalized_odds", "max_gap")


def fairness_report(scores, labels, attribute, threshold: float, attribute_kind: str = "continuous",
                    bucket_edges: Sequence[float] | None = None, max_gap_mode: str = "auroc") -> FairnessReport:
    """Evaluate every applicable metric; undefined ones stay NaN with a reason."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    attribute = np.asarray(attribute, dtype=np.float64).ravel()
    pred = (scores > threshold).astype(np.int8)
    rep = FairnessReport(threshold=float(threshold))
    if bucket_edges is None:
        bucket_edges = BINARY_BUCKET_EDGES if attribute_kind == "binary" else DEFAULT_BUCKET_EDGES

    def attempt(name, fn):
        try:
            return fn()
        except MetricUndefinedError as exc:
            rep.undefined[name] = str(exc)
            return None

    res = attempt("clinical_auc", lambda: auroc(scores, labels))
    if res is not None:
        rep.clinical_auc = res
    res = attempt("separation", lambda: separation(pred, labels, attribute))
    if res is not None:
        rep.separation, rep.tpr_slope, rep.fpr_slope = res
    res = attempt("independence", lambda: independence(pred, attribute))
    if res is not None:
        rep.independence = res
    res = attempt("sufficiency", lambda: sufficiency(pred, labels, attribute))
    if res is not None:
        rep.sufficiency = res
    if attribute_kind == "binary":
        res = attempt("equalized_odds", lambda: equalized_odds(pred, labels, attribute.astype(np.int8)))
        if res is not None:
            rep.equalized_odds = res
    else:
        rep.undefined["equalized_odds"] = "requires a binary attribute"
    res = attempt("max_gap", lambda: max_gap(scores, labels, attribute, bucket_edges, max_gap_mode, threshold))
    if res is not None:
        rep.max_gap = res.value
    return rep
