"""Shortcut testing: sweep the gradient scale, correlate encoding with fairness.

A sweep trains one multitask model per (scale, replicate) pair, measures
clinical AUC and fairness on the test split and probes the frozen backbone
for attribute encoding. ``short_test`` then asks whether fairness moves with
encoding across the included models (Spearman correlation of the expected
sign); ``compare_short`` asks whether two sweeps' correlations differ.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import stats
from scipy.stats import rankdata

from . import nn
from .datagen import BinaryAttrSpec, Dataset, generate_binary_attr, split
from .errors import InputError, SweepDegenerateError, UnderpoweredError
from .fairness import FAIRNESS_METRICS, FairnessReport, fairness_report, max_f1_threshold
from .probes import EncodingResult, ProbeConfig, attribute_transfer_probes


# ---------------------------------------------------------------------------
# Grid and rank statistics


def make_lambda_grid(n: int = 25, magnitude: float = 0.1, decades: float = 3.0) -> list[float]:
    """Symmetric grid: zero plus (n-1)/2 log-spaced magnitudes per sign.

    Magnitudes run from ``magnitude * 10**-decades`` to ``magnitude``.
    """
    if n < 1 or n % 2 == 0:
        raise InputError("grid size must be odd so that zero is included")
    k = (n - 1) // 2
    if k == 0:
        return [0.0]
    if k == 1:
        mags = np.array([magnitude])
    else:
        mags = magnitude * np.logspace(-decades, 0.0, k)
    mags[-1] = magnitude
    return [float(-v) for v in mags[::-1]] + [0.0] + [float(v) for v in mags]


def _pearson_rows(rx: np.ndarray, ry: np.ndarray) -> np.ndarray:
    rx = rx - rx.mean(axis=-1, keepdims=True)
    ry = ry - ry.mean(axis=-1, keepdims=True)
    num = (rx * ry).sum(axis=-1)
    den = np.sqrt((rx * rx).sum(axis=-1) * (ry * ry).sum(axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / den
    return np.where(den > 0, np.clip(r, -1.0, 1.0), np.nan)


def spearman(x, y) -> float:
    """Pearson correlation of mid-ranks; NaN when either variable is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise InputError("x and y must have the same length")
    if x.size < 3:
        raise InputError("spearman needs at least 3 pairs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InputError("non-finite values")
    return float(_pearson_rows(rankdata(x), rankdata(y)))


EXACT_MAX_N = 9


@lru_cache(maxsize=None)
def _exact_null(n: int) -> np.ndarray:
    """Sorted |rho| over all n! rank permutations (no ties)."""
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    d2 = ((perms - np.arange(n)) ** 2).sum(axis=1)
    rho = 1.0 - 6.0 * d2 / (n * (n * n - 1))
    return np.sort(np.abs(rho))


def spearman_p(rho: float, n: int) -> float:
    """Two-sided p-value: exact permutation for n <= 9, t approximation otherwise."""
    if n < 4:
        raise InputError("p-value needs n >= 4")
    if not np.isfinite(rho) or abs(rho) > 1.0 + 1e-12:
        raise InputError("rho must be finite and in [-1, 1]")
    r = min(abs(rho), 1.0)
    if n <= EXACT_MAX_N:
        null = _exact_null(n)
        count = null.size - np.searchsorted(null, r - 1e-12, side="left")
        return float(count / null.size)
    if r >= 1.0:
        return float(np.finfo(np.float64).tiny)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * stats.t.sf(t, n - 2)
    return float(min(1.0, max(p, np.finfo(np.float64).tiny)))


# ---------------------------------------------------------------------------
# Sweep data model


@dataclass(frozen=True)
class SweepSpec:
    lambda_grid: tuple | None = None
    grid_n: int = 25
    grid_magnitude: float = 0.1
    grid_decades: float = 3.0
    replicates: int = 5
    auc_threshold: float = 0.8
    fairness_metric: str | None = None  # None: separation (continuous A) / equalized_odds (binary A)
    encoding_direction: str = "auto"  # auto | error-like | score-like
    chunk_size: int = 0  # points trained per stack; 0 = all at once

    def grid(self) -> list[float]:
        if self.lambda_grid is not None:
            g = [float(v) for v in self.lambda_grid]
            if sorted(g) != g or 0.0 not in g:
                raise InputError("lambda grid must be sorted and contain 0")
            return g
        return make_lambda_grid(self.grid_n, self.grid_magnitude, self.grid_decades)

    def metric_for(self, attribute_kind: str) -> str:
        if self.fairness_metric is not None:
            return self.fairness_metric
        return "equalized_odds" if attribute_kind == "binary" else "separation"


@dataclass(frozen=True)
class AnalysisSpec:
    metric: str | None = None
    alpha: float = 0.05
    bucket_edges: tuple | None = None
    max_gap_mode: str = "auroc"
    min_points: int = 10
    delta_attribute: float = 10.0


@dataclass
class SweepPoint:
    lam: float
    replicate: int
    seed: int
    clinical_auc: float
    encoding: EncodingResult | None
    fairness: FairnessReport
    excluded: bool = False
    exclude_reason: str = ""
    lambda_index: int = 0


@dataclass(frozen=True)
class ShortVerdict:
    rho: float
    p_two_sided: float
    n_included: int
    n_excluded: int
    expected_sign: str
    shortcut_detected: bool
    alpha: float
    metric: str
    encoding_kind: str
    degenerate: bool = False
    included: tuple = ()

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "p": self.p_two_sided,
            "n_included": self.n_included,
            "n_excluded": self.n_excluded,
            "expected_sign": self.expected_sign,
            "shortcut_detected": self.shortcut_detected,
            "alpha": self.alpha,
            "metric": self.metric,
            "encoding_kind": self.encoding_kind,
            "degenerate": self.degenerate,
            "included": [list(k) for k in self.included],
        }


def point_seed(base_seed: int, lambda_index: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(base_seed), int(lambda_index), int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# Sweep


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset

    @property
    def attribute_kind(self) -> str:
        return self.train.attribute_kind


def _evaluate_point(spec: nn.NetworkSpec, res: nn.TrainResult, splits: Splits, sweep: SweepSpec,
                    analysis: AnalysisSpec, lam: float, li: int, ri: int, seed: int) -> SweepPoint:
    point = SweepPoint(lam, ri, seed, math.nan, None, FairnessReport(), lambda_index=li)
    if res.diverged_at is not None:
        point.excluded, point.exclude_reason = True, f"training diverged at step {res.diverged_at}"
        return point
    val_scores = nn.forward(spec, res.params, splits.val.features).scores
    test_scores = nn.forward(spec, res.params, splits.test.features).scores
    thr = max_f1_threshold(val_scores, splits.val.labels)
    rep = fairness_report(test_scores, splits.test.labels, splits.test.attributes, thr, splits.attribute_kind,
                          analysis.bucket_edges, analysis.max_gap_mode)
    point.fairness = rep
    point.clinical_auc = rep.clinical_auc
    if not (rep.clinical_auc >= sweep.auc_threshold):
        point.excluded, point.exclude_reason = True, f"clinical_auc < {sweep.auc_threshold}"
    return point


def run_sweep(splits: Splits, sweep: SweepSpec, network: nn.NetworkSpec, train_cfg: nn.TrainConfig,
              probe_cfg: ProbeConfig, analysis: AnalysisSpec | None = None, seed: int = 0,
              skip: set | None = None, on_chunk: Callable | None = None,
              allow_degenerate: bool = False) -> tuple[list[SweepPoint], dict]:
    """Train, evaluate and probe every (scale, replicate) point.

    Point seeds derive from ``(seed, lambda index, replicate)`` only, so any
    subset of points reproduces the same values. ``skip`` holds
    ``(lambda_index, replicate)`` keys to leave out (resume); ``on_chunk``
    receives each finished chunk of points.
    """
    analysis = analysis or AnalysisSpec()
    skip = skip or set()
    grid = sweep.grid()
    network = network.replace(input_dim=splits.train.n_features, attribute_kind=splits.attribute_kind)
    keys = [(li, ri) for li in range(len(grid)) for ri in range(sweep.replicates)]
    seeds = {k: point_seed(seed, *k) for k in keys}
    todo = [k for k in keys if k not in skip]
    chunk = sweep.chunk_size or max(1, len(todo))
    points: list[SweepPoint] = []
    started = time.time()
    for start in range(0, len(todo), chunk):
        part = todo[start:start + chunk]
        results = nn.train_many(network, splits.train.arrays(), splits.val.arrays(), train_cfg,
                                [grid[li] for li, _ in part], [seeds[k] for k in part])
        chunk_points = [_evaluate_point(network, res, splits, sweep, analysis, grid[li], li, ri, seeds[(li, ri)])
                        for res, (li, ri) in zip(results, part)]
        ok = [i for i, res in enumerate(results) if res.diverged_at is None]
        if ok:
            encs = attribute_transfer_probes(network, [results[i].params for i in ok], splits.train, splits.val,
                                             splits.test, probe_cfg, [seeds[part[i]] for i in ok])
            for i, enc in zip(ok, encs):
                chunk_points[i].encoding = enc
        points.extend(chunk_points)
        if on_chunk is not None:
            on_chunk(chunk_points)
    if points and all(p.excluded for p in points) and not allow_degenerate:
        raise SweepDegenerateError("every sweep point was excluded")
    manifest = {
        "master_seed": int(seed),
        "lambda_grid": grid,
        "replicates": sweep.replicates,
        "point_seeds": {f"{li}:{ri}": seeds[(li, ri)] for li, ri in keys},
        "elapsed_seconds": time.time() - started,
    }
    return points, manifest


# ---------------------------------------------------------------------------
# Verdicts


def _expected_sign(encoding_kind: str, direction: str = "auto") -> str:
    if direction == "auto":
        direction = "error-like" if encoding_kind in ("mae", "mse") else "score-like"
    if direction not in ("error-like", "score-like"):
        raise InputError(f"unknown encoding direction {direction!r}")
    return "negative" if direction == "error-like" else "positive"


def _included_arrays(points: Sequence[SweepPoint], metric: str):
    if metric not in FAIRNESS_METRICS:
        raise InputError(f"unknown fairness metric {metric!r}")
    keep = [p for p in points if not p.excluded and p.encoding is not None
            and np.isfinite(p.fairness.value(metric)) and np.isfinite(p.encoding.value)]
    enc = np.array([p.encoding.value for p in keep])
    fair = np.array([p.fairness.value(metric) for p in keep])
    return keep, enc, fair


def short_test(points: Sequence[SweepPoint], metric: str, alpha: float = 0.05, min_points: int = 10,
               encoding_direction: str = "auto") -> ShortVerdict:
    """Spearman test of encoding vs fairness over included points.

    The expected sign is negative for error-like encodings (lower MAE means
    more encoding) and positive for score-like ones (AUROC).
    """
    keep, enc, fair = _included_arrays(points, metric)
    kinds = {p.encoding.metric_kind for p in keep}
    if len(kinds) > 1:
        raise InputError(f"mixed encoding kinds {sorted(kinds)}")
    if len(keep) < max(min_points, 4):
        raise UnderpoweredError(f"only {len(keep)} included points (need {max(min_points, 4)})")
    kind = kinds.pop()
    sign = _expected_sign(kind, encoding_direction)
    rho = spearman(enc, fair)
    included = tuple((p.lam, p.replicate) for p in keep)
    n_excl = len(points) - len(keep)
    if not np.isfinite(rho):
        return ShortVerdict(0.0, 1.0, len(keep), n_excl, sign, False, alpha, metric, kind, True, included)
    p = spearman_p(rho, len(keep))
    detected = bool(p < alpha and (rho < 0 if sign == "negative" else rho > 0))
    return ShortVerdict(rho, p, len(keep), n_excl, sign, detected, alpha, metric, kind, False, included)


@dataclass(frozen=True)
class Comparison:
    rho_a: float
    rho_b: float
    difference: float
    p: float
    n_perm: int
    n_a: int
    n_b: int
    metric: str

    def to_dict(self) -> dict:
        return asdict(self)


def _spearman_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _pearson_rows(rankdata(x, axis=-1), rankdata(y, axis=-1))


def compare_short(points_a: Sequence[SweepPoint], points_b: Sequence[SweepPoint], metric: str,
                  n_perm: int = 10000, seed: int = 0, min_points: int = 10) -> Comparison:
    """Permutation test for a difference in ShorT correlation between two sweeps.

    Included points from both sweeps are pooled, shuffled and re-split into
    groups of the original sizes; ``p = (1 + #{null >= observed}) / (1 + n_perm)``
    with the statistic ``|rho_a - rho_b|``.
    """
    if n_perm < 1:
        raise InputError("n_perm must be positive")
    _, ea, fa = _included_arrays(points_a, metric)
    _, eb, fb = _included_arrays(points_b, metric)
    for name, arr in (("A", ea), ("B", eb)):
        if arr.size < max(min_points, 4):
            raise UnderpoweredError(f"sweep {name} has only {arr.size} included points")
    ra = _spearman_rows(ea, fa)
    rb = _spearman_rows(eb, fb)
    ra = 0.0 if not np.isfinite(ra) else float(ra)
    rb = 0.0 if not np.isfinite(rb) else float(rb)
    observed = abs(ra - rb)
    enc = np.concatenate([ea, eb])
    fair = np.concatenate([fa, fb])
    na = ea.size
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 50]))
    exceed = 0
    batch = 2000
    for start in range(0, n_perm, batch):
        b = min(batch, n_perm - start)
        perm = np.argsort(rng.random((b, enc.size)), axis=1)
        e, f = enc[perm], fair[perm]
        r1 = np.nan_to_num(_spearman_rows(e[:, :na], f[:, :na]))
        r2 = np.nan_to_num(_spearman_rows(e[:, na:], f[:, na:]))
        exceed += int(np.sum(np.abs(r1 - r2) >= observed - 1e-12))
    p = (1 + exceed) / (1 + n_perm)
    return Comparison(ra, rb, ra - rb, p, n_perm, int(na), int(eb.size), metric)


# ---------------------------------------------------------------------------
# Simulation study


@dataclass(frozen=True)
class StudySpec:
    n_runs: int = 50
    p_red_given_y1: tuple = (0.4, 0.6)
    p_red_given_y0: tuple = (0.4, 0.6)
    alpha: float = 0.05
    correction: str = "bonferroni"  # bonferroni | none
    seed: int = 0

    def alpha_per_test(self) -> float:
        if self.correction == "bonferroni":
            return self.alpha / self.n_runs
        if self.correction == "none":
            return self.alpha
        raise InputError(f"unknown correction {self.correction!r}")


@dataclass
class StudyResult:
    n_significant: int
    n_detected: int
    alpha_per_test: float
    runs: list = field(default_factory=list)


def replicate_study(study: StudySpec, base: BinaryAttrSpec, network: nn.NetworkSpec, train_cfg: nn.TrainConfig,
                    probe_cfg: ProbeConfig, sweep: SweepSpec, analysis: AnalysisSpec | None = None,
                    fractions=(0.5, 0.2, 0.3), progress: Callable | None = None) -> StudyResult:
    """Run ``n_runs`` independent ShorT pipelines on freshly generated colored-square data.

    Each run samples P(red|Y=1) and P(red|Y=0) uniformly from the study
    ranges. ``n_significant`` counts two-sided p below the (corrected)
    alpha regardless of sign; ``n_detected`` additionally requires the
    expected sign.
    """
    analysis = analysis or AnalysisSpec()
    alpha = study.alpha_per_test()
    rng = np.random.default_rng(np.random.SeedSequence([int(study.seed), 60]))
    runs = []
    n_sig = n_det = 0
    for r in range(study.n_runs):
        p1 = float(rng.uniform(*study.p_red_given_y1))
        p0 = float(rng.uniform(*study.p_red_given_y0))
        run_seed = int(rng.integers(0, 2 ** 63))
        data = generate_binary_attr(BinaryAttrSpec(**{**asdict(base), "p_red_given_y1": p1, "p_red_given_y0": p0}),
                                    run_seed)
        splits = Splits(*split(data, fractions, run_seed))
        points, _ = run_sweep(splits, sweep, network, train_cfg, probe_cfg, analysis, run_seed,
                              allow_degenerate=True)
        metric = analysis.metric or sweep.metric_for("binary")
        try:
            v = short_test(points, metric, alpha, analysis.min_points, sweep.encoding_direction)
            rho, p, sig, det = v.rho, v.p_two_sided, v.p_two_sided < alpha, v.shortcut_detected
        except UnderpoweredError:
            rho, p, sig, det = math.nan, math.nan, False, False
        n_sig += int(sig)
        n_det += int(det)
        runs.append({"run": r, "seed": run_seed, "p_red_given_y1": p1, "p_red_given_y0": p0, "rho": rho, "p": p,
                     "n_included": sum(not pt.excluded for pt in points), "significant": bool(sig),
                     "detected": bool(det)})
        if progress is not None:
            progress(runs[-1])
    if alpha == 0:
        n_sig = n_det = 0
    return StudyResult(n_sig, n_det, alpha, runs)
