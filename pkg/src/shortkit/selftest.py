"""Built-in consistency checks run by ``shortkit selftest``.

Everything here is seeded, so two runs print identical summaries.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .fairness import auroc, fit_lr_1d, max_f1_threshold, percent_change_per_delta
from .short import spearman, spearman_p

GRAD_TOL = 1e-4


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks by explicit comparison counting."""
    less = (x[None, :] < x[:, None]).sum(axis=1)
    equal = (x[None, :] == x[:, None]).sum(axis=1)
    return less + (equal + 1) / 2.0


def _pair_auroc(s: np.ndarray, y: np.ndarray) -> float:
    pos, neg = s[y == 1], s[y == 0]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size)


def _scan_f1(s: np.ndarray, y: np.ndarray) -> float:
    u = np.unique(s)
    cands = np.concatenate([[u[0] - 1.0], (u[:-1] + u[1:]) / 2.0])
    best, best_t = -1.0, cands[0]
    for t in cands:
        pred = s > t
        tp = np.sum(pred & (y == 1))
        denom = pred.sum() + (y == 1).sum()
        f1 = 2.0 * tp / denom if denom else 0.0
        if f1 >= best:
            best, best_t = f1, t
    return float(best_t)


def gradient_checks(grad_fn: Callable | None = None, n_configs: int = 6, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    for c in range(n_configs):
        kind = ("continuous", "binary")[c % 2]
        lam = float((-1) ** c * 10 ** rng.uniform(-2, 1)) if c else 0.0
        widths = [int(w) for w in rng.integers(2, 6, size=int(rng.integers(1, 3)))]
        spec = nn.NetworkSpec(input_dim=int(rng.integers(2, 6)), backbone_layers=[(w, "relu") for w in widths],
                              clinical_head=(1,), attribute_head=(int(rng.integers(1, 4)), 1),
                              attribute_kind=kind, grad_scale=lam)
        params = nn.init_params(spec, int(rng.integers(0, 2 ** 31)))
        for k in params.arrays:
            if k.endswith(".b"):  # zero biases put dead units exactly on the ReLU kink
                params.arrays[k] = rng.normal(0.0, 0.1, size=params.arrays[k].shape)
        n = int(rng.integers(5, 12))
        X = rng.normal(size=(n, spec.input_dim))
        y = rng.integers(0, 2, size=n).astype(np.float64)
        a = rng.integers(0, 2, size=n).astype(np.float64) if kind == "binary" else rng.uniform(20, 90, size=n)
        if kind == "continuous":
            params.attr_mean, params.attr_std = float(a.mean()), float(a.std())
        errs = nn.gradient_check(spec, params, X, y, a, attribute_loss_weight=0.75, grad_fn=grad_fn)
        bad = sorted(k for k, e in errs.items() if not e < GRAD_TOL)
        worst = max(errs.values())
        detail = f"{kind} attribute, lambda={lam:+.3g}, max rel. error {worst:.1e}"
        if bad:
            detail += f"; failing tensors: {', '.join(bad)}"
        checks.append(Check(f"gradient[{c}]", not bad, detail))
    return checks


def oracle_checks(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    out = []

    worst = 0.0
    for i in range(20):
        n = int(rng.integers(5, 40))
        x = rng.integers(0, 6, size=n).astype(float) if i % 2 else rng.normal(size=n)
        y = rng.integers(0, 6, size=n).astype(float) if i % 3 else rng.normal(size=n)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        worst = max(worst, abs(spearman(x, y) - np.corrcoef(_ranks(x), _ranks(y))[0, 1]))
    out.append(Check("spearman vs rank-then-Pearson", worst < 1e-12, f"max abs difference {worst:.1e}"))

    n = 6
    rho_obs = 0.6
    null = [np.corrcoef(np.arange(n), p)[0, 1] for p in itertools.permutations(range(n))]
    exact = float(np.mean(np.abs(null) >= rho_obs - 1e-12))
    diff = abs(spearman_p(rho_obs, n) - exact)
    out.append(Check("spearman exact p (n=6)", diff < 1e-12, f"|p - enumeration| = {diff:.1e}"))

    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(4, 60))
        s = np.round(rng.normal(size=n), 1)
        y = rng.integers(0, 2, size=n)
        y[:2] = [0, 1]
        worst = max(worst, abs(auroc(s, y) - _pair_auroc(s, y)))
    out.append(Check("auroc vs pair counting", worst < 1e-12, f"max abs difference {worst:.1e}"))

    x = rng.uniform(20, 90, size=10000)
    yb = (rng.random(10000) < 1 / (1 + np.exp(-(-2.75 + 0.05 * x)))).astype(int)
    slope = fit_lr_1d(x, yb).slope
    out.append(Check("logistic slope recovery", abs(slope - 0.05) <= 0.005, f"slope {slope:.4f} (true 0.05)"))

    mism = 0
    for _ in range(30):
        n = int(rng.integers(3, 30))
        s = np.round(rng.random(n), 1)
        y = rng.integers(0, 2, size=n)
        y[0] = 1
        mism += int(not np.array_equal(s > max_f1_threshold(s, y), s > _scan_f1(s, y)))
    out.append(Check("max-F1 threshold vs exhaustive scan", mism == 0, f"{mism} mismatches in 30 instances"))

    p1, p2 = percent_change_per_delta(0.01, 10) * 100, percent_change_per_delta(0.02, 10) * 100
    ok = abs(p1 - 10.517) < 0.01 and abs(p2 - 22.140) < 0.01
    out.append(Check("separation percent conversion", ok, f"{p1:.2f}% and {p2:.2f}% per 10 units"))
    return out


def lambda_zero_check(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(200, 6))
    y = (X[:, 0] + 0.5 * rng.normal(size=200) > 0).astype(np.int8)
    a = rng.uniform(20, 90, size=200)
    tr, va = (X[:150], y[:150], a[:150]), (X[150:], y[150:], a[150:])
    cfg = nn.TrainConfig(epochs=3, seed=11, batch_size=32)
    multi = nn.NetworkSpec(input_dim=6, grad_scale=0.0)
    single = multi.replace(attribute_head=())
    pm = nn.train(multi, tr, va, cfg).params.backbone()
    ps = nn.train(single, tr, va, cfg).params.backbone()
    same = pm.keys() == ps.keys() and all(np.array_equal(pm[k], ps[k]) for k in pm)
    return Check("lambda=0 multitask equals single-task backbone", same,
                 "bit-identical" if same else "backbone parameters differ")


def run_selftest(grad_fn: Callable | None = None) -> list[Check]:
    return [*gradient_checks(grad_fn), *oracle_checks(), lambda_zero_check()]
