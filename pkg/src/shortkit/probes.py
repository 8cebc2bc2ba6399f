"""How much attribute information a backbone carries.

The transfer probe freezes a trained backbone and fits a linear attribute
predictor on its embeddings. Its test error is bracketed by two empirical
bounds: a network trained end-to-end to predict the attribute (lower error
bound) and the train-mean constant predictor (upper error bound).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .datagen import Dataset
from .errors import ConfigError, InternalConsistencyError
from .fairness import auroc, bootstrap_ci


@dataclass(frozen=True)
class EncodingResult:
    metric_kind: str  # "mae" | "mse" | "auroc"
    value: float
    ci95: tuple
    n_test: int

    @property
    def error_like(self) -> bool:
        return self.metric_kind in ("mae", "mse")


@dataclass(frozen=True)
class Bounds:
    leb: EncodingResult
    ueb: EncodingResult


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 1e-2
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    hidden_layers: tuple = ()
    metric: str = "mae"  # continuous attributes: "mae" or "mse"
    bootstrap_resamples: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.metric not in ("mae", "mse"):
            raise ConfigError("must be 'mae' or 'mse'", "metric")

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size, epochs=self.epochs,
                              clinical_loss_weight=0.0, attribute_loss_weight=1.0, seed=self.seed)


def _digest(arrays: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()


def _metric_kind(kind: str, cfg: ProbeConfig) -> str:
    return "auroc" if kind == "binary" else cfg.metric


def _point_and_ci(kind: str, pred: np.ndarray, target: np.ndarray, n_boot: int, seed: int) -> tuple:
    """Metric value plus percentile CI; the CI is widened to contain the value."""
    if kind == "auroc":
        value = auroc(pred, target.astype(np.int8))

        def stat(p, t):
            return auroc(p, t.astype(np.int8))
    else:
        power = 1 if kind == "mae" else 2
        value = float(np.mean(np.abs(pred - target) ** power))

        def stat(p, t):
            return np.mean(np.abs(p - t) ** power, axis=-1)
    if n_boot <= 0:
        return value, (value, value)
    ci = bootstrap_ci(stat, (pred, target), n_resamples=n_boot, seed=seed, vectorized=True)
    return value, (min(ci.lo, value), max(ci.hi, value))


def _standardize(train_emb: np.ndarray, *others: np.ndarray):
    mu = train_emb.mean(axis=-2, keepdims=True)
    sd = train_emb.std(axis=-2, keepdims=True)
    sd = np.where(sd > 0, sd, 1.0)
    return [(e - mu) / sd for e in (train_emb,) + others]


def probe_embeddings(emb_train: np.ndarray, emb_val: np.ndarray, emb_test: np.ndarray,
                     train: Dataset, val: Dataset, test: Dataset, cfg: ProbeConfig,
                     seeds: Sequence[int] | None = None) -> list[EncodingResult]:
    """Fit linear (by default) attribute probes on stacked embeddings (M, n, H)."""
    M = emb_train.shape[0]
    kind = train.attribute_kind
    seeds = list(seeds) if seeds is not None else [cfg.seed] * M
    etr, eva, ete = _standardize(emb_train, emb_val, emb_test)
    spec = nn.NetworkSpec(input_dim=emb_train.shape[-1], backbone_layers=(), clinical_head=(),
                          attribute_head=tuple(cfg.hidden_layers) + (1,), attribute_kind=kind, grad_scale=1.0)
    tc = cfg.train_config()
    scales = [1.0] * M
    results = nn.train_many(spec, (etr, train.labels, train.attributes), (eva, val.labels, val.attributes), tc,
                            scales, seeds)
    outs = []
    metric = _metric_kind(kind, cfg)
    for m, res in enumerate(results):
        pred = nn.predict_many(spec, [res.params], ete[m:m + 1])[0].attribute
        value, ci = _point_and_ci(metric, pred, test.attributes, cfg.bootstrap_resamples, seeds[m])
        outs.append(EncodingResult(metric, value, ci, len(test)))
    return outs


def attribute_transfer_probe(spec: nn.NetworkSpec, params: nn.NetworkParams, train: Dataset, val: Dataset,
                             test: Dataset, cfg: ProbeConfig) -> EncodingResult:
    """Probe one frozen backbone; verifies the backbone is left untouched."""
    return attribute_transfer_probes(spec, [params], train, val, test, cfg, [cfg.seed])[0]


def attribute_transfer_probes(spec: nn.NetworkSpec, params: Sequence[nn.NetworkParams], train: Dataset,
                              val: Dataset, test: Dataset, cfg: ProbeConfig,
                              seeds: Sequence[int] | None = None) -> list[EncodingResult]:
    before = [_digest(p.backbone()) for p in params]
    embs = [np.stack([f.embeddings for f in nn.predict_many(spec, params, ds.features)])
            for ds in (train, val, test)]
    out = probe_embeddings(*embs, train, val, test, cfg, seeds)
    if [_digest(p.backbone()) for p in params] != before:
        raise InternalConsistencyError("probe training modified frozen backbone parameters")
    return out


def direct_attribute_model(spec: nn.NetworkSpec, train: Dataset, val: Dataset, test: Dataset,
                           config: nn.TrainConfig, cfg: ProbeConfig | None = None) -> EncodingResult:
    """Empirical LEB (AUROC upper bound for a binary attribute).

    The backbone of ``spec`` with a linear attribute output is trained
    end-to-end on the attribute alone.
    """
    cfg = cfg or ProbeConfig()
    direct = spec.replace(clinical_head=(), attribute_head=(1,), grad_scale=1.0,
                          attribute_kind=train.attribute_kind, input_dim=train.n_features)
    tc = config.replace(clinical_loss_weight=0.0, attribute_loss_weight=1.0)
    res = nn.train(direct, train.arrays(), val.arrays(), tc)
    pred = nn.forward(direct, res.params, test.features).attribute
    metric = _metric_kind(train.attribute_kind, cfg)
    value, ci = _point_and_ci(metric, pred, test.attributes, cfg.bootstrap_resamples, config.seed)
    return EncodingResult(metric, value, ci, len(test))


def constant_baseline(train: Dataset, test: Dataset, cfg: ProbeConfig | None = None, seed: int = 0) -> EncodingResult:
    """Empirical UEB: predict the training-set mean attribute for every test example."""
    cfg = cfg or ProbeConfig()
    if train.attribute_kind == "binary":
        return EncodingResult("auroc", 0.5, (0.5, 0.5), len(test))
    pred = np.full(len(test), train.attributes.mean())
    value, ci = _point_and_ci(cfg.metric, pred, test.attributes, cfg.bootstrap_resamples, seed)
    return EncodingResult(cfg.metric, value, ci, len(test))


def encoding_bounds(spec: nn.NetworkSpec, train: Dataset, val: Dataset, test: Dataset, config: nn.TrainConfig,
                    cfg: ProbeConfig | None = None) -> Bounds:
    cfg = cfg or ProbeConfig()
    return Bounds(direct_attribute_model(spec, train, val, test, config, cfg), constant_baseline(train, test, cfg))


def coverage(values: Sequence[float], bounds: Bounds) -> float:
    """Fraction of the LEB..UEB interval spanned by the observed probe values."""
    width = abs(bounds.ueb.value - bounds.leb.value)
    if width == 0:
        return 0.0
    v = np.asarray(values, dtype=np.float64)
    return float((v.max() - v.min()) / width)
