"""Deterministic feed-forward networks with a gradient-scaling attribute head.

A network is a backbone (dense layers) whose output embedding feeds a
clinical head (sigmoid output) and, optionally, an attribute head. The
attribute head attaches through a scaling node that is the identity in the
forward pass and multiplies the gradient flowing back into the backbone by
``grad_scale``. The attribute head's own parameters always receive the
unscaled gradient, so it keeps learning to predict the attribute whatever
the scale; only its influence on the backbone changes.

Internally every routine works on a *stack* of M networks sharing one
architecture: each parameter array carries a leading model axis. Training a
single network is the M=1 case of the same code path, and a stack of
networks with different seeds and scales trains in lockstep, which is what
makes desk-scale sweeps affordable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError, TrainingDivergenceError
from .fairness import auroc

ACTIVATIONS = ("relu", "none")
PARAMS_FORMAT_VERSION = 1

_STREAM_INIT = 0
_STREAM_SHUFFLE = 1
_SECTION_IDS = {"backbone": 0, "clinical": 1, "attribute": 2}


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture. An empty ``attribute_head`` gives a single-task network;
    an empty ``clinical_head`` gives an attribute-only network."""

    input_dim: int
    backbone_layers: tuple = ((10, "relu"), (10, "relu"), (10, "relu"))
    clinical_head: tuple = (1,)
    attribute_head: tuple = (2, 1)
    attribute_kind: str = "continuous"
    grad_scale: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "backbone_layers", tuple((int(w), str(a)) for w, a in self.backbone_layers))
        object.__setattr__(self, "clinical_head", tuple(int(w) for w in self.clinical_head))
        object.__setattr__(self, "attribute_head", tuple(int(w) for w in self.attribute_head))
        self.validate()

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ConfigError("must be a positive integer", "input_dim")
        for i, (w, act) in enumerate(self.backbone_layers):
            if w < 1:
                raise ConfigError("width must be positive", f"backbone_layers[{i}]")
            if act not in ACTIVATIONS:
                raise ConfigError(f"activation must be one of {ACTIVATIONS}", f"backbone_layers[{i}]")
        for name in ("clinical_head", "attribute_head"):
            widths = getattr(self, name)
            if widths and (widths[-1] != 1 or min(widths) < 1):
                raise ConfigError("layer widths must be positive and end in 1 unit", name)
        if not self.clinical_head and not self.attribute_head:
            raise ConfigError("network needs at least one head", "clinical_head")
        if self.attribute_kind not in ("continuous", "binary"):
            raise ConfigError("must be 'continuous' or 'binary'", "attribute_kind")
        if not np.isfinite(self.grad_scale):
            raise ConfigError("must be finite", "grad_scale")

    @property
    def embedding_dim(self) -> int:
        return self.backbone_layers[-1][0] if self.backbone_layers else self.input_dim

    @property
    def multitask(self) -> bool:
        return bool(self.attribute_head)

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        shapes = []
        fan_in = self.input_dim
        for i, (w, _) in enumerate(self.backbone_layers):
            shapes.append((f"backbone.{i}", fan_in, w))
            fan_in = w
        for section in ("clinical", "attribute"):
            fan_in = self.embedding_dim
            for i, w in enumerate(getattr(self, f"{section}_head")):
                shapes.append((f"{section}.{i}", fan_in, w))
                fan_in = w
        return shapes

    def replace(self, **changes) -> "NetworkSpec":
        data = asdict(self)
        data.update(changes)
        return NetworkSpec(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone_layers"] = [list(x) for x in self.backbone_layers]
        d["clinical_head"] = list(self.clinical_head)
        d["attribute_head"] = list(self.attribute_head)
        return d


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    weight_decay: float = 0.0
    attribute_loss_weight: float = 1.0
    clinical_loss_weight: float = 1.0
    seed: int = 0
    model_selection: str = "best-validation"
    standardize_attribute: bool = True
    # Learning-rate multiplier for attribute-head parameters; a fast adversary
    # keeps gradient reversal from simply inverting the attribute code.
    attribute_head_lr_scale: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("must be positive", "learning_rate")
        if self.batch_size < 1:
            raise ConfigError("must be positive", "batch_size")
        if self.epochs < 1:
            raise ConfigError("must be positive", "epochs")
        if self.weight_decay < 0:
            raise ConfigError("must be nonnegative", "weight_decay")
        if self.attribute_loss_weight < 0 or self.clinical_loss_weight < 0:
            raise ConfigError("loss weights must be nonnegative", "attribute_loss_weight")
        if self.model_selection not in ("best-validation", "last"):
            raise ConfigError("must be 'best-validation' or 'last'", "model_selection")
        if not self.attribute_head_lr_scale > 0:
            raise ConfigError("must be positive", "attribute_head_lr_scale")

    def replace(self, **changes) -> "TrainConfig":
        data = asdict(self)
        data.update(changes)
        return TrainConfig(**data)


@dataclass
class NetworkParams:
    """Weights of one network plus the attribute standardization it was trained with."""

    arrays: dict
    attr_mean: float = 0.0
    attr_std: float = 1.0

    def copy(self) -> "NetworkParams":
        return NetworkParams({k: v.copy() for k, v in self.arrays.items()}, self.attr_mean, self.attr_std)

    def backbone(self) -> dict:
        return {k: v for k, v in self.arrays.items() if k.startswith("backbone.")}

    def to_json(self, spec: NetworkSpec | None = None) -> str:
        payload = {
            "version": PARAMS_FORMAT_VERSION,
            "attr_mean": self.attr_mean,
            "attr_std": self.attr_std,
            "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.arrays.items()},
        }
        if spec is not None:
            payload["spec"] = spec.to_dict()
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "NetworkParams":
        payload = json.loads(text)
        if payload.get("version") != PARAMS_FORMAT_VERSION:
            raise InputError(f"unsupported parameter format version {payload.get('version')!r}")
        arrays = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in payload["arrays"].items()}
        return cls(arrays, float(payload["attr_mean"]), float(payload["attr_std"]))


@dataclass
class Forward:
    scores: np.ndarray | None
    attribute: np.ndarray | None
    embeddings: np.ndarray


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()}, {k: np.zeros_like(v) for k, v in params.items()})


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)
    best_epoch: int = -1
    diverged_at: int | None = None


# ---------------------------------------------------------------------------
# Initialization and stacking


def init_params(spec: NetworkSpec, seed: int) -> NetworkParams:
    """He-uniform weights (bound sqrt(6/fan_in)), zero biases.

    Each section draws from its own stream, so adding or removing the
    attribute head leaves the backbone and clinical initialization unchanged.
    """
    rngs = {name: np.random.default_rng(np.random.SeedSequence([int(seed), _STREAM_INIT, sid]))
            for name, sid in _SECTION_IDS.items()}
    arrays = {}
    for name, fan_in, fan_out in spec.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        arrays[f"{name}.W"] = rngs[name.split(".")[0]].uniform(-bound, bound, size=(fan_in, fan_out))
        arrays[f"{name}.b"] = np.zeros(fan_out)
    return NetworkParams(arrays)


def stack(params: Sequence[NetworkParams]) -> dict:
    return {k: np.stack([p.arrays[k] for p in params]) for k in params[0].arrays}


def unstack(stacked: dict, m: int, attr_mean: float = 0.0, attr_std: float = 1.0) -> NetworkParams:
    return NetworkParams({k: v[m].copy() for k, v in stacked.items()}, attr_mean, attr_std)


# ---------------------------------------------------------------------------
# Forward / backward on stacks


def _t(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def _dense(h: np.ndarray, P: dict, name: str) -> np.ndarray:
    return np.matmul(h, P[f"{name}.W"]) + P[f"{name}.b"][:, None, :]


def _check_input(spec: NetworkSpec, X: np.ndarray) -> None:
    if X.shape[-1] != spec.input_dim:
        raise ConfigError(f"batch feature width {X.shape[-1]} != network input width {spec.input_dim}", "input_dim")
    if not np.all(np.isfinite(X)):
        raise InputError("non-finite input features")


def _forward_stack(spec: NetworkSpec, P: dict, X: np.ndarray, keep_cache: bool = False):
    """Returns (clinical logits | None, attribute output | None, embeddings, cache).

    ``X`` is (n, D) shared by all models or (M, n, D) per model.
    """
    cache = {"inputs": {}, "pre": {}}
    h = X
    for i, (_, act) in enumerate(spec.backbone_layers):
        name = f"backbone.{i}"
        if keep_cache:
            cache["inputs"][name] = h
        z = _dense(h, P, name)
        if keep_cache:
            cache["pre"][name] = z
        h = np.maximum(z, 0.0) if act == "relu" else z
    if h.ndim == 2:  # no backbone layers: embeddings are the (shared) input
        m = next(iter(P.values())).shape[0]
        h = np.broadcast_to(h, (m,) + h.shape)
    emb = h
    outs = []
    for section in ("clinical", "attribute"):
        widths = getattr(spec, f"{section}_head")
        if not widths:
            outs.append(None)
            continue
        g = emb
        for i in range(len(widths)):
            name = f"{section}.{i}"
            if keep_cache:
                cache["inputs"][name] = g
            z = _dense(g, P, name)
            if keep_cache:
                cache["pre"][name] = z
            g = np.maximum(z, 0.0) if i < len(widths) - 1 else z
        outs.append(g[..., 0])
    return outs[0], outs[1], emb, cache


def _loss_terms(spec: NetworkSpec, clin: np.ndarray | None, attr: np.ndarray | None, y: np.ndarray,
                a_std: np.ndarray):
    """Per-model mean losses and their gradients w.r.t. the head outputs."""
    B = y.shape[-1]
    lc = la = dc = da = None
    if clin is not None:
        lc = np.mean(np.logaddexp(0.0, clin) - y * clin, axis=-1)
        dc = (expit(clin) - y) / B
    if attr is not None:
        if spec.attribute_kind == "continuous":
            r = attr - a_std
            la = np.mean(r * r, axis=-1)
            da = 2.0 * r / B
        else:
            la = np.mean(np.logaddexp(0.0, attr) - a_std * attr, axis=-1)
            da = (expit(attr) - a_std) / B
    return lc, la, dc, da


def _head_backward(spec: NetworkSpec, P: dict, cache: dict, section: str, dout: np.ndarray, grads: dict):
    widths = getattr(spec, f"{section}_head")
    d = dout[..., None]
    for i in reversed(range(len(widths))):
        name = f"{section}.{i}"
        grads[f"{name}.W"] = np.matmul(_t(cache["inputs"][name]), d)
        grads[f"{name}.b"] = d.sum(axis=-2)
        d = np.matmul(d, _t(P[f"{name}.W"]))
        if i > 0:
            d = d * (cache["pre"][f"{section}.{i - 1}"] > 0)
    return d


def _backward_stack(spec: NetworkSpec, P: dict, cache: dict, dc, da, lam: np.ndarray,
                    w_clin: float, w_attr: float) -> dict:
    grads = {}
    d_emb = None
    if dc is not None:
        d_emb = _head_backward(spec, P, cache, "clinical", w_clin * dc, grads)
    if da is not None:
        d_attr = _head_backward(spec, P, cache, "attribute", w_attr * da, grads)
        # Scaling node: identity forward, lambda * gradient into the backbone.
        scaled = lam[:, None, None] * d_attr
        d_emb = scaled if d_emb is None else d_emb + scaled
    n_back = len(spec.backbone_layers)
    d = d_emb
    for i in reversed(range(n_back)):
        name = f"backbone.{i}"
        if spec.backbone_layers[i][1] == "relu":
            d = d * (cache["pre"][name] > 0)
        grads[f"{name}.W"] = np.matmul(_t(cache["inputs"][name]), d)
        grads[f"{name}.b"] = d.sum(axis=-2)
        if i > 0:
            d = np.matmul(d, _t(P[f"{name}.W"]))
    return grads


def _standardize_attr(spec: NetworkSpec, a: np.ndarray, mean: float, std: float) -> np.ndarray:
    if spec.attribute_kind == "binary":
        return a.astype(np.float64)
    return (a - mean) / std


# ---------------------------------------------------------------------------
# Single-network API


def _as_stack(params: NetworkParams) -> dict:
    return {k: v[None] for k, v in params.arrays.items()}


def forward(spec: NetworkSpec, params: NetworkParams, X) -> Forward:
    """Clinical scores in (0,1), attribute predictions (native units, or a
    probability for a binary attribute) and backbone embeddings."""
    X = np.asarray(X, dtype=np.float64)
    _check_input(spec, X)
    clin, attr, emb, _ = _forward_stack(spec, _as_stack(params), X)
    scores = None if clin is None else expit(clin[0])
    if attr is not None:
        attr = attr[0]
        attr = expit(attr) if spec.attribute_kind == "binary" else attr * params.attr_std + params.attr_mean
    return Forward(scores, attr, emb[0])


def loss_terms(spec: NetworkSpec, params: NetworkParams, X, y, a) -> tuple[float | None, float | None]:
    """Unweighted (clinical, attribute) mean losses on a batch."""
    X = np.asarray(X, dtype=np.float64)
    _check_input(spec, X)
    clin, attr, _, _ = _forward_stack(spec, _as_stack(params), X)
    a_std = _standardize_attr(spec, np.asarray(a, dtype=np.float64), params.attr_mean, params.attr_std)
    lc, la, _, _ = _loss_terms(spec, clin, attr, np.asarray(y, dtype=np.float64), a_std)
    return (None if lc is None else float(lc[0]), None if la is None else float(la[0]))


def backward(spec: NetworkSpec, params: NetworkParams, X, y, a, attribute_loss_weight: float = 1.0,
             clinical_loss_weight: float = 1.0, grad_scale: float | None = None) -> dict:
    """Gradients of ``w_c * L_clin + w_A * L_attr`` except that the attribute
    term's contribution to backbone gradients is multiplied by ``grad_scale``."""
    X = np.asarray(X, dtype=np.float64)
    _check_input(spec, X)
    lam = np.array([spec.grad_scale if grad_scale is None else grad_scale], dtype=np.float64)
    P = _as_stack(params)
    clin, attr, _, cache = _forward_stack(spec, P, X, keep_cache=True)
    a_std = _standardize_attr(spec, np.asarray(a, dtype=np.float64), params.attr_mean, params.attr_std)
    lc, la, dc, da = _loss_terms(spec, clin, attr, np.asarray(y, dtype=np.float64), a_std)
    total = (0.0 if lc is None else clinical_loss_weight * lc) + (0.0 if la is None else attribute_loss_weight * la)
    if not np.all(np.isfinite(total)):
        raise TrainingDivergenceError("non-finite loss", step=0)
    grads = _backward_stack(spec, P, cache, dc, da, lam, clinical_loss_weight, attribute_loss_weight)
    return {k: v[0] for k, v in grads.items()}


def adam_step(params: dict, grads: dict, state: AdamState, learning_rate: float,
              weight_decay: float = 0.0) -> tuple[dict, AdamState]:
    """One Adam update with bias correction and decoupled weight decay.

    ``params`` and ``grads`` map names to arrays (single or stacked); the
    inputs are not modified.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for {k}", step=state.t)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new_params[k], new_m[k], new_v[k] = p, state.m[k], state.v[k]
            continue
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        decayed = p * (1.0 - learning_rate * weight_decay) if weight_decay else p
        new_params[k] = decayed - learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def _adam_inplace(params: dict, grads: dict, state: AdamState, learning_rate: float,
                  weight_decay: float, lr_scale: dict | None = None) -> None:
    """``adam_step`` with the same operation order, updating arrays in place.

    ``grads`` is consumed as scratch space.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, g in grads.items():
        lr = learning_rate * lr_scale.get(k, 1.0) if lr_scale else learning_rate
        p, m, v = params[k], state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        np.multiply(g, g, out=g)
        g *= 1.0 - b2
        v += g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        denom = np.divide(v, c2, out=g)
        np.sqrt(denom, out=denom)
        denom += state.eps
        step = m / c1
        step *= lr
        step /= denom
        p -= step


# ---------------------------------------------------------------------------
# Training


def _gather(X: np.ndarray, idx: np.ndarray) -> np.ndarray:
    if X.ndim == 2:
        return np.take(X, idx, axis=0)
    return np.take_along_axis(X, idx[:, :, None], axis=1)


def _selection_value(spec: NetworkSpec, cfg: TrainConfig, clin, attr, y, a, a_std, mean, std) -> np.ndarray:
    """Per-model validation criterion, higher is better."""
    if spec.clinical_head and cfg.clinical_loss_weight > 0:
        y2 = np.broadcast_to(y, clin.shape)
        return auroc(clin, y2)
    if spec.attribute_kind == "continuous":
        return -np.mean(np.abs(attr * std + mean - a), axis=-1)
    return auroc(attr, np.broadcast_to(a.astype(np.int8), attr.shape))


# Non-finite values are detected and handled per model below.
@np.errstate(invalid="ignore", over="ignore")
def train_many(spec: NetworkSpec, train: tuple, val: tuple, config: TrainConfig,
               grad_scales: Sequence[float] | None = None, seeds: Sequence[int] | None = None,
               init: Sequence[NetworkParams] | None = None) -> list[TrainResult]:
    """Train a stack of networks in lockstep.

    ``train`` and ``val`` are ``(X, y, a)`` tuples; ``X`` is shared (n, D)
    or per model (M, n, D). Model m uses ``grad_scales[m]`` and ``seeds[m]``
    for its initialization and shuffling; results for one model do not
    depend on which other models share the stack. A model whose loss or
    gradients become non-finite is frozen and reported via ``diverged_at``.
    """
    if grad_scales is None:
        grad_scales = [spec.grad_scale]
    if seeds is None:
        seeds = [config.seed] * len(grad_scales)
    if len(seeds) != len(grad_scales):
        raise InputError("grad_scales and seeds must align")
    M = len(seeds)
    Xtr, ytr, atr = (np.asarray(v, dtype=np.float64) for v in train)
    Xva, yva, ava = (np.asarray(v, dtype=np.float64) for v in val)
    n = ytr.shape[0]
    if n == 0 or yva.shape[0] == 0:
        raise InputError("empty training or validation set")
    for X in (Xtr, Xva):
        _check_input(spec, X)
        if X.ndim == 3 and X.shape[0] != M:
            raise InputError("per-model features must have one slice per model")

    if spec.attribute_kind == "continuous" and config.standardize_attribute:
        mean, std = float(atr.mean()), float(atr.std())
        std = std if std > 0 else 1.0
    else:
        mean, std = 0.0, 1.0
    atr_s = _standardize_attr(spec, atr, mean, std)
    ava_s = _standardize_attr(spec, ava, mean, std)

    lam = np.asarray(grad_scales, dtype=np.float64)
    P = stack(list(init) if init is not None else [init_params(spec, s) for s in seeds])
    state = AdamState.zeros_like(P)
    shufflers = [np.random.default_rng(np.random.SeedSequence([int(s), _STREAM_SHUFFLE])) for s in seeds]
    w_c, w_a = config.clinical_loss_weight, config.attribute_loss_weight
    if not spec.clinical_head:
        w_c = 0.0

    def total_loss(lc, la):
        tot = np.zeros(M)
        if lc is not None:
            tot = tot + w_c * lc
        if la is not None:
            tot = tot + w_a * la
        return tot

    lr_scale = None
    if config.attribute_head_lr_scale != 1.0:
        lr_scale = {k: config.attribute_head_lr_scale for k in P if k.startswith("attribute.")}

    active = np.ones(M, dtype=bool)
    diverged_at: list[int | None] = [None] * M
    histories: list[list] = [[] for _ in range(M)]
    best_val = np.full(M, -np.inf)
    best_epoch = np.full(M, -1)
    best_P = {k: v.copy() for k, v in P.items()}
    B = config.batch_size
    step = 0
    for epoch in range(config.epochs):
        order = np.stack([rng.permutation(n) for rng in shufflers])
        epoch_loss = np.zeros(M)
        n_batches = 0
        for start in range(0, n, B):
            idx = order[:, start:start + B]
            xb = _gather(Xtr, idx)
            yb, ab = ytr[idx], atr_s[idx]
            clin, attr, _, cache = _forward_stack(spec, P, xb, keep_cache=True)
            lc, la, dc, da = _loss_terms(spec, clin, attr, yb, ab)
            tot = total_loss(lc, la)
            grads = _backward_stack(spec, P, cache, dc, da, lam, w_c, w_a)
            gsum = sum(g.reshape(M, -1).sum(axis=1) for g in grads.values())
            bad = active & ~(np.isfinite(tot) & np.isfinite(gsum))
            if bad.any():
                for m in np.flatnonzero(bad):
                    diverged_at[m] = step
                active &= ~bad
            frozen = None
            if not active.all():
                for g in grads.values():
                    g[~active] = 0.0
                frozen = {k: v[~active].copy() for k, v in P.items()}
            _adam_inplace(P, grads, state, config.learning_rate, config.weight_decay, lr_scale)
            if frozen is not None:
                for k in P:
                    P[k][~active] = frozen[k]
            epoch_loss += np.where(active, tot, 0.0)
            n_batches += 1
            step += 1

        clin, attr, _, _ = _forward_stack(spec, P, Xva)
        lc, la, _, _ = _loss_terms(spec, clin, attr, np.broadcast_to(yva, (M, yva.size)),
                                   np.broadcast_to(ava_s, (M, ava_s.size)))
        val_loss = total_loss(lc, la)
        sel = _selection_value(spec, config, clin, attr, yva, ava, ava_s, mean, std)
        for m in range(M):
            histories[m].append({
                "epoch": epoch,
                "train_loss": float(epoch_loss[m] / n_batches),
                "val_loss": float(val_loss[m]),
                "val_metric": float(sel[m]),
            })
        improved = active & np.isfinite(sel) & (sel > best_val)
        if config.model_selection == "last":
            improved = active.copy()
        if improved.any():
            best_val = np.where(improved, sel, best_val)
            best_epoch = np.where(improved, epoch, best_epoch)
            for k in P:
                best_P[k][improved] = P[k][improved]

    results = []
    for m in range(M):
        results.append(TrainResult(unstack(best_P, m, mean, std), histories[m], int(best_epoch[m]), diverged_at[m]))
    return results


def train(spec: NetworkSpec, train_set: tuple, val_set: tuple, config: TrainConfig) -> TrainResult:
    """Train one network; raises ``TrainingDivergenceError`` on divergence."""
    res = train_many(spec, train_set, val_set, config, [spec.grad_scale], [config.seed])[0]
    if res.diverged_at is not None:
        raise TrainingDivergenceError("training diverged", step=res.diverged_at)
    return res


def predict_many(spec: NetworkSpec, params: Sequence[NetworkParams], X) -> list[Forward]:
    """Forward pass for several networks over shared (n, D) or per-model features."""
    X = np.asarray(X, dtype=np.float64)
    _check_input(spec, X)
    clin, attr, emb, _ = _forward_stack(spec, stack(params), X)
    out = []
    for m, p in enumerate(params):
        a = None
        if attr is not None:
            a = expit(attr[m]) if spec.attribute_kind == "binary" else attr[m] * p.attr_std + p.attr_mean
        out.append(Forward(None if clin is None else expit(clin[m]), a, emb[m]))
    return out


# ---------------------------------------------------------------------------
# Gradient checking


def gradient_check(spec: NetworkSpec, params: NetworkParams, X, y, a, attribute_loss_weight: float = 1.0,
                   grad_scale: float | None = None, eps: float = 1e-4,
                   grad_fn: Callable | None = None) -> dict:
    """Relative error per parameter tensor between analytic and central-difference gradients.

    The finite-difference side differentiates the clinical and attribute
    losses separately and recombines them with the scaling rule (attribute
    term times ``grad_scale`` for backbone tensors only), so it checks the
    scaling node as well as plain backpropagation. Error is
    ``||g - fd||_inf / max(||g||_inf, ||fd||_inf, 1e-10)``.
    """
    lam = spec.grad_scale if grad_scale is None else grad_scale
    grad_fn = grad_fn or backward
    analytic = grad_fn(spec, params, X, y, a, attribute_loss_weight=attribute_loss_weight, grad_scale=lam)
    errors = {}
    for name, arr in params.arrays.items():
        fd = np.zeros_like(arr)
        probe = params.copy()
        flat = probe.arrays[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            lc_p, la_p = loss_terms(spec, probe, X, y, a)
            flat[j] = orig - eps
            lc_m, la_m = loss_terms(spec, probe, X, y, a)
            flat[j] = orig
            g = 0.0
            if lc_p is not None:
                g += (lc_p - lc_m) / (2 * eps)
            if la_p is not None:
                scale = lam if name.startswith("backbone.") else 1.0
                g += scale * attribute_loss_weight * (la_p - la_m) / (2 * eps)
            fd.reshape(-1)[j] = g
        g = analytic[name]
        denom = max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-10)
        errors[name] = float(np.max(np.abs(g - fd)) / denom)
    return errors
