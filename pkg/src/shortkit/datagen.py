"""Synthetic datasets with a controllable attribute-label relationship.

Two generators:

* ``generate_binary_attr``: a small two-channel "image" carrying a fixed
  label pattern, a colored square whose channel is the binary attribute
  (channel 0 = red = A=1, channel 1 = green = A=0), and Gaussian noise.
* ``generate_continuous_attr``: tabular features where one block encodes a
  continuous attribute and the rest carry the label signal.

``subsample`` injects or removes attribute-label correlation by retaining
examples with a logistic probability of the attribute.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InputError, UnsupportedOperationError


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    attributes: np.ndarray
    ids: np.ndarray
    attribute_kind: str = "continuous"
    # Row-aligned generator state (binary kind: background, square geometry).
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        n = self.labels.shape[0]
        if not (self.features.shape[0] == self.attributes.shape[0] == self.ids.shape[0] == n):
            raise InputError("dataset columns are not row-aligned")
        if not np.all(np.isfinite(self.features)):
            raise InputError("non-finite features")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise InputError("labels must be 0/1")
        if self.attribute_kind == "binary" and not np.all((self.attributes == 0) | (self.attributes == 1)):
            raise InputError("binary attribute must be 0/1")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        meta = {k: v[idx] for k, v in self.meta.items()}
        return Dataset(self.features[idx], self.labels[idx], self.attributes[idx], self.ids[idx],
                       self.attribute_kind, meta)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.features, self.labels.astype(np.float64), self.attributes

    def to_csv(self, path) -> None:
        path = Path(path)
        header = ["id", "label", "attribute"] + [f"f{j}" for j in range(self.n_features)]
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self)):
                w.writerow([int(self.ids[i]), int(self.labels[i]), repr(float(self.attributes[i]))]
                           + [repr(float(v)) for v in self.features[i]])

    @classmethod
    def from_csv(cls, path, attribute_kind: str = "continuous") -> "Dataset":
        path = Path(path)
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:3] != ["id", "label", "attribute"]:
            raise InputError(f"{path}: expected header id,label,attribute,f0..")
        body = np.asarray(rows[1:], dtype=np.float64).reshape(len(rows) - 1, len(rows[0]))
        return cls(body[:, 3:], body[:, 1].astype(np.int8), body[:, 2], body[:, 0].astype(np.int64), attribute_kind)


# ---------------------------------------------------------------------------
# Specs


def _check_prob(p: float, name: str) -> None:
    if not (0.0 <= p <= 1.0):
        raise ConfigError("probability must lie in [0, 1]", name)


@dataclass(frozen=True)
class BinaryAttrSpec:
    """Colored-square generator settings.

    Defaults give a λ=0 baseline test accuracy near 0.85: the pattern is
    easy to see through the pixel noise, and accuracy is capped by
    ``label_noise``, the probability that the pattern shows the class
    opposite to the label. A weakly label-correlated square then barely
    changes any decision, while a strongly correlated one does.
    """

    n: int = 6000
    image_side: int = 12
    square_side: int = 2
    p_red_given_y1: float = 0.5
    p_red_given_y0: float = 0.5
    noise_sigma: float = 1.0
    signal_strength: float = 5.0
    square_intensity: float = 4.0
    label_noise: float = 0.15

    def __post_init__(self):
        _check_prob(self.p_red_given_y1, "p_red_given_y1")
        _check_prob(self.label_noise, "label_noise")
        _check_prob(self.p_red_given_y0, "p_red_given_y0")
        if self.n < 1:
            raise ConfigError("must be positive", "n")
        if not (1 <= self.square_side <= self.image_side):
            raise ConfigError("must be between 1 and image_side", "square_side")
        if self.noise_sigma < 0:
            raise ConfigError("must be nonnegative", "noise_sigma")

    @property
    def n_features(self) -> int:
        return 2 * self.image_side * self.image_side


@dataclass(frozen=True)
class ContinuousAttrSpec:
    n: int = 4000
    a_min: float = 20.0
    a_max: float = 90.0
    beta0: float = 0.0
    beta1: float = 0.0
    coupling: float = 1.0
    signal_strength: float = 1.0
    noise_sigma: float = 1.0
    attr_dims: int = 4
    signal_dims: int = 16

    def __post_init__(self):
        if not self.a_min < self.a_max:
            raise ConfigError("a_min must be < a_max", "a_min")
        if self.n < 1:
            raise ConfigError("must be positive", "n")
        if self.attr_dims < 1 or self.signal_dims < 1:
            raise ConfigError("feature blocks must be nonempty", "attr_dims")
        if self.noise_sigma < 0:
            raise ConfigError("must be nonnegative", "noise_sigma")

    @property
    def n_features(self) -> int:
        return self.attr_dims + self.signal_dims

    def prevalence(self) -> float:
        """Analytic P(Y=1) under the uniform attribute distribution."""
        from scipy.integrate import quad

        val, _ = quad(lambda a: expit(self.beta0 + self.beta1 * a), self.a_min, self.a_max)
        return val / (self.a_max - self.a_min)


@dataclass(frozen=True)
class SubsampleSpec:
    k: float
    a0: float
    m: float = 1.0

    def __post_init__(self):
        if not self.m > 0:
            raise ConfigError("scale factor m must be positive", "m")

    def raw_retain(self, a) -> np.ndarray:
        """Unclamped positive-example retain probability ``m / (1 + exp(-k (a - a0)))``."""
        return self.m * expit(self.k * (np.asarray(a, dtype=np.float64) - self.a0))


# ---------------------------------------------------------------------------
# Generators


def _label_pattern(side: int) -> np.ndarray:
    """Unit-norm (2, side, side) pixel checkerboard shared by both channels.

    Any even-sided square covers equally many +1 and -1 cells, so the
    attribute square has zero projection on the label direction.
    """
    img = np.where((np.arange(side)[:, None] + np.arange(side)[None, :]) % 2 == 0, 1.0, -1.0)
    pat = np.stack([img, img])
    return pat / np.linalg.norm(pat)


def _render_binary(background: np.ndarray, channel: np.ndarray, row: np.ndarray, col: np.ndarray,
                   side: int, sq: int, intensity: float) -> np.ndarray:
    feats = background.reshape(-1, 2, side, side).copy()
    offs = np.arange(sq)
    n = feats.shape[0]
    r = (row[:, None] + offs[None, :])[:, :, None]
    c = (col[:, None] + offs[None, :])[:, None, :]
    i = np.arange(n)[:, None, None]
    ch = channel[:, None, None]
    feats[i, ch, r, c] += intensity
    return feats.reshape(n, -1)


def generate_binary_attr(spec: BinaryAttrSpec, seed: int) -> Dataset:
    """Colored-square dataset; the attribute is 1 for a red square."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 10]))
    n, side, sq = spec.n, spec.image_side, spec.square_side
    y = rng.integers(0, 2, size=n).astype(np.int8)
    p_red = np.where(y == 1, spec.p_red_given_y1, spec.p_red_given_y0)
    a = (rng.random(n) < p_red).astype(np.int8)
    row = rng.integers(0, side - sq + 1, size=n)
    col = rng.integers(0, side - sq + 1, size=n)
    noise = rng.normal(0.0, 1.0, size=(n, spec.n_features)) * spec.noise_sigma
    # Drawn last so the other streams do not depend on label_noise.
    shown = np.where(rng.random(n) < spec.label_noise, 1 - y, y)
    pattern = _label_pattern(side).reshape(-1)
    background = noise + spec.signal_strength * (2.0 * shown[:, None] - 1.0) * pattern[None, :]
    channel = np.where(a == 1, 0, 1)
    feats = _render_binary(background, channel, row, col, side, sq, spec.square_intensity)
    meta = {
        "background": background,
        "square_row": row,
        "square_col": col,
        "square_intensity": np.full(n, spec.square_intensity),
        "image_side": np.full(n, side),
        "square_side": np.full(n, sq),
    }
    return Dataset(feats, y, a.astype(np.float64), np.arange(n), "binary", meta)


def counterfactual_flip(data: Dataset) -> Dataset:
    """Swap the square's channel (red <-> green); label, noise and location unchanged.

    Works on a single-example dataset or a whole dataset. Features are
    re-rendered from the stored background, so flipping twice is bit-exact.
    """
    if data.attribute_kind != "binary":
        raise UnsupportedOperationError("counterfactual flip needs a binary-attribute dataset")
    if "background" not in data.meta:
        raise UnsupportedOperationError("dataset carries no generator state; regenerate it from its spec and seed")
    a_new = 1.0 - data.attributes
    channel = np.where(a_new == 1, 0, 1)
    side = int(data.meta["image_side"][0])
    sq = int(data.meta["square_side"][0])
    intensity = float(data.meta["square_intensity"][0])
    feats = _render_binary(data.meta["background"], channel, data.meta["square_row"], data.meta["square_col"],
                           side, sq, intensity)
    return Dataset(feats, data.labels.copy(), a_new, data.ids.copy(), "binary", dict(data.meta))


def generate_continuous_attr(spec: ContinuousAttrSpec, seed: int) -> Dataset:
    """Uniform attribute, logistic label model, linear attribute feature block.

    Features ``[0, attr_dims)`` hold ``coupling * z(a) + noise`` where
    ``z`` maps ``[a_min, a_max]`` onto ``[-1, 1]``; the remaining block holds
    ``signal_strength * (2y-1) * u + noise`` for a fixed unit vector ``u``.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 20]))
    n = spec.n
    a = rng.uniform(spec.a_min, spec.a_max, size=n)
    y = (rng.random(n) < expit(spec.beta0 + spec.beta1 * a)).astype(np.int8)
    if y.min() == y.max():
        raise InputError("degenerate prevalence: all examples share one label")
    z = 2.0 * (a - spec.a_min) / (spec.a_max - spec.a_min) - 1.0
    noise = rng.normal(0.0, 1.0, size=(n, spec.n_features)) * spec.noise_sigma
    u = np.ones(spec.signal_dims) / math.sqrt(spec.signal_dims)
    feats = noise
    feats[:, :spec.attr_dims] += spec.coupling * z[:, None]
    feats[:, spec.attr_dims:] += spec.signal_strength * (2.0 * y[:, None] - 1.0) * u[None, :]
    return Dataset(feats, y, a, np.arange(n), "continuous")


# ---------------------------------------------------------------------------
# Subsampling and splitting


def retain_probabilities(labels, attributes, spec: SubsampleSpec) -> np.ndarray:
    """clamp(p_retain) for positives, clamp(1 - p_retain) for negatives (unclamped p inside)."""
    raw = spec.raw_retain(attributes)
    p = np.where(np.asarray(labels) == 1, raw, 1.0 - raw)
    return np.clip(p, 0.0, 1.0)


def subsample(data: Dataset, spec: SubsampleSpec, seed: int) -> Dataset:
    """Randomly retain examples; retained rows are returned unmodified."""
    if data.attribute_kind != "continuous":
        raise UnsupportedOperationError("subsampling needs a continuous attribute")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 30]))
    keep = rng.random(len(data)) < retain_probabilities(data.labels, data.attributes, spec)
    return data.take(np.flatnonzero(keep))


def class_gap(data: Dataset) -> float:
    """mean A among positives minus mean A among negatives."""
    pos = data.labels == 1
    return float(data.attributes[pos].mean() - data.attributes[~pos].mean())


def expected_gap(data: Dataset, spec: SubsampleSpec) -> float:
    """Gap of retain-probability-weighted class means: the expected outcome of ``subsample``."""
    w = retain_probabilities(data.labels, data.attributes, spec)
    pos = data.labels == 1
    wp, wn = w[pos], w[~pos]
    if wp.sum() == 0 or wn.sum() == 0:
        return math.nan
    return float((wp * data.attributes[pos]).sum() / wp.sum() - (wn * data.attributes[~pos]).sum() / wn.sum())


def calibrate_subsample(data: Dataset, target_gap: float, a0: float | None = None, m: float = 1.0,
                        k_max: float = 5.0, tol: float = 1e-6) -> SubsampleSpec:
    """Find the slope ``k`` whose expected class gap equals ``target_gap``.

    Bisection on ``expected_gap``, which is monotone in ``k`` for fixed
    ``a0`` and ``m``. ``a0`` defaults to the attribute midrange.
    """
    if a0 is None:
        a0 = float((data.attributes.min() + data.attributes.max()) / 2.0)
    base = class_gap(data)

    def f(k):
        g = expected_gap(data, SubsampleSpec(k, a0, m))
        return g - target_gap

    lo, hi = (0.0, k_max) if target_gap >= base else (-k_max, 0.0)
    f_lo, f_hi = f(lo), f(hi)
    if not (np.isfinite(f_lo) and np.isfinite(f_hi)) or f_lo * f_hi > 0:
        raise InputError(f"target gap {target_gap} not reachable with |k| <= {k_max}")
    for _ in range(200):
        mid = (lo + hi) / 2.0
        f_mid = f(mid)
        if not np.isfinite(f_mid):
            hi = mid
            continue
        if (f_mid < 0) == (f_lo < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return SubsampleSpec((lo + hi) / 2.0, a0, m)


def split(data: Dataset, fractions=(0.85, 0.05, 0.10), seed: int = 0) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded random partition into (train, validation, test).

    Sizes are ``floor(f * n)`` for train and validation; test takes the rest.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise InputError("fractions must be three positive numbers summing to 1")
    n = len(data)
    n_train = int(math.floor(fr[0] * n + 1e-9))
    n_val = int(math.floor(fr[1] * n + 1e-9))
    if n_train == 0 or n_val == 0 or n - n_train - n_val == 0:
        raise InputError(f"a split would be empty for n={n}")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 40])).permutation(n)
    return (data.take(np.sort(perm[:n_train])), data.take(np.sort(perm[n_train:n_train + n_val])),
            data.take(np.sort(perm[n_train + n_val:])))


@dataclass(frozen=True)
class DatasetStats:
    n: int
    n_pos: int
    n_neg: int
    prevalence: float
    mean_a_pos: float
    mean_a_neg: float
    sd_a_pos: float
    sd_a_neg: float

    @property
    def gap(self) -> float:
        return self.mean_a_pos - self.mean_a_neg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gap"] = self.gap
        return d


def dataset_stats(data: Dataset) -> DatasetStats:
    if len(data) == 0:
        raise InputError("empty dataset")
    pos = data.labels == 1

    def ms(x):
        if x.size == 0:
            return math.nan, math.nan
        return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0

    mp, sp = ms(data.attributes[pos])
    mn, sn = ms(data.attributes[~pos])
    n_pos = int(pos.sum())
    return DatasetStats(len(data), n_pos, len(data) - n_pos, n_pos / len(data), mp, mn, sp, sn)


def write_sidecar(path, kind: str, spec, seed: int, extra: dict | None = None) -> None:
    payload = {"kind": kind, "spec": asdict(spec), "seed": int(seed)}
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
