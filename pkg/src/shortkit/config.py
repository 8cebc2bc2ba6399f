"""Experiment configuration: strict JSON decoding, hashing and data assembly."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from . import nn
from .datagen import (BinaryAttrSpec, ContinuousAttrSpec, Dataset, SubsampleSpec, calibrate_subsample,
                      generate_binary_attr, generate_continuous_attr, split, subsample)
from .errors import ConfigError, InputError, ShortkitError
from .probes import ProbeConfig
from .short import AnalysisSpec, Splits, SweepSpec

DATA_KINDS = ("continuous", "binary", "csv")


@dataclass(frozen=True)
class SubsampleConfig:
    """Bias injection by subsampling.

    Either give ``k`` directly or a ``target_gap`` (mean attribute of positives
    minus negatives) from which ``k`` is calibrated. ``a0`` defaults to the
    attribute midrange. ``apply_to`` is ``"train"`` (evaluation splits keep
    the original distribution) or ``"all"``.
    """

    k: float | None = None
    a0: float | None = None
    m: float = 1.0
    target_gap: float | None = None
    apply_to: str = "train"

    def __post_init__(self):
        if (self.k is None) == (self.target_gap is None):
            raise ConfigError("give exactly one of k and target_gap", "k")
        if self.apply_to not in ("train", "all"):
            raise ConfigError("must be 'train' or 'all'", "apply_to")
        if not self.m > 0:
            raise ConfigError("must be positive", "m")


@dataclass(frozen=True)
class DataConfig:
    kind: str = "continuous"
    continuous: ContinuousAttrSpec = field(default_factory=ContinuousAttrSpec)
    binary: BinaryAttrSpec = field(default_factory=BinaryAttrSpec)
    path: str | None = None  # csv kind: dataset written by ``shortkit gen``
    attribute_kind: str = "continuous"  # csv kind only
    subsample: SubsampleConfig | None = None
    split: tuple = (0.5, 0.2, 0.3)

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if self.kind not in DATA_KINDS:
            raise ConfigError(f"must be one of {DATA_KINDS}", "kind")
        if self.kind == "csv" and not self.path:
            raise ConfigError("csv data needs a path", "path")
        if self.attribute_kind not in ("continuous", "binary"):
            raise ConfigError("must be 'continuous' or 'binary'", "attribute_kind")
        if self.subsample is not None and self.resolved_attribute_kind == "binary":
            raise ConfigError("subsampling needs a continuous attribute", "subsample")
        if len(self.split) != 3 or min(self.split) <= 0 or abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError("three positive fractions summing to 1", "split")

    @property
    def resolved_attribute_kind(self) -> str:
        return self.attribute_kind if self.kind == "csv" else self.kind


@dataclass(frozen=True)
class ModelConfig:
    backbone_layers: tuple = ((10, "relu"), (10, "relu"), (10, "relu"))
    clinical_head: tuple = (1,)
    attribute_head: tuple = (2, 1)
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        spec = self.network(1, "continuous")
        object.__setattr__(self, "backbone_layers", spec.backbone_layers)
        object.__setattr__(self, "clinical_head", spec.clinical_head)
        object.__setattr__(self, "attribute_head", spec.attribute_head)

    def network(self, input_dim: int, attribute_kind: str) -> nn.NetworkSpec:
        return nn.NetworkSpec(input_dim=input_dim, backbone_layers=self.backbone_layers,
                              clinical_head=self.clinical_head, attribute_head=self.attribute_head,
                              attribute_kind=attribute_kind)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    analysis: AnalysisSpec = field(default_factory=AnalysisSpec)
    output: str = "shortkit-out"
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.seed < 2 ** 64):
            raise ConfigError("must be an unsigned 64-bit integer", "seed")

    def to_dict(self) -> dict:
        return _encode(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        return _decode(cls, data, "")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def hash(self) -> str:
        """sha256 of the canonical JSON; the output directory does not affect results and is left out."""
        d = self.to_dict()
        d.pop("output")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# Generic strict (de)serialization of nested frozen dataclasses


def _join(path: str, key) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else str(key)


def _encode(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _encode(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_encode(v) for v in obj]
    return obj


def _to_tuple(value, path: str):
    if isinstance(value, (list, tuple)):
        return tuple(_to_tuple(v, _join(path, i)) for i, v in enumerate(value))
    if isinstance(value, dict):
        raise ConfigError("expected a list or scalar, got an object", path)
    return value


def _decode_hint(hint, value, path: str):
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(hint)
        if value is None:
            if type(None) in args:
                return None
            raise ConfigError("may not be null", path)
        inner = [a for a in args if a is not type(None)]
        return _decode_hint(inner[0], value, path)
    if dataclasses.is_dataclass(hint):
        return _decode(hint, value, path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError("expected true or false", path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", path)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", path)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError("expected a string", path)
        return value
    if hint is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError("expected a list", path)
        return _to_tuple(value, path)
    return value


def _decode(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError("expected an object", path or "<root>")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError("unknown key", _join(path, unknown[0]))
    kwargs = {name: _decode_hint(hints[name], data[name], _join(path, name)) for name in names if name in data}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(exc.message, _join(path, exc.path) if exc.path else path or "<root>") from None
    except (ShortkitError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc), path or "<root>") from None


# ---------------------------------------------------------------------------
# Data assembly


def generate(data_cfg: DataConfig, seed: int) -> Dataset:
    """The configured dataset before splitting (generated or read from CSV)."""
    if data_cfg.kind == "continuous":
        return generate_continuous_attr(data_cfg.continuous, seed)
    if data_cfg.kind == "binary":
        return generate_binary_attr(data_cfg.binary, seed)
    path = Path(data_cfg.path)
    if not path.exists():
        raise InputError(f"dataset file {path} does not exist")
    return Dataset.from_csv(path, data_cfg.attribute_kind)


def resolve_subsample(data_cfg: DataConfig, reference: Dataset) -> SubsampleSpec | None:
    sc = data_cfg.subsample
    if sc is None:
        return None
    if sc.target_gap is not None:
        return calibrate_subsample(reference, sc.target_gap, a0=sc.a0, m=sc.m)
    a0 = sc.a0 if sc.a0 is not None else float((reference.attributes.min() + reference.attributes.max()) / 2.0)
    return SubsampleSpec(sc.k, a0, sc.m)


def build_splits(data_cfg: DataConfig, seed: int) -> tuple[Splits, SubsampleSpec | None]:
    """Generate, split, then apply any configured subsampling.

    With ``apply_to="train"`` only the training split is biased, so the
    evaluation splits reflect the unbiased population.
    """
    data = generate(data_cfg, seed)
    sub = None
    if data_cfg.subsample is not None and data_cfg.subsample.apply_to == "all":
        sub = resolve_subsample(data_cfg, data)
        data = subsample(data, sub, seed)
    train, val, test = split(data, data_cfg.split, seed)
    if data_cfg.subsample is not None and data_cfg.subsample.apply_to == "train":
        sub = resolve_subsample(data_cfg, train)
        train = subsample(train, sub, seed)
    return Splits(train, val, test), sub
