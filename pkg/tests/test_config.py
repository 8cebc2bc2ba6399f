import json

import pytest

from shortkit.config import DataConfig, ExperimentConfig, SubsampleConfig, build_splits
from shortkit.datagen import ContinuousAttrSpec, class_gap
from shortkit.errors import ConfigError


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_nested_round_trip():
    d = {"data": {"kind": "continuous", "continuous": {"n": 900, "beta1": 0.04},
                  "subsample": {"target_gap": 8.0}, "split": [0.6, 0.2, 0.2]},
         "model": {"backbone_layers": [[6, "relu"], [4, "relu"]], "train": {"epochs": 4}},
         "sweep": {"lambda_grid": [-1.0, 0.0, 0.5], "replicates": 2},
         "analysis": {"alpha": 0.01}, "seed": 12}
    cfg = ExperimentConfig.from_dict(d)
    assert cfg.model.backbone_layers == ((6, "relu"), (4, "relu"))
    assert cfg.sweep.grid() == [-1.0, 0.0, 0.5]
    again = ExperimentConfig.from_json(cfg.to_json())
    assert again == cfg and again.hash() == cfg.hash()


@pytest.mark.parametrize("doc,path", [
    ({"sweep": {"foo": 1}}, "sweep.foo"),
    ({"bogus": 1}, "bogus"),
    ({"model": {"train": {"epochs": "ten"}}}, "model.train.epochs"),
    ({"model": {"train": {"learning_rate": -1}}}, "model.train.learning_rate"),
    ({"data": {"binary": {"p_red_given_y1": 2.0}}}, "data.binary.p_red_given_y1"),
    ({"data": {"subsample": {"k": 0.1, "target_gap": 3.0}}}, "data.subsample.k"),
    ({"seed": -1}, "seed"),
    ({"analysis": {"alpha": True}}, "analysis.alpha"),
])
def test_errors_carry_field_path(doc, path):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(doc)
    assert err.value.path == path


def test_invalid_json():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_json("{not json")


def test_hash_changes_with_content():
    a = ExperimentConfig()
    assert a.hash() != a.replace(seed=1).hash()
    assert a.hash() == ExperimentConfig.from_json(json.dumps(a.to_dict())).hash()


def test_train_only_subsampling_keeps_test_unbiased():
    data = DataConfig(continuous=ContinuousAttrSpec(n=8000), subsample=SubsampleConfig(target_gap=10.0),
                      split=(0.5, 0.2, 0.3))
    splits, sub = build_splits(data, 4)
    assert sub.k > 0
    assert abs(class_gap(splits.train) - 10.0) < 2.0
    assert abs(class_gap(splits.test)) < 2.0


def test_subsample_needs_continuous_attribute():
    with pytest.raises(ConfigError):
        DataConfig(kind="binary", subsample=SubsampleConfig(k=0.1))
