from pathlib import Path

import numpy as np

from shortkit.config import ExperimentConfig, build_splits
from shortkit.datagen import class_gap, generate_continuous_attr
from shortkit.presets import SIMULATED_GRID, SimulatedSetup, binary_experiment, continuous_experiment


def test_simulated_grid_has_25_sorted_points_with_zero():
    assert len(SIMULATED_GRID) == 25 and list(SIMULATED_GRID) == sorted(SIMULATED_GRID)
    assert 0.0 in SIMULATED_GRID and SIMULATED_GRID[0] == -10.0 and SIMULATED_GRID[-1] == 1.0


def test_simulated_setup_network_matches_images():
    setup = SimulatedSetup()
    net = setup.network
    assert net.input_dim == setup.base.n_features and net.attribute_kind == "binary"
    assert abs(sum(setup.fractions) - 1.0) < 1e-12


def test_presets_round_trip_through_json():
    for cfg in (continuous_experiment(True), continuous_experiment(False, seed=4), binary_experiment(0.9, 0.2)):
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg


def test_biased_preset_widens_native_gap_and_balanced_removes_it():
    cfg = continuous_experiment(True)
    native = class_gap(generate_continuous_attr(cfg.data.continuous, 0))
    biased, _ = build_splits(cfg.data, 0)
    balanced, _ = build_splits(continuous_experiment(False).data, 0)
    assert native < 12.0 < class_gap(biased.train)
    assert abs(class_gap(balanced.train)) < 2.0
    # Evaluation splits are drawn from the unbiased population in both.
    assert np.array_equal(biased.test.ids, balanced.test.ids)


def test_binary_preset_carries_study_settings():
    cfg = binary_experiment(0.95, 0.2, seed=3)
    assert cfg.data.binary.p_red_given_y1 == 0.95 and cfg.data.split == SimulatedSetup().fractions
    assert cfg.sweep.grid() == list(SIMULATED_GRID)


def test_shipped_configs_match_presets():
    root = Path(__file__).resolve().parent.parent / "configs"
    expected = {"continuous_biased.json": continuous_experiment(True),
                "continuous_balanced.json": continuous_experiment(False),
                "binary_high_correlation.json": binary_experiment(0.94, 0.19)}
    for name, cfg in expected.items():
        assert ExperimentConfig.load(root / name) == cfg, name
