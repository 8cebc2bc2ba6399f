"""Tuned experiment setups for the two synthetic settings.

The colored-square setup reproduces the power/type-I study on binary
attributes. The continuous setup pairs a biased and a balanced training set
drawn from the same population, the attribute playing the role of age.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import DataConfig, ExperimentConfig, ModelConfig, SubsampleConfig, build_splits
from .datagen import BinaryAttrSpec, ContinuousAttrSpec
from .probes import Bounds, ProbeConfig, encoding_bounds
from .short import Splits, StudyResult, StudySpec, SweepSpec, replicate_study, run_sweep

# Reversal is swept less finely than amplification: past a small negative
# scale the colored square is already removed from the embedding.
SIMULATED_GRID = tuple([float(v) for v in -np.logspace(-2, 1, 12)[::-1]] + [0.0]
                       + [float(v) for v in np.logspace(-2, 0, 12)])


@dataclass(frozen=True)
class SimulatedSetup:
    """Everything ``replicate_study`` needs apart from the study ranges."""

    base: BinaryAttrSpec = field(default_factory=BinaryAttrSpec)
    train: nn.TrainConfig = field(default_factory=lambda: nn.TrainConfig(
        learning_rate=3e-3, epochs=4, attribute_loss_weight=0.75, attribute_head_lr_scale=10.0,
        model_selection="last"))
    probe: ProbeConfig = field(default_factory=lambda: ProbeConfig(epochs=20, bootstrap_resamples=0))
    sweep: SweepSpec = field(default_factory=lambda: SweepSpec(lambda_grid=SIMULATED_GRID, replicates=5))
    fractions: tuple = (2 / 6, 1 / 6, 3 / 6)

    @property
    def network(self) -> nn.NetworkSpec:
        return nn.NetworkSpec(input_dim=self.base.n_features, attribute_head=(2, 1), attribute_kind="binary")


def simulated_study(p_red_given_y1: tuple, p_red_given_y0: tuple, n_runs: int = 50, seed: int = 0,
                    setup: SimulatedSetup | None = None, progress=None) -> StudyResult:
    """Run the colored-square study over the given correlation ranges."""
    setup = setup or SimulatedSetup()
    study = StudySpec(n_runs=n_runs, p_red_given_y1=tuple(p_red_given_y1), p_red_given_y0=tuple(p_red_given_y0),
                      seed=seed)
    return replicate_study(study, setup.base, setup.network, setup.train, setup.probe, setup.sweep,
                           fractions=setup.fractions, progress=progress)


def binary_experiment(p_red_given_y1: float, p_red_given_y0: float, seed: int = 0) -> ExperimentConfig:
    """A single colored-square sweep with the study settings, for the command line."""
    setup = SimulatedSetup()
    base = BinaryAttrSpec(p_red_given_y1=p_red_given_y1, p_red_given_y0=p_red_given_y0)
    net = setup.network
    model = ModelConfig(backbone_layers=net.backbone_layers, attribute_head=net.attribute_head,
                        train=setup.train, probe=setup.probe)
    return ExperimentConfig(data=DataConfig(kind="binary", binary=base, split=setup.fractions), model=model,
                            sweep=setup.sweep, output="shortkit-binary", seed=seed)


def continuous_experiment(biased: bool, seed: int = 0, replicates: int = 5) -> ExperimentConfig:
    """Continuous-attribute experiment with a biased or a balanced training set.

    The label depends weakly on the attribute (log-odds slope 0.02 per
    unit, a native class gap near 8). The biased variant widens the
    training-set gap to 18 units by subsampling and the balanced variant
    removes it. Validation and test data are left
    untouched in both, so the two sweeps are evaluated on one population.
    """
    data = DataConfig(kind="continuous",
                      continuous=ContinuousAttrSpec(n=4000, beta0=-1.1, beta1=0.02, coupling=2.0),
                      subsample=SubsampleConfig(target_gap=18.0 if biased else 0.0),
                      split=(0.5, 0.2, 0.3))
    model = ModelConfig(attribute_head=(32, 16, 1),
                        train=nn.TrainConfig(learning_rate=3e-3, epochs=15, attribute_head_lr_scale=10.0),
                        probe=ProbeConfig(epochs=20, bootstrap_resamples=0))
    sweep = SweepSpec(grid_n=25, grid_magnitude=10.0, grid_decades=3.0, replicates=replicates)
    name = "biased" if biased else "balanced"
    return ExperimentConfig(data=data, model=model, sweep=sweep, output=f"shortkit-{name}", seed=seed)


@dataclass
class ExperimentRun:
    splits: Splits
    network: nn.NetworkSpec
    points: list
    bounds: Bounds | None = None


def run_experiment(cfg: ExperimentConfig, with_bounds: bool = False) -> ExperimentRun:
    """Build the splits, run the configured sweep and optionally the LEB/UEB models."""
    splits, _ = build_splits(cfg.data, cfg.seed)
    kind = cfg.data.resolved_attribute_kind
    network = cfg.model.network(splits.train.n_features, kind)
    points, _ = run_sweep(splits, cfg.sweep, network, cfg.model.train, cfg.model.probe, cfg.analysis, cfg.seed,
                          allow_degenerate=True)
    bounds = None
    if with_bounds:
        # The dedicated attribute model has no adversary to outpace.
        direct_cfg = cfg.model.train.replace(attribute_head_lr_scale=1.0, seed=cfg.seed)
        bounds = encoding_bounds(network, splits.train, splits.val, splits.test, direct_cfg,
                                 cfg.model.probe)
    return ExperimentRun(splits, network, points, bounds)
