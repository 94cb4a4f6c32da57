"""Shared synthetic benchmark: a two-regime market where recourse pays.

Each stage the market ramps up or down (equal odds) from the last realized
price; hourly noise is small against the ramp, so the two regimes keep
diverging through the second lookahead stage. The battery's power limit is
half its capacity: swinging the store takes two hours of lead, so a planner
that hedges the upcoming branch beats one that plans on the branches' flat
average, epoch after epoch.
"""

import numpy as np

from scentree.environment import BatteryParams
from scentree.optimizer import OptimizerConfig
from scentree.samplers import (
    GaussianARParams,
    GaussianARSampler,
    RegimeMixtureParams,
    RegimeMixtureSampler,
)
from scentree.tree import TreeConfig

H = 4
LEVEL = 30.0
DRIFT = 5.0
NOISE = 0.5
SOC0 = 0.5


def benchmark_battery() -> BatteryParams:
    return BatteryParams(
        capacity=1.0, soc_min=0.0, soc_max=1.0, p_max=0.5,
        eta_c=1.0, eta_d=1.0, c_deg=0.05,
    )


def benchmark_tree_config(seed: int, depth: int = 2, samples: int = 200) -> TreeConfig:
    return TreeConfig(
        depth=depth, stage_horizon=H, samples_per_node=samples, clusters=2,
        keep_children=2, series_dim=1, master_seed=seed,
    )


def benchmark_opt_config() -> OptimizerConfig:
    return OptimizerConfig(discount=1.0, solver_tolerance=1e-9, terminal_value_rate=0.0)


def mixture_sampler() -> RegimeMixtureSampler:
    params = RegimeMixtureParams(
        weights=np.array([0.5, 0.5]),
        drifts=np.array([[DRIFT], [-DRIFT]]),
        noise_scale=NOISE,
    )
    return RegimeMixtureSampler(params)


def misspecified_ar_sampler() -> GaussianARSampler:
    """Unimodal mean-reverting stand-in for a classical forecaster."""
    params = GaussianARParams(
        transition=np.array([[0.9]]),
        intercept=np.array([3.0]),
        noise_scale=np.array([2.0]),
    )
    return GaussianARSampler(params)


def regime_series(seed: int, blocks: int = 16) -> np.ndarray:
    """Realized prices drawn from the same process the sampler assumes."""
    rng = np.random.default_rng(10_000 + seed)
    series = [LEVEL]
    last = LEVEL
    for _ in range(blocks):
        j = rng.choice(2, p=[0.5, 0.5])
        sign = DRIFT if j == 0 else -DRIFT
        block = [last + sign * (t + 1) + rng.normal() * NOISE for t in range(H)]
        series.extend(block)
        last = block[-1]
    return np.array(series)
