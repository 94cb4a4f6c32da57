"""Scenario-tree stochastic MPC toolkit for battery energy arbitrage.

Builds probability-weighted scenario trees from pluggable trajectory
samplers, solves the resulting multistage stochastic program exactly, and
evaluates closed-loop policies against full-information baselines.
"""

from .environment import BatteryParams, HourlyAction, Observation, step, validate_plan
from .errors import (
    InfeasibleActionError,
    InvalidInputError,
    PriceDataError,
    ProtocolError,
    RemoteSamplerError,
    SamplerError,
    SamplerTimeoutError,
    ScentreeError,
    SolverFailureError,
)
from .harness import (
    POLICY_KINDS,
    EpisodeResult,
    PolicyKind,
    aggregate_report,
    plan_deterministic,
    plan_dst_smpc,
    plan_mc_smpc,
    plan_oracle,
    plan_perfect,
    run_episode,
    sign_test_p_value,
)
from .optimizer import (
    OptimizerConfig,
    Solution,
    TreePolicy,
    TreeProgram,
    export_lp_text,
    extract_policy,
    formulate_path_lp,
    formulate_tree_lp,
    mean_price_path,
    solve_lp,
    solve_tree_dp,
)
from .samplers import (
    BootstrapSampler,
    ConstantSampler,
    ExternalSampler,
    GaussianARParams,
    GaussianARSampler,
    RegimeMixtureParams,
    RegimeMixtureSampler,
    ReplaySampler,
    SamplerRequest,
    TrajectoryBatch,
    TrajectorySampler,
    bootstrap_sample,
    external_sample,
    gaussian_ar_sample,
    regime_mixture_sample,
)
from .tree import (
    ClusterResult,
    ScenarioNode,
    ScenarioTree,
    TreeConfig,
    build_tree,
    export_dot,
    kmeans,
    prune_and_renormalize,
    stage_probabilities,
    tree_from_json,
    tree_to_json,
    trees_identical,
)

__version__ = "0.1.0"
