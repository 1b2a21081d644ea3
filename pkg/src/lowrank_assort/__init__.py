"""Low-rank bilinear MNL assortment bandits: estimation, policies, benchmarks."""

from .choice import (
    Assortment,
    ChoiceObservation,
    ItemCatalog,
    UserContext,
    bilinear_utility,
    choice_probabilities,
    expected_revenue,
    sample_choice,
    utility_matrix,
)
from .config import (
    DEFAULT_CHECKPOINTS,
    ConfigError,
    ExperimentConfig,
    PolicySpec,
    RankConfig,
    ReplayConfig,
    build_plan,
    experiment_seeds,
    parse_config,
    parse_config_dict,
    parse_rank_config,
    parse_replay_config,
    serialize_config,
)
from .estimators import BilinearMnlMle, LowRankMnl
from .likelihood import (
    DivergenceError,
    FitResult,
    ObservationSet,
    SolverConfig,
    fit_mle,
    grad_nll_full,
    grad_nll_reduced,
    nll_full,
    nll_reduced,
)
from .optimize import (
    AssortmentSolution,
    OptimizationInstance,
    brute_force_best,
    static_mnl,
)
from .policies import (
    POLICY_KINDS,
    AssortmentPolicy,
    ElsaUcbPolicy,
    OraclePolicy,
    PolicyConfig,
    PolicyProtocolError,
    UcbMnlPolicy,
    UniformRandomPolicy,
    build_joint_feature,
    build_policy,
    elsa_confidence_radius,
    elsa_gic_policy,
    elsa_ucb_policy,
    exploration_length,
    ucb_mnl_confidence_radius,
    ucb_mnl_policy,
)
from .replay import (
    collect_random_observations,
    export_dataset,
    load_interactions,
    load_items,
    replay_from_dataset,
)
from .results import emit_gic, emit_results
from .simulate import (
    SCENARIOS,
    Aggregate,
    Environment,
    ExperimentPlan,
    GroundTruth,
    PolicyArm,
    RegretTrace,
    generate_instance,
    generate_misspecified_instance,
    replicate,
    run_episode,
)
from .subspace import (
    FgdConfig,
    FgdResult,
    SubspaceEstimate,
    extract_subspace,
    fgd_fit,
    gic_penalty,
    gic_search,
    reduce_feature,
    reduce_observations,
    reduced_dim,
    rtv,
    select_rank_gic,
)

__version__ = "0.1.0"

__all__ = [
    "Aggregate",
    "Assortment",
    "AssortmentPolicy",
    "AssortmentSolution",
    "BilinearMnlMle",
    "ChoiceObservation",
    "ConfigError",
    "DEFAULT_CHECKPOINTS",
    "DivergenceError",
    "ElsaUcbPolicy",
    "Environment",
    "ExperimentConfig",
    "ExperimentPlan",
    "FgdConfig",
    "FgdResult",
    "FitResult",
    "GroundTruth",
    "ItemCatalog",
    "LowRankMnl",
    "ObservationSet",
    "OptimizationInstance",
    "OraclePolicy",
    "POLICY_KINDS",
    "PolicyArm",
    "PolicyConfig",
    "PolicyProtocolError",
    "PolicySpec",
    "RankConfig",
    "RegretTrace",
    "ReplayConfig",
    "SCENARIOS",
    "SolverConfig",
    "SubspaceEstimate",
    "UcbMnlPolicy",
    "UniformRandomPolicy",
    "UserContext",
    "bilinear_utility",
    "brute_force_best",
    "build_joint_feature",
    "build_plan",
    "build_policy",
    "choice_probabilities",
    "collect_random_observations",
    "elsa_confidence_radius",
    "elsa_gic_policy",
    "elsa_ucb_policy",
    "emit_gic",
    "emit_results",
    "expected_revenue",
    "experiment_seeds",
    "exploration_length",
    "export_dataset",
    "extract_subspace",
    "fgd_fit",
    "fit_mle",
    "generate_instance",
    "generate_misspecified_instance",
    "gic_penalty",
    "gic_search",
    "grad_nll_full",
    "grad_nll_reduced",
    "load_interactions",
    "load_items",
    "nll_full",
    "nll_reduced",
    "parse_config",
    "parse_config_dict",
    "parse_rank_config",
    "parse_replay_config",
    "reduce_feature",
    "reduce_observations",
    "reduced_dim",
    "replay_from_dataset",
    "replicate",
    "rtv",
    "run_episode",
    "sample_choice",
    "select_rank_gic",
    "serialize_config",
    "static_mnl",
    "ucb_mnl_confidence_radius",
    "ucb_mnl_policy",
    "utility_matrix",
]
