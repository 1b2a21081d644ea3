"""Experiment configuration: strict JSON parsing and serialization.

Configs are plain JSON objects. Unknown keys are rejected at every level,
missing required keys raise errors naming the field, and every default is
materialized on parse so serialize(parse(x)) is a fixpoint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import partial

from .likelihood import SolverConfig
from .policies import POLICY_KINDS, PolicyConfig
from .simulate import (
    SCENARIOS,
    ExperimentPlan,
    PolicyArm,
    generate_instance,
    generate_misspecified_instance,
)
from .subspace import FgdConfig

DEFAULT_CHECKPOINTS = (1000, 2000, 3000, 5000, 7500, 10000)


class ConfigError(ValueError):
    """Configuration file violates the schema or an invariant."""


@dataclass(frozen=True)
class PolicySpec:
    """One policy arm of an experiment: registry kind, name, parameters."""

    kind: str
    name: str
    config: PolicyConfig


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully-resolved synthetic experiment."""

    d1: int
    d2: int
    n_items: int
    capacity: int
    horizon: int
    rank: int | None
    scenario: str | None
    singular_scale: float
    checkpoints: tuple
    replications: int
    seed: int
    policies: tuple
    output: str | None
    format: str


@dataclass(frozen=True)
class ReplayConfig:
    """A dataset-replay run: fit on logged interactions, re-simulate."""

    items_csv: str
    interactions_csv: str
    rank_grid: tuple | None
    horizon: int
    capacity: int | None
    checkpoints: tuple
    replications: int
    seed: int
    policies: tuple
    output: str | None
    format: str


@dataclass(frozen=True)
class RankConfig:
    """A rank-selection diagnostic, from a dataset or a synthetic draw."""

    rank_grid: tuple | None
    seed: int
    output: str | None
    format: str
    items_csv: str | None = None
    interactions_csv: str | None = None
    d1: int | None = None
    d2: int | None = None
    n_items: int | None = None
    capacity: int | None = None
    horizon: int | None = None
    rank: int | None = None
    scenario: str | None = None
    singular_scale: float = 10.0

    @property
    def from_dataset(self) -> bool:
        return self.items_csv is not None


def _require(obj, key, where):
    if key not in obj:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return obj[key]


def _reject_unknown(obj, allowed, where):
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def _as_int(value, key, where, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: {key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: {key} must be >= {minimum}, got {value}")
    return value


def _as_number(value, key, where):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: {key} must be a number, got {value!r}")
    return float(value)


def default_checkpoints(horizon: int) -> tuple:
    """Standard checkpoint grid clipped to the horizon (never empty)."""
    clipped = tuple(t for t in DEFAULT_CHECKPOINTS if t <= horizon)
    return clipped or (horizon,)


def _parse_checkpoints(obj, horizon, where):
    if "checkpoints" not in obj:
        return default_checkpoints(horizon)
    raw = obj["checkpoints"]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: checkpoints must be a non-empty list")
    checkpoints = tuple(
        _as_int(t, "checkpoint", where, minimum=1) for t in raw
    )
    for t in checkpoints:
        if t > horizon:
            raise ConfigError(
                f"{where}: invariant checkpoints <= T violated ({t} > {horizon})"
            )
    if list(checkpoints) != sorted(set(checkpoints)):
        raise ConfigError(f"{where}: checkpoints must be strictly increasing")
    return checkpoints


def _parse_rank_scenario(obj, d1, d2, where):
    scenario = obj.get("scenario")
    rank = obj.get("rank")
    if scenario is not None:
        if scenario not in SCENARIOS:
            raise ConfigError(
                f"{where}: unknown scenario {scenario!r}, options: {SCENARIOS}"
            )
        if scenario == "approx_lowrank":
            if rank is None:
                raise ConfigError(
                    f"{where}: scenario approx_lowrank requires a rank"
                )
            rank = _as_int(rank, "rank", where, minimum=1)
        elif rank is not None:
            raise ConfigError(
                f"{where}: scenario {scenario} does not take a rank"
            )
    else:
        if rank is None:
            raise ConfigError(f"{where}: missing required field 'rank' "
                              "(or a 'scenario')")
        rank = _as_int(rank, "rank", where, minimum=1)
    if rank is not None and rank > min(d1, d2):
        raise ConfigError(
            f"{where}: invariant rank <= min(d1, d2) violated (rank={rank})"
        )
    return rank, scenario


def _parse_rank_grid(obj, where):
    rank_grid = obj.get("rank_grid")
    if rank_grid is None:
        return None
    if not isinstance(rank_grid, list) or not rank_grid:
        raise ConfigError(f"{where}: rank_grid must be a non-empty list")
    return tuple(
        _as_int(r, "rank_grid entry", where, minimum=1) for r in rank_grid
    )


def _parse_policies(obj, capacity, where):
    raw_policies = _require(obj, "policies", where)
    if not isinstance(raw_policies, list) or not raw_policies:
        raise ConfigError(f"{where}: policies must be a non-empty list")
    policies = tuple(
        _parse_policy(p, i, capacity) for i, p in enumerate(raw_policies)
    )
    names = [p.name for p in policies]
    if len(set(names)) != len(names):
        raise ConfigError(f"{where}: policy names must be unique, got {names}")
    return policies


def _parse_output_format(obj, where):
    output = obj.get("output")
    if output is not None and not isinstance(output, str):
        raise ConfigError(f"{where}: output must be a string path")
    fmt = obj.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"{where}: format must be 'csv' or 'json'")
    return output, fmt


_FGD_KEYS = ("step_size", "max_iterations", "tolerance", "line_search",
             "regularization_weight")
_SOLVER_KEYS = ("step_size", "max_iterations", "tolerance", "line_search")
_POLICY_KEYS = (
    "kind", "name", "alpha", "beta", "exploration_c", "rank", "rank_grid",
    "batch_size", "ridge", "refit_schedule", "utility_clamp", "fgd", "solver",
)


def _parse_fgd(obj, where):
    _reject_unknown(obj, _FGD_KEYS, where)
    defaults = FgdConfig()
    return FgdConfig(
        step_size=_as_number(obj.get("step_size", defaults.step_size),
                             "step_size", where),
        max_iterations=_as_int(
            obj.get("max_iterations", defaults.max_iterations),
            "max_iterations", where, minimum=1),
        tolerance=_as_number(obj.get("tolerance", defaults.tolerance),
                             "tolerance", where),
        line_search=bool(obj.get("line_search", defaults.line_search)),
        regularization_weight=_as_number(
            obj.get("regularization_weight", defaults.regularization_weight),
            "regularization_weight", where),
    )


def _parse_solver(obj, where):
    _reject_unknown(obj, _SOLVER_KEYS, where)
    defaults = SolverConfig()
    return SolverConfig(
        step_size=_as_number(obj.get("step_size", defaults.step_size),
                             "step_size", where),
        max_iterations=_as_int(
            obj.get("max_iterations", defaults.max_iterations),
            "max_iterations", where, minimum=1),
        tolerance=_as_number(obj.get("tolerance", defaults.tolerance),
                             "tolerance", where),
        line_search=bool(obj.get("line_search", defaults.line_search)),
    )


def _parse_policy(obj, position, capacity):
    where = f"policies[{position}]"
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: must be an object")
    _reject_unknown(obj, _POLICY_KEYS, where)
    kind = _require(obj, "kind", where)
    if kind not in POLICY_KINDS:
        raise ConfigError(
            f"{where}: unknown policy kind {kind!r}, options: {POLICY_KINDS}"
        )
    name = obj.get("name", kind)
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{where}: name must be a non-empty string")
    rank = obj.get("rank", "auto")
    if rank != "auto":
        rank = _as_int(rank, "rank", where, minimum=1)
    rank_grid = _parse_rank_grid(obj, where)
    schedule = obj.get("refit_schedule", "doubling")
    try:
        config = PolicyConfig(
            capacity=capacity,
            alpha=_as_number(obj.get("alpha", 5.0), "alpha", where),
            beta=_as_number(obj.get("beta", 1.0), "beta", where),
            exploration_c=_as_number(
                obj.get("exploration_c", 0.2), "exploration_c", where),
            rank=rank,
            rank_grid=rank_grid,
            batch_size=_as_int(obj.get("batch_size", 1), "batch_size", where,
                               minimum=1),
            ridge=_as_number(obj.get("ridge", 1e-6), "ridge", where),
            refit_schedule=schedule,
            utility_clamp=_as_number(
                obj.get("utility_clamp", 50.0), "utility_clamp", where),
            fgd=_parse_fgd(obj.get("fgd", {}), f"{where}.fgd"),
            solver=_parse_solver(obj.get("solver", {}), f"{where}.solver"),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return PolicySpec(kind=kind, name=name, config=config)


_TOP_KEYS = (
    "d1", "d2", "N", "K", "T", "rank", "scenario", "singular_scale",
    "checkpoints", "replications", "seed", "policies", "output", "format",
)


def parse_config_dict(obj, where="config") -> ExperimentConfig:
    """Validate a decoded JSON object into an ExperimentConfig."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: top level must be an object")
    _reject_unknown(obj, _TOP_KEYS, where)
    d1 = _as_int(_require(obj, "d1", where), "d1", where, minimum=1)
    d2 = _as_int(_require(obj, "d2", where), "d2", where, minimum=1)
    n_items = _as_int(_require(obj, "N", where), "N", where, minimum=1)
    capacity = _as_int(_require(obj, "K", where), "K", where, minimum=1)
    if capacity > n_items:
        raise ConfigError(
            f"{where}: invariant K <= N violated (K={capacity}, N={n_items})"
        )
    horizon = _as_int(_require(obj, "T", where), "T", where, minimum=1)

    rank, scenario = _parse_rank_scenario(obj, d1, d2, where)

    singular_scale = _as_number(
        obj.get("singular_scale", 10.0), "singular_scale", where)
    if singular_scale <= 0:
        raise ConfigError(f"{where}: singular_scale must be positive")

    checkpoints = _parse_checkpoints(obj, horizon, where)
    replications = _as_int(obj.get("replications", 1), "replications", where,
                           minimum=1)
    seed = _as_int(obj.get("seed", 0), "seed", where, minimum=0)
    policies = _parse_policies(obj, capacity, where)
    output, fmt = _parse_output_format(obj, where)

    return ExperimentConfig(
        d1=d1, d2=d2, n_items=n_items, capacity=capacity, horizon=horizon,
        rank=rank, scenario=scenario, singular_scale=singular_scale,
        checkpoints=checkpoints, replications=replications, seed=seed,
        policies=policies, output=output, format=fmt,
    )


def parse_config(path) -> ExperimentConfig:
    """Load and validate an experiment config file."""
    return parse_config_dict(_load_json(path), where=str(path))


def _load_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON: {exc}") from exc


_REPLAY_KEYS = (
    "items_csv", "interactions_csv", "rank_grid", "T", "K", "checkpoints",
    "replications", "seed", "policies", "output", "format",
)


def parse_replay_config_dict(obj, where="config") -> ReplayConfig:
    """Validate a decoded JSON object into a ReplayConfig.

    Policies are parsed with a placeholder capacity when K is omitted; the
    replay runner rebinds them to the dataset's widest offered set.
    """
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: top level must be an object")
    _reject_unknown(obj, _REPLAY_KEYS, where)
    items_csv = _require(obj, "items_csv", where)
    interactions_csv = _require(obj, "interactions_csv", where)
    for key, value in (("items_csv", items_csv),
                       ("interactions_csv", interactions_csv)):
        if not isinstance(value, str) or not value:
            raise ConfigError(f"{where}: {key} must be a non-empty path")
    horizon = _as_int(_require(obj, "T", where), "T", where, minimum=1)
    capacity = obj.get("K")
    if capacity is not None:
        capacity = _as_int(capacity, "K", where, minimum=1)
    rank_grid = _parse_rank_grid(obj, where)
    checkpoints = _parse_checkpoints(obj, horizon, where)
    replications = _as_int(obj.get("replications", 1), "replications", where,
                           minimum=1)
    seed = _as_int(obj.get("seed", 0), "seed", where, minimum=0)
    policies = _parse_policies(obj, capacity if capacity else 1, where)
    output, fmt = _parse_output_format(obj, where)
    return ReplayConfig(
        items_csv=items_csv, interactions_csv=interactions_csv,
        rank_grid=rank_grid, horizon=horizon, capacity=capacity,
        checkpoints=checkpoints, replications=replications, seed=seed,
        policies=policies, output=output, format=fmt,
    )


def parse_replay_config(path) -> ReplayConfig:
    return parse_replay_config_dict(_load_json(path), where=str(path))


_RANK_DATASET_KEYS = (
    "items_csv", "interactions_csv", "rank_grid", "seed", "output", "format",
)
_RANK_SYNTH_KEYS = (
    "d1", "d2", "N", "K", "T", "rank", "scenario", "singular_scale",
    "rank_grid", "seed", "output", "format",
)


def parse_rank_config_dict(obj, where="config") -> RankConfig:
    """Validate a rank-diagnostic config (dataset or synthetic mode)."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: top level must be an object")
    rank_grid = _parse_rank_grid(obj, where)
    seed = _as_int(obj.get("seed", 0), "seed", where, minimum=0)
    output, fmt = _parse_output_format(obj, where)
    if "items_csv" in obj or "interactions_csv" in obj:
        _reject_unknown(obj, _RANK_DATASET_KEYS, where)
        items_csv = _require(obj, "items_csv", where)
        interactions_csv = _require(obj, "interactions_csv", where)
        for key, value in (("items_csv", items_csv),
                           ("interactions_csv", interactions_csv)):
            if not isinstance(value, str) or not value:
                raise ConfigError(f"{where}: {key} must be a non-empty path")
        return RankConfig(
            rank_grid=rank_grid, seed=seed, output=output, format=fmt,
            items_csv=items_csv, interactions_csv=interactions_csv,
        )
    _reject_unknown(obj, _RANK_SYNTH_KEYS, where)
    d1 = _as_int(_require(obj, "d1", where), "d1", where, minimum=1)
    d2 = _as_int(_require(obj, "d2", where), "d2", where, minimum=1)
    n_items = _as_int(_require(obj, "N", where), "N", where, minimum=1)
    capacity = _as_int(_require(obj, "K", where), "K", where, minimum=1)
    if capacity > n_items:
        raise ConfigError(
            f"{where}: invariant K <= N violated (K={capacity}, N={n_items})"
        )
    horizon = _as_int(_require(obj, "T", where), "T", where, minimum=1)
    rank, scenario = _parse_rank_scenario(obj, d1, d2, where)
    singular_scale = _as_number(
        obj.get("singular_scale", 10.0), "singular_scale", where)
    if singular_scale <= 0:
        raise ConfigError(f"{where}: singular_scale must be positive")
    return RankConfig(
        rank_grid=rank_grid, seed=seed, output=output, format=fmt,
        d1=d1, d2=d2, n_items=n_items, capacity=capacity, horizon=horizon,
        rank=rank, scenario=scenario, singular_scale=singular_scale,
    )


def parse_rank_config(path) -> RankConfig:
    return parse_rank_config_dict(_load_json(path), where=str(path))


def _policy_dict(spec: PolicySpec) -> dict:
    cfg = spec.config
    out = {
        "kind": spec.kind,
        "name": spec.name,
        "alpha": cfg.alpha,
        "beta": cfg.beta,
        "exploration_c": cfg.exploration_c,
        "rank": cfg.rank,
        "batch_size": cfg.batch_size,
        "ridge": cfg.ridge,
        "refit_schedule": cfg.refit_schedule,
        "utility_clamp": cfg.utility_clamp,
        "fgd": {
            "step_size": cfg.fgd.step_size,
            "max_iterations": cfg.fgd.max_iterations,
            "tolerance": cfg.fgd.tolerance,
            "line_search": cfg.fgd.line_search,
            "regularization_weight": cfg.fgd.regularization_weight,
        },
        "solver": {
            "step_size": cfg.solver.step_size,
            "max_iterations": cfg.solver.max_iterations,
            "tolerance": cfg.solver.tolerance,
            "line_search": cfg.solver.line_search,
        },
    }
    if cfg.rank_grid is not None:
        out["rank_grid"] = list(cfg.rank_grid)
    return out


def serialize_config(config: ExperimentConfig) -> dict:
    """JSON-ready dict with every default materialized."""
    out = {
        "d1": config.d1,
        "d2": config.d2,
        "N": config.n_items,
        "K": config.capacity,
        "T": config.horizon,
        "singular_scale": config.singular_scale,
        "checkpoints": list(config.checkpoints),
        "replications": config.replications,
        "seed": config.seed,
        "policies": [_policy_dict(p) for p in config.policies],
        "format": config.format,
    }
    if config.rank is not None:
        out["rank"] = config.rank
    if config.scenario is not None:
        out["scenario"] = config.scenario
    if config.output is not None:
        out["output"] = config.output
    return out


def _make_environment(seed, d1, d2, n_items, rank, scenario, singular_scale):
    if scenario is None:
        return generate_instance(d1, d2, n_items, rank, singular_scale, seed)
    return generate_misspecified_instance(
        scenario, d1, d2, n_items, rank, singular_scale, seed
    )


def build_plan(config: ExperimentConfig) -> ExperimentPlan:
    """Turn a parsed config into a runnable (and picklable) plan."""
    env_factory = partial(
        _make_environment,
        d1=config.d1, d2=config.d2, n_items=config.n_items,
        rank=config.rank, scenario=config.scenario,
        singular_scale=config.singular_scale,
    )
    arms = tuple(
        PolicyArm(name=spec.name, kind=spec.kind, config=spec.config)
        for spec in config.policies
    )
    return ExperimentPlan(
        env_factory=env_factory, arms=arms,
        horizon=config.horizon, checkpoints=config.checkpoints,
    )


def experiment_seeds(config: ExperimentConfig) -> list:
    return [config.seed + i for i in range(config.replications)]
