"""Synthetic environments, the interaction loop, and seeded replication.

Randomness is organized as keyed streams off one integer seed: the
instance draw, the user context at step t, the single choice uniform at
step t, and each policy's internal stream are all separate SeedSequence
keys. Two policies replicated on the same environment seed therefore face
identical user sequences, and identical choice outcomes whenever they
offer the same assortment, so comparisons are paired by construction.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from zlib import crc32

import numpy as np

from .choice import (
    ItemCatalog,
    UserContext,
    choice_probabilities,
    expected_revenue,
    sample_choice,
)
from .optimize import OptimizationInstance, static_mnl
from .policies import AssortmentPolicy, PolicyConfig, build_policy
from .validation import check_positive_int, check_rank

_INSTANCE_STREAM = 0
_USER_STREAM = 1
_CHOICE_STREAM = 2
_POLICY_STREAM = 3

SCENARIOS = ("approx_lowrank", "full_rank", "main_effect_only")


@dataclass(frozen=True)
class GroundTruth:
    """True parameter matrix with its (nominal) rank and spectrum.

    rank counts the dominant directions of the generating process; for the
    approximately-low-rank scenario the matrix also carries a small tail,
    so rank is not necessarily the matrix rank.
    """

    phi_star: np.ndarray
    rank: int
    singular_values: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi_star, dtype=float)
        if phi.ndim != 2:
            raise ValueError(f"phi_star must be a matrix, got shape {phi.shape}")
        d2, d1 = phi.shape
        check_rank(self.rank, d1, d2)
        s = np.asarray(self.singular_values, dtype=float)
        actual = np.linalg.svd(phi, compute_uv=False)
        if s.shape != actual.shape or np.max(np.abs(np.sort(s)[::-1] - actual)) > 1e-8:
            raise ValueError(
                "singular_values do not match the spectrum of phi_star"
            )
        object.__setattr__(self, "phi_star", phi)
        object.__setattr__(self, "singular_values", s)


@dataclass
class Environment:
    """One simulated market: catalog, ground truth, and keyed randomness."""

    catalog: ItemCatalog
    truth: GroundTruth
    seed: int
    scenario: str = "lowrank"
    intercept: bool = False
    user_pool: np.ndarray | None = None
    _optimal_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def user_dim(self) -> int:
        return self.truth.phi_star.shape[1]

    def user(self, t: int) -> UserContext:
        """Fresh user context for step t, deterministic in (seed, t).

        Synthetic instances draw standard Gaussians (with a constant first
        coordinate under the intercept flag); a replay environment instead
        resamples rows of user_pool uniformly with replacement.
        """
        rng = np.random.default_rng((self.seed, _USER_STREAM, t))
        if self.user_pool is not None:
            idx = int(rng.integers(self.user_pool.shape[0]))
            return UserContext(self.user_pool[idx])
        base = self.user_dim - 1 if self.intercept else self.user_dim
        q = rng.standard_normal(base)
        if self.intercept:
            q = np.concatenate([[1.0], q])
        return UserContext(q)

    def true_utilities(self, q: np.ndarray) -> np.ndarray:
        return self.catalog.features @ (self.truth.phi_star @ q)

    def choice_rng(self, t: int) -> np.random.Generator:
        return np.random.default_rng((self.seed, _CHOICE_STREAM, t))

    def policy_rng(self, name: str) -> np.random.Generator:
        tag = crc32(name.encode("utf-8"))
        return np.random.default_rng((self.seed, _POLICY_STREAM, tag))

    def optimal_items(self, t: int, capacity: int) -> tuple:
        """Revenue-optimal assortment at step t, cached per step."""
        key = (t, capacity)
        if key not in self._optimal_cache:
            utilities = self.true_utilities(self.user(t).features)
            solution = static_mnl(OptimizationInstance(
                utilities=utilities,
                revenues=self.catalog.revenues,
                capacity=capacity,
            ))
            self._optimal_cache[key] = solution.items
        return self._optimal_cache[key]


def _orthonormal_columns(rng, n, k):
    gauss = rng.standard_normal((n, k))
    q, r = np.linalg.qr(gauss)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _pad_spectrum(values, d1, d2):
    full = np.zeros(min(d1, d2))
    full[: len(values)] = values
    return full


def generate_instance(d1: int, d2: int, n_items: int, rank: int,
                      singular_scale: float = 10.0, seed: int = 0) -> Environment:
    """Well-specified low-rank instance.

    Phi* = U* D* V*' with D* = singular_scale * I_r and random orthonormal
    factors (QR of Gaussians with a sign fix). Item features are standard
    Gaussian, frozen per instance; revenues are all 1; user contexts are
    standard Gaussian per step.
    """
    check_positive_int(d1, "d1")
    check_positive_int(d2, "d2")
    check_positive_int(n_items, "n_items")
    rank = check_rank(rank, d1, d2)
    if singular_scale <= 0:
        raise ValueError(f"singular_scale must be positive, got {singular_scale}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    rng = np.random.default_rng((seed, _INSTANCE_STREAM))
    u_star = _orthonormal_columns(rng, d2, rank)
    v_star = _orthonormal_columns(rng, d1, rank)
    phi = (u_star * singular_scale) @ v_star.T
    catalog = ItemCatalog(
        features=rng.standard_normal((n_items, d2)),
        revenues=np.ones(n_items),
    )
    truth = GroundTruth(
        phi_star=phi, rank=rank,
        singular_values=_pad_spectrum(np.full(rank, singular_scale), d1, d2),
    )
    return Environment(catalog=catalog, truth=truth, seed=seed)


def generate_misspecified_instance(scenario: str, d1: int, d2: int,
                                   n_items: int, rank: int | None = None,
                                   singular_scale: float = 10.0,
                                   seed: int = 0) -> Environment:
    """Instance whose truth violates the exact low-rank assumption.

    approx_lowrank: leading `rank` singular values at the scale, the rest
    at 1% of it. full_rank: all min(d1, d2) singular values equal to the
    scale. main_effect_only: utilities alpha + sum beta_j p_ij + sum
    gamma_k q_tk with no interactions, realized by exposing
    intercept-extended features (1, p_i) and (1, q_t) to the policies and
    a ground truth whose interaction block is exactly zero (two singular
    values at the scale, so the effective rank is 2).
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}, options: {SCENARIOS}")
    check_positive_int(d1, "d1")
    check_positive_int(d2, "d2")
    check_positive_int(n_items, "n_items")
    if singular_scale <= 0:
        raise ValueError(f"singular_scale must be positive, got {singular_scale}")
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    rng = np.random.default_rng((seed, _INSTANCE_STREAM))
    m = min(d1, d2)

    if scenario == "approx_lowrank":
        if rank is None:
            raise ValueError("approx_lowrank requires a rank")
        rank = check_rank(rank, d1, d2)
        spectrum = np.full(m, 0.01 * singular_scale)
        spectrum[:rank] = singular_scale
        u_star = _orthonormal_columns(rng, d2, m)
        v_star = _orthonormal_columns(rng, d1, m)
        phi = (u_star * spectrum) @ v_star.T
        truth = GroundTruth(phi_star=phi, rank=rank, singular_values=spectrum)
        catalog = ItemCatalog(
            features=rng.standard_normal((n_items, d2)),
            revenues=np.ones(n_items),
        )
        return Environment(catalog=catalog, truth=truth, seed=seed,
                           scenario=scenario)

    if scenario == "full_rank":
        spectrum = np.full(m, float(singular_scale))
        u_star = _orthonormal_columns(rng, d2, m)
        v_star = _orthonormal_columns(rng, d1, m)
        phi = (u_star * spectrum) @ v_star.T
        truth = GroundTruth(phi_star=phi, rank=m, singular_values=spectrum)
        catalog = ItemCatalog(
            features=rng.standard_normal((n_items, d2)),
            revenues=np.ones(n_items),
        )
        return Environment(catalog=catalog, truth=truth, seed=seed,
                           scenario=scenario)

    # main_effect_only: extended dims (d2 + 1, d1 + 1), zero interactions
    gamma = rng.standard_normal(d1)
    gamma /= np.linalg.norm(gamma)
    beta = rng.standard_normal(d2)
    beta /= np.linalg.norm(beta)
    phi = np.zeros((d2 + 1, d1 + 1))
    phi[0, 1:] = singular_scale * gamma
    phi[1:, 0] = singular_scale * beta
    spectrum = _pad_spectrum([singular_scale, singular_scale], d1 + 1, d2 + 1)
    truth = GroundTruth(phi_star=phi, rank=2, singular_values=spectrum)
    raw_items = rng.standard_normal((n_items, d2))
    catalog = ItemCatalog(
        features=np.concatenate([np.ones((n_items, 1)), raw_items], axis=1),
        revenues=np.ones(n_items),
    )
    return Environment(catalog=catalog, truth=truth, seed=seed,
                       scenario=scenario, intercept=True)


@dataclass(frozen=True)
class RegretTrace:
    """Exact expected-revenue regret of one episode, step by step."""

    policy: str
    seed: int
    per_step_regret: np.ndarray
    assortments: tuple
    config: dict

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.per_step_regret)

    def cumulative_at(self, t: int) -> float:
        if not 1 <= t <= self.per_step_regret.shape[0]:
            raise ValueError(f"checkpoint {t} outside the horizon")
        return float(self.cumulative[t - 1])


def run_episode(policy: AssortmentPolicy, environment: Environment,
                horizon: int, rng: np.random.Generator) -> RegretTrace:
    """Run one policy for `horizon` steps with exact regret accounting.

    Per step: the optimal expected revenue comes from the exact optimizer
    on the true utilities; the regret increment is the gap in expected
    (never sampled) revenue; the observed choice is drawn from the true
    MNL with the step-keyed uniform.
    """
    check_positive_int(horizon, "horizon")
    policy.init(environment.catalog, horizon, rng)
    capacity = policy.config.capacity
    revenues = environment.catalog.revenues
    regret = np.empty(horizon)
    assortments = []
    for t in range(1, horizon + 1):
        user = environment.user(t)
        utilities = environment.true_utilities(user.features)
        best_items = environment.optimal_items(t, capacity)
        best_value = expected_revenue(
            utilities[list(best_items)], revenues[list(best_items)]
        )
        offered = policy.select(user)
        items = list(offered.items)
        value = expected_revenue(utilities[items], revenues[items])
        regret[t - 1] = best_value - value
        probs = choice_probabilities(utilities[items])
        pick = sample_choice(probs, environment.choice_rng(t))
        chosen = None if pick == 0 else offered.items[pick - 1]
        policy.observe(user, offered, chosen)
        assortments.append(offered.items)
    return RegretTrace(
        policy=policy.kind,
        seed=environment.seed,
        per_step_regret=regret,
        assortments=tuple(assortments),
        config=asdict(policy.config),
    )


@dataclass(frozen=True)
class PolicyArm:
    """One policy entry of an experiment: display name, kind, config."""

    name: str
    kind: str
    config: PolicyConfig


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything replicate needs: environments, arms, horizon, checkpoints.

    env_factory maps a seed to an Environment and must be picklable for
    process-parallel replication.
    """

    env_factory: object
    arms: tuple
    horizon: int
    checkpoints: tuple

    def __post_init__(self):
        check_positive_int(self.horizon, "horizon")
        arms = tuple(self.arms)
        if not arms:
            raise ValueError("experiment needs at least one policy arm")
        names = [arm.name for arm in arms]
        if len(set(names)) != len(names):
            raise ValueError(f"policy names must be unique, got {names}")
        checkpoints = tuple(int(t) for t in self.checkpoints)
        if not checkpoints:
            raise ValueError("experiment needs at least one checkpoint")
        for t in checkpoints:
            if not 1 <= t <= self.horizon:
                raise ValueError(
                    f"checkpoint {t} outside [1, horizon={self.horizon}]"
                )
        if list(checkpoints) != sorted(set(checkpoints)):
            raise ValueError("checkpoints must be strictly increasing")
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "checkpoints", checkpoints)


@dataclass(frozen=True)
class ResultRow:
    policy: str
    seed: int
    t: int
    cum_regret: float


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    t: int
    mean_cum_regret: float
    ci_halfwidth: float
    n_seeds: int

    @property
    def single_seed(self) -> bool:
        return self.n_seeds == 1


@dataclass(frozen=True)
class Aggregate:
    """Per-seed checkpoint regrets plus per-policy means and 95% CIs."""

    rows: tuple
    summary: tuple
    traces: tuple | None = None


def _run_seed(plan: ExperimentPlan, seed: int, keep_traces: bool):
    environment = plan.env_factory(seed)
    out = []
    for arm in plan.arms:
        policy = build_policy(arm.kind, arm.config,
                              environment.truth.phi_star)
        rng = environment.policy_rng(arm.name)
        try:
            trace = run_episode(policy, environment, plan.horizon, rng)
        except Exception as exc:
            raise RuntimeError(
                f"episode failed for policy {arm.name!r} at seed {seed}"
            ) from exc
        values = [trace.cumulative_at(t) for t in plan.checkpoints]
        out.append((arm.name, values, trace if keep_traces else None))
    return out


def replicate(plan: ExperimentPlan, seeds, n_jobs: int = 1,
              keep_traces: bool = False) -> Aggregate:
    """One episode per (policy, seed), reduced deterministically.

    Episodes run in parallel across seeds when n_jobs != 1; results are
    always aggregated in (arm order, seed order), so the output does not
    depend on scheduling.
    """
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("replicate needs at least one seed")
    if n_jobs == 1:
        per_seed = [_run_seed(plan, s, keep_traces) for s in seeds]
    else:
        from joblib import Parallel, delayed
        per_seed = Parallel(n_jobs=n_jobs)(
            delayed(_run_seed)(plan, s, keep_traces) for s in seeds
        )
    rows = []
    traces = []
    summary = []
    n = len(seeds)
    for arm_pos, arm in enumerate(plan.arms):
        by_checkpoint = np.empty((n, len(plan.checkpoints)))
        for seed_pos, seed in enumerate(seeds):
            name, values, trace = per_seed[seed_pos][arm_pos]
            by_checkpoint[seed_pos] = values
            for t, value in zip(plan.checkpoints, values):
                rows.append(ResultRow(
                    policy=name, seed=seed, t=t, cum_regret=float(value)
                ))
            if keep_traces:
                traces.append(trace)
        for pos, t in enumerate(plan.checkpoints):
            vals = by_checkpoint[:, pos]
            mean = float(np.mean(vals))
            if n > 1:
                half = float(1.96 * np.std(vals, ddof=1) / np.sqrt(n))
            else:
                half = 0.0
            summary.append(SummaryRow(
                policy=arm.name, t=t, mean_cum_regret=mean,
                ci_halfwidth=half, n_seeds=n,
            ))
    return Aggregate(
        rows=tuple(rows),
        summary=tuple(summary),
        traces=tuple(traces) if keep_traces else None,
    )
