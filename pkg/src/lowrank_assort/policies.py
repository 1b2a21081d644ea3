"""Online assortment policies.

Every policy follows the same protocol: construct with a PolicyConfig,
bind to a catalog with `init(catalog, horizon, rng)`, then strictly
alternate `select(user) -> Assortment` and `observe(user, assortment,
chosen)`. Out-of-order calls raise PolicyProtocolError. State snapshots
round-trip losslessly through `save_state` / `load_state`.

The bandit policies share one shape: uniform exploration with assortments
of size exactly K for the first T0 = ceil(c d1 d2 + sqrt(T)) steps, then
optimistic utilities z_it = x_it' theta + radius * ||x_it||_{W^-1} fed to
the exact assortment optimizer. They differ in the feature map: the
subspace policy learns a rank-r rotation from the exploration data and
works in (d1 + d2) r - r^2 dimensions, while the joint-feature baselines
use fixed stacked or vectorized maps of the raw features.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field

import numpy as np

from .choice import Assortment, ChoiceObservation, ItemCatalog, UserContext
from .likelihood import (
    ObservationSet,
    ReducedObservations,
    SolverConfig,
    fit_mle,
)
from .optimize import OptimizationInstance, static_mnl
from .subspace import (
    FgdConfig,
    extract_subspace,
    fgd_fit,
    gic_search,
    reduce_feature_block,
)
from .validation import check_matrix, check_positive_int, check_vector

STATE_VERSION = 1
_INVERSE_REFRESH = 512  # exact Gram-inverse recompute cadence


class PolicyProtocolError(RuntimeError):
    """select/observe called out of order or with mismatched arguments."""


@dataclass(frozen=True)
class PolicyConfig:
    """Hyperparameters shared by the assortment policies.

    capacity is the assortment size limit K and is always required; the
    remaining fields only matter to the bandit policies.
    """

    capacity: int
    alpha: float = 5.0
    beta: float = 1.0
    exploration_c: float = 0.2
    rank: int | str = "auto"
    rank_grid: tuple | None = None
    batch_size: int = 1
    ridge: float = 1e-6
    refit_schedule: str = "doubling"
    utility_clamp: float = 50.0
    fgd: FgdConfig = field(default_factory=FgdConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        check_positive_int(self.capacity, "capacity")
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.exploration_c <= 0:
            raise ValueError(
                f"exploration_c must be positive, got {self.exploration_c}"
            )
        if self.rank != "auto":
            check_positive_int(self.rank, "rank")
        if self.rank_grid is not None:
            grid = tuple(check_positive_int(r, "rank_grid entry")
                         for r in self.rank_grid)
            object.__setattr__(self, "rank_grid", grid)
        check_positive_int(self.batch_size, "batch_size")
        if self.ridge <= 0:
            raise ValueError(f"ridge must be positive, got {self.ridge}")
        if self.refit_schedule not in ("every_step", "doubling"):
            raise ValueError(
                "refit_schedule must be 'every_step' or 'doubling', "
                f"got {self.refit_schedule!r}"
            )
        if self.utility_clamp <= 0:
            raise ValueError(
                f"utility_clamp must be positive, got {self.utility_clamp}"
            )


def exploration_length(c: float, d1: int, d2: int, horizon: int) -> int:
    """Forced-exploration length: min(T, ceil(c d1 d2 + sqrt(T)))."""
    if c <= 0:
        raise ValueError(f"exploration coefficient must be positive, got {c}")
    check_positive_int(d1, "d1")
    check_positive_int(d2, "d2")
    check_positive_int(horizon, "horizon")
    raw = int(np.ceil(c * d1 * d2 + np.sqrt(horizon)))
    return min(horizon, raw)


def elsa_confidence_radius(n: int, reduced: int, capacity: int,
                           alpha: float, beta: float) -> float:
    """Optimism scale for the subspace policy after n observations.

    The first term is the usual self-normalized bound in the reduced
    dimension; the second absorbs the frozen-rotation error and grows like
    sqrt(n K) so the induced bonus stays bounded away from zero.
    """
    check_positive_int(n, "n")
    check_positive_int(reduced, "reduced dimension")
    check_positive_int(capacity, "capacity")
    log_term = 2.0 * reduced * np.log1p(n / reduced) + 4.0 * np.log(n)
    return float(alpha * np.sqrt(log_term) + beta * np.sqrt(n * capacity))


def ucb_mnl_confidence_radius(n: int, dim: int, alpha: float) -> float:
    """Optimism scale of the joint-feature baselines after n observations."""
    check_positive_int(n, "n")
    check_positive_int(dim, "dim")
    return float(alpha * np.sqrt(2.0 * dim * np.log1p(n / dim) + 2.0 * np.log(n)))


def build_joint_feature(mode: str, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Fixed full-space feature map for one (item, user) pair.

    "stacked" returns (1, p', q')' of length d2 + d1 + 1. "vectorized"
    returns the column-major vectorization of (1, p')'(1, q'), length
    (d2 + 1)(d1 + 1), which spans intercept, both main effects, and every
    interaction.
    """
    p = check_vector(p, "item feature p")
    q = check_vector(q, "user feature q")
    if mode == "stacked":
        return np.concatenate([[1.0], p, q])
    if mode == "vectorized":
        p_ext = np.concatenate([[1.0], p])
        q_ext = np.concatenate([[1.0], q])
        return np.kron(q_ext, p_ext)
    raise ValueError(f"unknown joint feature mode {mode!r}")


def _joint_feature_block(mode, item_features, q):
    """build_joint_feature stacked over catalog rows, shape (m, dim)."""
    m = item_features.shape[0]
    if mode == "stacked":
        ones = np.ones((m, 1))
        q_rep = np.broadcast_to(q, (m, q.shape[0]))
        return np.concatenate([ones, item_features, q_rep], axis=1)
    p_ext = np.concatenate([np.ones((m, 1)), item_features], axis=1)
    q_ext = np.concatenate([[1.0], q])
    return (p_ext[:, None, :] * q_ext[None, :, None]).reshape(m, -1)


def joint_feature_dim(mode: str, d1: int, d2: int) -> int:
    if mode == "stacked":
        return d1 + d2 + 1
    if mode == "vectorized":
        return (d1 + 1) * (d2 + 1)
    raise ValueError(f"unknown joint feature mode {mode!r}")


class AssortmentPolicy:
    """Protocol base: init/select/observe with strict alternation."""

    kind = "policy"

    def __init__(self, config: PolicyConfig):
        if not isinstance(config, PolicyConfig):
            raise ValueError("config must be a PolicyConfig")
        self.config = config
        self.catalog = None
        self.horizon = None
        self.rng = None
        self.step = 0
        self._pending = None

    def init(self, catalog: ItemCatalog, horizon: int,
             rng: np.random.Generator) -> "AssortmentPolicy":
        if not isinstance(catalog, ItemCatalog):
            raise ValueError("catalog must be an ItemCatalog")
        self.catalog = catalog
        self.horizon = check_positive_int(horizon, "horizon")
        self.rng = rng
        self.step = 0
        self._pending = None
        self._setup()
        return self

    def _setup(self):
        pass

    def select(self, user: UserContext) -> Assortment:
        if self.catalog is None:
            raise PolicyProtocolError("policy used before init()")
        if self._pending is not None:
            raise PolicyProtocolError(
                "select called again before observing the previous step"
            )
        if self.step >= self.horizon:
            raise PolicyProtocolError(
                f"horizon {self.horizon} exhausted, cannot select again"
            )
        assortment = self._select(user)
        self._pending = (user.features, assortment.items)
        return assortment

    def observe(self, user: UserContext, assortment: Assortment,
                chosen: int | None):
        if self._pending is None:
            raise PolicyProtocolError("observe called before select")
        q_pending, items_pending = self._pending
        if tuple(assortment.items) != items_pending or not np.array_equal(
            user.features, q_pending
        ):
            raise PolicyProtocolError(
                "observe arguments do not match the pending select"
            )
        if chosen is not None and chosen not in assortment.items:
            raise ValueError(
                f"chosen item {chosen} is not in the offered assortment"
            )
        self._pending = None
        self.step += 1
        self._observe(user, assortment, chosen)

    def _select(self, user: UserContext) -> Assortment:
        raise NotImplementedError

    def _observe(self, user, assortment, chosen):
        pass

    def _random_assortment(self) -> Assortment:
        k = min(self.config.capacity, self.catalog.n_items)
        items = self.rng.choice(self.catalog.n_items, size=k, replace=False)
        return Assortment(tuple(sorted(int(i) for i in items)),
                          self.config.capacity)

    def _solve(self, utilities) -> Assortment:
        clamp = self.config.utility_clamp
        z = np.clip(utilities, -clamp, clamp)
        solution = static_mnl(OptimizationInstance(
            utilities=z,
            revenues=self.catalog.revenues,
            capacity=self.config.capacity,
        ))
        return Assortment(solution.items, self.config.capacity)

    # -- state snapshots ---------------------------------------------------

    def save_state(self) -> bytes:
        """Versioned lossless snapshot of the full policy state."""
        payload = {
            "version": STATE_VERSION,
            "class": type(self).__name__,
            "state": self.__dict__,
        }
        return pickle.dumps(payload)

    def load_state(self, blob: bytes):
        payload = pickle.loads(blob)
        if payload.get("version") != STATE_VERSION:
            raise ValueError(
                f"unsupported state version {payload.get('version')!r}"
            )
        if payload.get("class") != type(self).__name__:
            raise ValueError(
                f"snapshot was taken from {payload.get('class')!r}, "
                f"cannot load into {type(self).__name__}"
            )
        self.__dict__.update(payload["state"])
        return self


class UniformRandomPolicy(AssortmentPolicy):
    """Offers a uniformly random assortment of size exactly K every step."""

    kind = "uniform-random"

    def _select(self, user):
        return self._random_assortment()


class OraclePolicy(AssortmentPolicy):
    """Clairvoyant baseline: optimizes the true utilities every step."""

    kind = "oracle"

    def __init__(self, config: PolicyConfig, phi_star: np.ndarray):
        super().__init__(config)
        self.phi_star = check_matrix(phi_star, "phi_star")

    def _select(self, user):
        utilities = self.catalog.features @ (self.phi_star @ user.features)
        solution = static_mnl(OptimizationInstance(
            utilities=utilities,
            revenues=self.catalog.revenues,
            capacity=self.config.capacity,
        ))
        return Assortment(solution.items, self.config.capacity)


class _GramState:
    """Regularized Gram matrix with a maintained inverse.

    Rank-1 downdates keep the inverse cheap; a periodic exact solve stops
    floating-point drift from accumulating over thousands of updates.
    """

    def __init__(self, dim, ridge):
        self.ridge = ridge
        self.matrix = np.eye(dim) * ridge
        self.inverse = np.eye(dim) / ridge
        self._since_refresh = 0

    def update(self, rows):
        rows = np.atleast_2d(rows)
        self.matrix += rows.T @ rows
        for x in rows:
            w = self.inverse @ x
            self.inverse -= np.outer(w, w) / (1.0 + x @ w)
        self._since_refresh += rows.shape[0]
        if self._since_refresh >= _INVERSE_REFRESH:
            self.inverse = np.linalg.inv(self.matrix)
            self._since_refresh = 0

    def bonus_norms(self, feature_rows):
        """||x||_{W^-1} for each row, clipped at zero for safety."""
        quad = np.einsum(
            "nf,nf->n", feature_rows @ self.inverse, feature_rows
        )
        return np.sqrt(np.maximum(quad, 0.0))


class _UcbBanditPolicy(AssortmentPolicy):
    """Shared machinery: exploration phase, batching, logs, refits."""

    def _setup(self):
        self.user_dim = None
        self.t0 = None
        self._model_ready = False
        self._ingested = 0
        self._batch = []
        self._last_refit = 0
        self._log_features = None
        self._log_mask = None
        self._log_chosen = None
        self._gram = None
        self.theta = None

    # subclasses: feature rows for all catalog items given one user
    def _item_feature_rows(self, q):
        raise NotImplementedError

    def _bind_user(self, q):
        if self.user_dim is None:
            self.user_dim = q.shape[0]
            self.t0 = exploration_length(
                self.config.exploration_c, self.user_dim,
                self.catalog.n_features, self.horizon,
            )
            self._on_user_dim_known()
        elif q.shape[0] != self.user_dim:
            raise ValueError(
                f"user feature dimension changed from {self.user_dim} "
                f"to {q.shape[0]}"
            )

    def _on_user_dim_known(self):
        pass

    def _select(self, user):
        q = user.features
        self._bind_user(q)
        if not self._model_ready and self._ingested >= self.t0:
            self._fit_model()
            self._model_ready = True
        if not self._model_ready:
            return self._random_assortment()
        return self._ucb_select(q)

    def _ucb_select(self, q):
        rows = self._item_feature_rows(q)
        radius = self._radius()
        z = rows @ self.theta + radius * self._gram.bonus_norms(rows)
        return self._solve(z)

    def _radius(self):
        raise NotImplementedError

    def _fit_model(self):
        raise NotImplementedError

    def _observe(self, user, assortment, chosen):
        if assortment.size == 0:
            return  # nothing offered, nothing learned
        self._batch.append((user.features, assortment.items, chosen))
        if len(self._batch) >= self.config.batch_size:
            batch, self._batch = self._batch, []
            for record in batch:
                self._ingest(record)
            self._after_flush()

    def _ingest(self, record):
        raise NotImplementedError

    def _after_flush(self):
        if not self._model_ready:
            return
        if self.config.refit_schedule == "every_step":
            self._refit()
        elif self._ingested >= 2 * self._last_refit:
            self._refit()

    def _logged_data(self):
        n = self._ingested
        return ReducedObservations(
            features=self._log_features[:n],
            mask=self._log_mask[:n],
            chosen_pos=self._log_chosen[:n],
        )

    def _refit(self):
        result = fit_mle(
            "reduced", self.theta, self._logged_data(), self.config.solver
        )
        self.theta = result.params
        self._last_refit = self._ingested

    def _allocate_logs(self, dim):
        width = min(self.config.capacity, self.catalog.n_items)
        self._log_features = np.zeros((self.horizon, width, dim))
        self._log_mask = np.zeros((self.horizon, width), dtype=bool)
        self._log_chosen = np.full(self.horizon, -1, dtype=np.intp)

    def _append_log(self, feature_rows, items, chosen):
        t = self._ingested
        k = len(items)
        self._log_features[t, :k] = feature_rows
        self._log_mask[t, :k] = True
        if chosen is not None:
            self._log_chosen[t] = items.index(chosen)
        self._ingested += 1


class ElsaUcbPolicy(_UcbBanditPolicy):
    """Explore, learn the low-rank subspace, then optimism in reduced space.

    During exploration, raw records accumulate. At T0 the bilinear MLE is
    fitted, factored gradient descent produces the rank-r estimate (r from
    config, or the GIC scan when rank is "auto"), and its singular rotation
    fixes the reduced feature map for the rest of the horizon. theta starts
    at the reduced vectorization of the rotated estimate, i.e. the singular
    values, and is refitted by maximum likelihood on the refit schedule.
    """

    kind = "elsa-ucb"

    def _setup(self):
        super()._setup()
        self._raw = []
        self.subspace = None
        self.rank_ = None
        self.gic_scores_ = None
        self._p_rot = None

    def _item_feature_rows(self, q):
        q_rot = self.subspace.v_hat.T @ q
        return reduce_feature_block(self._p_rot, q_rot, self.subspace.rank)

    def _radius(self):
        return elsa_confidence_radius(
            self._ingested, self.subspace.reduced_dim,
            self.config.capacity, self.config.alpha, self.config.beta,
        )

    def _ingest(self, record):
        q, items, chosen = record
        if self.subspace is None:
            self._raw.append(record)
            self._ingested += 1
            return
        q_rot = self.subspace.v_hat.T @ q
        rows = reduce_feature_block(
            self._p_rot[list(items)], q_rot, self.subspace.rank
        )
        self._append_log(rows, items, chosen)
        self._gram.update(rows)

    def _fit_model(self):
        cfg = self.config
        records = tuple(
            ChoiceObservation(
                user=UserContext(q),
                assortment=Assortment(items, cfg.capacity),
                chosen=chosen,
            )
            for q, items, chosen in self._raw
        )
        data = ObservationSet(self.catalog, records)
        if cfg.rank == "auto":
            rank, scores, result = gic_search(
                data, cfg.rank_grid, cfg.fgd, cfg.solver
            )
            self.gic_scores_ = scores
        else:
            d2, d1 = self.catalog.n_features, self.user_dim
            phi0 = fit_mle(
                "full", np.zeros((d2, d1)), data, cfg.solver
            ).params
            result = fgd_fit(data, cfg.rank, phi0, cfg.fgd)
            rank = cfg.rank
        self.rank_ = int(rank)
        self.subspace = extract_subspace(result.phi, self.rank_)
        self.theta = self.subspace.initial_theta()
        self._p_rot = self.catalog.features @ self.subspace.u_hat
        dim = self.subspace.reduced_dim
        self._allocate_logs(dim)
        self._gram = _GramState(dim, cfg.ridge)
        # Replay the exploration records through the now-fixed feature map.
        raw, self._raw = self._raw, []
        self._ingested = 0
        for record in raw:
            self._ingest(record)
        self._last_refit = self._ingested


class UcbMnlPolicy(_UcbBanditPolicy):
    """Optimism over a fixed full-space feature map (no rank structure)."""

    kind = "ucb-mnl"

    def __init__(self, config: PolicyConfig, mode: str = "stacked"):
        if mode not in ("stacked", "vectorized"):
            raise ValueError(f"unknown joint feature mode {mode!r}")
        super().__init__(config)
        self.mode = mode
        self.kind = f"ucb-mnl-{mode}"

    def _on_user_dim_known(self):
        dim = joint_feature_dim(self.mode, self.user_dim,
                                self.catalog.n_features)
        self._allocate_logs(dim)
        self._gram = _GramState(dim, self.config.ridge)
        self.theta = np.zeros(dim)

    def _item_feature_rows(self, q):
        return _joint_feature_block(self.mode, self.catalog.features, q)

    def _radius(self):
        return ucb_mnl_confidence_radius(
            self._ingested, self._log_features.shape[2], self.config.alpha
        )

    def _ingest(self, record):
        q, items, chosen = record
        rows = _joint_feature_block(
            self.mode, self.catalog.features[list(items)], q
        )
        self._append_log(rows, items, chosen)
        self._gram.update(rows)

    def _fit_model(self):
        self._refit()


def elsa_ucb_policy(config: PolicyConfig) -> ElsaUcbPolicy:
    """Subspace policy with the rank taken from config (int or "auto")."""
    return ElsaUcbPolicy(config)


def elsa_gic_policy(config: PolicyConfig) -> ElsaUcbPolicy:
    """Subspace policy with GIC rank selection forced on."""
    if config.rank != "auto":
        config = PolicyConfig(**{**_config_dict(config), "rank": "auto"})
    policy = ElsaUcbPolicy(config)
    policy.kind = "elsa-gic"
    return policy


def ucb_mnl_policy(config: PolicyConfig, mode: str = "stacked") -> UcbMnlPolicy:
    """Joint-feature baseline, mode "stacked" or "vectorized"."""
    return UcbMnlPolicy(config, mode)


def _config_dict(config: PolicyConfig) -> dict:
    return {
        name: getattr(config, name)
        for name in PolicyConfig.__dataclass_fields__
    }


POLICY_KINDS = (
    "elsa-ucb",
    "elsa-gic",
    "ucb-mnl-stacked",
    "ucb-mnl-vectorized",
    "uniform-random",
    "oracle",
)


def build_policy(kind: str, config: PolicyConfig,
                 phi_star: np.ndarray | None = None) -> AssortmentPolicy:
    """Instantiate a policy by its registry name.

    The oracle requires the true parameter matrix; everything else ignores
    phi_star.
    """
    if kind == "elsa-ucb":
        return elsa_ucb_policy(config)
    if kind == "elsa-gic":
        return elsa_gic_policy(config)
    if kind == "ucb-mnl-stacked":
        return ucb_mnl_policy(config, "stacked")
    if kind == "ucb-mnl-vectorized":
        return ucb_mnl_policy(config, "vectorized")
    if kind == "uniform-random":
        return UniformRandomPolicy(config)
    if kind == "oracle":
        if phi_star is None:
            raise ValueError("oracle policy requires the true phi matrix")
        return OraclePolicy(config, phi_star)
    raise ValueError(f"unknown policy kind {kind!r}, options: {POLICY_KINDS}")
