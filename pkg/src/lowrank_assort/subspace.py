"""Low-rank estimation of the bilinear parameter and subspace reduction.

The rank-r estimate is obtained by factored gradient descent on
L_n(U V') + (1/8) ||U'U - V'V||_F^2, initialized from the top-r SVD
directions of a warm-start matrix (typically the unconstrained MLE).
Its singular subspaces then induce a rotation under which only the first
r coordinates on either side matter; dropping the bottom-right block of
the rotated parameter gives the reduced vectorization `rtv` of dimension
(d1 + d2) r - r^2 that the online policies learn in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .likelihood import (
    DivergenceError,
    ObservationSet,
    ReducedObservations,
    SolverConfig,
    fit_mle,
    grad_nll_full,
    nll_full,
)
from .validation import check_matrix, check_rank, check_vector

BALANCE_WEIGHT = 0.125  # fixed coefficient of ||U'U - V'V||_F^2


@dataclass(frozen=True)
class FgdConfig:
    """Settings for the factored gradient descent solver."""

    step_size: float = 0.01
    max_iterations: int = 2000
    tolerance: float = 1e-8
    line_search: bool = True
    regularization_weight: float = BALANCE_WEIGHT

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.regularization_weight != BALANCE_WEIGHT:
            raise ValueError(
                "regularization_weight is fixed at 1/8, "
                f"got {self.regularization_weight}"
            )


@dataclass(frozen=True)
class FgdResult:
    """Factored estimate Phi = U V' plus solver diagnostics."""

    phi: np.ndarray
    factor_u: np.ndarray
    factor_v: np.ndarray
    objective: float
    n_iter: int
    converged: bool


@dataclass(frozen=True)
class SubspaceEstimate:
    """Full rotations (square U_hat, V_hat), singular values, and the rank."""

    u_hat: np.ndarray
    v_hat: np.ndarray
    singular_values: np.ndarray
    rank: int

    def __post_init__(self):
        u = check_matrix(self.u_hat, "u_hat")
        v = check_matrix(self.v_hat, "v_hat")
        if u.shape[0] != u.shape[1]:
            raise ValueError(f"u_hat must be square, got {u.shape}")
        if v.shape[0] != v.shape[1]:
            raise ValueError(f"v_hat must be square, got {v.shape}")
        s = check_vector(
            self.singular_values, "singular_values",
            size=min(u.shape[0], v.shape[0]),
        )
        check_rank(self.rank, v.shape[0], u.shape[0])
        object.__setattr__(self, "u_hat", u)
        object.__setattr__(self, "v_hat", v)
        object.__setattr__(self, "singular_values", s)

    @property
    def item_dim(self) -> int:
        return self.u_hat.shape[0]

    @property
    def user_dim(self) -> int:
        return self.v_hat.shape[0]

    @property
    def reduced_dim(self) -> int:
        return reduced_dim(self.user_dim, self.item_dim, self.rank)

    def initial_theta(self) -> np.ndarray:
        """rtv of the rotated estimate, i.e. of diag(singular values)."""
        r = self.rank
        theta = np.zeros(self.reduced_dim)
        theta[: r * r][:: r + 1] = self.singular_values[:r]
        return theta


def reduced_dim(d1: int, d2: int, rank: int) -> int:
    return (d1 + d2) * rank - rank * rank


def _balanced_init(phi0, rank):
    u0, s0, v0t = np.linalg.svd(phi0, full_matrices=False)
    scale = np.sqrt(s0[:rank])
    return u0[:, :rank] * scale, v0t[:rank].T * scale


def _fgd_objective(u, v, data):
    gap = u.T @ u - v.T @ v
    return nll_full(u @ v.T, data) + BALANCE_WEIGHT * float(np.sum(gap * gap))


def _half_step(matrix, grad, other_eval, step, line_search):
    """One factor update, backtracking on the joint objective if enabled."""
    if not line_search:
        return matrix - step * grad, step, other_eval(matrix - step * grad)
    gsq = float(np.sum(grad * grad))
    f0 = other_eval(matrix)
    if gsq == 0.0:
        return matrix, step, f0
    trial = min(step * 2.0, 1e6)
    for _ in range(60):
        cand = matrix - trial * grad
        f_new = other_eval(cand)
        if np.isfinite(f_new) and f_new <= f0 - 1e-4 * trial * gsq:
            return cand, trial, f_new
        trial *= 0.5
    return matrix, step, f0


def fgd_fit(data: ObservationSet, rank: int, phi0: np.ndarray,
            config: FgdConfig | None = None, *, factors0=None) -> FgdResult:
    """Rank-constrained fit by factored gradient descent.

    phi0 seeds the factors through its top-`rank` SVD directions; pass the
    unconstrained MLE for the intended warm start. `factors0` overrides the
    initialization with an explicit (U, V) pair (mainly for testing the
    balance regularizer from unbalanced starts).
    """
    config = config or FgdConfig()
    d2, d1 = data.catalog.n_features, data.user_dim
    rank = check_rank(rank, d1, d2)
    if factors0 is not None:
        u = check_matrix(factors0[0], "factors0[0]", shape=(d2, rank))
        v = check_matrix(factors0[1], "factors0[1]", shape=(d1, rank))
        u, v = u.copy(), v.copy()
    else:
        phi0 = check_matrix(phi0, "phi0", shape=(d2, d1))
        u, v = _balanced_init(phi0, rank)
    f = _fgd_objective(u, v, data)
    if not np.isfinite(f):
        raise DivergenceError("objective is non-finite at iteration 0")
    step_u = step_v = config.step_size
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        gap = u.T @ u - v.T @ v
        grad_full = grad_nll_full(u @ v.T, data)
        grad_u = grad_full @ v + 0.5 * (u @ gap)
        u, step_u, f_mid = _half_step(
            u, grad_u, lambda m: _fgd_objective(m, v, data),
            step_u, config.line_search,
        )
        gap = u.T @ u - v.T @ v
        grad_full = grad_nll_full(u @ v.T, data)
        grad_v = grad_full.T @ u - 0.5 * (v @ gap)
        v, step_v, f_new = _half_step(
            v, grad_v, lambda m: _fgd_objective(u, m, data),
            step_v, config.line_search,
        )
        if not np.isfinite(f_new):
            raise DivergenceError(f"objective is non-finite at iteration {it}")
        drop = f - f_new
        f = f_new
        if abs(drop) <= config.tolerance * max(1.0, abs(f)):
            converged = True
            break
    return FgdResult(
        phi=u @ v.T, factor_u=u, factor_v=v,
        objective=float(f), n_iter=it, converged=converged,
    )


def extract_subspace(phi: np.ndarray, rank: int) -> SubspaceEstimate:
    """Full SVD of the estimate with a deterministic sign convention.

    Every left singular vector has its largest-magnitude entry made
    positive, and the paired right singular vector is flipped to match, so
    repeated calls on the same matrix agree bitwise. Unpaired columns and
    rows (when the matrix is not square) get the same rule applied to
    themselves.
    """
    phi = check_matrix(phi, "phi")
    d2, d1 = phi.shape
    rank = check_rank(rank, d1, d2)
    u, s, vt = np.linalg.svd(phi, full_matrices=True)
    m = s.shape[0]
    for j in range(d2):
        pivot = np.argmax(np.abs(u[:, j]))
        if u[pivot, j] < 0:
            u[:, j] = -u[:, j]
            if j < m:
                vt[j] = -vt[j]
    for j in range(m, d1):
        pivot = np.argmax(np.abs(vt[j]))
        if vt[j, pivot] < 0:
            vt[j] = -vt[j]
    return SubspaceEstimate(
        u_hat=u, v_hat=vt.T, singular_values=s, rank=rank
    )


def rtv(theta: np.ndarray, rank: int) -> np.ndarray:
    """Reduced column-major vectorization of a (d2, d1) matrix.

    Keeps the top-left (rank x rank), top-right, and bottom-left blocks of
    the matrix, each flattened column-major, and drops the bottom-right
    block; the result has length (d1 + d2) rank - rank^2. The map is linear
    and preserves inner products up to the dropped block:
    <X, Theta> = <rtv(X), rtv(Theta)> + <X22, Theta22>.
    """
    theta = check_matrix(theta, "theta")
    d2, d1 = theta.shape
    rank = check_rank(rank, d1, d2)
    return np.concatenate([
        theta[:rank, :rank].ravel(order="F"),
        theta[:rank, rank:].ravel(order="F"),
        theta[rank:, :rank].ravel(order="F"),
    ])


def reduce_feature(p: np.ndarray, q: np.ndarray,
                   subspace: SubspaceEstimate) -> np.ndarray:
    """Reduced feature rtv((U_hat' p)(V_hat' q)', rank) for one pair."""
    p = check_vector(p, "item feature p", size=subspace.item_dim)
    q = check_vector(q, "user feature q", size=subspace.user_dim)
    outer = np.outer(subspace.u_hat.T @ p, subspace.v_hat.T @ q)
    return rtv(outer, subspace.rank)


def reduce_feature_block(p_rot: np.ndarray, q_rot: np.ndarray,
                         rank: int) -> np.ndarray:
    """Reduced features for many already-rotated items and one rotated user.

    p_rot is (m, d2) of rows U_hat' p_i, q_rot is the vector V_hat' q.
    Returns (m, (d1 + d2) rank - rank^2), rows matching reduce_feature.
    """
    p1, p2 = p_rot[:, :rank], p_rot[:, rank:]
    q1, q2 = q_rot[:rank], q_rot[rank:]
    m = p_rot.shape[0]
    blocks = [
        (p1[:, None, :] * q1[None, :, None]).reshape(m, -1),
        (p1[:, None, :] * q2[None, :, None]).reshape(m, -1),
        (p2[:, None, :] * q1[None, :, None]).reshape(m, -1),
    ]
    return np.concatenate(blocks, axis=1)


def reduce_observations(data: ObservationSet,
                        subspace: SubspaceEstimate) -> ReducedObservations:
    """Precompute reduced features for every (record, offered item) pair."""
    if data.catalog.n_features != subspace.item_dim:
        raise ValueError(
            f"catalog item dimension {data.catalog.n_features} does not "
            f"match subspace item dimension {subspace.item_dim}"
        )
    if data.user_dim != subspace.user_dim:
        raise ValueError(
            f"user dimension {data.user_dim} does not match subspace "
            f"user dimension {subspace.user_dim}"
        )
    arrs = data.arrays
    rank = subspace.rank
    p_rot = (data.catalog.features @ subspace.u_hat)[arrs.item_idx]
    q_rot = arrs.contexts @ subspace.v_hat
    p1, p2 = p_rot[:, :, :rank], p_rot[:, :, rank:]
    q1, q2 = q_rot[:, :rank], q_rot[:, rank:]
    n, width = arrs.mask.shape
    blocks = [
        (p1[:, :, None, :] * q1[:, None, :, None]).reshape(n, width, -1),
        (p1[:, :, None, :] * q2[:, None, :, None]).reshape(n, width, -1),
        (p2[:, :, None, :] * q1[:, None, :, None]).reshape(n, width, -1),
    ]
    return ReducedObservations(
        features=np.concatenate(blocks, axis=2),
        mask=arrs.mask,
        chosen_pos=arrs.chosen_pos,
    )


def gic_penalty(n: int, d1: int, d2: int, rank: int) -> float:
    """Complexity penalty (log n / n) * (d1 + d2 - rank) * rank."""
    return (np.log(n) / n) * (d1 + d2 - rank) * rank


def gic_search(data: ObservationSet, rank_grid=None,
               config: FgdConfig | None = None,
               solver: SolverConfig | None = None):
    """GIC scan over candidate ranks.

    Returns (best rank, (rank, score) pairs, best fit). One unconstrained
    MLE is fitted and shared as the warm start of every candidate. Ties in
    the score go to the smaller rank (argmin over the ascending grid).
    """
    d2, d1 = data.catalog.n_features, data.user_dim
    if rank_grid is None:
        rank_grid = range(1, min(d1, d2, 10) + 1)
    grid = sorted({check_rank(r, d1, d2, "rank_grid entry") for r in rank_grid})
    if not grid:
        raise ValueError("rank_grid must contain at least one rank")
    phi0 = fit_mle("full", np.zeros((d2, d1)), data, solver).params
    scores = np.empty(len(grid))
    fits = []
    for pos, r in enumerate(grid):
        fit = fgd_fit(data, r, phi0, config)
        scores[pos] = nll_full(fit.phi, data) + gic_penalty(data.n, d1, d2, r)
        fits.append(fit)
    best = int(np.argmin(scores))
    return grid[best], tuple(zip(grid, scores.tolist())), fits[best]


def select_rank_gic(data: ObservationSet, rank_grid=None,
                    config: FgdConfig | None = None,
                    solver: SolverConfig | None = None):
    """Pick the rank minimizing NLL + (log n / n) (d1 + d2 - r) r."""
    best_rank, scores, _ = gic_search(data, rank_grid, config, solver)
    return best_rank, scores
