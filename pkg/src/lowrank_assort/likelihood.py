"""Negative log-likelihood, gradients, and MLE fitting for the MNL model.

Two parameterizations share one masked-array kernel: the full bilinear
matrix Phi (utilities p_i' Phi q_t) and a generic linear-in-features form
(utilities x_it' theta) used both for subspace-reduced features and for the
plain joint-feature baselines. Observations are stored padded to the widest
assortment with a boolean mask, so every evaluation is a handful of
vectorized numpy ops regardless of how assortment sizes vary.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .choice import ChoiceObservation, ItemCatalog
from .validation import check_matrix, check_positive_int, check_vector


class DivergenceError(RuntimeError):
    """Raised when an iterative fit produces a non-finite objective."""


@dataclass(frozen=True)
class SolverConfig:
    """Settings for the deterministic gradient-descent MLE solver."""

    step_size: float = 1.0
    max_iterations: int = 5000
    tolerance: float = 1e-8
    line_search: bool = True

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        check_positive_int(self.max_iterations, "max_iterations")
        if self.tolerance <= 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")


@dataclass(frozen=True)
class FitResult:
    """Estimate plus solver diagnostics."""

    params: np.ndarray
    objective: float
    n_iter: int
    grad_norm: float
    converged: bool


@dataclass(frozen=True)
class ObservationSet:
    """An immutable batch of choice observations against one catalog."""

    catalog: ItemCatalog
    records: tuple

    def __post_init__(self):
        records = tuple(self.records)
        if not records:
            raise ValueError("observation set must contain at least one record")
        d1 = records[0].user.n_features
        n_items = self.catalog.n_items
        for idx, rec in enumerate(records):
            if not isinstance(rec, ChoiceObservation):
                raise ValueError(f"record {idx} is not a ChoiceObservation")
            if rec.user.n_features != d1:
                raise ValueError(
                    f"record {idx} has user dimension {rec.user.n_features}, "
                    f"expected {d1}"
                )
            if rec.assortment.size == 0:
                raise ValueError(f"record {idx} offers an empty assortment")
            if max(rec.assortment.items) >= n_items:
                raise ValueError(
                    f"record {idx} references item "
                    f"{max(rec.assortment.items)}, catalog has {n_items}"
                )
        object.__setattr__(self, "records", records)

    @property
    def n(self) -> int:
        return len(self.records)

    @property
    def user_dim(self) -> int:
        return self.records[0].user.n_features

    @cached_property
    def arrays(self) -> "PaddedChoices":
        width = max(rec.assortment.size for rec in self.records)
        n = self.n
        item_idx = np.zeros((n, width), dtype=np.intp)
        mask = np.zeros((n, width), dtype=bool)
        chosen_pos = np.full(n, -1, dtype=np.intp)
        contexts = np.empty((n, self.user_dim))
        for t, rec in enumerate(self.records):
            items = rec.assortment.items
            k = len(items)
            item_idx[t, :k] = items
            mask[t, :k] = True
            contexts[t] = rec.user.features
            if rec.chosen is not None:
                chosen_pos[t] = items.index(rec.chosen)
        return PaddedChoices(item_idx, mask, chosen_pos, contexts)

    @cached_property
    def item_rows(self) -> np.ndarray:
        """Item features gathered per (record, slot), shape (n, width, d2)."""
        return self.catalog.features[self.arrays.item_idx]


@dataclass(frozen=True)
class PaddedChoices:
    """Padded index arrays backing the vectorized likelihood kernels."""

    item_idx: np.ndarray
    mask: np.ndarray
    chosen_pos: np.ndarray
    contexts: np.ndarray


@dataclass(frozen=True)
class ReducedObservations:
    """Choice records with per-(record, item) feature vectors precomputed.

    features has shape (n, width, dim); masked slots are ignored.
    chosen_pos holds the slot of the purchase, or -1 for no purchase.
    """

    features: np.ndarray
    mask: np.ndarray
    chosen_pos: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=float)
        mask = np.asarray(self.mask, dtype=bool)
        chosen = np.asarray(self.chosen_pos, dtype=np.intp)
        if feats.ndim != 3:
            raise ValueError(
                f"features must have shape (n, width, dim), got {feats.shape}"
            )
        if mask.shape != feats.shape[:2]:
            raise ValueError(
                f"mask shape {mask.shape} does not match features "
                f"{feats.shape[:2]}"
            )
        if chosen.shape != (feats.shape[0],):
            raise ValueError(
                f"chosen_pos must have shape ({feats.shape[0]},), "
                f"got {chosen.shape}"
            )
        if feats.shape[0] == 0 or not mask.any(axis=1).all():
            raise ValueError("every record must offer at least one item")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "chosen_pos", chosen)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[2]


def _loglik_parts(utilities, mask, chosen_pos, want_probs):
    """Shared kernel: per-record log-likelihood terms and choice probabilities.

    utilities is (n, width) with arbitrary values at masked slots. Returns
    (loglik_sum, probs) where probs is None unless requested.
    """
    u = np.where(mask, utilities, -np.inf)
    shift = np.maximum(u.max(axis=1), 0.0)
    w = np.exp(u - shift[:, None])
    base = np.exp(-shift)
    denom = base + w.sum(axis=1)
    lse = shift + np.log(denom)
    rows = np.arange(u.shape[0])
    picked = np.where(chosen_pos >= 0,
                      utilities[rows, np.clip(chosen_pos, 0, None)], 0.0)
    loglik = float(np.sum(picked - lse))
    probs = w / denom[:, None] if want_probs else None
    return loglik, probs


def _coefficients(utilities, mask, chosen_pos):
    """y_it - p_it for every offered slot, zero at masked slots."""
    _, probs = _loglik_parts(utilities, mask, chosen_pos, want_probs=True)
    coeff = -probs
    rows = np.flatnonzero(chosen_pos >= 0)
    coeff[rows, chosen_pos[rows]] += 1.0
    return coeff


def _full_utilities(phi, data: ObservationSet):
    proj = phi @ data.arrays.contexts.T
    return np.einsum("tkj,jt->tk", data.item_rows, proj)


def nll_full(phi: np.ndarray, data: ObservationSet) -> float:
    """Average negative log-likelihood of the bilinear model at Phi."""
    phi = check_matrix(
        phi, "phi", shape=(data.catalog.n_features, data.user_dim)
    )
    arrs = data.arrays
    loglik, _ = _loglik_parts(
        _full_utilities(phi, data), arrs.mask, arrs.chosen_pos, False
    )
    return -loglik / data.n


def grad_nll_full(phi: np.ndarray, data: ObservationSet) -> np.ndarray:
    """Gradient of nll_full with respect to Phi, shape (d2, d1)."""
    phi = check_matrix(
        phi, "phi", shape=(data.catalog.n_features, data.user_dim)
    )
    arrs = data.arrays
    coeff = _coefficients(_full_utilities(phi, data), arrs.mask, arrs.chosen_pos)
    weighted_items = np.einsum("tk,tkj->tj", coeff, data.item_rows)
    return -(weighted_items.T @ arrs.contexts) / data.n


def nll_reduced(theta: np.ndarray, data: ReducedObservations) -> float:
    """Average negative log-likelihood of the linear-in-features model."""
    theta = check_vector(theta, "theta", size=data.dim)
    loglik, _ = _loglik_parts(
        data.features @ theta, data.mask, data.chosen_pos, False
    )
    return -loglik / data.n


def grad_nll_reduced(theta: np.ndarray, data: ReducedObservations) -> np.ndarray:
    """Gradient of nll_reduced with respect to theta."""
    theta = check_vector(theta, "theta", size=data.dim)
    coeff = _coefficients(data.features @ theta, data.mask, data.chosen_pos)
    return -np.einsum("tk,tkf->f", coeff, data.features) / data.n


_ARMIJO = 1e-4


def minimize_gd(value_fn, grad_fn, x0, config: SolverConfig) -> FitResult:
    """Gradient descent with backtracking line search, fully deterministic.

    Steps halve until the Armijo condition holds and the accepted step is
    reused (doubled) as the next trial, so well-scaled problems take few
    backtracks. Stops on relative objective change below `tolerance`. With
    line_search off the raw step_size is applied as-is.
    """
    x = np.array(x0, dtype=float)
    f = value_fn(x)
    if not np.isfinite(f):
        raise DivergenceError("objective is non-finite at iteration 0")
    step = config.step_size
    converged = False
    grad = grad_fn(x)
    it = 0
    for it in range(1, config.max_iterations + 1):
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(f"gradient is non-finite at iteration {it}")
        gsq = float(np.sum(grad * grad))
        if gsq == 0.0:
            converged = True
            break
        if config.line_search:
            trial = min(step * 2.0, 1e6)
            f_new = np.inf
            x_new = x
            for _ in range(60):
                x_new = x - trial * grad
                f_new = value_fn(x_new)
                if np.isfinite(f_new) and f_new <= f - _ARMIJO * trial * gsq:
                    break
                trial *= 0.5
            else:
                # No acceptable step at any scale: treat as converged in place.
                converged = True
                break
            step = trial
        else:
            x_new = x - step * grad
            f_new = value_fn(x_new)
        drop = f - f_new
        x, f = x_new, f_new
        if not np.isfinite(f):
            raise DivergenceError(f"objective is non-finite at iteration {it}")
        grad = grad_fn(x)
        if drop <= config.tolerance * max(1.0, abs(f)):
            converged = True
            break
    grad_norm = float(np.max(np.abs(grad))) if np.all(np.isfinite(grad)) else np.inf
    return FitResult(
        params=x, objective=float(f), n_iter=it,
        grad_norm=grad_norm, converged=converged,
    )


def fit_mle(objective: str, init, data, config: SolverConfig | None = None) -> FitResult:
    """Maximum-likelihood fit of either parameterization.

    objective is "full" (data: ObservationSet, init: (d2, d1) matrix) or
    "reduced" (data: ReducedObservations, init: parameter vector). The
    negative log-likelihood is convex in either case, so the solver's
    starting point only affects iteration count.
    """
    config = config or SolverConfig()
    if objective == "full":
        if not isinstance(data, ObservationSet):
            raise ValueError("full objective requires an ObservationSet")
        init = check_matrix(
            init, "init", shape=(data.catalog.n_features, data.user_dim)
        )
        return minimize_gd(
            lambda x: nll_full(x, data),
            lambda x: grad_nll_full(x, data),
            init, config,
        )
    if objective == "reduced":
        if not isinstance(data, ReducedObservations):
            raise ValueError("reduced objective requires ReducedObservations")
        init = check_vector(init, "init", size=data.dim)
        return minimize_gd(
            lambda x: nll_reduced(x, data),
            lambda x: grad_nll_reduced(x, data),
            init, config,
        )
    raise ValueError(f"unknown objective {objective!r}, use 'full' or 'reduced'")
