"""Estimator-style wrappers over the fitting routines.

These follow the sklearn conventions (constructor stores hyperparameters
verbatim, `fit` learns trailing-underscore attributes, `get_params` and
`clone` work) so the offline estimation layer composes with that
ecosystem. X is an ObservationSet rather than a plain matrix; the choice
data is relational, and the set type carries the catalog with it.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .likelihood import ObservationSet, SolverConfig, fit_mle, nll_full
from .subspace import (
    FgdConfig,
    extract_subspace,
    fgd_fit,
    gic_search,
    reduce_feature,
    reduce_observations,
)


def _require_observations(X):
    if not isinstance(X, ObservationSet):
        raise ValueError("X must be an ObservationSet")
    return X


class BilinearMnlMle(BaseEstimator):
    """Unconstrained maximum-likelihood estimate of the bilinear parameter.

    Parameters mirror SolverConfig. After `fit`, `phi_` holds the (d2, d1)
    estimate and `n_iter_`, `converged_`, `nll_` the solver diagnostics.
    """

    def __init__(self, solver: SolverConfig | None = None):
        self.solver = solver

    def fit(self, X, y=None):
        data = _require_observations(X)
        init = np.zeros((data.catalog.n_features, data.user_dim))
        result = fit_mle("full", init, data, self.solver)
        self.phi_ = result.params
        self.nll_ = result.objective
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        return self

    def score(self, X, y=None):
        """Mean log-likelihood (higher is better), sklearn convention."""
        check_is_fitted(self, "phi_")
        return -nll_full(self.phi_, _require_observations(X))


class LowRankMnl(BaseEstimator, TransformerMixin):
    """Rank-constrained bilinear MNL fit with subspace feature reduction.

    rank is a positive integer or "auto", in which case the GIC scan over
    `rank_grid` (default 1..min(d1, d2, 10)) picks it. `transform` maps an
    ObservationSet to its subspace-reduced features.
    """

    def __init__(self, rank="auto", rank_grid=None,
                 fgd: FgdConfig | None = None,
                 solver: SolverConfig | None = None):
        self.rank = rank
        self.rank_grid = rank_grid
        self.fgd = fgd
        self.solver = solver

    def fit(self, X, y=None):
        data = _require_observations(X)
        if self.rank == "auto":
            rank, scores, result = gic_search(
                data, self.rank_grid, self.fgd, self.solver
            )
            self.gic_scores_ = scores
        else:
            d2, d1 = data.catalog.n_features, data.user_dim
            phi0 = fit_mle("full", np.zeros((d2, d1)), data, self.solver).params
            result = fgd_fit(data, self.rank, phi0, self.fgd)
            rank = self.rank
            self.gic_scores_ = None
        self.rank_ = int(rank)
        self.phi_ = result.phi
        self.nll_ = nll_full(result.phi, data)
        self.n_iter_ = result.n_iter
        self.converged_ = result.converged
        self.subspace_ = extract_subspace(result.phi, self.rank_)
        return self

    def transform(self, X):
        """Reduced per-(record, offered item) features of an ObservationSet."""
        check_is_fitted(self, "subspace_")
        return reduce_observations(_require_observations(X), self.subspace_)

    def reduce_pair(self, p, q):
        """Reduced feature vector for one raw (item, user) pair."""
        check_is_fitted(self, "subspace_")
        return reduce_feature(p, q, self.subspace_)

    def score(self, X, y=None):
        check_is_fitted(self, "phi_")
        return -nll_full(self.phi_, _require_observations(X))
