"""Exact capacity-constrained assortment optimization under MNL choice.

static_mnl solves max_S E[revenue(S)] over |S| <= K in O(N^2 log N): each
item traces the line f_i(lam) = v_i (r_i - lam) in the preference weight
v_i = exp(utility); between consecutive intersection points of those lines
(and of the axis crossings f_j = 0) the candidate "top-K items by f_i(lam),
excluding items with r_j < lam" is constant, and some interval's candidate
is optimal. All N(N+1)/2 intersection points are enumerated, every
interval's candidate (plus the empty set) is evaluated exactly, and ties
break toward the lexicographically smallest sorted index tuple.

brute_force_best enumerates every subset up to the capacity and is the
independent reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .validation import check_positive_int, check_vector

BRUTE_FORCE_LIMIT = 10**6


@dataclass(frozen=True)
class OptimizationInstance:
    """One assortment problem: item utilities, revenues, and capacity."""

    utilities: np.ndarray
    revenues: np.ndarray
    capacity: int

    def __post_init__(self):
        u = check_vector(self.utilities, "utilities")
        r = check_vector(self.revenues, "revenues", size=u.shape[0])
        if u.shape[0] < 1:
            raise ValueError("instance must contain at least one item")
        if np.any(r < 0):
            raise ValueError("revenues must be non-negative")
        check_positive_int(self.capacity, "capacity")
        if self.capacity > u.shape[0]:
            raise ValueError(
                f"capacity {self.capacity} exceeds the number of items "
                f"{u.shape[0]}"
            )
        object.__setattr__(self, "utilities", u)
        object.__setattr__(self, "revenues", r)

    @property
    def n_items(self) -> int:
        return self.utilities.shape[0]


@dataclass(frozen=True)
class AssortmentSolution:
    """Optimal item set (sorted ascending) and its expected revenue."""

    items: tuple
    expected_revenue: float


def _weights(utilities):
    # Shift keeps exp bounded; every downstream quantity is invariant to it.
    shift = max(0.0, float(np.max(utilities)))
    return np.exp(utilities - shift), np.exp(-shift)


def _pick_best(candidates, weights, base, revenues):
    """Evaluate candidate rows exactly and break ties lexicographically."""
    gains = candidates @ (revenues * weights)
    denoms = base + candidates @ weights
    # A zero denominator means every weight in the set underflowed next to
    # the max-utility item; such a set is worthless at this precision.
    values = np.divide(
        gains, denoms, out=np.zeros_like(gains), where=denoms > 0.0
    )
    best_value = float(np.max(values))
    best_items = None
    for row in np.flatnonzero(values == best_value):
        items = tuple(np.flatnonzero(candidates[row]).tolist())
        if best_items is None or items < best_items:
            best_items = items
    return AssortmentSolution(items=best_items, expected_revenue=best_value)


def static_mnl(instance: OptimizationInstance) -> AssortmentSolution:
    """Optimal assortment via the intersection-point sweep."""
    u, r = instance.utilities, instance.revenues
    n = instance.n_items
    cap = min(instance.capacity, n)
    v, base = _weights(u)

    lines_r = r  # f_i(lam) = v_i * (r_i - lam)
    ii, jj = np.triu_indices(n, k=1)
    dv = v[ii] - v[jj]
    keep = dv != 0  # equal-weight lines are parallel, no crossing
    crossings = (v[ii[keep]] * r[ii[keep]] - v[jj[keep]] * r[jj[keep]]) / dv[keep]
    axis_hits = r  # f_j crosses zero at lam = r_j
    points = np.sort(np.concatenate([crossings, axis_hits]))

    if points.size:
        mids = np.empty(points.size + 1)
        mids[0] = points[0] - 1.0
        mids[1:-1] = 0.5 * (points[:-1] + points[1:])
        mids[-1] = points[-1] + 1.0
    else:
        mids = np.array([0.0])

    scores = v[None, :] * (lines_r[None, :] - mids[:, None])
    order = np.argsort(-scores, axis=1, kind="stable")
    top = order[:, :cap]
    rows = np.arange(mids.size)[:, None]
    admitted = scores[rows, top] > 0.0

    candidates = np.zeros((mids.size + 1, n), dtype=bool)
    np.put_along_axis(candidates[:-1], top, admitted, axis=1)
    # Last row stays all False: offering nothing is always a candidate.
    return _pick_best(candidates, v, base, r)


def brute_force_best(instance: OptimizationInstance) -> AssortmentSolution:
    """Exhaustive reference: every subset of size <= capacity, plus empty."""
    n = instance.n_items
    cap = min(instance.capacity, n)
    total = sum(comb(n, k) for k in range(cap + 1))
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"brute force would evaluate {total} subsets, "
            f"limit is {BRUTE_FORCE_LIMIT}; use static_mnl instead"
        )
    v, base = _weights(instance.utilities)
    r = instance.revenues
    best_items = ()
    best_value = 0.0
    for size in range(1, cap + 1):
        for combo in combinations(range(n), size):
            idx = list(combo)
            w = v[idx]
            denom = base + w.sum()
            value = float((r[idx] @ w) / denom) if denom > 0 else 0.0
            if value > best_value or (value == best_value and combo < best_items):
                best_items = combo
                best_value = value
    return AssortmentSolution(items=best_items, expected_revenue=best_value)
