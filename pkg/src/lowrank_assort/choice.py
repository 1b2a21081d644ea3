"""Multinomial-logit choice model with bilinear item-user utilities.

An item i shown to user t yields utility v_it = p_i' Phi q_t, where p_i is
the item feature vector, q_t the user feature vector, and Phi a (possibly
low-rank) parameter matrix. Offered an assortment S, the user picks item i
with probability exp(v_it) / (1 + sum_{j in S} exp(v_jt)) and walks away
(no purchase) with the residual probability. Index 0 of every probability
vector is the no-purchase option.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_matrix, check_vector


@dataclass(frozen=True)
class ItemCatalog:
    """Fixed item universe: feature matrix (N, d2) and revenues (N,)."""

    features: np.ndarray
    revenues: np.ndarray

    def __post_init__(self):
        feats = check_matrix(self.features, "item features")
        revs = check_vector(self.revenues, "revenues", size=feats.shape[0])
        if feats.shape[0] < 1:
            raise ValueError("item features must contain at least one item")
        if np.any(revs < 0):
            raise ValueError("revenues must be non-negative")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "revenues", revs)

    @property
    def n_items(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class UserContext:
    """One user's observed context vector (d1,)."""

    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "features", check_vector(self.features, "user features")
        )

    @property
    def n_features(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Assortment:
    """An offered set of catalog indices, at most `capacity` of them.

    Items are stored sorted ascending and must be distinct. The empty
    assortment is legal (offer nothing, the user never purchases).
    """

    items: tuple
    capacity: int

    def __post_init__(self):
        items = tuple(sorted(int(i) for i in self.items))
        if len(set(items)) != len(items):
            raise ValueError(f"assortment items must be distinct, got {items}")
        if any(i < 0 for i in items):
            raise ValueError(f"assortment items must be non-negative, got {items}")
        if self.capacity < 1:
            raise ValueError(f"assortment capacity must be >= 1, got {self.capacity}")
        if len(items) > self.capacity:
            raise ValueError(
                f"assortment has {len(items)} items, exceeds capacity {self.capacity}"
            )
        object.__setattr__(self, "items", items)

    @property
    def size(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class ChoiceObservation:
    """One interaction: context, offered assortment, and the outcome.

    `chosen` is a catalog index from the assortment, or None for no purchase.
    """

    user: UserContext
    assortment: Assortment
    chosen: int | None = None

    def __post_init__(self):
        if self.chosen is not None:
            chosen = int(self.chosen)
            if chosen not in self.assortment.items:
                raise ValueError(
                    f"chosen item {chosen} is not in the offered assortment "
                    f"{self.assortment.items}"
                )
            object.__setattr__(self, "chosen", chosen)


def bilinear_utility(phi: np.ndarray, p: np.ndarray, q: np.ndarray) -> float:
    """Utility p' Phi q for one item-user pair.

    Phi has shape (d2, d1) with d2 the item feature dimension and d1 the
    user feature dimension.
    """
    phi = check_matrix(phi, "phi")
    p = check_vector(p, "item feature p", size=phi.shape[0])
    q = check_vector(q, "user feature q", size=phi.shape[1])
    return float(p @ phi @ q)


def utility_matrix(phi: np.ndarray, item_features: np.ndarray,
                   q: np.ndarray) -> np.ndarray:
    """Utilities of every catalog item for one user, vectorized."""
    phi = check_matrix(phi, "phi")
    item_features = check_matrix(
        item_features, "item features", shape=(None, phi.shape[0])
    )
    q = check_vector(q, "user feature q", size=phi.shape[1])
    return item_features @ (phi @ q)


def choice_probabilities(utilities: np.ndarray) -> np.ndarray:
    """MNL choice probabilities for an offered set.

    Takes the utilities of the offered items (length m) and returns a vector
    of length m + 1 whose entry 0 is the no-purchase probability and entry
    k >= 1 corresponds to the k-th offered item. Exponentials are stabilized
    by shifting with max(0, max utility), so large utilities cannot overflow.
    """
    u = np.asarray(utilities, dtype=float)
    if u.ndim != 1:
        raise ValueError(f"utilities must be 1-dimensional, got shape {u.shape}")
    if u.size == 0:
        return np.array([1.0])
    if not np.all(np.isfinite(u)):
        raise ValueError("utilities contain non-finite entries")
    shift = max(0.0, float(np.max(u)))
    weights = np.exp(u - shift)
    base = np.exp(-shift)
    total = base + weights.sum()
    out = np.empty(u.size + 1)
    out[0] = base / total
    out[1:] = weights / total
    return out


def choice_from_uniform(probabilities: np.ndarray, u: float) -> int:
    """Map one uniform draw through the inverse CDF of a choice vector."""
    p = check_vector(probabilities, "probabilities")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-8:
        raise ValueError("probabilities must be non-negative and sum to 1")
    if not 0.0 <= u < 1.0:
        raise ValueError(f"uniform draw must lie in [0, 1), got {u}")
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    return min(idx, p.size - 1)


def sample_choice(probabilities: np.ndarray, rng: np.random.Generator) -> int:
    """Draw a choice index (0 = no purchase) using one uniform from rng."""
    return choice_from_uniform(probabilities, rng.uniform())


def expected_revenue(utilities: np.ndarray, revenues: np.ndarray) -> float:
    """Expected revenue of an offered set: sum_i r_i P(choose i)."""
    u = np.asarray(utilities, dtype=float)
    r = np.asarray(revenues, dtype=float)
    if u.shape != r.shape:
        raise ValueError(
            f"utilities (shape {u.shape}) and revenues (shape {r.shape}) "
            "must align one revenue per offered item"
        )
    probs = choice_probabilities(u)
    if u.size == 0:
        return 0.0
    return float(r @ probs[1:])
