import math

import numpy as np
import pytest

from lowrank_assort.choice import (
    Assortment,
    ChoiceObservation,
    ItemCatalog,
    UserContext,
)
from lowrank_assort.likelihood import (
    DivergenceError,
    ObservationSet,
    ReducedObservations,
    SolverConfig,
    fit_mle,
    grad_nll_full,
    grad_nll_reduced,
    minimize_gd,
    nll_full,
    nll_reduced,
)
from lowrank_assort.subspace import (
    extract_subspace,
    reduce_observations,
    rtv,
)


def _nll_full_oracle(phi, data):
    """Per-record direct formula, no padding or vectorization."""
    total = 0.0
    for rec in data.records:
        items = list(rec.assortment.items)
        v = data.catalog.features[items] @ (phi @ rec.user.features)
        log_denom = math.log(1.0 + np.exp(v).sum())
        picked = 0.0
        if rec.chosen is not None:
            picked = v[items.index(rec.chosen)]
        total -= picked - log_denom
    return total / data.n


def _make_data(rng, d1=4, d2=3, n_items=6, n=30, capacity=3, phi=None,
               scale=1.0):
    features = rng.standard_normal((n_items, d2))
    catalog = ItemCatalog(features=features, revenues=np.ones(n_items))
    if phi is None:
        phi = rng.standard_normal((d2, d1)) * scale
    records = []
    for _ in range(n):
        q = rng.standard_normal(d1)
        size = int(rng.integers(1, capacity + 1))
        items = tuple(
            sorted(rng.choice(n_items, size=size, replace=False).tolist())
        )
        v = features[list(items)] @ (phi @ q)
        w = np.exp(v - max(0.0, v.max()))
        base = np.exp(-max(0.0, v.max()))
        probs = np.concatenate([[base], w]) / (base + w.sum())
        pick = rng.choice(size + 1, p=probs)
        records.append(ChoiceObservation(
            user=UserContext(q),
            assortment=Assortment(items, capacity),
            chosen=None if pick == 0 else items[pick - 1],
        ))
    return ObservationSet(catalog, tuple(records)), phi


def _single_record_data(chosen):
    catalog = ItemCatalog(
        features=np.array([[0.7, -0.2]]), revenues=np.array([1.0])
    )
    rec = ChoiceObservation(
        user=UserContext(np.array([0.4, 1.1, -0.3])),
        assortment=Assortment((0,), 1),
        chosen=0 if chosen else None,
    )
    return ObservationSet(catalog, (rec,))


def test_nll_zero_phi_single_record_is_log_two():
    phi = np.zeros((2, 3))
    for chosen in (True, False):
        data = _single_record_data(chosen)
        assert abs(nll_full(phi, data) - math.log(2.0)) < 1e-12


def test_nll_zero_matches_log_k_plus_one():
    rng = np.random.default_rng(40)
    k = 3
    catalog = ItemCatalog(
        features=rng.standard_normal((6, 3)), revenues=np.ones(6)
    )
    records = tuple(
        ChoiceObservation(
            user=UserContext(rng.standard_normal(4)),
            assortment=Assortment(
                tuple(sorted(rng.choice(6, size=k, replace=False).tolist())),
                k,
            ),
            chosen=None,
        )
        for _ in range(12)
    )
    data = ObservationSet(catalog, records)
    assert abs(nll_full(np.zeros((3, 4)), data) - math.log(k + 1)) < 1e-12


def test_nll_matches_per_record_oracle():
    rng = np.random.default_rng(41)
    for _ in range(10):
        data, _ = _make_data(rng)
        phi = rng.standard_normal((3, 4))
        assert abs(
            nll_full(phi, data) - _nll_full_oracle(phi, data)
        ) < 1e-12


def test_nll_nonnegative():
    rng = np.random.default_rng(42)
    data, phi = _make_data(rng)
    assert nll_full(phi, data) >= 0.0
    assert nll_full(np.zeros((3, 4)), data) >= 0.0


def test_grad_single_record_closed_form():
    phi = np.zeros((2, 3))
    data = _single_record_data(chosen=True)
    p = data.catalog.features[0]
    q = data.records[0].user.features
    np.testing.assert_allclose(
        grad_nll_full(phi, data), -0.5 * np.outer(p, q), atol=1e-12
    )


def _central_difference(fn, x, h=1e-5):
    grad = np.empty_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(xf.size):
        bump = np.zeros_like(xf)
        bump[i] = h
        flat[i] = (
            fn((xf + bump).reshape(x.shape))
            - fn((xf - bump).reshape(x.shape))
        ) / (2 * h)
    return grad


def test_grad_full_matches_finite_differences():
    rng = np.random.default_rng(43)
    for _ in range(20):
        d1, d2 = int(rng.integers(2, 11)), int(rng.integers(2, 11))
        data, _ = _make_data(rng, d1=d1, d2=d2, n=int(rng.integers(5, 51)))
        phi = rng.standard_normal((d2, d1)) * 0.5
        analytic = grad_nll_full(phi, data)
        numeric = _central_difference(lambda m: nll_full(m, data), phi)
        rel = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(numeric), 1e-12
        )
        assert rel < 1e-5


def test_grad_reduced_matches_finite_differences():
    rng = np.random.default_rng(44)
    for _ in range(20):
        data, _ = _make_data(rng)
        est = extract_subspace(rng.standard_normal((3, 4)), 2)
        reduced = reduce_observations(data, est)
        theta = rng.standard_normal(reduced.dim) * 0.5
        analytic = grad_nll_reduced(theta, reduced)
        numeric = _central_difference(
            lambda v: nll_reduced(v, reduced), theta
        )
        rel = np.linalg.norm(analytic - numeric) / max(
            np.linalg.norm(numeric), 1e-12
        )
        assert rel < 1e-5


def test_convexity_witness():
    rng = np.random.default_rng(45)
    data, _ = _make_data(rng)
    for _ in range(20):
        phi1 = rng.standard_normal((3, 4))
        phi2 = rng.standard_normal((3, 4))
        lam = float(rng.uniform(0.05, 0.95))
        mixed = nll_full(lam * phi1 + (1 - lam) * phi2, data)
        bound = lam * nll_full(phi1, data) + (1 - lam) * nll_full(phi2, data)
        assert mixed <= bound + 1e-10


def test_reduced_equals_full_at_full_rank():
    rng = np.random.default_rng(46)
    data, _ = _make_data(rng)
    phi = rng.standard_normal((3, 4))
    est = extract_subspace(rng.standard_normal((3, 4)), 3)
    reduced = reduce_observations(data, est)
    theta_rot = est.u_hat.T @ phi @ est.v_hat
    value = nll_reduced(rtv(theta_rot, 3), reduced)
    assert abs(value - nll_full(phi, data)) < 1e-10


def test_minimize_gd_quadratic_oracle():
    target = np.array([2.0, -1.0, 0.5])
    result = minimize_gd(
        lambda x: 0.5 * float(np.sum((x - target) ** 2)),
        lambda x: x - target,
        np.zeros(3),
        SolverConfig(),
    )
    np.testing.assert_allclose(result.params, target, atol=1e-3)
    assert result.converged


def test_minimize_gd_fixed_step_quadratic():
    target = np.array([1.0, 3.0])
    result = minimize_gd(
        lambda x: 0.5 * float(np.sum((x - target) ** 2)),
        lambda x: x - target,
        np.zeros(2),
        SolverConfig(step_size=0.5, line_search=False),
    )
    np.testing.assert_allclose(result.params, target, atol=1e-3)


def test_minimize_gd_divergence_names_iteration():
    # fixed oversized step on a quadratic oscillates to overflow
    with pytest.raises(DivergenceError, match="iteration"):
        minimize_gd(
            lambda x: 0.5 * float(np.sum(x * x)),
            lambda x: x,
            np.ones(2),
            SolverConfig(step_size=1e154, line_search=False,
                         max_iterations=50),
        )


def test_minimize_gd_nonfinite_start():
    with pytest.raises(DivergenceError, match="iteration 0"):
        minimize_gd(
            lambda x: float("nan"),
            lambda x: x,
            np.zeros(1),
            SolverConfig(),
        )


def test_minimize_gd_nonfinite_gradient():
    with pytest.raises(DivergenceError, match="gradient"):
        minimize_gd(
            lambda x: float(np.sum(x * x)),
            lambda x: np.full_like(x, np.nan),
            np.ones(2),
            SolverConfig(),
        )


def test_fit_mle_descends_and_reports():
    rng = np.random.default_rng(47)
    data, _ = _make_data(rng)
    init = np.zeros((3, 4))
    result = fit_mle("full", init, data)
    assert result.objective <= nll_full(init, data) + 1e-12
    assert result.n_iter >= 1
    assert np.isfinite(result.grad_norm)


def test_minimize_gd_stationary_start_stops_immediately():
    target = np.array([0.3, -0.7])
    result = minimize_gd(
        lambda x: 0.5 * float(np.sum((x - target) ** 2)),
        lambda x: x - target,
        target.copy(),
        SolverConfig(),
    )
    assert result.n_iter <= 2
    assert result.converged
    np.testing.assert_array_equal(result.params, target)


def test_fit_mle_warm_restart_barely_moves():
    rng = np.random.default_rng(48)
    data, _ = _make_data(rng)
    first = fit_mle("full", np.zeros((3, 4)), data)
    again = fit_mle("full", first.params, data)
    assert again.objective <= first.objective + 1e-12
    assert first.objective - again.objective <= 1e-6


def test_fit_mle_recovers_parameters():
    rng = np.random.default_rng(49)
    data, phi_star = _make_data(
        rng, d1=4, d2=3, n_items=8, n=5000, capacity=3, scale=0.6
    )
    result = fit_mle("full", np.zeros((3, 4)), data)
    rel = np.linalg.norm(result.params - phi_star) / np.linalg.norm(phi_star)
    assert rel < 0.1


def test_fit_mle_deterministic():
    rng = np.random.default_rng(50)
    data, _ = _make_data(rng)
    a = fit_mle("full", np.zeros((3, 4)), data)
    b = fit_mle("full", np.zeros((3, 4)), data)
    assert np.array_equal(a.params, b.params)
    assert a.objective == b.objective


def test_fit_mle_validation():
    rng = np.random.default_rng(51)
    data, _ = _make_data(rng)
    with pytest.raises(ValueError):
        fit_mle("full", np.zeros((2, 2)), data)
    with pytest.raises(ValueError):
        fit_mle("reduced", np.zeros(3), data)
    with pytest.raises(ValueError):
        fit_mle("ridge", np.zeros((3, 4)), data)


def test_reduced_fit_matches_rotated_full_fit():
    # at full rank the reduced parameterization is the same model, so the
    # two fits must land on the same objective value
    rng = np.random.default_rng(52)
    data, _ = _make_data(rng, n=60)
    est = extract_subspace(rng.standard_normal((3, 4)), 3)
    reduced = reduce_observations(data, est)
    full = fit_mle("full", np.zeros((3, 4)), data)
    red = fit_mle("reduced", np.zeros(reduced.dim), reduced)
    assert abs(full.objective - red.objective) < 1e-5


def test_observation_set_validation():
    catalog = ItemCatalog(features=np.eye(2), revenues=np.ones(2))
    user = UserContext(np.zeros(3))
    good = ChoiceObservation(
        user=user, assortment=Assortment((0,), 2), chosen=None
    )
    with pytest.raises(ValueError, match="at least one record"):
        ObservationSet(catalog, ())
    with pytest.raises(ValueError, match="user dimension"):
        ObservationSet(catalog, (
            good,
            ChoiceObservation(
                user=UserContext(np.zeros(2)),
                assortment=Assortment((0,), 2),
            ),
        ))
    with pytest.raises(ValueError, match="empty assortment"):
        ObservationSet(catalog, (
            good,
            ChoiceObservation(user=user, assortment=Assortment((), 2)),
        ))
    with pytest.raises(ValueError, match="catalog"):
        ObservationSet(catalog, (
            ChoiceObservation(user=user, assortment=Assortment((5,), 2)),
        ))


def test_padded_arrays_layout():
    catalog = ItemCatalog(
        features=np.arange(8.0).reshape(4, 2), revenues=np.ones(4)
    )
    records = (
        ChoiceObservation(
            user=UserContext(np.array([1.0])),
            assortment=Assortment((2,), 3),
            chosen=2,
        ),
        ChoiceObservation(
            user=UserContext(np.array([2.0])),
            assortment=Assortment((0, 1, 3), 3),
            chosen=3,
        ),
        ChoiceObservation(
            user=UserContext(np.array([3.0])),
            assortment=Assortment((1, 2), 3),
            chosen=None,
        ),
    )
    arrs = ObservationSet(catalog, records).arrays
    np.testing.assert_array_equal(
        arrs.item_idx, [[2, 0, 0], [0, 1, 3], [1, 2, 0]]
    )
    np.testing.assert_array_equal(
        arrs.mask,
        [[True, False, False], [True, True, True], [True, True, False]],
    )
    np.testing.assert_array_equal(arrs.chosen_pos, [0, 2, -1])
    np.testing.assert_array_equal(arrs.contexts, [[1.0], [2.0], [3.0]])


def test_reduced_observations_validation():
    feats = np.zeros((2, 2, 3))
    mask = np.array([[True, False], [True, True]])
    chosen = np.array([-1, 0])
    ReducedObservations(features=feats, mask=mask, chosen_pos=chosen)
    with pytest.raises(ValueError, match="shape"):
        ReducedObservations(
            features=np.zeros((2, 2)), mask=mask, chosen_pos=chosen
        )
    with pytest.raises(ValueError, match="mask"):
        ReducedObservations(
            features=feats, mask=np.ones((3, 2), dtype=bool),
            chosen_pos=chosen,
        )
    with pytest.raises(ValueError, match="chosen_pos"):
        ReducedObservations(
            features=feats, mask=mask, chosen_pos=np.zeros(3, dtype=int)
        )
    with pytest.raises(ValueError, match="at least one item"):
        ReducedObservations(
            features=feats,
            mask=np.array([[False, False], [True, True]]),
            chosen_pos=chosen,
        )


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(step_size=-1.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
    with pytest.raises(ValueError):
        SolverConfig(tolerance=0.0)
