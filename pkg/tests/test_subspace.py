import numpy as np
import pytest

from lowrank_assort.choice import Assortment, ChoiceObservation, ItemCatalog, UserContext
from lowrank_assort.likelihood import ObservationSet, fit_mle, nll_full
from lowrank_assort.subspace import (
    FgdConfig,
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
from lowrank_assort.simulate import generate_instance
from lowrank_assort.replay import collect_random_observations


def _rtv_oracle(theta, r):
    """Element-by-element block gather in column-major order."""
    d2, d1 = theta.shape
    out = []
    for blocks in (
        [(i, j) for j in range(r) for i in range(r)],
        [(i, j) for j in range(r, d1) for i in range(r)],
        [(i, j) for j in range(r) for i in range(r, d2)],
    ):
        out.extend(theta[i, j] for i, j in blocks)
    return np.array(out)


def _inner(a, b):
    return float(np.sum(a * b))


def _synthetic_data(rng, d1=4, d2=3, n_items=6, n=40, capacity=2, phi=None):
    features = rng.standard_normal((n_items, d2))
    catalog = ItemCatalog(features=features, revenues=np.ones(n_items))
    if phi is None:
        phi = rng.standard_normal((d2, d1))
    records = []
    for _ in range(n):
        q = rng.standard_normal(d1)
        items = tuple(
            sorted(rng.choice(n_items, size=capacity, replace=False).tolist())
        )
        utilities = features[list(items)] @ (phi @ q)
        weights = np.exp(utilities - utilities.max())
        probs = np.concatenate(
            [[np.exp(-utilities.max())], weights]
        )
        probs /= probs.sum()
        pick = rng.choice(capacity + 1, p=probs)
        records.append(ChoiceObservation(
            user=UserContext(q),
            assortment=Assortment(items, capacity),
            chosen=None if pick == 0 else items[pick - 1],
        ))
    return ObservationSet(catalog, tuple(records))


def test_reduced_dim_formula():
    assert reduced_dim(30, 20, 3) == (30 + 20) * 3 - 9
    assert reduced_dim(5, 4, 4) == 20


def test_rtv_two_by_two_worked_example():
    theta = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(rtv(theta, 1), [1.0, 2.0, 3.0])


def test_rtv_matches_oracle():
    rng = np.random.default_rng(20)
    for _ in range(30):
        d2, d1 = rng.integers(2, 7, size=2)
        r = int(rng.integers(1, min(d1, d2) + 1))
        theta = rng.standard_normal((d2, d1))
        np.testing.assert_array_equal(rtv(theta, r), _rtv_oracle(theta, r))


def test_rtv_full_rank_is_permutation():
    rng = np.random.default_rng(21)
    theta = rng.standard_normal((3, 5))
    out = rtv(theta, 3)
    assert out.shape == (15,)
    np.testing.assert_allclose(np.sort(out), np.sort(theta.ravel()))


def test_rtv_inner_product_decomposition():
    rng = np.random.default_rng(22)
    for _ in range(100):
        d2, d1 = rng.integers(2, 8, size=2)
        r = int(rng.integers(1, min(d1, d2) + 1))
        x = rng.standard_normal((d2, d1))
        theta = rng.standard_normal((d2, d1))
        lhs = _inner(x, theta)
        rhs = _inner(rtv(x, r), rtv(theta, r)) + _inner(
            x[r:, r:], theta[r:, r:]
        )
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_rtv_rank_out_of_range():
    with pytest.raises(ValueError):
        rtv(np.zeros((3, 4)), 4)
    with pytest.raises(ValueError):
        rtv(np.zeros((3, 4)), 0)


def test_gic_penalty_difference_identity():
    n, d1, d2 = 500, 12, 9
    a_n = np.log(n) / n
    for r, rp in [(1, 2), (3, 5), (2, 7)]:
        diff = gic_penalty(n, d1, d2, r) - gic_penalty(n, d1, d2, rp)
        expected = a_n * ((d1 + d2) * (r - rp) - (r * r - rp * rp))
        assert abs(diff - expected) < 1e-15


def test_extract_subspace_diagonal():
    est = extract_subspace(np.diag([3.0, 1.0]), 1)
    np.testing.assert_allclose(est.singular_values, [3.0, 1.0])
    np.testing.assert_allclose(est.u_hat, np.eye(2))
    np.testing.assert_allclose(est.v_hat, np.eye(2))


def test_extract_subspace_reconstruction_and_ordering():
    rng = np.random.default_rng(23)
    for _ in range(100):
        d2, d1 = rng.integers(2, 8, size=2)
        phi = rng.standard_normal((d2, d1))
        est = extract_subspace(phi, 1)
        m = est.singular_values.shape[0]
        rebuilt = (est.u_hat[:, :m] * est.singular_values) @ est.v_hat[:, :m].T
        assert np.linalg.norm(rebuilt - phi) < 1e-10
        assert np.all(np.diff(est.singular_values) <= 1e-12)
        assert np.all(est.singular_values >= 0)


def test_extract_subspace_orthonormal_and_deterministic():
    rng = np.random.default_rng(24)
    phi = rng.standard_normal((5, 7))
    a = extract_subspace(phi, 2)
    b = extract_subspace(phi.copy(), 2)
    assert np.linalg.norm(a.u_hat.T @ a.u_hat - np.eye(5)) < 1e-10
    assert np.linalg.norm(a.v_hat.T @ a.v_hat - np.eye(7)) < 1e-10
    assert np.array_equal(a.u_hat, b.u_hat)
    assert np.array_equal(a.v_hat, b.v_hat)
    assert np.array_equal(a.singular_values, b.singular_values)


def test_extract_subspace_sign_convention():
    rng = np.random.default_rng(25)
    for _ in range(20):
        phi = rng.standard_normal((4, 6))
        est = extract_subspace(phi, 2)
        for j in range(4):
            col = est.u_hat[:, j]
            assert col[np.argmax(np.abs(col))] > 0


def test_initial_theta_places_singular_values():
    est = extract_subspace(np.diag([5.0, 2.0, 1.0]), 2)
    theta = est.initial_theta()
    assert theta.shape == (reduced_dim(3, 3, 2),)
    block = theta[:4].reshape(2, 2, order="F")
    np.testing.assert_allclose(block, np.diag([5.0, 2.0]))
    np.testing.assert_allclose(theta[4:], 0.0)


def test_rotation_invariance_of_utility():
    rng = np.random.default_rng(26)
    for _ in range(20):
        d2, d1 = rng.integers(2, 7, size=2)
        phi = rng.standard_normal((d2, d1))
        p, q = rng.standard_normal(d2), rng.standard_normal(d1)
        est = extract_subspace(rng.standard_normal((d2, d1)), 1)
        rotated = (est.u_hat.T @ p) @ (est.u_hat.T @ phi @ est.v_hat) @ (
            est.v_hat.T @ q
        )
        assert abs(rotated - p @ phi @ q) < 1e-10


def test_reduce_feature_identity_rotation():
    rng = np.random.default_rng(27)
    p, q = rng.standard_normal(3), rng.standard_normal(4)
    est = SubspaceEstimate(
        u_hat=np.eye(3), v_hat=np.eye(4),
        singular_values=np.zeros(3), rank=2,
    )
    np.testing.assert_allclose(
        reduce_feature(p, q, est), rtv(np.outer(p, q), 2), atol=1e-12
    )


def test_reduce_feature_inner_product_recovers_utility():
    rng = np.random.default_rng(28)
    for _ in range(20):
        d2, d1, r = 4, 5, 2
        phi = rng.standard_normal((d2, d1))
        p, q = rng.standard_normal(d2), rng.standard_normal(d1)
        est = extract_subspace(rng.standard_normal((d2, d1)), r)
        x_rot = np.outer(est.u_hat.T @ p, est.v_hat.T @ q)
        theta_rot = est.u_hat.T @ phi @ est.v_hat
        value = _inner(reduce_feature(p, q, est), rtv(theta_rot, r)) + _inner(
            x_rot[r:, r:], theta_rot[r:, r:]
        )
        assert abs(value - p @ phi @ q) < 1e-10
        assert abs(
            np.linalg.norm(x_rot) - np.linalg.norm(np.outer(p, q))
        ) < 1e-10


def test_reduce_observations_matches_per_pair():
    rng = np.random.default_rng(29)
    data = _synthetic_data(rng)
    est = extract_subspace(rng.standard_normal((3, 4)), 2)
    reduced = reduce_observations(data, est)
    for t, rec in enumerate(data.records):
        for slot, item in enumerate(rec.assortment.items):
            expected = reduce_feature(
                data.catalog.features[item], rec.user.features, est
            )
            np.testing.assert_allclose(
                reduced.features[t, slot], expected, atol=1e-12
            )


def test_fgd_descends_and_bounds_rank():
    rng = np.random.default_rng(30)
    data = _synthetic_data(rng, n=80)
    phi0 = fit_mle("full", np.zeros((3, 4)), data).params
    # regularized objective at iterate 0: the balanced SVD truncation of
    # phi0 (its balance term is exactly zero)
    u0, s0, v0t = np.linalg.svd(phi0, full_matrices=False)
    init_phi = s0[0] * np.outer(u0[:, 0], v0t[0])
    initial = nll_full(init_phi, data)
    result = fgd_fit(data, 1, phi0, FgdConfig(max_iterations=300))
    assert result.objective <= initial + 1e-9
    s = np.linalg.svd(result.phi, compute_uv=False)
    assert np.all(s[1:] <= 1e-8 * s[0])


def test_fgd_balance_gap_shrinks_from_unbalanced_start():
    rng = np.random.default_rng(31)
    data = _synthetic_data(rng, n=60)
    u0 = rng.standard_normal((3, 1)) * 3.0
    v0 = rng.standard_normal((4, 1)) * 0.1
    gap0 = np.linalg.norm(u0.T @ u0 - v0.T @ v0)
    result = fgd_fit(
        data, 1, None, FgdConfig(max_iterations=400), factors0=(u0, v0)
    )
    gap = np.linalg.norm(
        result.factor_u.T @ result.factor_u
        - result.factor_v.T @ result.factor_v
    )
    assert gap <= gap0


def test_fgd_fixed_step_variant_descends():
    rng = np.random.default_rng(32)
    data = _synthetic_data(rng, n=60)
    phi0 = fit_mle("full", np.zeros((3, 4)), data).params
    u0, s0, v0t = np.linalg.svd(phi0, full_matrices=False)
    init_phi = (u0[:, :2] * s0[:2]) @ v0t[:2]
    result = fgd_fit(
        data, 2, phi0,
        FgdConfig(step_size=0.01, max_iterations=200, line_search=False),
    )
    assert result.objective <= nll_full(init_phi, data) + 1e-9
    assert np.all(np.isfinite(result.phi))


def test_fgd_rank_one_recovery():
    env = generate_instance(d1=6, d2=5, n_items=8, rank=1, seed=3)
    data = collect_random_observations(env, 5000, 3)
    phi0 = fit_mle("full", np.zeros((5, 6)), data).params
    result = fgd_fit(data, 1, phi0)
    rel = np.linalg.norm(result.phi - env.truth.phi_star) / np.linalg.norm(
        env.truth.phi_star
    )
    assert rel < 0.2


def test_fgd_config_validation():
    with pytest.raises(ValueError):
        FgdConfig(step_size=0.0)
    with pytest.raises(ValueError):
        FgdConfig(max_iterations=0)
    with pytest.raises(ValueError):
        FgdConfig(tolerance=-1.0)
    with pytest.raises(ValueError, match="1/8"):
        FgdConfig(regularization_weight=0.25)


def test_gic_singleton_grid():
    rng = np.random.default_rng(33)
    data = _synthetic_data(rng, n=50)
    rank, scores, fit = gic_search(data, rank_grid=[3])
    assert rank == 3
    assert [r for r, _ in scores] == [3]
    assert fit.phi.shape == (3, 4)


def test_gic_scores_are_nll_plus_penalty():
    rng = np.random.default_rng(34)
    data = _synthetic_data(rng, n=50)
    rank, scores, fit = gic_search(data, rank_grid=[2])
    (r, score), = scores
    assert r == 2
    expected = nll_full(fit.phi, data) + gic_penalty(data.n, 4, 3, 2)
    assert abs(score - expected) < 1e-12


def test_gic_recovers_true_rank_small():
    env = generate_instance(d1=6, d2=5, n_items=10, rank=2, seed=7)
    data = collect_random_observations(env, 1500, 3)
    rank, scores, _ = gic_search(data)
    assert rank == 2
    assert [r for r, _ in scores] == list(range(1, 6))


def test_select_rank_gic_wrapper():
    rng = np.random.default_rng(35)
    data = _synthetic_data(rng, n=50)
    rank, scores = select_rank_gic(data, rank_grid=[1, 2])
    assert rank in (1, 2)
    assert len(scores) == 2


def test_gic_rejects_bad_grid():
    rng = np.random.default_rng(36)
    data = _synthetic_data(rng)
    with pytest.raises(ValueError):
        gic_search(data, rank_grid=[])
    with pytest.raises(ValueError):
        gic_search(data, rank_grid=[5])
