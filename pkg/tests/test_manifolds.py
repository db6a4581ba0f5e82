import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pairs
from tangentclust import CutLocus, Grassmannian, ManifoldMismatch, Sphere, Spd, TangencyViolation
from tangentclust.manifolds import (
    exp_map,
    geodesic_distance,
    log_map,
    manifold_from_tag,
    project_to_tangent,
    thin_svd,
)

S2 = Sphere(2)
G21 = Grassmannian(2, 1)
G62 = Grassmannian(6, 2)
P3 = Spd(3)


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


# -- independent oracles -----------------------------------------------------


def sphere_dist_oracle(x, y):
    return np.arccos(np.clip(x @ y, -1, 1))


def grassmann_dist_oracle(x, y):
    return np.linalg.norm(scipy.linalg.subspace_angles(x, y))


def spd_dist_oracle(a, b):
    # generalized eigenvalues of (b, a) are those of a^-1/2 b a^-1/2
    lam = scipy.linalg.eigh(b, a, eigvals_only=True)
    return np.sqrt(np.sum(np.log(lam) ** 2))


def spd_log_oracle(a, b):
    s = np.real(scipy.linalg.sqrtm(a))
    si = np.linalg.inv(s)
    return s @ np.real(scipy.linalg.logm(si @ b @ si)) @ s


ORACLES = {Sphere: sphere_dist_oracle, Grassmannian: grassmann_dist_oracle, Spd: spd_dist_oracle}


# -- worked examples ---------------------------------------------------------


def test_sphere_log_example():
    v = S2.log(np.array([0.0, 0, 1]), np.array([1.0, 0, 0]))
    np.testing.assert_allclose(v, [np.pi / 2, 0, 0], atol=1e-14)
    assert np.linalg.norm(v) == pytest.approx(np.pi / 2, abs=1e-14)


def test_spd_log_example_identity_base():
    v = P3.log(np.eye(3), np.diag([np.e**2, 1, 1]))
    np.testing.assert_allclose(v, np.diag([2.0, 0, 0]), atol=1e-12)


def test_grassmann_log_example():
    x = np.array([[1.0], [0.0]])
    y = np.array([[np.cos(np.pi / 4)], [np.sin(np.pi / 4)]])
    v = G21.log(x, y)
    np.testing.assert_allclose(v, [[0.0], [np.pi / 4]], atol=1e-14)
    assert G21.dist(x, y) == pytest.approx(np.pi / 4, abs=1e-14)


def test_exp_examples(manifold, rng):
    x = manifold.random_point(rng)
    np.testing.assert_array_equal(manifold.exp(x, np.zeros(manifold.shape)), x)
    np.testing.assert_allclose(S2.exp(np.array([0.0, 0, 1]), np.array([np.pi / 2, 0, 0])),
                               [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(P3.exp(np.eye(3), np.diag([2.0, 0, 0])),
                               np.diag([np.e**2, 1, 1]), atol=1e-12)


def test_distance_examples():
    assert S2.dist(np.array([0.0, 0, 1]), np.array([1.0, 0, 0])) == pytest.approx(np.pi / 2)
    assert P3.dist(np.eye(3), np.diag([np.e**2, 1, 1])) == pytest.approx(2.0, abs=1e-12)


def test_projection_examples(rng):
    np.testing.assert_allclose(S2.proj(np.array([0.0, 0, 1]), np.array([0.0, 0, 5])), 0)
    x = G62.random_point(rng)
    np.testing.assert_allclose(G62.proj(x, x @ rng.standard_normal((2, 2))), 0, atol=1e-14)


def test_projection_idempotent_and_fixes_tangents(manifold, rng):
    x = manifold.random_point(rng)
    w = rng.standard_normal(manifold.shape)
    v = manifold.proj(x, w)
    np.testing.assert_allclose(manifold.proj(x, v), v, atol=1e-13)
    assert manifold.tangency_error(x, v) < 1e-13


def test_validate_diagnostics():
    assert S2.validate(np.array([0.0, 0, 1])).ok
    d = S2.validate(np.array([0.0, 0, 1.1]))
    assert not d.ok and d.errors["norm_error"] == pytest.approx(0.1)
    d = P3.validate(np.diag([1.0, 2.0, -0.01]))
    assert d.errors["not_positive_definite"] == pytest.approx(-0.01)
    assert not G62.validate(np.ones((6, 2))).ok
    assert "shape" in S2.validate(np.ones(4)).errors


def test_point_normalizes():
    assert S2.validate(S2.point([3.0, 4.0, 0.0])).ok
    x = G62.point(np.arange(12.0).reshape(6, 2) + 1)
    assert G62.validate(x).ok
    assert P3.validate(P3.point(np.array([[2.0, 1.0, 0], [0.9999999, 2, 0], [0, 0, 1]]))).ok


# -- errors ------------------------------------------------------------------


def test_sphere_cut_locus():
    x = np.array([0.0, 0, 1])
    with pytest.raises(CutLocus):
        S2.log(x, -x)
    assert S2.dist(x, -x) == np.pi


def test_grassmann_cut_locus_log_and_finite_distance():
    x = np.eye(6)[:, :2]
    y = np.eye(6)[:, [0, 2]]
    with pytest.raises(CutLocus):
        G62.log(x, y)
    assert G62.dist(x, y) == pytest.approx(np.pi / 2, abs=1e-14)


def test_shape_mismatch():
    with pytest.raises(ManifoldMismatch):
        S2.log(np.array([0.0, 0, 1]), np.array([1.0, 0]))
    with pytest.raises(ManifoldMismatch):
        G62.dist(np.eye(6)[:, :2], np.eye(5)[:, :2])


def test_exp_rejects_non_tangent():
    with pytest.raises(TangencyViolation):
        S2.exp(np.array([0.0, 0, 1]), np.array([0.1, 0, 0.1]))
    with pytest.raises(TangencyViolation):
        P3.exp(np.eye(3), np.triu(np.ones((3, 3))))


def test_manifold_ids():
    with pytest.raises(ValueError):
        Grassmannian(2, 2)
    with pytest.raises(ValueError):
        Sphere(0)
    assert manifold_from_tag("grassmannian", [6, 2]) == G62
    with pytest.raises(ValueError, match="bogus"):
        manifold_from_tag("bogus", [1])


# -- properties --------------------------------------------------------------


def test_log_exp_roundtrip(manifold, rng):
    worst = 0.0
    for x, y in random_pairs(manifold, rng, 100):
        v = manifold.log(x, y)
        assert manifold.tangency_error(x, v) < 1e-10
        back = manifold.log(x, manifold.exp(x, v))
        worst = max(worst, np.linalg.norm(back - v))
    assert worst < 1e-8


def test_exp_of_log_recovers_target(manifold, rng):
    for x, y in random_pairs(manifold, rng, 20):
        assert manifold.dist(manifold.exp(x, manifold.log(x, y)), y) < 1e-8


def test_log_of_self_is_zero(manifold, rng):
    x = manifold.random_point(rng)
    np.testing.assert_allclose(manifold.log(x, x), 0, atol=1e-12)
    assert manifold.dist(x, x) < 1e-7


def test_distance_matches_independent_oracle(manifold, rng):
    oracle = ORACLES[type(manifold)]
    for x, y in random_pairs(manifold, rng, 30):
        d = manifold.dist(x, y)
        assert d == pytest.approx(oracle(x, y), abs=1e-10)
        assert manifold.norm(x, manifold.log(x, y)) == pytest.approx(oracle(x, y), abs=1e-10)


def test_spd_log_matches_sqrtm_logm_oracle(rng):
    for _ in range(10):
        a, b = P3.random_point(rng), P3.random_point(rng)
        np.testing.assert_allclose(P3.log(a, b), spd_log_oracle(a, b), atol=1e-9)


def test_grassmann_exp_matches_explicit_geodesic(rng):
    # geodesic through X with direction U S V^T: X V cos(S) + U sin(S)
    for _ in range(10):
        x = G62.random_point(rng)
        v = G62.random_tangent(x, rng, scale=1.0)
        u, s, vt = np.linalg.svd(v, full_matrices=False)
        y = x @ vt.T @ np.diag(np.cos(s)) + u @ np.diag(np.sin(s))
        assert grassmann_dist_oracle(G62.exp(x, v), y) < 1e-10


def test_distance_axioms(manifold, rng):
    for _ in range(40):
        x, y, z = (manifold.random_point(rng) for _ in range(3))
        dxy, dyx = manifold.dist(x, y), manifold.dist(y, x)
        assert dxy >= 0
        assert abs(dxy - dyx) < 1e-10
        assert manifold.dist(x, z) <= dxy + manifold.dist(y, z) + 1e-8


def test_grassmann_gauge_invariance(rng):
    for M in (G62, Grassmannian(4, 3)):
        for _ in range(20):
            x, y = M.random_point(rng), M.random_point(rng)
            rx, ry = random_orthogonal(rng, M.l), random_orthogonal(rng, M.l)
            assert abs(M.dist(x @ rx, y @ ry) - M.dist(x, y)) < 1e-9
            # the log is a tangent vector at X; it transforms as Delta -> Delta R
            np.testing.assert_allclose(M.log(x @ rx, y @ ry), M.log(x, y) @ rx, atol=1e-9)
            np.testing.assert_allclose(M.log(x, y @ ry), M.log(x, y), atol=1e-9)


def test_spd_affine_invariance(rng):
    for _ in range(20):
        a, b = P3.random_point(rng), P3.random_point(rng)
        A = rng.standard_normal((3, 3)) + 0.5 * np.eye(3)
        assert abs(P3.dist(A.T @ a @ A, A.T @ b @ A) - P3.dist(a, b)) < 1e-8


def test_log_coords_are_isometric(manifold, rng):
    x = manifold.random_point(rng)
    y1, y2 = manifold.random_point(rng), manifold.random_point(rng)
    try:
        c = manifold.log_coords(x, np.stack([y1, y2]))
    except CutLocus:
        pytest.skip("sampled pair in cut locus")
    d1 = manifold.dist(x, y1)
    assert np.linalg.norm(c[0]) == pytest.approx(d1, abs=1e-10)


def test_batched_log_matches_single(manifold, rng):
    x = manifold.random_point(rng)
    ys = [y for _, y in random_pairs(manifold, rng, 8)]
    ys = [y for y in ys if manifold.dist(x, y) < 0.95 * min(manifold.injectivity_radius(), 50)]
    batch = manifold.log(x, np.stack(ys))
    for v, y in zip(batch, ys):
        np.testing.assert_allclose(v, manifold.log(x, y), atol=1e-12)


def test_pairwise_apis_match_rowwise(manifold, rng):
    pts = np.stack([manifold.random_point(rng) for _ in range(12)])
    D = manifold.pairwise_dist(pts)
    L = manifold.pairwise_log_coords(pts)
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)
    for i in range(len(pts)):
        for j in range(len(pts)):
            if i != j:
                assert D[i, j] == pytest.approx(manifold.dist(pts[i], pts[j]), abs=1e-10)
            if not np.isnan(L[i, j]).any():
                np.testing.assert_allclose(L[i, j], manifold.log_coords(pts[i], pts[j]),
                                           atol=1e-10)


def test_sphere_pairwise_log_marks_antipodes():
    pts = np.array([[0.0, 0, 1], [0, 0, -1], [1, 0, 0]])
    L = S2.pairwise_log_coords(pts)
    assert np.isnan(L[0, 1]).all() and np.isnan(L[1, 0]).all()
    np.testing.assert_allclose(L[0, 2], [np.pi / 2, 0, 0], atol=1e-14)


def test_functional_aliases(rng):
    x, y = S2.random_point(rng), S2.random_point(rng)
    assert geodesic_distance(S2, x, y) == S2.dist(x, y)
    np.testing.assert_array_equal(log_map(S2, x, y), S2.log(x, y))
    np.testing.assert_array_equal(exp_map(S2, x, log_map(S2, x, y)), S2.exp(x, S2.log(x, y)))
    np.testing.assert_array_equal(project_to_tangent(S2, x, y), S2.proj(x, y))


def test_sphere_log_near_base_is_stable():
    x = np.array([0.0, 0, 1])
    for eps in (1e-6, 1e-9, 1e-13):
        y = S2.point([eps, 0, 1])
        v = S2.log(x, y)
        assert v[0] == pytest.approx(np.arctan(eps), rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_thin_svd_matches_lapack(l, extra, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((3, l + extra, l))
    u, s, vt = thin_svd(a)
    np.testing.assert_allclose(s, np.linalg.svd(a, compute_uv=False), atol=1e-12)
    np.testing.assert_allclose(u * s[..., None, :] @ vt, a, atol=1e-12)
    np.testing.assert_allclose(np.swapaxes(vt, -1, -2) @ vt, np.broadcast_to(np.eye(l), vt.shape),
                               atol=1e-12)


def test_thin_svd_rank_deficient():
    a = np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0]])
    u, s, vt = thin_svd(a)
    np.testing.assert_allclose(s, [5.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(u[:, 1], 0.0)
