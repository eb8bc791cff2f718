"""Domains, enclosing ellipsoids, normalization maps, grids, resampling."""

import numpy as np
import pytest

import lmalab as L
from lmalab.errors import DegenerateInput, EmptyImage
from lmalab.geometry import BOUNDARY, EXTERIOR, INTERIOR


def circle_points(n=64, r=1.0, center=(0.0, 0.0)):
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    return np.asarray(center) + r * np.stack([np.cos(t), np.sin(t)], axis=1)


# ---------------------------------------------------------------------------
# minimum-volume enclosing ellipsoid
# ---------------------------------------------------------------------------

def test_mvee_unit_circle_is_unit_disk():
    e = L.mvee(circle_points(), tol=1e-8)
    assert np.allclose(e.center, 0.0, atol=1e-9)
    assert np.allclose(e.shape, np.eye(2), atol=1e-7)


def test_mvee_square_corners_gives_sqrt2_disk():
    pts = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    e = L.mvee(pts, tol=1e-9)
    assert np.allclose(e.center, 0.0, atol=1e-9)
    # radius sqrt(2): shape matrix I/2
    assert np.allclose(e.shape, np.eye(2) / 2, atol=1e-7)


def steiner_oracle(vertices):
    """Circumscribed ellipse of minimal volume for a triangle.

    Affine image of the equilateral case: the unit circle is the minimal
    ellipse of an equilateral triangle inscribed in it, and minimal enclosing
    ellipsoids are affine-equivariant.
    """
    equi = circle_points(3)
    M = np.hstack([equi, np.ones((3, 1))])
    sol = np.linalg.solve(M, vertices)
    A, b = sol[:2].T, sol[2]
    return b, np.linalg.inv(A @ A.T)


def test_mvee_triangle_matches_steiner_circumellipse():
    tri = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    e = L.mvee(tri, tol=1e-8)
    center_o, shape_o = steiner_oracle(tri)
    # frozen from the oracle: center = centroid, shape = [[3, 1.5], [1.5, 3]]
    assert np.allclose(center_o, [1 / 3, 1 / 3], atol=1e-12)
    assert np.allclose(shape_o, [[3.0, 1.5], [1.5, 3.0]], atol=1e-9)
    assert np.allclose(e.center, [1 / 3, 1 / 3], atol=1e-7)
    assert np.allclose(e.shape, [[3.0, 1.5], [1.5, 3.0]], atol=1e-5)


def test_mvee_contains_all_points_exactly():
    rng = np.random.default_rng(5)
    for _ in range(20):
        pts = rng.normal(size=(30, 2))
        e = L.mvee(pts, tol=1e-6)
        assert (e.quadratic(pts) <= 1.0 + 1e-12).all()


def test_mvee_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        L.mvee(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]))  # collinear
    with pytest.raises(DegenerateInput):
        L.mvee(np.array([[0.0, 0.0], [1.0, 0.0]]))  # too few
    with pytest.raises(ValueError):
        L.mvee(circle_points(8), tol=0.0)


def test_mvee_affine_equivariance():
    rng = np.random.default_rng(11)
    pts = rng.normal(size=(40, 2))
    e = L.mvee(pts, tol=1e-9)
    for _ in range(5):
        A = rng.normal(size=(2, 2))
        while abs(np.linalg.det(A)) < 0.3:
            A = rng.normal(size=(2, 2))
        b = rng.normal(size=2)
        T = L.AffineMap(A, b)
        e_t = L.mvee(T(pts), tol=1e-9)
        # image of e under T: shape -> A^{-T} M A^{-1}, center -> T(center)
        Ainv = np.linalg.inv(A)
        assert np.allclose(e_t.center, T.apply_one(e.center), atol=1e-6)
        assert np.allclose(e_t.shape, Ainv.T @ e.shape @ Ainv, atol=1e-6)


def random_convex_polygon(rng, n_min=4, n_max=10):
    n = rng.integers(n_min, n_max + 1)
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = rng.uniform(0.3, 2.0, n)
    center = rng.normal(0, 0.5, 2)
    pts = center + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    from scipy.spatial import ConvexHull
    hull = ConvexHull(pts)
    return pts[hull.vertices]


def test_mvee_shrunk_by_dimension_sits_inside_polygon():
    # rejection sampling: 1e4 draws from the shrunk ellipsoid, zero violations
    rng = np.random.default_rng(23)
    poly = random_convex_polygon(rng)
    dom = L.ConvexDomain.polygon(poly)
    e = L.mvee(poly, tol=1e-9)
    small = e.scaled(0.5)  # 1/n with n = 2
    A = np.linalg.inv(small.sqrt_shape())
    draws = rng.normal(size=(10_000, 2))
    draws /= np.linalg.norm(draws, axis=1, keepdims=True)
    draws *= rng.uniform(0, 1, (10_000, 1)) ** 0.5
    pts = small.center + draws @ A.T
    assert L.ConvexDomain.polygon(poly).contains(pts, tol=1e-9).all()
    assert dom.contains(poly).all()


# ---------------------------------------------------------------------------
# normalization maps
# ---------------------------------------------------------------------------

def test_normalize_unit_ball_is_identity():
    T = L.normalize_domain(L.ConvexDomain.ball([0.0, 0.0], 1.0))
    assert np.allclose(T.A, np.eye(2), atol=1e-12)
    assert np.allclose(T.b, 0.0, atol=1e-12)


def test_normalize_shifted_ball_is_translation():
    T = L.normalize_domain(L.ConvexDomain.ball([0.3, -0.2], 1.0))
    assert np.allclose(T.A, np.eye(2), atol=1e-12)
    assert np.allclose(T.b, [-0.3, 0.2], atol=1e-12)


def test_normalize_axis_aligned_ellipse():
    t = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    verts = np.stack([2 * np.cos(t), 0.5 * np.sin(t)], axis=1)
    T = L.normalize_domain(L.ConvexDomain.polygon(verts))
    assert np.allclose(T.A, np.diag([0.5, 2.0]), atol=2e-3)
    assert np.allclose(T.b, 0.0, atol=1e-3)


def test_normalize_sandwich_on_random_polygons():
    rng = np.random.default_rng(3)
    for _ in range(100):
        poly = random_convex_polygon(rng)
        dom = L.ConvexDomain.polygon(poly)
        T = L.normalize_domain(dom)
        img = T(dom.boundary_points(64))
        r = np.linalg.norm(img, axis=1)
        assert r.min() >= 1.0 - 1e-7, "unit ball must fit inside the image"
        assert r.max() <= 2.0 + 1e-7, "image must fit inside the dimension ball"
        # gauge is symmetric positive definite
        assert np.allclose(T.A, T.A.T, atol=1e-12)
        assert np.linalg.eigvalsh(T.A).min() > 0


def test_affine_map_inverse_composes_to_identity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        A = rng.normal(size=(2, 2))
        while abs(np.linalg.det(A)) < 0.2:
            A = rng.normal(size=(2, 2))
        T = L.AffineMap(A, rng.normal(size=2))
        C = T.compose(T.inverse())
        assert np.abs(C.A - np.eye(2)).max() < 1e-10
        assert np.abs(C.b).max() < 1e-10


def test_ellipsoid_validation():
    with pytest.raises(ValueError):
        L.Ellipsoid([0, 0], [[1.0, 0.5], [0.2, 1.0]])  # not symmetric
    with pytest.raises(DegenerateInput):
        L.Ellipsoid([0, 0], [[1.0, 0.0], [0.0, -1.0]])  # not positive definite


def test_convex_domain_validation():
    with pytest.raises(ValueError):
        L.ConvexDomain.polygon([[0, 0], [0, 1], [1, 0]])  # clockwise
    with pytest.raises(DegenerateInput):
        L.ConvexDomain.interval(1.0, 1.0)
    dom = L.ConvexDomain.polygon([[0, 0], [1, 0], [1, 1], [0, 1]])
    assert dom.contains([[0.5, 0.5]])[0]
    assert not dom.contains([[1.5, 0.5]])[0]


# ---------------------------------------------------------------------------
# grids and fields
# ---------------------------------------------------------------------------

def test_grid_mask_tags_and_invariant(disc):
    g = L.Grid.from_domain(disc, 1 / 16)
    g.check_mask()
    assert g.count(INTERIOR) > 0 and g.count(BOUNDARY) > 0 and g.count(EXTERIOR) > 0
    # closure weights live in [0, 1/2]
    band = g.mask.ravel() == BOUNDARY
    wts = g.closure_weight[band]
    assert (wts >= 0).all() and (wts <= 0.5 + 1e-12).all()


def test_interval_grid_has_exact_boundary_nodes():
    g = L.Grid.from_domain(L.ConvexDomain.interval(-1.0, 1.0), 1 / 128)
    xs = g.axes()[0]
    band = np.flatnonzero(g.mask == BOUNDARY)
    assert np.allclose(np.abs(xs[band]), 1.0)
    # nodes exactly on the boundary degenerate to a literal zero condition
    assert np.allclose(g.closure_weight[band], 0.0, atol=1e-12)


def test_scalar_field_csv_roundtrip(tmp_path, disc):
    g = L.Grid.from_domain(disc, 1 / 8)
    fld = L.ScalarField.from_function(g, lambda x, y: np.sin(x) + y)
    path = tmp_path / "field.csv"
    fld.to_csv(path)
    back = L.ScalarField.read_csv(path)
    assert back.grid.shape == g.shape
    assert np.array_equal(back.grid.mask, g.mask)
    assert np.allclose(back.values, fld.values)


def test_sample_bilinear_and_gradient(disc):
    g = L.Grid.from_domain(disc, 1 / 32)
    fld = L.ScalarField.from_function(g, lambda x, y: 2 * x - 3 * y + 1)
    pts = np.array([[0.11, 0.07], [-0.3, 0.21]])
    vals, ok = fld.sample(pts)
    assert ok.all()
    assert np.allclose(vals, 2 * pts[:, 0] - 3 * pts[:, 1] + 1, atol=1e-12)
    assert np.allclose(fld.gradient_at([0.1, -0.2]), [2.0, -3.0], atol=1e-10)


def test_apply_affine_identity_and_shift(disc):
    g = L.Grid.from_domain(disc, 1 / 16)
    fld = L.ScalarField.from_function(g, lambda x, y: x * x - y)
    out = L.apply_affine(L.AffineMap.identity(2), fld, g)
    sel = out.grid.mask != EXTERIOR
    assert np.allclose(out.values[sel], fld.values[sel], atol=1e-13)

    h = g.spacing
    shift = L.AffineMap(np.eye(2), np.array([h, 0.0]))
    out2 = L.apply_affine(shift, fld, g)
    sel2 = out2.grid.mask != EXTERIOR
    moved = np.roll(fld.values, 1, axis=0)
    assert np.allclose(out2.values[sel2], moved[sel2], atol=1e-13)


def test_apply_affine_dilation_error_scale(disc):
    # T = diag(2, 2) on |x|^2: output |y/2|^2 = |y|^2 / 4 up to O(h^2)
    g = L.Grid.from_domain(disc, 1 / 32)
    fld = L.ScalarField.from_function(g, lambda x, y: x * x + y * y)
    T = L.AffineMap(2 * np.eye(2), np.zeros(2))
    out = L.apply_affine(T, fld, g)
    pts = g.node_coordinates()
    expect = ((pts[:, 0] ** 2 + pts[:, 1] ** 2) / 4).reshape(g.shape)
    sel = out.grid.mask != EXTERIOR
    err = np.abs(out.values - expect)[sel].max()
    assert err <= 2 * g.spacing**2


def test_apply_affine_empty_image(disc):
    g = L.Grid.from_domain(disc, 1 / 16)
    fld = L.ScalarField.from_function(g, lambda x, y: x + y)
    T = L.AffineMap(np.eye(2), np.array([100.0, 100.0]))
    with pytest.raises(EmptyImage):
        L.apply_affine(T, fld, g)
