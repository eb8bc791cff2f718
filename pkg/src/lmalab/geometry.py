"""Convex domains, masked grids, enclosing ellipsoids and normalization maps.

Coordinates are dimensionless.  Grids are uniform lattices; every node carries
a tag: EXTERIOR (outside the domain), INTERIOR (inside with the full one-cell
neighborhood inside), or BOUNDARY (inside but adjacent to the exterior).  The
boundary band is where Dirichlet data is attached: each band node stores the
sub-cell crossing of the true domain boundary along a lattice direction, so a
zero boundary condition can be imposed with second-order accuracy even when
the lattice does not line up with the boundary.  When a band node sits exactly
on the boundary the closure weight degenerates to zero and the condition is
the literal ``value = 0``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, EmptyImage

EXTERIOR = 0
INTERIOR = 1
BOUNDARY = 2

_CCW_TOL = 1e-12


def _as_points(points):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    return pts


class ConvexDomain:
    """A convex polygon (2D), a ball, or an interval (1D)."""

    def __init__(self, kind, *, vertices=None, center=None, radius=None):
        self.kind = kind
        if kind == "polygon":
            verts = _as_points(vertices)
            if verts.shape[0] < 3 or verts.shape[1] != 2:
                raise DegenerateInput("polygon needs at least 3 planar vertices")
            self.vertices = verts
            self._check_convex_ccw(verts)
            self.dimension = 2
        elif kind == "ball":
            c = np.atleast_1d(np.asarray(center, dtype=float))
            if radius is None or radius <= 0:
                raise DegenerateInput("ball needs a positive radius")
            self.center = c
            self.radius = float(radius)
            self.dimension = c.size
            if self.dimension not in (1, 2):
                raise DegenerateInput("only dimensions 1 and 2 are supported")
        else:
            raise ValueError(f"unknown domain kind {kind!r}")

    # -- constructors ------------------------------------------------------
    @classmethod
    def polygon(cls, vertices):
        return cls("polygon", vertices=vertices)

    @classmethod
    def ball(cls, center, radius):
        return cls("ball", center=center, radius=radius)

    @classmethod
    def interval(cls, a, b):
        """1D domain (a, b), stored as a ball around the midpoint."""
        if not b > a:
            raise DegenerateInput("interval needs b > a")
        return cls("ball", center=[(a + b) / 2.0], radius=(b - a) / 2.0)

    @staticmethod
    def _check_convex_ccw(verts):
        n = len(verts)
        area2 = 0.0
        for i in range(n):
            p, q, r = verts[i], verts[(i + 1) % n], verts[(i + 2) % n]
            cross = (q[0] - p[0]) * (r[1] - q[1]) - (q[1] - p[1]) * (r[0] - q[0])
            if cross < -1e-9 * max(1.0, np.abs(verts).max() ** 2):
                raise ValueError("polygon vertices must be convex and counterclockwise")
            area2 += p[0] * q[1] - q[0] * p[1]
        if area2 <= _CCW_TOL:
            raise DegenerateInput("polygon has empty interior")

    # -- predicates --------------------------------------------------------
    def contains(self, points, tol=1e-12):
        pts = _as_points(points)
        if self.kind == "ball":
            d = pts - self.center
            return np.einsum("ij,ij->i", d, d) <= (self.radius + tol) ** 2
        inside = np.ones(len(pts), dtype=bool)
        verts = self.vertices
        n = len(verts)
        scale = max(1.0, float(np.abs(verts).max()))
        for i in range(n):
            p, q = verts[i], verts[(i + 1) % n]
            e = q - p
            cross = e[0] * (pts[:, 1] - p[1]) - e[1] * (pts[:, 0] - p[0])
            inside &= cross >= -tol * scale
        return inside

    def bounding_box(self):
        if self.kind == "ball":
            return self.center - self.radius, self.center + self.radius
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def boundary_points(self, samples_per_edge=64):
        """Points on the boundary, dense enough for inclusion checks."""
        if self.kind == "ball":
            if self.dimension == 1:
                return np.array([[self.center[0] - self.radius],
                                 [self.center[0] + self.radius]])
            t = np.linspace(0.0, 2 * np.pi, max(8, samples_per_edge * 4), endpoint=False)
            return self.center + self.radius * np.stack([np.cos(t), np.sin(t)], axis=1)
        segs = []
        n = len(self.vertices)
        lam = np.linspace(0.0, 1.0, samples_per_edge, endpoint=False)[:, None]
        for i in range(n):
            p, q = self.vertices[i], self.vertices[(i + 1) % n]
            segs.append(p + lam * (q - p))
        return np.vstack(segs)

    def boundary_crossing(self, point, direction):
        """Smallest t > 0 with point + t*direction on the boundary.

        ``point`` must be inside; returns inf if the ray never leaves
        (cannot happen for a bounded domain with |direction| > 0).
        """
        p = np.atleast_1d(np.asarray(point, dtype=float))
        d = np.atleast_1d(np.asarray(direction, dtype=float))
        if self.kind == "ball":
            rel = p - self.center
            a = d @ d
            b = 2.0 * rel @ d
            c = rel @ rel - self.radius**2
            disc = b * b - 4 * a * c
            if disc < 0:
                return np.inf
            return (-b + np.sqrt(disc)) / (2 * a)
        best = np.inf
        n = len(self.vertices)
        for i in range(n):
            a_v, b_v = self.vertices[i], self.vertices[(i + 1) % n]
            e = b_v - a_v
            denom = d[0] * (-e[1]) - d[1] * (-e[0])
            if abs(denom) < 1e-300:
                continue
            rhs = a_v - p
            t = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / denom
            s = (d[0] * rhs[1] - d[1] * rhs[0]) / denom
            if t > 1e-14 and -1e-12 <= s <= 1 + 1e-12:
                best = min(best, t)
        return best


@dataclass(frozen=True)
class Ellipsoid:
    """{x : (x-c)^T M (x-c) <= 1} with M symmetric positive definite."""

    center: np.ndarray
    shape: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, float)))
        M = np.atleast_2d(np.asarray(self.shape, float))
        object.__setattr__(self, "shape", M)
        if np.abs(M - M.T).max() > 1e-12 * max(1.0, np.abs(M).max()):
            raise ValueError("ellipsoid shape matrix must be symmetric")
        if np.linalg.eigvalsh(M).min() <= 0:
            raise DegenerateInput("ellipsoid shape matrix must be positive definite")

    @property
    def dimension(self):
        return self.center.size

    def quadratic(self, points):
        d = _as_points(points) - self.center
        return np.einsum("ij,jk,ik->i", d, self.shape, d)

    def contains(self, points, tol=1e-9):
        return self.quadratic(points) <= 1.0 + tol

    def sqrt_shape(self):
        """Symmetric positive-definite square root of the shape matrix."""
        evals, evecs = np.linalg.eigh(self.shape)
        return (evecs * np.sqrt(evals)) @ evecs.T

    def volume(self):
        n = self.dimension
        unit = {1: 2.0, 2: np.pi}[n]
        return unit / np.sqrt(np.linalg.det(self.shape))

    def scaled(self, factor):
        """Dilation about the center by ``factor``."""
        return Ellipsoid(self.center, self.shape / factor**2)


@dataclass(frozen=True)
class AffineMap:
    """T(x) = A x + b with invertible A."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        b = np.atleast_1d(np.asarray(self.b, float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if abs(np.linalg.det(A)) <= 0:
            raise DegenerateInput("affine map must be invertible")

    @classmethod
    def identity(cls, n):
        return cls(np.eye(n), np.zeros(n))

    def __call__(self, points):
        pts = _as_points(points)
        return pts @ self.A.T + self.b

    def apply_one(self, point):
        return self.A @ np.atleast_1d(np.asarray(point, float)) + self.b

    def inverse(self):
        Ainv = np.linalg.inv(self.A)
        return AffineMap(Ainv, -Ainv @ self.b)

    def compose(self, other):
        """self after other: x -> self(other(x))."""
        return AffineMap(self.A @ other.A, self.A @ other.b + self.b)

    @property
    def det(self):
        return float(np.linalg.det(self.A))


# ---------------------------------------------------------------------------
# Minimum-volume enclosing ellipsoid (Khachiyan ascent with a duality gap stop)
# ---------------------------------------------------------------------------

def mvee(points, tol=1e-8, max_iter=200_000):
    """Minimum-volume enclosing ellipsoid of a point set.

    Barycentric-coordinate ascent with away steps (plain ascent only adds
    weight and decays stray weights sublinearly, which stalls on clouds with
    few support points).  Stops when the duality gap
    max_j q_j^T X^{-1} q_j / (n+1) - 1 falls below ``tol``.  The returned
    ellipsoid is inflated by the measured worst-case quadratic so containment
    of every input point holds exactly, not just up to the gap.
    """
    P = _as_points(points)
    m, n = P.shape
    if tol <= 0:
        raise ValueError("tol must be positive")
    if m < n + 1:
        raise DegenerateInput(f"need at least {n + 1} points, got {m}")
    centered = P - P.mean(axis=0)
    if np.linalg.matrix_rank(centered, tol=1e-12 * max(1.0, np.abs(P).max())) < n:
        raise DegenerateInput("points are affinely dependent (rank deficient)")

    Q = np.hstack([P, np.ones((m, 1))])
    u = np.full(m, 1.0 / m)
    d1 = float(n + 1)
    for _ in range(max_iter):
        X = Q.T @ (Q * u[:, None])
        kappa = np.einsum("ij,jk,ik->i", Q, np.linalg.inv(X), Q)
        j_add = int(np.argmax(kappa))
        gap_add = kappa[j_add] / d1 - 1.0
        if gap_add <= tol:
            break
        support = u > 0
        masked = np.where(support, kappa, np.inf)
        j_away = int(np.argmin(masked))
        gap_away = 1.0 - kappa[j_away] / d1
        if gap_add >= gap_away:
            j, kj = j_add, kappa[j_add]
            step = (kj - d1) / (d1 * (kj - 1.0))
        else:
            j, kj = j_away, kappa[j_away]
            step = (kj - d1) / (d1 * (kj - 1.0))
            step = max(step, -u[j] / (1.0 - u[j]))
        u *= 1.0 - step
        u[j] += step
        np.maximum(u, 0.0, out=u)

    c = P.T @ u
    Sigma = P.T @ (P * u[:, None]) - np.outer(c, c)
    M = np.linalg.inv(Sigma) / n
    ell = Ellipsoid(c, M)
    worst = float(ell.quadratic(P).max())
    if worst > 1.0:
        ell = Ellipsoid(c, M / worst)
    return ell


def normalize_domain(domain, tol=1e-9):
    """Affine map T with B_1(0) inside T(K) inside B_n(0).

    The map is built from the enclosing ellipsoid shape and then rescaled by
    the exact inradius of the mapped body about the ellipsoid center, so
    ellipsoidal domains map exactly onto the unit ball (identity for the unit
    ball itself) while the general sandwich follows from the enclosing
    ellipsoid shrunk by the dimension sitting inside K.  A is symmetric
    positive definite, which pins the rotational gauge.
    """
    n = domain.dimension
    if domain.kind == "ball":
        A = np.eye(n) / domain.radius
        return AffineMap(A, -A @ domain.center)
    ell = mvee(domain.vertices, tol=tol)
    A0 = ell.sqrt_shape()
    mapped = (domain.vertices - ell.center) @ A0.T
    r_in = np.inf
    for k in range(len(mapped)):
        a, b = mapped[k], mapped[(k + 1) % len(mapped)]
        ab = b - a
        t = np.clip(-(a @ ab) / max(float(ab @ ab), 1e-300), 0.0, 1.0)
        r_in = min(r_in, float(np.linalg.norm(a + t * ab)))
    if not np.isfinite(r_in) or r_in <= 0:
        raise DegenerateInput("domain has empty interior")
    A = A0 / r_in
    return AffineMap(A, -A @ ell.center)


# ---------------------------------------------------------------------------
# Grids and grid-sampled scalar fields
# ---------------------------------------------------------------------------

def _neighbor_offsets(n):
    if n == 1:
        return [(-1,), (1,)]
    offs = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)]
    # axis directions first: preferred for the boundary closure
    offs.sort(key=lambda o: (abs(o[0]) + abs(o[1]), o))
    return offs


class Grid:
    """Uniform lattice with an interior/boundary/exterior mask.

    ``closure_partner``/``closure_weight`` encode the Dirichlet band: for a
    band node b with inward partner p, a zero condition on the true boundary
    is imposed as  value[b] = weight_b * value[p].
    """

    def __init__(self, origin, spacing, shape, mask, domain=None,
                 closure_partner=None, closure_weight=None):
        self.origin = np.atleast_1d(np.asarray(origin, dtype=float))
        self.spacing = float(spacing)
        self.shape = tuple(int(s) for s in shape)
        self.mask = np.asarray(mask, dtype=np.int8).reshape(self.shape)
        self.domain = domain
        self.ndim = len(self.shape)
        size = int(np.prod(self.shape))
        if closure_partner is None:
            closure_partner = np.full(size, -1, dtype=np.int64)
            closure_weight = np.zeros(size)
        self.closure_partner = closure_partner
        self.closure_weight = closure_weight

    def check_mask(self):
        """Validate that interior nodes have non-exterior full neighborhoods.

        Holds by construction for grids built from a domain; ad-hoc masks
        (validity tags for interpolation, CSV round-trips) need not satisfy it.
        """
        inter = self.mask == INTERIOR
        if not inter.any():
            return
        ok = inter.copy()
        for off in _neighbor_offsets(self.ndim):
            shifted = np.full(self.shape, False)
            src = tuple(slice(max(0, -o), (self.shape[k] - o) if o > 0 else self.shape[k])
                        for k, o in enumerate(off))
            dst = tuple(slice(max(0, o), (self.shape[k] + o) if o < 0 else self.shape[k])
                        for k, o in enumerate(off))
            shifted[dst] = self.mask[src] != EXTERIOR
            ok &= shifted
        if not ok[inter].all():
            raise ValueError("interior node with an exterior lattice neighbor")

    @classmethod
    def from_domain(cls, domain, h, margin=1):
        lo, hi = domain.bounding_box()
        n = domain.dimension
        i0 = np.floor(lo / h).astype(int) - margin
        i1 = np.ceil(hi / h).astype(int) + margin
        origin = i0 * h
        shape = tuple(int(k) for k in (i1 - i0 + 1))
        axes = [origin[k] + h * np.arange(shape[k]) for k in range(n)]
        if n == 1:
            pts = axes[0][:, None]
        else:
            X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
            pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        inside = domain.contains(pts).reshape(shape)

        interior = inside.copy()
        for off in _neighbor_offsets(n):
            shifted = np.full(shape, False)
            src = tuple(slice(max(0, -o), (shape[k] - o) if o > 0 else shape[k])
                        for k, o in enumerate(off))
            dst = tuple(slice(max(0, o), (shape[k] + o) if o < 0 else shape[k])
                        for k, o in enumerate(off))
            shifted[dst] = inside[src]
            interior &= shifted
        mask = np.where(interior, INTERIOR, np.where(inside, BOUNDARY, EXTERIOR)).astype(np.int8)

        grid = cls(origin, h, shape, mask, domain=domain)
        grid.check_mask()
        grid._build_closure()
        return grid

    def _build_closure(self):
        """Sub-cell Dirichlet closure for every band node."""
        if self.domain is None:
            return
        mask_flat = self.mask.ravel()
        band = np.flatnonzero(mask_flat == BOUNDARY)
        offsets = _neighbor_offsets(self.ndim)
        strides = self._flat_strides()
        coords = self.node_coordinates()
        for fb in band:
            x_b = coords[fb]
            chosen = None
            for off in offsets:
                nb = fb + int(np.dot(off, strides))
                if not self._offset_in_bounds(fb, off):
                    continue
                if mask_flat[nb] != EXTERIOR:
                    continue
                opp = tuple(-o for o in off)
                if not self._offset_in_bounds(fb, opp):
                    continue
                pb = fb + int(np.dot(opp, strides))
                if mask_flat[pb] == EXTERIOR:
                    continue
                d = np.asarray(off, dtype=float)
                t = self.domain.boundary_crossing(x_b, d * self.spacing)
                ell = 1.0  # partner distance in units of the offset length
                s = min(max(t, 0.0), 1.0)
                self.closure_partner[fb] = pb
                self.closure_weight[fb] = s / (ell + s)
                chosen = off
                break
            if chosen is None:
                # isolated band node: pin to zero
                self.closure_partner[fb] = fb
                self.closure_weight[fb] = 0.0

    def _offset_in_bounds(self, flat, off):
        idx = np.unravel_index(flat, self.shape)
        return all(0 <= idx[k] + off[k] < self.shape[k] for k in range(self.ndim))

    def _flat_strides(self):
        return np.array([int(np.prod(self.shape[k + 1:])) for k in range(self.ndim)], dtype=int)

    # -- coordinates -------------------------------------------------------
    def axes(self):
        return [self.origin[k] + self.spacing * np.arange(self.shape[k])
                for k in range(self.ndim)]

    def node_coordinates(self):
        axes = self.axes()
        if self.ndim == 1:
            return axes[0][:, None]
        X, Y = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def index_of(self, point, snap=True):
        """Multi-index of the nearest node (snap) or the containing cell."""
        rel = (np.atleast_1d(np.asarray(point, float)) - self.origin) / self.spacing
        if snap:
            idx = np.rint(rel).astype(int)
        else:
            idx = np.floor(rel).astype(int)
        return tuple(int(np.clip(idx[k], 0, self.shape[k] - 1)) for k in range(self.ndim))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def count(self, tag):
        return int((self.mask == tag).sum())

    def with_mask(self, mask):
        return Grid(self.origin, self.spacing, self.shape, mask, domain=self.domain,
                    closure_partner=self.closure_partner.copy(),
                    closure_weight=self.closure_weight.copy())


@dataclass
class ScalarField:
    """Grid-sampled scalar; exterior nodes hold zeros and are ignored."""

    grid: Grid
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @classmethod
    def from_function(cls, grid, fn):
        pts = grid.node_coordinates()
        if grid.ndim == 1:
            vals = np.asarray(fn(pts[:, 0]), dtype=float)
        else:
            vals = np.asarray(fn(pts[:, 0], pts[:, 1]), dtype=float)
        vals = np.where(grid.mask.ravel() != EXTERIOR, vals, 0.0)
        return cls(grid, vals.reshape(grid.shape))

    @classmethod
    def constant(cls, grid, value):
        vals = np.where(grid.mask != EXTERIOR, float(value), 0.0)
        return cls(grid, vals)

    def copy(self):
        return ScalarField(self.grid, self.values.copy(), dict(self.meta))

    def interior_values(self):
        return self.values[self.grid.mask == INTERIOR]

    def max_abs(self, where=None):
        sel = self.grid.mask != EXTERIOR if where is None else where
        return float(np.abs(self.values[sel]).max())

    # -- interpolation -----------------------------------------------------
    def sample(self, points):
        """Multilinear interpolation.  Returns (values, valid)."""
        pts = _as_points(points)
        g = self.grid
        rel = (pts - g.origin) / g.spacing
        n = g.ndim
        valid = np.ones(len(pts), dtype=bool)
        for k in range(n):
            valid &= (rel[:, k] >= -1e-9) & (rel[:, k] <= g.shape[k] - 1 + 1e-9)
        base = np.clip(np.floor(rel).astype(int), 0, np.array(g.shape) - 2)
        frac = rel - base
        if n == 1:
            i = base[:, 0]
            t = frac[:, 0]
            m = g.mask
            corner_ok = (m[i] != EXTERIOR) & (m[i + 1] != EXTERIOR)
            vals = (1 - t) * self.values[i] + t * self.values[i + 1]
            valid &= corner_ok
        else:
            i, j = base[:, 0], base[:, 1]
            tx, ty = frac[:, 0], frac[:, 1]
            m = g.mask
            corner_ok = ((m[i, j] != EXTERIOR) & (m[i + 1, j] != EXTERIOR)
                         & (m[i, j + 1] != EXTERIOR) & (m[i + 1, j + 1] != EXTERIOR))
            v = self.values
            vals = ((1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i + 1, j]
                    + (1 - tx) * ty * v[i, j + 1] + tx * ty * v[i + 1, j + 1])
            valid &= corner_ok
        return vals, valid

    # -- differences -------------------------------------------------------
    def gradient(self):
        """Centered-difference gradient; returns (components, valid mask)."""
        g = self.grid
        h = g.spacing
        v = self.values
        nonext = g.mask != EXTERIOR
        comps = []
        valid = np.ones(g.shape, dtype=bool)
        for ax in range(g.ndim):
            d = np.zeros(g.shape)
            plus = np.roll(v, -1, axis=ax)
            minus = np.roll(v, 1, axis=ax)
            d = (plus - minus) / (2 * h)
            okp = np.roll(nonext, -1, axis=ax)
            okm = np.roll(nonext, 1, axis=ax)
            edge = np.zeros(g.shape, dtype=bool)
            sl0 = [slice(None)] * g.ndim
            sl1 = [slice(None)] * g.ndim
            sl0[ax] = 0
            sl1[ax] = -1
            edge[tuple(sl0)] = True
            edge[tuple(sl1)] = True
            valid &= okp & okm & ~edge & nonext
            comps.append(d)
        return comps, valid

    def gradient_at(self, point):
        """Interpolated centered-difference gradient at an arbitrary point."""
        p = np.atleast_2d(np.asarray(point, dtype=float))
        comps, valid = self.gradient()
        grad_grid = self.grid.with_mask(np.where(valid, INTERIOR, EXTERIOR).astype(np.int8))
        out = np.zeros(self.grid.ndim)
        for ax in range(self.grid.ndim):
            val, ok = ScalarField(grad_grid, comps[ax]).sample(p)
            if not ok[0]:
                raise ValueError("gradient not available at the requested point")
            out[ax] = val[0]
        return out

    # -- CSV ---------------------------------------------------------------
    def to_csv(self, path):
        g = self.grid
        coords = g.node_coordinates()
        tags = g.mask.ravel()
        vals = self.values.ravel()
        with open(path, "w") as fh:
            fh.write("x,y,value,tag\n")
            for k in range(g.size):
                x = coords[k, 0]
                y = coords[k, 1] if g.ndim == 2 else 0.0
                fh.write(f"{x:.17g},{y:.17g},{vals[k]:.17g},{int(tags[k])}\n")
        meta = {"origin": list(map(float, g.origin)),
                "spacing": g.spacing,
                "shape": list(g.shape)}
        with open(str(path) + ".meta.json", "w") as fh:
            json.dump(meta, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path):
        with open(str(path) + ".meta.json") as fh:
            meta = json.load(fh)
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        shape = tuple(meta["shape"])
        vals = data[:, 2].reshape(shape)
        tags = data[:, 3].astype(np.int8).reshape(shape)
        grid = Grid(meta["origin"], meta["spacing"], shape, tags)
        return cls(grid, vals)


def apply_affine(T, fld, target):
    """Resample ``fld`` under the affine map: output(y) = fld(T^{-1} y).

    Target nodes whose preimage leaves the source mask are tagged exterior in
    the returned field's grid.
    """
    Tinv = T.inverse()
    pts = target.node_coordinates()
    pre = Tinv(pts)
    vals, valid = fld.sample(pre)
    inside = valid.reshape(target.shape) & (target.mask != EXTERIOR)
    if not inside.any():
        raise EmptyImage("no target node has a valid preimage")
    interior = inside.copy()
    for off in _neighbor_offsets(target.ndim):
        shifted = np.full(target.shape, False)
        src = tuple(slice(max(0, -o), (target.shape[k] - o) if o > 0 else target.shape[k])
                    for k, o in enumerate(off))
        dst = tuple(slice(max(0, o), (target.shape[k] + o) if o < 0 else target.shape[k])
                    for k, o in enumerate(off))
        shifted[dst] = inside[src]
        interior &= shifted
    mask = np.where(interior, INTERIOR, np.where(inside, BOUNDARY, EXTERIOR)).astype(np.int8)
    out_grid = target.with_mask(mask)
    out_vals = np.where(inside, vals.reshape(target.shape), 0.0)
    return ScalarField(out_grid, out_vals)
