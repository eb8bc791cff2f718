"""Dirichlet Monge-Ampere solver on masked grids, plus radial oracles.

The discrete determinant in 2D is H11*H22 - H12^2 from centered second
differences (cross average for the mixed term); in 1D it degenerates to the
second difference.  The solver is a damped Newton iteration on that residual
with eigenvalue clamping so non-convex iterates cannot fake a positive
determinant; if Newton stalls, a Poisson-preconditioned fixed point
(the square-root trick  (lap w)^2 = |D^2 w|^2 + 2 det D^2 w  in 2D) takes
over before Newton is retried.  Boundary data w = 0 on the true boundary is
attached through the grid's sub-cell closure rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad

from .errors import NoConvergence
from .geometry import BOUNDARY, EXTERIOR, INTERIOR, Grid, ScalarField
from .linma import TensorField, discrete_hessian

DEFAULT_TOL_MA = 1e-8
DEFAULT_TOL_CONVEX = 1e-10


@dataclass(frozen=True)
class EllipticityBounds:
    lam: float
    Lam: float

    def __post_init__(self):
        if not (0 < self.lam <= self.Lam < math.inf):
            raise ValueError("need 0 < lam <= Lam < inf")


@dataclass
class MAProblem:
    domain: object
    f: ScalarField
    bounds: EllipticityBounds

    def __post_init__(self):
        interior = self.f.grid.mask == INTERIOR
        vals = self.f.values[interior]
        slack = 1e-12 * max(1.0, self.bounds.Lam)
        if vals.size and (vals.min() < self.bounds.lam - slack
                          or vals.max() > self.bounds.Lam + slack):
            raise ValueError("density leaves [lam, Lam] at an interior node")


@dataclass
class MASolverParams:
    tol_ma: float = DEFAULT_TOL_MA
    tol_convex: float = DEFAULT_TOL_CONVEX
    max_newton: int = 200
    stencil_width: int = 1
    max_fallback: int = 400


# ---------------------------------------------------------------------------
# stencil machinery
# ---------------------------------------------------------------------------

def stencil_directions(width, ndim):
    """Primitive lattice directions up to the given width (one per +/- pair)."""
    if ndim == 1:
        return [(1,)]
    dirs = []
    for p in range(0, width + 1):
        for q in range(-width, width + 1):
            if (p, q) <= (0, 0) or max(p, abs(q)) > width:
                continue
            if math.gcd(p, abs(q)) != 1:
                continue
            dirs.append((p, q))
    dirs.sort()
    return dirs


def directional_second_differences(w: ScalarField, width=1):
    """Wide-stencil second differences; returns {direction: (values, valid)}."""
    g = w.grid
    h = g.spacing
    v = w.values
    nonext = g.mask != EXTERIOR
    out = {}
    for d in stencil_directions(width, g.ndim):
        dn = np.array(d)
        norm2 = float(dn @ dn)
        plus = _shift_arr(v, tuple(dn))
        minus = _shift_arr(v, tuple(-dn))
        ok = nonext & _shift_arr(nonext, tuple(dn), False) & _shift_arr(nonext, tuple(-dn), False)
        vals = (plus - 2 * v + minus) / (h * h * norm2)
        out[d] = (np.where(ok, vals, 0.0), ok)
    return out


def convexity_margin(w: ScalarField, width=1) -> float:
    """Minimum wide-stencil second difference, centered at interior nodes.

    Band-centered stencils are excluded: band values carry the sub-cell
    Dirichlet closure, whose O(h^2) interpolation error is O(1) after two
    divided differences and says nothing about convexity of the solution.
    """
    interior = w.grid.mask == INTERIOR
    margin = math.inf
    for vals, ok in directional_second_differences(w, width).values():
        sel = ok & interior
        if sel.any():
            margin = min(margin, float(vals[sel].min()))
    return margin if margin < math.inf else 0.0


def _shift_arr(a, off, fill=0.0):
    out = np.full(a.shape, fill, dtype=a.dtype)
    src = tuple(slice(max(0, o), a.shape[k] + min(0, o)) for k, o in enumerate(off))
    dst = tuple(slice(max(0, -o), a.shape[k] - max(0, o)) for k, o in enumerate(off))
    out[dst] = a[src]
    return out


def _clamped_det_and_coeffs(H: TensorField, tol_convex):
    """Clamped determinant and its gradient w.r.t. the Hessian entries.

    Eigenvalues below -tol_convex are clamped; where both clamp, the
    coefficient matrix falls back to the identity so the Newton row stays
    elliptic.
    """
    if H.ndim == 1:
        det = H.comps[..., 0].copy()
        ones = np.ones_like(det)
        return det, (ones, None, None)
    a, b, c = H.comps[..., 0], H.comps[..., 1], H.comps[..., 2]
    mean = 0.5 * (a + c)
    rad = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    lam1, lam2 = mean - rad, mean + rad
    s1 = lam1 > -tol_convex
    s2 = lam2 > -tol_convex
    l1h = np.maximum(lam1, -tol_convex)
    l2h = np.maximum(lam2, -tol_convex)
    det = l1h * l2h

    # eigenvector of lam2: (b, lam2 - a), with an axis fallback when b ~ 0
    vx = np.where(np.abs(b) > 1e-300, b, np.where(a >= c, 1.0, 0.0))
    vy = np.where(np.abs(b) > 1e-300, lam2 - a, np.where(a >= c, 0.0, 1.0))
    nrm = np.sqrt(vx * vx + vy * vy)
    nrm = np.where(nrm > 0, nrm, 1.0)
    vx, vy = vx / nrm, vy / nrm
    # v1 = perp(v2)
    ux, uy = -vy, vx
    g11 = s1 * l2h * ux * ux + s2 * l1h * vx * vx
    g12 = s1 * l2h * ux * uy + s2 * l1h * vx * vy
    g22 = s1 * l2h * uy * uy + s2 * l1h * vy * vy
    dead = (~s1) & (~s2)
    g11 = np.where(dead, 1.0, g11)
    g22 = np.where(dead, 1.0, g22)
    g12 = np.where(dead, 0.0, g12)
    return det, (g11, g12, g22)


# ---------------------------------------------------------------------------
# sparse rows on the full lattice (exterior rows are identities)
# ---------------------------------------------------------------------------

class _System:
    def __init__(self, grid: Grid):
        self.grid = grid
        self.n = grid.size
        m = grid.mask.ravel()
        self.interior = np.flatnonzero(m == INTERIOR)
        self.band = np.flatnonzero(m == BOUNDARY)
        self.exterior = np.flatnonzero(m == EXTERIOR)
        self.strides = grid._flat_strides()

    def fixed_rows(self):
        """Closure rows for the band plus identity rows for the exterior."""
        rows, cols, vals = [], [], []
        rows.append(self.band)
        cols.append(self.band)
        vals.append(np.ones(self.band.size))
        partner = self.grid.closure_partner[self.band]
        weight = self.grid.closure_weight[self.band]
        keep = partner != self.band
        rows.append(self.band[keep])
        cols.append(partner[keep])
        vals.append(-weight[keep])
        rows.append(self.exterior)
        cols.append(self.exterior)
        vals.append(np.ones(self.exterior.size))
        return rows, cols, vals

    def coeff_rows(self, cxx, cxy, cyy):
        """Rows for  cxx D_xx + 2 cxy D_xy + cyy D_yy  at interior nodes."""
        g = self.grid
        h2 = g.spacing**2
        I = self.interior
        rows, cols, vals = [], [], []

        def add(offset, coeff):
            rows.append(I)
            cols.append(I + offset)
            vals.append(coeff)

        if g.ndim == 1:
            cx = cxx.ravel()[I] / h2
            add(0, -2 * cx)
            add(self.strides[0], cx)
            add(-self.strides[0], cx)
            return rows, cols, vals
        s0, s1 = int(self.strides[0]), int(self.strides[1])
        cx = cxx.ravel()[I] / h2
        cy = cyy.ravel()[I] / h2
        cm = cxy.ravel()[I] / (2 * h2)
        add(0, -2 * cx - 2 * cy)
        add(s0, cx)
        add(-s0, cx)
        add(s1, cy)
        add(-s1, cy)
        add(s0 + s1, cm)
        add(-s0 - s1, cm)
        add(s0 - s1, -cm)
        add(-s0 + s1, -cm)
        return rows, cols, vals

    def assemble(self, part_rows):
        rows, cols, vals = self.fixed_rows()
        r2, c2, v2 = part_rows
        rows += r2
        cols += c2
        vals += v2
        A = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )
        return A.tocsr()

    def closure_residual(self, w_flat):
        partner = self.grid.closure_partner[self.band]
        weight = self.grid.closure_weight[self.band]
        return w_flat[self.band] - weight * w_flat[partner]


def _laplacian(system: _System):
    g = system.grid
    ones = np.ones(g.shape)
    zeros = np.zeros(g.shape)
    if g.ndim == 1:
        return system.assemble(system.coeff_rows(ones, None, None))
    return system.assemble(system.coeff_rows(ones, zeros, ones))


def _poisson_solve(system, lap_lu, rhs_interior):
    b = np.zeros(system.n)
    b[system.interior] = rhs_interior
    return lap_lu.solve(b)


# ---------------------------------------------------------------------------
# the solver
# ---------------------------------------------------------------------------

def solve_ma(problem: MAProblem, grid: Grid, params: MASolverParams | None = None) -> ScalarField:
    """Solve det D^2 w = f, w = 0 on the boundary, for discretely convex w."""
    params = params or MASolverParams()
    system = _System(grid)
    f_flat = problem.f.values.ravel()
    lap = _laplacian(system)
    lap_lu = spla.splu(lap.tocsc())

    n = grid.ndim
    rhs0 = n * np.maximum(f_flat[system.interior], 0.0) ** (1.0 / n)
    w = _poisson_solve(system, lap_lu, rhs0)

    def residual(w_flat):
        fld = ScalarField(grid, w_flat.reshape(grid.shape))
        H = discrete_hessian(fld)
        det, coeffs = _clamped_det_and_coeffs(H, params.tol_convex)
        F = np.zeros(system.n)
        F[system.interior] = det.ravel()[system.interior] - f_flat[system.interior]
        F[system.band] = system.closure_residual(w_flat)
        F[system.exterior] = w_flat[system.exterior]
        return F, coeffs

    iterations = 0
    used_fallback = False
    F, coeffs = residual(w)
    for it in range(params.max_newton):
        res = np.abs(F[system.interior]).max() if system.interior.size else 0.0
        if res <= params.tol_ma:
            break
        iterations = it + 1
        J = system.assemble(system.coeff_rows(*_coeff_arrays(coeffs, grid)))
        delta = spla.spsolve(J.tocsc(), -F)
        f0 = float(np.linalg.norm(F))
        t = 1.0
        accepted = False
        while t >= 2.0**-30:
            F_new, coeffs_new = residual(w + t * delta)
            if np.linalg.norm(F_new) <= (1 - 1e-4 * t) * f0:
                w = w + t * delta
                F, coeffs = F_new, coeffs_new
                accepted = True
                break
            t *= 0.5
        if not accepted:
            w, F, coeffs, extra = _fallback(system, lap_lu, w, f_flat, grid, params, residual)
            iterations += extra
            used_fallback = True
    res = float(np.abs(F[system.interior]).max()) if system.interior.size else 0.0
    if res > params.tol_ma:
        w, F, coeffs, extra = _fallback(system, lap_lu, w, f_flat, grid, params, residual)
        iterations += extra
        used_fallback = True
        res = float(np.abs(F[system.interior]).max())
        if res > params.tol_ma:
            raise NoConvergence("Monge-Ampere solver did not reach tolerance",
                                residual=res, iterations=iterations)

    out = ScalarField(grid, w.reshape(grid.shape))
    margin = convexity_margin(out, params.stencil_width)
    if margin < -1e-8 * max(1.0, np.abs(w).max()):
        raise NoConvergence("solution violates discrete convexity",
                            residual=margin, iterations=iterations)
    out.meta.update({"iterations": iterations, "residual": res,
                     "convexity_margin": margin, "fallback": used_fallback})
    return out


def _coeff_arrays(coeffs, grid):
    if grid.ndim == 1:
        return coeffs[0], None, None
    return coeffs


def _fallback(system, lap_lu, w, f_flat, grid, params, residual):
    """Poisson fixed point: lap w <- sqrt(|D^2 w|^2 + 2 f) (2D), w'' <- f (1D)."""
    h = grid.spacing
    steps = 0
    if grid.ndim == 1:
        w = _poisson_solve(system, lap_lu, f_flat[system.interior])
        F, coeffs = residual(w)
        return w, F, coeffs, 1
    best = None
    for _ in range(params.max_fallback):
        steps += 1
        fld = ScalarField(grid, w.reshape(grid.shape))
        H = discrete_hessian(fld)
        a, b, c = H.comps[..., 0], H.comps[..., 1], H.comps[..., 2]
        rhs = np.sqrt(np.maximum(a * a + c * c + 2 * b * b
                                 + 2 * f_flat.reshape(grid.shape), 0.0))
        w_new = _poisson_solve(system, lap_lu, rhs.ravel()[system.interior])
        change = np.abs(w_new - w).max()
        w = w_new
        F, coeffs = residual(w)
        res = np.abs(F[system.interior]).max() if system.interior.size else 0.0
        if best is None or res < best:
            best = res
        if res <= params.tol_ma or change < 1e-14 * max(1.0, np.abs(w).max()):
            break
    F, coeffs = residual(w)
    return w, F, coeffs, steps


# ---------------------------------------------------------------------------
# oracles and verification
# ---------------------------------------------------------------------------

class RadialProfile:
    """Radial solution of the Monge-Ampere problem on a ball of radius R.

    For radial convex w the determinant is w''(r) (w'(r)/r)^(n-1), which
    integrates to (w'(r))^n = n * int_0^r f(s) s^(n-1) ds; the profile is
    recovered by adaptive quadrature with w(R) = 0.
    """

    def __init__(self, f, R, n, tol=1e-10):
        if n not in (1, 2):
            raise ValueError("dimension must be 1 or 2")
        self.f = f
        self.R = float(R)
        self.n = int(n)
        self.tol = float(tol)

    def dw(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for k, rk in enumerate(r):
            inner, _ = quad(lambda s: self.f(s) * s ** (self.n - 1), 0.0, rk,
                            epsabs=self.tol, epsrel=self.tol, limit=200)
            out[k] = (self.n * max(inner, 0.0)) ** (1.0 / self.n)
        return out

    def w(self, r):
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        for k, rk in enumerate(r):
            val, _ = quad(lambda s: self.dw(s)[0], rk, self.R,
                          epsabs=self.tol, epsrel=self.tol, limit=200)
            out[k] = -val
        return out

    def __call__(self, r):
        return self.w(r)


def radial_ma_oracle(f, R, n, tol=1e-10) -> RadialProfile:
    return RadialProfile(f, R, n, tol)


@dataclass
class MAResidualReport:
    max_residual: float
    mean_residual: float
    convexity_margin: float
    nodes: int


def verify_ma_residual(w: ScalarField, f: ScalarField, width=1) -> MAResidualReport:
    """Residual |det_h D^2 w - f| over interior nodes plus the convexity margin."""
    H = discrete_hessian(w)
    det = (H.comps[..., 0] if w.grid.ndim == 1
           else H.comps[..., 0] * H.comps[..., 2] - H.comps[..., 1] ** 2)
    sel = H.valid & (w.grid.mask == INTERIOR)
    resid = np.abs(det - f.values)[sel]
    return MAResidualReport(
        max_residual=float(resid.max()) if resid.size else 0.0,
        mean_residual=float(resid.mean()) if resid.size else 0.0,
        convexity_margin=convexity_margin(w, width),
        nodes=int(sel.sum()),
    )
