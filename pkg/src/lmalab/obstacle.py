"""Obstacle problems for the cofactor-driven operator, as complementarity.

Two independent solvers (projected SOR and a primal-dual active-set
iteration) plus an infimum-of-supersolutions iteration that lowers a
supersolution by harmonic replacement on balls.  The operator rows are
monotone: the mixed term uses the sign-adapted 7-point stencil when
|W12| <= min(W11, W22) and falls back to two directional second differences
along the nearest lattice eigendirections otherwise, so a discrete maximum
principle holds and the comparison harness can rely on it.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import contour
from ._kernels import psor_sweeps
from .errors import (EmptyFreeBoundary, InvalidInitialGuess, NoConvergence,
                     PreconditionViolation)
from .geometry import BOUNDARY, EXTERIOR, INTERIOR, ScalarField
from .linma import TensorField
from .ma import stencil_directions

DEFAULT_TOL_LCP = 1e-8


def contact_tolerance(phi: ScalarField) -> float:
    return 1e-10 * max(1.0, phi.max_abs())


@dataclass
class ObstacleProblem:
    """u >= phi, operator u <= 0, equality off the contact set, u = 0 on the boundary."""

    W: TensorField
    phi: ScalarField
    guard_warnings: list = field(default_factory=list)

    def __post_init__(self):
        g = self.grid
        band = g.mask == BOUNDARY
        if band.any() and self.phi.values[band].max() >= 0:
            self._warn("obstacle is not negative on the boundary band")
        interior = g.mask == INTERIOR
        if interior.any() and self.phi.values[interior].max() <= 0:
            self._warn("obstacle is nonpositive everywhere in the interior")

    def _warn(self, msg):
        self.guard_warnings.append(msg)
        warnings.warn(msg, stacklevel=3)

    @property
    def grid(self):
        return self.phi.grid


@dataclass
class LCPSolverParams:
    tol_lcp: float = DEFAULT_TOL_LCP
    omega: float = 1.5
    max_sweeps: int = 200_000
    check_every: int = 20
    max_outer: int = 200
    warm_sweeps: int = 100
    tol_op: float = 1e-6


@dataclass
class LCPSolution:
    u: ScalarField
    contact: np.ndarray
    comp_residual: float
    iterations: int
    solver: str
    problem: ObstacleProblem
    warnings: list = field(default_factory=list)

    @property
    def tol_contact(self):
        return contact_tolerance(self.problem.phi)


@dataclass
class FreeBoundary:
    points: np.ndarray
    polylines: list


# ---------------------------------------------------------------------------
# operator assembly: A = -L, monotone rows
# ---------------------------------------------------------------------------

def assemble_operator(W: TensorField, grid=None):
    """CSR matrix A = -L plus bookkeeping.

    Rows: interior nodes carry the negated operator; boundary-band nodes the
    Dirichlet closure; exterior nodes the identity.  Returns (A, info) where
    info lists nodes that needed the wide-stencil repair.
    """
    grid = grid or W.grid
    n = grid.size
    m = grid.mask.ravel()
    interior = np.flatnonzero(m == INTERIOR)
    band = np.flatnonzero(m == BOUNDARY)
    exterior = np.flatnonzero(m == EXTERIOR)
    h2 = grid.spacing**2
    strides = grid._flat_strides()

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.asarray(r))
        cols.append(np.asarray(c))
        vals.append(np.asarray(v, dtype=float))

    if not W.valid.ravel()[interior].all():
        raise PreconditionViolation("coefficient field undefined at an interior node")

    if grid.ndim == 1:
        w11 = W.comps[..., 0].ravel()[interior]
        s0 = int(strides[0])
        add(interior, interior, 2 * w11 / h2)
        add(interior, interior + s0, -w11 / h2)
        add(interior, interior - s0, -w11 / h2)
        repaired = np.array([], dtype=int)
    else:
        w11 = W.comps[..., 0].ravel()[interior]
        w12 = W.comps[..., 1].ravel()[interior]
        w22 = W.comps[..., 2].ravel()[interior]
        good = np.abs(w12) <= np.minimum(w11, w22) + 1e-14
        repaired = interior[~good]
        s0, s1 = int(strides[0]), int(strides[1])

        gi = interior[good]
        a, b, c = w11[good], w12[good], w22[good]
        absb = np.abs(b)
        sgn = np.where(b >= 0, 1.0, -1.0)
        # A = -L: negate the 7-point coefficients
        add(gi, gi, (2 * (a + c) - 2 * absb) / h2)
        add(gi, gi + s0, -(a - absb) / h2)
        add(gi, gi - s0, -(a - absb) / h2)
        add(gi, gi + s1, -(c - absb) / h2)
        add(gi, gi - s1, -(c - absb) / h2)
        diag_plus = (s0 + s1) * (sgn > 0) + (s0 - s1) * (sgn < 0)
        add(gi, gi + diag_plus.astype(int), -absb / h2)
        add(gi, gi - diag_plus.astype(int), -absb / h2)

        if repaired.size:
            nonext = (grid.mask != EXTERIOR).ravel()
            dirs = [np.array(d) for d in stencil_directions(3, 2)]
            dir_units = [d / np.linalg.norm(d) for d in dirs]
            for k, i in enumerate(repaired):
                a_, b_, c_ = (W.comps[..., 0].ravel()[i], W.comps[..., 1].ravel()[i],
                              W.comps[..., 2].ravel()[i])
                M = np.array([[a_, b_], [b_, c_]])
                evals, evecs = np.linalg.eigh(M)
                for lam, evec in zip(evals, evecs.T):
                    lam = max(lam, 0.0)
                    order = np.argsort([-abs(u_ @ evec) for u_ in dir_units])
                    placed = False
                    for di in order:
                        d = dirs[di]
                        off = int(d @ strides)
                        if nonext[i + off] and nonext[i - off]:
                            coef = lam / (h2 * float(d @ d))
                            add([i], [i], [2 * coef])
                            add([i], [i + off], [-coef])
                            add([i], [i - off], [-coef])
                            placed = True
                            break
                    if not placed:
                        # axis last resort for this eigen direction
                        ax = 0 if abs(evec[0]) >= abs(evec[1]) else 1
                        off = int(strides[ax])
                        coef = lam / h2
                        add([i], [i], [2 * coef])
                        add([i], [i + off], [-coef])
                        add([i], [i - off], [-coef])

    # Dirichlet closure and exterior identity
    add(band, band, np.ones(band.size))
    partner = grid.closure_partner[band]
    weight = grid.closure_weight[band]
    keep = partner != band
    add(band[keep], partner[keep], -weight[keep])
    add(exterior, exterior, np.ones(exterior.size))

    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    A.sum_duplicates()
    info = {"repaired": repaired, "interior": interior, "band": band, "exterior": exterior}
    if repaired.size:
        info["warning"] = (f"NonMonotoneStencil: {repaired.size} node(s) switched to "
                           "directional differences")
    return A, info


def complementarity_residual(A, u_flat, phi_flat, interior):
    """max over interior nodes of |min(-L u, u - phi)| (A = -L)."""
    Au = A @ u_flat
    r = np.minimum(Au[interior], u_flat[interior] - phi_flat[interior])
    return float(np.abs(r).max()) if interior.size else 0.0


def _closure_residual(A, u_flat, band):
    return float(np.abs((A @ u_flat)[band]).max()) if band.size else 0.0


# ---------------------------------------------------------------------------
# projected SOR
# ---------------------------------------------------------------------------

def solve_obstacle_psor(problem: ObstacleProblem, params: LCPSolverParams | None = None,
                        u0=None) -> LCPSolution:
    params = params or LCPSolverParams()
    if not 0 < params.omega < 2:
        raise ValueError("relaxation parameter must lie in (0, 2)")
    grid = problem.grid
    A, info = assemble_operator(problem.W, grid)
    phi_flat = problem.phi.values.ravel()
    interior = info["interior"]

    lower = np.full(grid.size, -np.inf)
    lower[interior] = phi_flat[interior]
    u = np.zeros(grid.size) if u0 is None else np.asarray(u0, dtype=float).ravel().copy()
    u[interior] = np.maximum(u[interior], phi_flat[interior])
    diag = A.diagonal()
    if (diag <= 0).any():
        raise PreconditionViolation("operator diagonal not positive",
                                    "degenerate coefficient field")
    omega_row = np.ones(grid.size)
    omega_row[interior] = params.omega

    sweeps = 0
    residual = np.inf
    while sweeps < params.max_sweeps:
        nstep = min(params.check_every, params.max_sweeps - sweeps)
        psor_sweeps(A.indptr, A.indices, A.data, diag, lower, u, omega_row, nstep)
        sweeps += nstep
        residual = max(complementarity_residual(A, u, phi_flat, interior),
                       _closure_residual(A, u, info["band"]))
        if not np.isfinite(residual):
            raise NoConvergence("projected SOR diverged", residual=residual,
                                iterations=sweeps)
        if residual <= params.tol_lcp:
            break
    if residual > params.tol_lcp:
        raise NoConvergence("projected SOR did not reach tolerance",
                            residual=residual, iterations=sweeps)
    return _make_solution(problem, u, residual, sweeps, "psor", info)


# ---------------------------------------------------------------------------
# primal-dual active set
# ---------------------------------------------------------------------------

def solve_obstacle_activeset(problem: ObstacleProblem,
                             params: LCPSolverParams | None = None) -> LCPSolution:
    params = params or LCPSolverParams()
    grid = problem.grid
    A, info = assemble_operator(problem.W, grid)
    phi_flat = problem.phi.values.ravel()
    interior = info["interior"]
    interior_mask = np.zeros(grid.size, dtype=bool)
    interior_mask[interior] = True

    # a short projected-SOR warm start locates the contact set to within a
    # few cells; from a cold {phi > 0} start the active set only peels one
    # ring of nodes per outer solve
    u = np.zeros(grid.size)
    if params.warm_sweeps > 0:
        lower = np.full(grid.size, -np.inf)
        lower[interior] = phi_flat[interior]
        u[interior] = np.maximum(0.0, phi_flat[interior])
        omega_row = np.ones(grid.size)
        omega_row[interior] = params.omega
        psor_sweeps(A.indptr, A.indices, A.data, A.diagonal(), lower, u,
                    omega_row, params.warm_sweeps)
        active = interior_mask & (u - phi_flat <= contact_tolerance(problem.phi))
    else:
        active = interior_mask & (phi_flat > 0)
    seen = set()
    outer = 0
    for outer in range(1, params.max_outer + 1):
        key = active.tobytes()
        if key in seen:
            raise NoConvergence("active-set iteration is cycling", iterations=outer)
        seen.add(key)
        M = _with_identity_rows(A, np.flatnonzero(active))
        rhs = np.where(active, phi_flat, 0.0)
        u = spla.spsolve(M.tocsc(), rhs)
        lam = A @ u
        new_active = interior_mask & ((lam - (u - phi_flat)) > 0)
        if (new_active == active).all():
            break
        active = new_active
    else:
        raise NoConvergence("active-set iteration exceeded its budget",
                            residual=complementarity_residual(A, u, phi_flat, interior),
                            iterations=params.max_outer)
    residual = max(complementarity_residual(A, u, phi_flat, interior),
                   _closure_residual(A, u, info["band"]))
    if residual > params.tol_lcp:
        raise NoConvergence("active-set solution misses tolerance",
                            residual=residual, iterations=outer)
    return _make_solution(problem, u, residual, outer, "activeset", info)


def _with_identity_rows(A, rows):
    """Copy of A with the given rows replaced by identity rows."""
    keep = np.ones(A.shape[0])
    keep[rows] = 0.0
    eye_part = sp.coo_matrix((np.ones(rows.size), (rows, rows)), shape=A.shape)
    return (sp.diags(keep) @ A + eye_part).tocsr()


def _make_solution(problem, u_flat, residual, iterations, solver, info):
    u = ScalarField(problem.grid, u_flat.reshape(problem.grid.shape))
    tol_c = contact_tolerance(problem.phi)
    nonext = problem.grid.mask != EXTERIOR
    contact = nonext & ((u.values - problem.phi.values) <= tol_c)
    warns = [info["warning"]] if "warning" in info else []
    u.meta.update({"solver": solver, "iterations": iterations})
    return LCPSolution(u=u, contact=contact, comp_residual=residual,
                       iterations=iterations, solver=solver, problem=problem,
                       warnings=warns + list(problem.guard_warnings))


# ---------------------------------------------------------------------------
# infimum-of-supersolutions iteration (harmonic replacement on balls)
# ---------------------------------------------------------------------------

@dataclass
class DroppingParams:
    tol_stop: float = 1e-10
    max_sweeps: int = 30_000
    ball_every: int = 25
    ball_stride: int = 0  # 0: pick from the grid size
    tol_op: float = 1e-6


def perron_dropping(problem: ObstacleProblem, v0: ScalarField,
                    params: DroppingParams | None = None) -> ScalarField:
    """Lower a supersolution to the solution by harmonic replacement.

    Every sweep relaxes each node to the operator-harmonic value of its
    one-node ball clamped at the obstacle (radius-h dropping); periodically,
    larger balls centered on a coarse sublattice are replaced by the solve of
    the boundary-value problem on the ball, with radius half the distance to
    the contact set or the domain boundary, whichever is closer.  Iterates
    never increase.
    """
    params = params or DroppingParams()
    grid = problem.grid
    A, info = assemble_operator(problem.W, grid)
    phi_flat = problem.phi.values.ravel()
    interior = info["interior"]

    v = np.asarray(v0.values, dtype=float).ravel().copy()
    _check_supersolution(A, v, phi_flat, info, params.tol_op,
                         contact_tolerance(problem.phi))
    np.maximum(v, np.where(grid.mask.ravel() == INTERIOR, phi_flat, -np.inf),
               out=v)

    lower = np.full(grid.size, -np.inf)
    lower[interior] = phi_flat[interior]
    diag = A.diagonal()
    omega_one = np.ones(grid.size)
    # centers must overlap the ball radii (half the distance rule), or the
    # passes stop contracting between the balls
    stride = params.ball_stride or max(2, max(grid.shape) // 16)
    tol_c = contact_tolerance(problem.phi)

    sweeps = 0
    drops = 0
    change_acc = 0.0
    while sweeps < params.max_sweeps:
        v_before = v.copy()
        psor_sweeps(A.indptr, A.indices, A.data, diag, lower, v, omega_one, 1)
        sweeps += 1
        ball_sweep = sweeps % params.ball_every == 0
        if ball_sweep:
            drops += _ball_pass(A, v, phi_flat, grid, stride, tol_c)
        np.minimum(v, v_before, out=v)
        change_acc = max(change_acc, float(np.abs(v - v_before).max()))
        # judge stagnation only across full cycles that include a ball pass
        if ball_sweep or drops == 0:
            if change_acc <= params.tol_stop:
                break
            if ball_sweep:
                change_acc = 0.0
    out = ScalarField(grid, v.reshape(grid.shape))
    out.meta.update({"sweeps": sweeps, "ball_drops": drops, "solver": "perron"})
    return out


def _check_supersolution(A, v, phi_flat, info, tol_op, tol_contact=1e-12):
    interior = info["interior"]
    if (v[interior] < phi_flat[interior] - max(tol_contact, 1e-12)).any():
        raise InvalidInitialGuess("initial iterate dips below the obstacle")
    Av = A @ v
    if interior.size and Av[interior].min() < -tol_op:
        raise InvalidInitialGuess("initial iterate is not a discrete supersolution")
    if info["band"].size and Av[info["band"]].min() < -tol_op:
        raise InvalidInitialGuess("initial iterate violates the boundary condition from below")
    if info["exterior"].size and np.abs(v[info["exterior"]]).max() > 0:
        raise InvalidInitialGuess("initial iterate is nonzero outside the domain")


def _ball_pass(A, v, phi_flat, grid, stride, tol_c):
    """Harmonic replacement on balls around a coarse sublattice of centers."""
    interior_n = (grid.mask == INTERIOR)
    contact_n = interior_n & ((v - phi_flat).reshape(grid.shape) <= tol_c)
    # distances measured in cells
    d_contact = ndimage.distance_transform_edt(~contact_n)
    d_bdry = ndimage.distance_transform_edt(interior_n)
    coords = [np.arange(s) for s in grid.shape]
    mesh = np.meshgrid(*coords, indexing="ij")
    centers = [range(0, s, stride) for s in grid.shape]
    drops = 0
    for c in itertools.product(*centers):
        if not interior_n[c]:
            continue
        r_cells = min(d_contact[c], d_bdry[c]) / 2.0
        if r_cells < 2.0:
            continue
        dist2 = sum((m - ck) ** 2 for m, ck in zip(mesh, c))
        ball = (dist2 < r_cells**2) & interior_n & ~contact_n
        idx = np.flatnonzero(ball.ravel())
        if idx.size == 0:
            continue
        rows = A[idx]
        sub = rows[:, idx].tocsr()
        rhs0 = sub @ v[idx] - rows @ v
        seed = contact_n.ravel()[idx]
        v_ball = _local_obstacle_solve(sub, rhs0, phi_flat[idx], seed)
        if v_ball is None:
            continue
        v[idx] = np.minimum(v[idx], np.maximum(v_ball, phi_flat[idx]))
        drops += 1
    return drops


def _local_obstacle_solve(sub, rhs, phi_loc, active_seed, max_inner=60):
    """Obstacle problem on a ball with Dirichlet data folded into ``rhs``.

    The replacement must be operator-harmonic where it stays above the
    obstacle and clamped at the obstacle where it would dip below; clamping
    an unconstrained solve after the fact (or an unsettled active set) leaves
    nodes next to the clamp with the wrong sign of the residual, and the
    glued iterate would stop being a supersolution.  Returns None unless the
    active set settles and the multipliers come out nonnegative.
    """
    n = sub.shape[0]
    active = active_seed.copy()
    x = None
    settled = False
    for _ in range(max_inner):
        keep = np.ones(n)
        keep[active] = 0.0
        eye_rows = sp.coo_matrix(
            (np.ones(int(active.sum())), (np.flatnonzero(active),
                                          np.flatnonzero(active))),
            shape=sub.shape)
        M = (sp.diags(keep) @ sub + eye_rows).tocsc()
        b = np.where(active, phi_loc, rhs)
        try:
            x = spla.spsolve(M, b)
        except RuntimeError:
            return None
        lam = sub @ x - rhs
        new_active = (lam - (x - phi_loc)) > 0
        if (new_active == active).all():
            settled = True
            break
        active = new_active
    if not settled or x is None:
        return None
    scale = 1.0 + float(np.abs(rhs).max())
    if lam.min() < -1e-8 * scale or (x - phi_loc).min() < -1e-10:
        return None
    return x


# ---------------------------------------------------------------------------
# free boundary and comparison harness
# ---------------------------------------------------------------------------

def free_boundary(sol: LCPSolution) -> FreeBoundary:
    """Sub-grid points of the contact-set boundary inside the domain."""
    grid = sol.problem.grid
    interior = grid.mask == INTERIOR
    if not (sol.contact & interior).any():
        raise EmptyFreeBoundary("contact set is empty")
    gap = sol.u.values - sol.problem.phi.values
    level = sol.tol_contact
    nonext = grid.mask != EXTERIOR
    if grid.ndim == 1:
        xs = contour.level_crossings_1d(grid, gap, level, valid=nonext)
        pts = xs[:, None]
        return FreeBoundary(points=pts, polylines=[pts])
    polylines = contour.marching_squares(grid, gap, level, valid=nonext)
    if not polylines:
        raise EmptyFreeBoundary("no level crossing found")
    pts = np.vstack(polylines)
    return FreeBoundary(points=pts, polylines=polylines)


def check_comparison(u: ScalarField, v: ScalarField, W: TensorField,
                     tol_op=1e-6, tol=1e-8):
    """Discrete comparison: subsolution below supersolution on the band stays below.

    Returns (True, None) or (False, witness) with the worst violating node.
    """
    grid = u.grid
    A, info = assemble_operator(W, grid)
    interior, band = info["interior"], info["band"]
    uf, vf = u.values.ravel(), v.values.ravel()
    Au, Av = A @ uf, A @ vf
    if interior.size and Au[interior].max() > tol_op:
        raise PreconditionViolation("subsolution", "L u >= -tol_op fails")
    if interior.size and Av[interior].min() < -tol_op:
        raise PreconditionViolation("supersolution", "L v <= tol_op fails")
    if band.size and (uf[band] - vf[band]).max() > 1e-12:
        raise PreconditionViolation("boundary-order", "u <= v on the band fails")
    nonext = np.flatnonzero(grid.mask.ravel() != EXTERIOR)
    diff = uf[nonext] - vf[nonext]
    worst = int(np.argmax(diff))
    if diff[worst] <= tol:
        return True, None
    node = nonext[worst]
    coords = grid.node_coordinates()[node]
    return False, {"node": int(node), "point": coords.tolist(),
                   "u": float(uf[node]), "v": float(vf[node]),
                   "gap": float(diff[worst])}
