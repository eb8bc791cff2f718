"""Sections of convex grid functions and the geometric probes built on them.

A section at x0 with height h is the sublevel set of w below its tangent
plane at x0 raised by h.  The probes measure: how section radii scale with
height, how bounded positive operator-harmonic functions stay on sections
(sup/inf quotient), and how close det-normalized sections stay to the
reference ball under repeated height powers (the normalization iteration).

The iteration measures its defect delta_k directly from the mapped radii;
the geometric recursion the defect is expected to satisfy is fitted
afterwards as the claim under test, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import contour
from .errors import NonMonotoneStencil, PreconditionViolation, SectionEscapes
from .geometry import BOUNDARY, EXTERIOR, INTERIOR, ScalarField, mvee
from .linma import TensorField, discrete_hessian
from .obstacle import assemble_operator


@dataclass
class Section:
    x0: np.ndarray
    height: float
    node_mask: np.ndarray
    polyline: np.ndarray
    grad0: np.ndarray
    inradius: float
    circumradius: float
    grid: object

    def nodes(self):
        return self.grid.node_coordinates()[self.node_mask.ravel()]


def _tangent_deviation(w: ScalarField, x0):
    """g = w - w(x0) - Dw(x0).(x - x0) on the nodes."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    w0, ok = w.sample(x0[None, :])
    if not ok[0]:
        raise PreconditionViolation("base point", "x0 outside the field")
    g0 = w.gradient_at(x0)
    pts = w.grid.node_coordinates()
    g = w.values.ravel() - w0[0] - (pts - x0) @ g0
    return g.reshape(w.grid.shape), g0


def _polyline_radii(x0, polyline):
    """Radii about x0 from the contour vertices.

    Vertices sit on the level set itself (quadratic edge refinement), so the
    vertex extremes track the true section radii without the O(h^2/R) sagitta
    bias that chord distances of the inscribed polygon would introduce.
    """
    d = np.linalg.norm(polyline - x0, axis=1)
    return float(d.min()), float(d.max())


def extract_section(w: ScalarField, x0, h) -> Section:
    """Connected sublevel node set {w <= tangent + h} around x0 with its contour."""
    if h <= 0:
        raise ValueError("section height must be positive")
    grid = w.grid
    g, g0 = _tangent_deviation(w, x0)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    nonext = grid.mask != EXTERIOR
    sub = (g <= h) & nonext
    labels, _ = ndimage.label(sub)
    seed = grid.index_of(x0)
    if not sub[seed]:
        raise PreconditionViolation("base point", "x0 not inside its own section")
    comp = labels == labels[seed]
    if (grid.mask[comp] == BOUNDARY).any():
        raise SectionEscapes(f"section of height {h} touches the domain boundary")

    if grid.ndim == 1:
        xs = contour.level_crossings_1d(grid, g, h, valid=nonext)
        xs = xs[np.argsort(np.abs(xs - x0[0]))][:2]
        xs = np.sort(xs)
        poly = xs[:, None]
        dists = np.abs(xs - x0[0])
        inr, circ = float(dists.min()), float(dists.max())
        return Section(x0, float(h), comp, poly, g0, inr, circ, grid)

    halo = ndimage.binary_dilation(comp, structure=np.ones((3, 3), dtype=bool)) & nonext
    polylines = contour.marching_squares(grid, g, h, valid=nonext, cell_mask=halo)
    if not polylines:
        raise PreconditionViolation("section contour", "no level crossing found")
    # keep the loop enclosing x0: the one whose vertices are nearest on average
    best = min(polylines, key=lambda pl: np.linalg.norm(pl.mean(axis=0) - x0))
    inr, circ = _polyline_radii(x0, best)
    return Section(x0, float(h), comp, best, g0, inr, circ, grid)


def section_convexity_defect(section: Section) -> int:
    """Nodes missing from lattice-line convexity of the node set (0 = convex)."""
    m = section.node_mask
    if m.ndim == 1:
        idx = np.flatnonzero(m)
        return int(idx.max() - idx.min() + 1 - idx.size) if idx.size else 0
    defect = 0
    for axis_lines in (m, m.T):
        for line in axis_lines:
            idx = np.flatnonzero(line)
            if idx.size:
                defect += int(idx.max() - idx.min() + 1 - idx.size)
    nx, ny = m.shape
    for offset in range(-nx + 1, ny):
        line = np.diagonal(m, offset=offset)
        idx = np.flatnonzero(line)
        if idx.size:
            defect += int(idx.max() - idx.min() + 1 - idx.size)
        line2 = np.diagonal(m[::-1], offset=offset)
        idx2 = np.flatnonzero(line2)
        if idx2.size:
            defect += int(idx2.max() - idx2.min() + 1 - idx2.size)
    return defect


# ---------------------------------------------------------------------------
# section-vs-ball scaling probe
# ---------------------------------------------------------------------------

@dataclass
class SectionProbeResult:
    heights: np.ndarray
    inradii: np.ndarray
    circumradii: np.ndarray
    C1: float
    C2: float
    sigma: float
    fit_residual: float

    def inclusions_hold(self):
        lower = self.C1 * self.heights <= self.inradii + 1e-12
        upper = self.circumradii <= self.C2 * self.heights**self.sigma + 1e-12
        return bool(lower.all() and upper.all())


def section_ball_probe(w: ScalarField, x0, heights) -> SectionProbeResult:
    """Radii of sections across heights with fitted scaling constants.

    sigma and C2 come from a log-log least-squares fit of the circumradius,
    with C2 then raised to enclose every sample; C1 is the worst measured
    inradius-to-height ratio, so both inclusions hold on the probed range by
    construction and the fit residual reports how tight the power law is.
    """
    hs = np.sort(np.asarray(list(heights), dtype=float))[::-1]
    recs = [extract_section(w, x0, h) for h in hs]
    r_in = np.array([s.inradius for s in recs])
    r_out = np.array([s.circumradius for s in recs])
    logs_h = np.log(hs)
    logs_r = np.log(r_out)
    sigma, logc2 = np.polyfit(logs_h, logs_r, 1)
    resid = float(np.abs(logs_r - (sigma * logs_h + logc2)).max())
    C2 = float(np.exp(logc2))
    C2 = max(C2, float((r_out / hs**sigma).max()))
    C1 = float((r_in / hs).min())
    return SectionProbeResult(hs, r_in, r_out, C1, C2, float(sigma), resid)


# ---------------------------------------------------------------------------
# Harnack quotient on sections
# ---------------------------------------------------------------------------

def harnack_quotient(W: TensorField, w: ScalarField, x0, h, boundary_data) -> float:
    """sup/inf over S_h of the operator-harmonic extension of positive data on S_2h."""
    outer = extract_section(w, x0, 2 * h)
    inner = extract_section(w, x0, h)
    grid = w.grid
    A, _ = assemble_operator(W, grid)

    comp = outer.node_mask.ravel()
    members = np.flatnonzero(comp)
    member_set = np.zeros(grid.size, dtype=bool)
    member_set[members] = True
    # unknown rows: operator support fully inside the section node set
    unknown = []
    for i in members:
        cols = A.indices[A.indptr[i]:A.indptr[i + 1]]
        if member_set[cols].all() and grid.mask.ravel()[i] == INTERIOR:
            unknown.append(i)
    unknown = np.asarray(unknown, dtype=int)
    dirichlet = members[~np.isin(members, unknown)]
    if unknown.size == 0:
        raise PreconditionViolation("section size", "no solvable interior node")

    pts = grid.node_coordinates()
    gvals = np.asarray(boundary_data(pts[dirichlet]), dtype=float)
    if (gvals <= 0).any():
        raise ValueError("boundary data must be positive")

    v = np.zeros(grid.size)
    v[dirichlet] = gvals
    sub = A[unknown][:, unknown]
    rhs = -(A[unknown] @ v)
    v[unknown] = spla.spsolve(sub.tocsc(), rhs)

    if v[unknown].min() <= 0:
        raise NonMonotoneStencil("harmonic extension of positive data dipped to zero")
    sel = inner.node_mask.ravel()
    vals = v[np.flatnonzero(sel)]
    return float(vals.max() / vals.min())


# ---------------------------------------------------------------------------
# iterated normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationParams:
    h0: float
    theta: float = 0.2
    eps: float = 0.0
    k_max: int = 4
    C_cfg: float = 2.0
    mu0: float = 0.5
    mvee_tol: float = 1e-10

    def __post_init__(self):
        if not 0 < self.h0 <= self.mu0:
            raise ValueError("base height must lie in (0, mu0]")
        if not 0 < self.theta <= 0.2:
            raise ValueError("theta must lie in (0, 1/5]")
        if self.eps < 0:
            raise ValueError("determinant pinch must be nonnegative")
        if self.eps > 0:
            admissible = self.theta * self.h0 * math.log(1.0 / self.h0) / (2 * self.C_cfg)
            if math.sqrt(self.eps) > admissible:
                raise ValueError(
                    f"sqrt(eps)={math.sqrt(self.eps):.3g} exceeds the admissible "
                    f"theta*h0*ln(1/h0)/(2C) = {admissible:.3g}")


@dataclass
class NormalizationStep:
    k: int
    A: np.ndarray
    delta: float
    r_in: float
    r_out: float
    center_offset: np.ndarray

    def __post_init__(self):
        lo, hi = math.sqrt(2) * (1 - self.delta), math.sqrt(2) * (1 + self.delta)
        if not (lo - 1e-12 <= self.r_in <= self.r_out <= hi + 1e-12):
            raise ValueError("radii violate the recorded defect sandwich")


@dataclass
class NormalizationResult:
    steps: list
    nu: float
    truncated_reason: str | None
    params: IterationParams

    def deltas(self):
        return np.array([s.delta for s in self.steps])


def iterate_normalization(w: ScalarField, x0, params: IterationParams) -> NormalizationResult:
    """Extract sections at powers of the base height and round them.

    Heights are taken in the determinant-normalized scale (the local discrete
    determinant nu at x0 rescales them), each section is normalized by the
    det-1 square-root factor of its enclosing ellipsoid, and the defect
    delta_k records how far the h0^{-k/2}-scaled image strays from the
    radius-sqrt(2) ball.  Stops early when fewer than 10 cells span the
    section inradius.
    """
    grid = w.grid
    n = grid.ndim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    H = discrete_hessian(w)
    det = H.det()
    det_field = ScalarField(grid.with_mask(
        np.where(H.valid, INTERIOR, EXTERIOR).astype(np.int8)), det)
    nu_arr, ok = det_field.sample(x0[None, :])
    if not ok[0] or nu_arr[0] <= 0:
        raise PreconditionViolation("determinant", "no positive discrete determinant at x0")
    nu = float(nu_arr[0])

    # determinant pinch check on the base section
    base = extract_section(w, x0, nu ** (1.0 / n) * params.h0)
    slack = 20.0 * grid.spacing**2 + 1e-12
    ratio = det[base.node_mask & H.valid] / nu
    if ratio.size and (ratio.min() < 1 - params.eps - slack
                       or ratio.max() > 1 + params.eps + slack):
        raise PreconditionViolation(
            "determinant pinch",
            f"det/nu in [{ratio.min():.6f}, {ratio.max():.6f}] exceeds 1 +/- "
            f"{params.eps + slack:.2e}")

    steps = []
    truncated = None
    for k in range(1, params.k_max + 1):
        h_phys = nu ** (1.0 / n) * params.h0**k
        try:
            sec = extract_section(w, x0, h_phys)
        except SectionEscapes:
            truncated = f"section at step {k} reaches the domain boundary"
            break
        if sec.inradius < 10 * grid.spacing:
            truncated = (f"resolution floor at step {k}: inradius "
                         f"{sec.inradius:.3g} < 10 cells")
            break
        ell = mvee(sec.polyline[:-1] if np.array_equal(sec.polyline[0], sec.polyline[-1])
                   else sec.polyline, tol=params.mvee_tol)
        A0 = ell.sqrt_shape()
        Ak = A0 / np.linalg.det(A0) ** (1.0 / n)
        scale = params.h0 ** (-k / 2.0)
        mapped = scale * (sec.polyline - x0) @ Ak.T
        dist = np.linalg.norm(mapped, axis=1)
        r_out = float(dist.max())
        r_in = float(dist.min())
        delta = max(abs(r_out / math.sqrt(2) - 1.0), abs(1.0 - r_in / math.sqrt(2)))
        steps.append(NormalizationStep(
            k=k, A=Ak, delta=float(delta), r_in=float(r_in), r_out=float(r_out),
            center_offset=scale * Ak @ (ell.center - x0)))
    return NormalizationResult(steps, nu, truncated, params)


@dataclass
class RecursionFit:
    C: float
    profile: np.ndarray
    dominated: bool
    contraction_ok: bool


def fit_delta_recursion(result: NormalizationResult) -> RecursionFit:
    """Fit the one-step defect recursion delta_k <= C (delta_{k-1} sqrt(h0) + sqrt(eps)/h0).

    C is the worst measured one-step ratio; the closed profile
    (C sqrt(h0))^k + 2 C sqrt(eps)/h0 then dominates every measured defect
    provided C sqrt(h0) <= 1/2, which is reported as ``contraction_ok``.
    """
    p = result.params
    deltas = result.deltas()
    if deltas.size == 0:
        return RecursionFit(0.0, np.array([]), True, True)
    if deltas.max() <= 1e-12:
        # defects at roundoff: one-step ratios would divide noise by noise
        return RecursionFit(0.0, np.zeros_like(deltas) + 1e-12, True, True)
    sq_h0 = math.sqrt(p.h0)
    drive = math.sqrt(p.eps) / p.h0
    prev = np.concatenate([[0.0], deltas[:-1]])
    denom = prev * sq_h0 + drive
    usable = denom > 0
    C = float((deltas[usable] / denom[usable]).max()) if usable.any() else 0.0
    ks = np.arange(1, deltas.size + 1)
    profile = (C * sq_h0) ** ks + 2 * C * drive
    return RecursionFit(C, profile,
                        bool((deltas <= profile + 1e-12).all()),
                        C * sq_h0 <= 0.5)


# ---------------------------------------------------------------------------
# engulfing-style half-section check
# ---------------------------------------------------------------------------

def engulfing_check(w: ScalarField, x0, h):
    """Half-section inclusion about the center of mass, with measured beta.

    Returns (half_inside, beta): whether the half-dilated S_h contour sits
    inside S_{h/2}, and the smallest dilation factor of S_h (about its
    center of mass) containing S_{h/2}.
    """
    big = extract_section(w, x0, h)
    small = extract_section(w, x0, h / 2)
    g, _ = _tangent_deviation(w, x0)
    grid = w.grid
    com = big.nodes().mean(axis=0)
    gf = ScalarField(grid.with_mask(np.where(grid.mask != EXTERIOR, INTERIOR,
                                             EXTERIOR).astype(np.int8)), g)
    shrunk = com + 0.5 * (big.polyline - com)
    vals, ok = gf.sample(shrunk)
    half_inside = bool(ok.all() and (vals <= h / 2 + 1e-9).all())
    beta = 0.0
    for q in small.polyline:
        beta = max(beta, _polyline_gauge(com, q, big.polyline))
    return half_inside, float(beta)


def _polyline_gauge(center, point, polyline):
    """Gauge of ``point`` w.r.t. the region bounded by ``polyline``, about ``center``."""
    d = point - center
    nd = np.linalg.norm(d)
    if nd == 0:
        return 0.0
    d = d / nd
    best = math.inf
    for i in range(len(polyline) - 1):
        a, b = polyline[i], polyline[i + 1]
        e = b - a
        denom = d[0] * (-e[1]) - d[1] * (-e[0])
        if abs(denom) < 1e-300:
            continue
        rhs = a - center
        t = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / denom
        s = (d[0] * rhs[1] - d[1] * rhs[0]) / denom
        if t > 0 and -1e-9 <= s <= 1 + 1e-9:
            best = min(best, t)
    if best is math.inf:
        return math.inf
    return nd / best
