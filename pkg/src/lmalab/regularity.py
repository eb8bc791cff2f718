"""Rescaling around free-boundary points and gradient-growth measurements.

The rescale maps a section onto a normalized domain and renormalizes the
potential so its discrete determinant is ~1 there; obstacle ordering and the
determinant ratio identity are verified on the resampled fields and reported,
not assumed.  The exponent probe measures sup |Du - Du(y0)| on rings around
a free-boundary point and fits the growth rate in log-log; the gradient at
the anchor itself is taken from the obstacle side, where it is unambiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull

from .errors import InsufficientData, PreconditionViolation
from .geometry import (EXTERIOR, INTERIOR, ConvexDomain, Grid, ScalarField,
                       normalize_domain)
from .linma import discrete_hessian
from .obstacle import contact_tolerance
from .sections import extract_section


def alpha_from_theta(theta):
    """Growth exponent (1 - 5 theta) / (1 + theta) predicted by the iteration."""
    return (1.0 - 5.0 * theta) / (1.0 + theta)


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------

@dataclass
class RescaledProblem:
    T: object
    K: float
    wstar: ScalarField
    ustar: ScalarField
    phistar: ScalarField
    y0: np.ndarray
    checks: dict


def _det_at(w: ScalarField, x0):
    H = discrete_hessian(w)
    det_field = ScalarField(w.grid.with_mask(
        np.where(H.valid, INTERIOR, EXTERIOR).astype(np.int8)), H.det())
    val, ok = det_field.sample(np.atleast_2d(x0))
    if not ok[0]:
        raise PreconditionViolation("determinant", "not available at the base point")
    return float(val[0]), det_field


def rescale_problem(w: ScalarField, u: ScalarField, phi: ScalarField,
                    x0, h, target_spacing=None) -> RescaledProblem:
    """Normalize the section at x0 and pull all three fields onto it."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    sec = extract_section(w, x0, h)
    hull = ConvexHull(sec.polyline)
    hull_pts = sec.polyline[hull.vertices]
    domain = ConvexDomain.polygon(hull_pts)
    T = normalize_domain(domain)
    n = w.grid.ndim
    nu, det_field = _det_at(w, x0)
    if nu <= 0:
        raise PreconditionViolation("determinant", "nonpositive at the base point")
    K = abs(T.det) ** (2.0 / n) / nu ** (1.0 / n)

    image = ConvexDomain.polygon(T(hull_pts))
    spacing = target_spacing or w.grid.spacing * abs(T.det) ** (1.0 / n)
    target = Grid.from_domain(image, spacing)

    Tinv = T.inverse()
    pts = target.node_coordinates()
    pre = Tinv(pts)
    w0, _ = w.sample(x0[None, :])
    l_vals = w0[0] + (pre - x0) @ sec.grad0

    vw, okw = w.sample(pre)
    vu, oku = u.sample(pre)
    vp, okp = phi.sample(pre)
    ok = (okw & oku & okp).reshape(target.shape) & (target.mask != EXTERIOR)
    mask = np.where(ok, target.mask, EXTERIOR).astype(np.int8)
    tgrid = target.with_mask(mask)

    wstar = ScalarField(tgrid, np.where(ok, (K * (vw - l_vals - h)).reshape(target.shape), 0.0))
    ustar = ScalarField(tgrid, np.where(ok, vu.reshape(target.shape), 0.0))
    phistar = ScalarField(tgrid, np.where(ok, vp.reshape(target.shape), 0.0))
    y0 = T.apply_one(x0)

    # verification: ordering and the determinant ratio identity
    order_margin = float((ustar.values - phistar.values)[ok].min()) if ok.any() else 0.0
    Hs = discrete_hessian(wstar)
    dets = Hs.det()
    pre_dets, okd = det_field.sample(pre)
    sel = Hs.valid & okd.reshape(target.shape)
    ratio_dev = float(np.abs(dets - pre_dets.reshape(target.shape) / nu)[sel].max()) \
        if sel.any() else math.nan
    det_range = (float(dets[Hs.valid].min()), float(dets[Hs.valid].max())) \
        if Hs.valid.any() else (math.nan, math.nan)
    checks = {"order_margin": order_margin, "det_ratio_dev": ratio_dev,
              "det_star_range": det_range, "nu": nu}
    return RescaledProblem(T=T, K=K, wstar=wstar, ustar=ustar, phistar=phistar,
                           y0=y0, checks=checks)


# ---------------------------------------------------------------------------
# growth around a free-boundary point
# ---------------------------------------------------------------------------

@dataclass
class GrowthReport:
    h: float
    kappa: float
    s: float
    ratio: float
    exact_contact: bool


def growth_check(u: ScalarField, phi: ScalarField, w: ScalarField,
                 x0, heights) -> list:
    """kappa = sup |phi - l| on S_h, s = sup |u - l| on S_{h/2}, per height.

    l is the tangent plane of the obstacle at x0.  A vanishing kappa (affine
    obstacle) is flagged instead of divided by.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    p0, ok = phi.sample(x0[None, :])
    if not ok[0]:
        raise PreconditionViolation("base point", "obstacle unavailable at x0")
    dp0 = phi.gradient_at(x0)
    pts = phi.grid.node_coordinates()
    l_vals = (p0[0] + (pts - x0) @ dp0).reshape(phi.grid.shape)
    reports = []
    for h in heights:
        sh = extract_section(w, x0, h)
        shalf = extract_section(w, x0, h / 2)
        kappa = float(np.abs(phi.values - l_vals)[sh.node_mask].max())
        s = float(np.abs(u.values - l_vals)[shalf.node_mask].max())
        exact = kappa < 1e-14
        reports.append(GrowthReport(h=float(h), kappa=kappa, s=s,
                                    ratio=math.nan if exact else s / kappa,
                                    exact_contact=exact))
    return reports


# ---------------------------------------------------------------------------
# Hoelder exponent of the gradient
# ---------------------------------------------------------------------------

@dataclass
class ExponentFit:
    radii: np.ndarray
    values: np.ndarray
    alpha_hat: float
    intercept: float
    residual: float
    stderr: float
    samples: np.ndarray


def _gradient_sampler(fld: ScalarField):
    comps, valid = fld.gradient()
    ggrid = fld.grid.with_mask(np.where(valid, INTERIOR, EXTERIOR).astype(np.int8))
    fields = [ScalarField(ggrid, c) for c in comps]

    def at(points):
        vals = np.empty((len(points), fld.grid.ndim))
        ok = np.ones(len(points), dtype=bool)
        for ax, f in enumerate(fields):
            v, o = f.sample(points)
            vals[:, ax] = v
            ok &= o
        return vals, ok

    return at


def holder_exponent(u: ScalarField, phi: ScalarField, y0, radii,
                    n_angles=64) -> ExponentFit:
    """Log-log slope of M(r) = sup over the noncontact ring of |Du - Du(y0)|.

    Rings carry ``n_angles`` equispaced samples; samples in the contact set
    or without a valid interpolated gradient are dropped.  Du(y0) is the
    obstacle gradient at y0.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    du = _gradient_sampler(u)
    du0 = phi.gradient_at(y0)
    tol_c = contact_tolerance(phi)
    gap_grid = u.grid
    gap = ScalarField(gap_grid, u.values - phi.values)

    rs, ms, counts = [], [], []
    for r in sorted(np.asarray(list(radii), dtype=float), reverse=True):
        if u.grid.ndim == 1:
            pts = np.array([[y0[0] - r], [y0[0] + r]])
        else:
            t = 2 * np.pi * np.arange(n_angles) / n_angles
            pts = y0 + r * np.stack([np.cos(t), np.sin(t)], axis=1)
        grads, okg = du(pts)
        gvals, okc = gap.sample(pts)
        keep = okg & okc & (gvals > tol_c)
        if not keep.any():
            continue
        diff = np.linalg.norm(grads[keep] - du0, axis=1)
        rs.append(r)
        ms.append(float(diff.max()))
        counts.append(int(keep.sum()))
    if len(rs) < 4:
        raise InsufficientData(f"only {len(rs)} usable radii (need >= 4)")
    rs = np.array(rs)
    ms = np.array(ms)
    if (ms <= 0).any():
        raise InsufficientData("vanishing ring maximum; gradient already matched")
    lx, ly = np.log(rs), np.log(ms)
    slope, intercept = np.polyfit(lx, ly, 1)
    fit = slope * lx + intercept
    residual = float(np.sqrt(np.mean((ly - fit) ** 2)))
    dof = max(len(rs) - 2, 1)
    sxx = float(((lx - lx.mean()) ** 2).sum())
    stderr = float(np.sqrt(((ly - fit) ** 2).sum() / dof / sxx)) if sxx > 0 else math.inf
    return ExponentFit(radii=rs, values=ms, alpha_hat=float(slope),
                       intercept=float(intercept), residual=residual,
                       stderr=stderr, samples=np.array(counts))


# ---------------------------------------------------------------------------
# two-case pair modulus near the free boundary
# ---------------------------------------------------------------------------

@dataclass
class ModulusReport:
    gamma: float
    case1_max: float
    case1_count: int
    case2_max: float
    case2_count: int
    chain_max: float
    skipped: int


def two_case_modulus(u: ScalarField, phi: ScalarField, pairs, gamma,
                     fb_points) -> ModulusReport:
    """|Du(y1) - Du(y2)| / |y1 - y2|^gamma over point pairs, split by depth.

    A pair is near-interior (case 1) when its separation is at most half the
    larger distance to the free boundary, boundary-dominated (case 2)
    otherwise; pairs fully inside the contact set are skipped.  ``chain_max``
    reports the worst |y1' - y2'|^gamma / |y1 - y2|^gamma over case-2 pairs,
    where y' is the nearest free-boundary point.
    """
    fb = np.atleast_2d(np.asarray(fb_points, dtype=float))
    du = _gradient_sampler(u)
    tol_c = contact_tolerance(phi)
    gap = ScalarField(u.grid, u.values - phi.values)

    c1, c2, chain = 0.0, 0.0, 0.0
    n1 = n2 = skipped = 0
    for y1, y2 in pairs:
        y1 = np.atleast_1d(np.asarray(y1, dtype=float))
        y2 = np.atleast_1d(np.asarray(y2, dtype=float))
        pts = np.stack([y1, y2])
        gv, okc = gap.sample(pts)
        if not okc.all():
            skipped += 1
            continue
        in_contact = gv <= tol_c
        if in_contact.all():
            skipped += 1
            continue
        grads, okg = du(pts)
        if not okg.all():
            skipped += 1
            continue
        sep = float(np.linalg.norm(y1 - y2))
        if sep == 0:
            skipped += 1
            continue
        d1 = float(np.linalg.norm(fb - y1, axis=1).min())
        d2 = float(np.linalg.norm(fb - y2, axis=1).min())
        ratio = float(np.linalg.norm(grads[0] - grads[1])) / sep**gamma
        if sep <= 0.5 * max(d1, d2):
            c1 = max(c1, ratio)
            n1 += 1
        else:
            n2 += 1
            c2 = max(c2, ratio)
            y1p = fb[np.linalg.norm(fb - y1, axis=1).argmin()]
            y2p = fb[np.linalg.norm(fb - y2, axis=1).argmin()]
            chain = max(chain, float(np.linalg.norm(y1p - y2p)) ** gamma / sep**gamma)
    return ModulusReport(gamma=float(gamma), case1_max=c1, case1_count=n1,
                         case2_max=c2, case2_count=n2, chain_max=chain,
                         skipped=skipped)
