"""Discrete Hessians, cofactor fields, and the induced second-order operator.

The operator acts on a scalar u as the trace of (cofactor matrix) x (Hessian
of u).  In 2D the cofactor of H is [[H22, -H12], [-H12, H11]]; in 1D it is
the constant 1, so the operator reduces to the plain second difference.

Everything here is pointwise and exact on quadratic polynomials: second
differences are centered, the mixed term uses the 4-point cross average.
A node contributes only if its full one-cell neighborhood is non-exterior;
excluded nodes are counted on the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import EXTERIOR, ScalarField


@dataclass
class TensorField:
    """Per-node symmetric matrix samples on a grid.

    ``comps`` holds (W11,) in 1D and (W11, W12, W22) in 2D, shape
    grid.shape + (k,).  Symmetry is exact by storage.
    """

    grid: object
    comps: np.ndarray
    valid: np.ndarray
    excluded: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def ndim(self):
        return self.grid.ndim

    @classmethod
    def constant(cls, grid, matrix):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if grid.ndim == 1:
            comps = np.full(grid.shape + (1,), M[0, 0])
        else:
            comps = np.empty(grid.shape + (3,))
            comps[..., 0] = M[0, 0]
            comps[..., 1] = M[0, 1]
            comps[..., 2] = M[1, 1]
        valid = grid.mask != EXTERIOR
        return cls(grid, comps, valid)

    def matrices(self):
        """Dense (..., n, n) view of the stored matrices."""
        if self.ndim == 1:
            return self.comps[..., :1, None]
        out = np.empty(self.grid.shape + (2, 2))
        out[..., 0, 0] = self.comps[..., 0]
        out[..., 0, 1] = out[..., 1, 0] = self.comps[..., 1]
        out[..., 1, 1] = self.comps[..., 2]
        return out

    def det(self):
        if self.ndim == 1:
            return self.comps[..., 0].copy()
        return self.comps[..., 0] * self.comps[..., 2] - self.comps[..., 1] ** 2

    def eigenvalues(self):
        """(lambda_min, lambda_max) arrays; equal in 1D."""
        if self.ndim == 1:
            lam = self.comps[..., 0]
            return lam.copy(), lam.copy()
        a, b, c = self.comps[..., 0], self.comps[..., 1], self.comps[..., 2]
        mean = 0.5 * (a + c)
        rad = np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
        return mean - rad, mean + rad

    def to_csv(self, path):
        g = self.grid
        coords = g.node_coordinates()
        flat = self.comps.reshape(g.size, -1)
        vmask = self.valid.ravel()
        with open(path, "w") as fh:
            fh.write("x,y,W11,W12,W22\n")
            for k in range(g.size):
                if not vmask[k]:
                    continue
                x = coords[k, 0]
                y = coords[k, 1] if g.ndim == 2 else 0.0
                if g.ndim == 1:
                    w11, w12, w22 = flat[k, 0], 0.0, 0.0
                else:
                    w11, w12, w22 = flat[k]
                fh.write(f"{x:.17g},{y:.17g},{w11:.17g},{w12:.17g},{w22:.17g}\n")


def _shift(a, off, fill=0.0):
    out = np.full(a.shape, fill, dtype=a.dtype)
    src = tuple(slice(max(0, o), a.shape[k] + min(0, o)) for k, o in enumerate(off))
    dst = tuple(slice(max(0, -o), a.shape[k] - max(0, o)) for k, o in enumerate(off))
    out[dst] = a[src]
    return out


def _full_neighborhood(grid):
    """Nodes whose full one-cell neighborhood (diagonals included) is non-exterior."""
    nonext = grid.mask != EXTERIOR
    ok = nonext.copy()
    if grid.ndim == 1:
        offsets = [(-1,), (1,)]
    else:
        offsets = [(i, j) for i in (-1, 0, 1) for j in (-1, 0, 1) if (i, j) != (0, 0)]
    for off in offsets:
        ok &= _shift(nonext, off, fill=False)
    return ok


def discrete_hessian(w: ScalarField) -> TensorField:
    """Centered second differences; the mixed term is the 4-point cross."""
    g = w.grid
    h = g.spacing
    v = w.values
    valid = _full_neighborhood(g)
    excluded = int(((g.mask != EXTERIOR) & ~valid).sum())
    if g.ndim == 1:
        comps = np.zeros(g.shape + (1,))
        comps[..., 0] = (_shift(v, (1,)) - 2 * v + _shift(v, (-1,))) / h**2
        comps[~valid] = 0.0
        return TensorField(g, comps, valid, excluded)
    comps = np.zeros(g.shape + (3,))
    comps[..., 0] = (_shift(v, (1, 0)) - 2 * v + _shift(v, (-1, 0))) / h**2
    comps[..., 2] = (_shift(v, (0, 1)) - 2 * v + _shift(v, (0, -1))) / h**2
    comps[..., 1] = (_shift(v, (1, 1)) + _shift(v, (-1, -1))
                     - _shift(v, (1, -1)) - _shift(v, (-1, 1))) / (4 * h**2)
    comps[~valid] = 0.0
    return TensorField(g, comps, valid, excluded)


def cofactor_field(H: TensorField) -> TensorField:
    """Adjugate at every node: W H = (det H) I holds algebraically."""
    if H.ndim == 1:
        comps = np.ones_like(H.comps)
        comps[~H.valid] = 0.0
        return TensorField(H.grid, comps, H.valid.copy(), H.excluded)
    comps = np.empty_like(H.comps)
    comps[..., 0] = H.comps[..., 2]
    comps[..., 1] = -H.comps[..., 1]
    comps[..., 2] = H.comps[..., 0]
    comps[~H.valid] = 0.0
    return TensorField(H.grid, comps, H.valid.copy(), H.excluded)


def apply_Lw(W: TensorField, u: ScalarField) -> ScalarField:
    """Pointwise trace of W against the discrete Hessian of u."""
    Hu = discrete_hessian(u)
    valid = W.valid & Hu.valid
    if W.ndim == 1:
        vals = W.comps[..., 0] * Hu.comps[..., 0]
    else:
        vals = (W.comps[..., 0] * Hu.comps[..., 0]
                + 2.0 * W.comps[..., 1] * Hu.comps[..., 1]
                + W.comps[..., 2] * Hu.comps[..., 2])
    vals = np.where(valid, vals, 0.0)
    out = ScalarField(u.grid, vals)
    out.meta["valid"] = valid
    return out


def divergence_residual(W: TensorField) -> float:
    """Max over nodes and columns of |sum_i D_i W_ij| (centered differences).

    The cofactor matrix of a smooth Hessian is divergence-free row by row;
    on a grid the residual decays at the rate of the underlying differences.
    """
    g = W.grid
    h = g.spacing
    if g.ndim == 1:
        d = (_shift(W.comps[..., 0], (1,)) - _shift(W.comps[..., 0], (-1,))) / (2 * h)
        ok = W.valid & _shift(W.valid, (1,), False) & _shift(W.valid, (-1,), False)
        return float(np.abs(d[ok]).max()) if ok.any() else 0.0
    ok = W.valid.copy()
    for off in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ok &= _shift(W.valid, off, False)

    def dx(a):
        return (_shift(a, (1, 0)) - _shift(a, (-1, 0))) / (2 * h)

    def dy(a):
        return (_shift(a, (0, 1)) - _shift(a, (0, -1))) / (2 * h)

    col1 = dx(W.comps[..., 0]) + dy(W.comps[..., 1])
    col2 = dx(W.comps[..., 1]) + dy(W.comps[..., 2])
    if not ok.any():
        return 0.0
    return float(max(np.abs(col1[ok]).max(), np.abs(col2[ok]).max()))


@dataclass
class EllipticityReport:
    ok: bool
    min_det: float
    max_det: float
    min_eig: float
    max_eig: float
    degenerate: bool
    violations: int
    slack: float


def ellipticity_check(W: TensorField, bounds, slack=1e-8) -> EllipticityReport:
    """Check lambda^(n-1) <= det W <= Lambda^(n-1) at every valid node.

    A pass can still be degenerate: the determinant bound does not control
    the eigenvalue ratio, so the extreme eigenvalues are reported and a flag
    raised when the ratio exceeds 10.
    """
    n = W.ndim
    det = W.det()[W.valid]
    lo, hi = bounds.lam ** (n - 1), bounds.Lam ** (n - 1)
    bad = int(((det < lo - slack) | (det > hi + slack)).sum())
    emin, emax = W.eigenvalues()
    emin_v = float(emin[W.valid].min())
    emax_v = float(emax[W.valid].max())
    degenerate = emin_v <= 0 or (emax_v / max(emin_v, 1e-300)) > 10.0
    return EllipticityReport(
        ok=bad == 0,
        min_det=float(det.min()),
        max_det=float(det.max()),
        min_eig=emin_v,
        max_eig=emax_v,
        degenerate=degenerate,
        violations=bad,
        slack=slack,
    )
