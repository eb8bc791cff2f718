"""Hot loops for the sweep-based solvers.

The projected SOR sweep is a strict lexicographic Gauss-Seidel pass over CSR
rows with clamping from below; identical arithmetic runs with or without
numba, the JIT only removes interpreter overhead.
"""

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def psor_sweeps(indptr, indices, data, diag, lower, u, omega_row, nsweeps):
    """In-place projected SOR sweeps, rows in index order.

    ``omega_row`` is per-row: over-relaxation is sound for the symmetric
    complementarity rows but the Dirichlet closure rows must run plain
    Gauss-Seidel, so callers pass 1.0 there.
    """
    n = u.shape[0]
    for _ in range(nsweeps):
        for i in range(n):
            acc = 0.0
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                if j != i:
                    acc -= data[p] * u[j]
            om = omega_row[i]
            unew = (1.0 - om) * u[i] + om * acc / diag[i]
            if unew < lower[i]:
                unew = lower[i]
            u[i] = unew
    return u
