"""SOR for the five-point semi-implicit systems used by the filter and SUBSURF.

Both schemes reduce, for one 2D slice, to

    u_ij - c_ij * sum_d w_d,ij * (u_nb(d) - u_ij) = rhs_ij

with neighbour directions d = (+1,0), (-1,0), (0,+1), (0,-1).  Edges that
leave the image carry zero weight, which is the zero-flux boundary condition.
"""
from __future__ import annotations

import numba
import numpy as np

# edge order shared by every EdgeField / weight array in the package
OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class SolverError(RuntimeError):
    """Raised when SOR hits its sweep cap; carries the last residual sum."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@numba.njit(cache=True, nogil=True)
def _sor_kernel(up, rhs, wl, diag, inv_diag, omega, tol, max_sweeps):
    # up is the iterate padded by one pixel; boundary weights are zero so the
    # pad values never contribute.  The residual is scaled by the diagonal so
    # rows with large coefficients do not dominate the stopping test.
    m, n = rhs.shape
    res = np.inf
    for sweep in range(max_sweeps):
        res = 0.0
        for i in range(m):
            for j in range(n):
                s = (wl[0, i, j] * up[i + 2, j + 1] + wl[1, i, j] * up[i, j + 1]
                     + wl[2, i, j] * up[i + 1, j + 2] + wl[3, i, j] * up[i + 1, j])
                d = diag[i, j]
                r = (rhs[i, j] - (d * up[i + 1, j + 1] - s)) * inv_diag[i, j]
                up[i + 1, j + 1] += omega * r
                res += abs(r)
        if res < tol:
            return sweep + 1, res
    return -1, res


def sor_solve(rhs, c, w, omega=1.8, tol=1e-6, max_sweeps=1000, x0=None):
    """Solve one slice system by SOR.  Returns ``(u, sweeps, residual)``.

    ``c`` has the slice shape, ``w`` holds the four edge weights in
    :data:`OFFSETS` order.  Sweeps stop once the sum over the slice of
    ``|residual| / diagonal`` (the size of a plain Gauss-Seidel correction)
    falls below ``tol``; exceeding ``max_sweeps`` raises :class:`SolverError`.
    """
    rhs = np.ascontiguousarray(rhs, dtype=np.float64)
    m, n = rhs.shape
    wl = np.asarray(c, dtype=np.float64)[None] * np.asarray(w, dtype=np.float64)
    wl[0, -1, :] = 0.0
    wl[1, 0, :] = 0.0
    wl[2, :, -1] = 0.0
    wl[3, :, 0] = 0.0
    diag = 1.0 + wl.sum(axis=0)
    up = np.zeros((m + 2, n + 2))
    up[1:-1, 1:-1] = rhs if x0 is None else x0
    sweeps, res = _sor_kernel(up, rhs, np.ascontiguousarray(wl), diag, 1.0 / diag,
                              float(omega), float(tol), int(max_sweeps))
    if sweeps < 0:
        raise SolverError(f"SOR did not converge in {max_sweeps} sweeps", res)
    return up[1:-1, 1:-1].copy(), sweeps, res
