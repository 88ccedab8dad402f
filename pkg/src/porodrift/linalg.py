"""Sparse operators and solvers for the singular Neumann/periodic systems.

All pure-Neumann and periodic operators here are singular with a constant
nullspace and compatible right-hand sides.  Two strategies are used:

* ``projected_cg`` pins the constant mode by mean-projecting the right-hand
  side and the iterate each step -- no asymmetric pinning, the operator
  stays symmetric.  Used for the periodic cell problems.
* ``ZeroMeanDirect`` factorizes the Lagrange-augmented system
  [[A, 1], [1^T, 0]] once and reuses it; the Poisson problem is re-solved
  every transport step with a constant matrix, so the factorization pays off.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu

from .errors import SolverError


def face_laplacian(n_cells, face_lo, face_hi, coeff):
    """SPD graph Laplacian row_j = sum_f coeff_f (u_j - u_nb) from face lists.

    ``coeff`` is scalar or per-face; omitted faces (masked, no-flux) simply
    do not appear, which realizes homogeneous Neumann conditions.
    """
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), face_lo.shape)
    rows = np.concatenate([face_lo, face_hi, face_lo, face_hi])
    cols = np.concatenate([face_lo, face_hi, face_hi, face_lo])
    vals = np.concatenate([coeff, coeff, -coeff, -coeff])
    mat = sparse.coo_matrix((vals, (rows, cols)), shape=(n_cells, n_cells))
    return mat.tocsr()


def projected_cg(matrix, rhs, tol=1e-10, max_iter=None):
    """Solve the singular SPD system ``matrix x = rhs`` on the zero-mean subspace.

    Returns ``(x, rel_residual, iterations)`` with mean(x) = 0.  Raises
    SolverError (carrying the final relative residual) if the iteration does
    not reach ``tol`` within ``max_iter`` (default 50 * sqrt(n)).
    """
    n = rhs.size
    if max_iter is None:
        max_iter = max(100, int(50 * np.sqrt(n)))
    b = rhs - rhs.mean()
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n), 0.0, 0
    x = np.zeros(n)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for iteration in range(1, max_iter + 1):
        ap = matrix @ p
        ap -= ap.mean()
        denom = float(p @ ap)
        if denom <= 0.0:
            raise SolverError(
                f"projected CG broke down at iteration {iteration} (curvature {denom:.3e})",
                residual=float(np.sqrt(rs)) / b_norm,
            )
        alpha = rs / denom
        x += alpha * p
        r -= alpha * ap
        x -= x.mean()
        r -= r.mean()
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * b_norm:
            ax = matrix @ x
            true_res = float(np.linalg.norm(b - (ax - ax.mean()))) / b_norm
            return x, true_res, iteration
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverError(
        f"projected CG did not converge in {max_iter} iterations",
        residual=float(np.sqrt(rs)) / b_norm,
    )


class ZeroMeanDirect:
    """Cached LU of the augmented system for a singular operator with constant nullspace.

    The right-hand side is mean-projected before the solve (it must be
    compatible up to rounding); the returned solution has exact zero mean.
    """

    def __init__(self, matrix):
        n = matrix.shape[0]
        ones = np.ones((n, 1))
        augmented = sparse.bmat(
            [[matrix.tocsr(), ones], [ones.T, None]], format="csc"
        )
        self.n = n
        self.matrix = matrix.tocsr()
        self._lu = splu(augmented)

    def solve(self, rhs, tol=1e-10, max_refinements=2):
        """Zero-mean solution; iterative refinement until the residual meets ``tol``."""
        b = rhs - rhs.mean()
        b_norm = float(np.linalg.norm(b))
        if b_norm == 0.0:
            return np.zeros(self.n)
        phi = self._lu.solve(np.concatenate([b, [0.0]]))[: self.n]
        phi -= phi.mean()
        rel = np.inf
        for _ in range(max_refinements + 1):
            residual = b - self.matrix @ phi
            residual -= residual.mean()
            rel = float(np.linalg.norm(residual)) / b_norm
            if np.isfinite(rel) and rel <= tol:
                return phi
            correction = self._lu.solve(np.concatenate([residual, [0.0]]))[: self.n]
            phi = phi + correction
            phi -= phi.mean()
        if not np.isfinite(rel) or rel > tol:
            raise SolverError(
                f"direct Neumann solve residual {rel:.3e} exceeds tolerance {tol:.3e}",
                residual=rel,
            )
        return phi
