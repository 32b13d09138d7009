"""Sparse linear solves with an explicit residual check.

Both entry points take a scipy CSR/CSC matrix and a dense right-hand side.
The direct path is the default everywhere in the stepper; the CG path exists
for symmetric positive definite systems as a cross-check and fallback.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    pass


_REL = 1e-12


def _residual_ok(A, x, b) -> bool:
    r = A @ x - b
    lhs = np.linalg.norm(r)
    scale = spla.norm(A) * np.linalg.norm(x) + np.linalg.norm(b)
    return lhs <= _REL * scale + 1e-300


def solve_direct(A, b):
    """Sparse LU solve; raises SolverError if the residual check fails."""
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    try:
        lu = spla.splu(A)
        x = lu.solve(b)
    except RuntimeError as exc:  # singular factorization
        raise SolverError(f"direct solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolverError("direct solve produced non-finite entries")
    if not _residual_ok(A, x, b):
        raise SolverError("direct solve residual check failed")
    return x


def solve_cg(A, b, tol: float = 1e-12, maxit: int | None = None):
    """Jacobi-preconditioned CG for SPD systems; raises on non-convergence."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if maxit is None:
        maxit = 20 * n
    diag = A.diagonal()
    if np.any(diag <= 0.0):
        raise SolverError("CG needs a positive diagonal")
    M = sp.diags(1.0 / diag)
    x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxit, M=M)
    if info != 0:
        raise ConvergenceError(f"CG did not converge (info={info})")
    if not np.all(np.isfinite(x)):
        raise SolverError("CG produced non-finite entries")
    return x
