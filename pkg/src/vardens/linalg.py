"""Sparse solvers for the three system shapes the scheme produces.

The primary path is a sparse direct factorization (SuperLU with its
fill-reducing column ordering).  Saddle-point systems with a zero-mean
constraint are bordered by one Lagrange multiplier row/column, which keeps
the matrix symmetric whenever the blocks are.  A restarted GMRES path with
incomplete-LU (or caller-supplied) preconditioning is available for the
larger 3D transport systems.

Every solve asserts its own relative residual before returning.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(Exception):
    pass


class ConstraintConflictError(Exception):
    pass


class ResidualError(Exception):
    pass


@dataclass
class LinearSystem:
    matrix: sp.spmatrix
    rhs: np.ndarray
    constraint: np.ndarray | None = None  # one functional, e.g. zero mean

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape[1] != n:
            raise ValueError("matrix must be square before augmentation")
        if self.rhs.shape != (n,):
            raise ValueError("rhs length does not match the matrix")
        if self.constraint is not None and self.constraint.shape != (n,):
            raise ValueError("constraint length does not match the matrix")


@dataclass
class SolveReport:
    residual: float
    iterations: int = 0
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)


def _relative_residual(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def _check(A, x, b, tol, context):
    res = _relative_residual(A, x, b)
    if not np.isfinite(res) or res > tol:
        raise ResidualError(f"{context}: relative residual {res:.3e} > {tol:.1e}")
    return res


def _suspect_row(A):
    absA = abs(A.tocsr())
    sums = np.asarray(absA.sum(axis=1)).ravel()
    return int(np.argmin(sums))


def factorize(matrix):
    """SuperLU factorization with COLAMD fill-reducing ordering."""
    try:
        return spla.splu(matrix.tocsc())
    except RuntimeError as exc:
        raise SingularMatrixError(
            f"singular factorization (suspect pivot row {_suspect_row(matrix)}): {exc}"
        ) from exc


def solve_direct(system: LinearSystem, tol: float = 1e-10):
    """Direct sparse solve; residual checked against ``tol``."""
    t0 = time.perf_counter()
    lu = factorize(system.matrix)
    x = lu.solve(system.rhs)
    res = _check(system.matrix, x, system.rhs, tol, "direct solve")
    return x, SolveReport(res, 0, time.perf_counter() - t0)


def augment_with_constraint(matrix, rhs, constraint):
    """Border the system with one multiplier row/column for the constraint.

    The augmented matrix [[A, -c], [-c^T, 0]] stays symmetric when A is.
    """
    c = sp.csr_matrix(-constraint[:, None])
    K = sp.bmat([[matrix, c], [c.T, None]], format="csc")
    b = np.concatenate([rhs, [0.0]])
    return K, b


def solve_constrained(system: LinearSystem, tol: float = 1e-10):
    """Direct solve of a system with one linear constraint functional.

    Used for the saddle-point steps: the constraint pins the zero-mean
    pressure (or the multiplier's constant mode in the mixed projection).
    """
    if system.constraint is None:
        return solve_direct(system, tol)
    t0 = time.perf_counter()
    K, b = augment_with_constraint(system.matrix, system.rhs, system.constraint)
    lu = factorize(K)
    xl = lu.solve(b)
    x, lam = xl[:-1], xl[-1]
    res = _check(K, xl, b, tol, "constrained solve")
    # a nonzero multiplier means the constraint fights the equations:
    # A x - b = -lam * c, so the original system's residual exposes it
    nb = max(np.linalg.norm(system.rhs), 1.0)
    conflict = np.linalg.norm(system.matrix @ x - system.rhs) / nb
    if conflict > 1e-8:
        raise ConstraintConflictError(
            f"constraint is inconsistent with the equations "
            f"(original residual {conflict:.3e}, multiplier {lam:.3e})"
        )
    return x, SolveReport(
        res, 0, time.perf_counter() - t0, {"multiplier": float(lam)}
    )


# kept as an alias: the saddle systems are solved through their constraint
solve_saddle = solve_constrained


def solve_gmres(system: LinearSystem, tol: float = 1e-10, restart: int = 60,
                maxiter: int = 400, preconditioner=None):
    """Restarted GMRES with ILU (default) or caller-supplied preconditioning."""
    A = system.matrix.tocsc()
    t0 = time.perf_counter()
    if preconditioner is None:
        ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=10)
        preconditioner = spla.LinearOperator(A.shape, ilu.solve)
    iters = 0

    def count(_):
        nonlocal iters
        iters += 1

    x, info = spla.gmres(
        A, system.rhs, rtol=max(tol * 1e-2, 1e-14), atol=0.0,
        restart=restart, maxiter=maxiter, M=preconditioner, callback=count,
        callback_type="pr_norm",
    )
    if info != 0:
        raise ResidualError(f"gmres failed to converge (info={info})")
    res = _check(A, x, system.rhs, tol, "gmres solve")
    return x, SolveReport(res, iters, time.perf_counter() - t0)
