"""
Krylov solvers, preconditioners and the 1-norm condition estimate.

GMRES and CG report iterations, residual history and stagnation in a
SolveReport. Incomplete factorizations come from SuperLU via scipy.
"""
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_triangular
from scipy.sparse.linalg import LinearOperator, aslinearoperator, onenormest, spilu, splu, spsolve_triangular

DEFAULT_TOL = 1e-8
DEFAULT_DROPTOL = 1e-3
CG_STAGNATION_WINDOW = 50
CONDEST_DIRECT_LIMIT = 20000
CONDEST_INNER_TOL = 1e-10


class FactorizationError(ValueError):
    pass


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    stagnated: bool = False
    residuals: list[float] = field(default_factory=list, repr=False)
    t_precond: float = 0.0
    t_solve: float = 0.0


@dataclass(frozen=True)
class Preconditioner:
    """Applies an approximation of A^-1."""
    name: str
    solve: Callable[[np.ndarray], np.ndarray]
    setup_seconds: float = 0.0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.solve(x)


IDENTITY = Preconditioner("none", lambda x: x)


class PreconditionerKind(Enum):
    NONE = "none"
    ILU = "ilu"
    IC = "ic"
    GAUSS_SEIDEL = "gs"

    @staticmethod
    def string_to_enum(raw_string: str) -> "PreconditionerKind":
        for kind in PreconditionerKind:
            if kind.value == raw_string.lower():
                return kind
        raise ValueError(f"No PreconditionerKind found for {raw_string}")


def _square_csc(A) -> sp.csc_matrix:
    A = sp.csc_matrix(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {A.shape}")
    return A


def _superlu_ilu(A: sp.csc_matrix, droptol: float, fill_factor: float):
    zero = np.flatnonzero(A.diagonal() == 0.0)
    if len(zero):
        raise FactorizationError(f"Zero pivot in row {zero[0]}: the diagonal entry is zero; "
                                 f"try a larger stencil or a diagonal shift")
    try:
        return spilu(A, drop_tol=droptol, fill_factor=fill_factor, permc_spec="NATURAL",
                     diag_pivot_thresh=0.0, options=dict(Equil=False, SymmetricMode=True))
    except RuntimeError as e:
        raise FactorizationError(f"Incomplete factorization failed: {e}; "
                                 f"try a larger stencil or a diagonal shift")


def ilu(A, droptol: float = DEFAULT_DROPTOL, fill_factor: float = 10.0) -> Preconditioner:
    """Threshold incomplete LU in the natural ordering without pivoting."""
    start = time.perf_counter()
    factor = _superlu_ilu(_square_csc(A), droptol, fill_factor)
    pivots = factor.U.diagonal()
    bad = np.flatnonzero(~np.isfinite(pivots) | (pivots == 0.0))
    if len(bad):
        raise FactorizationError(f"Zero pivot in row {bad[0]} of the incomplete LU factor; "
                                 f"try a larger stencil or a diagonal shift")
    elapsed = time.perf_counter() - start
    logging.debug(f"ILU({droptol:g}) with {factor.L.nnz + factor.U.nnz} factor nonzeros in {elapsed:.3f}s")
    return Preconditioner(f"ilu({droptol:g})", factor.solve, elapsed)


def _ldlt_factor(A: sp.csc_matrix, droptol: float, fill_factor: float):
    factor = _superlu_ilu(A, droptol, fill_factor)
    if not (np.array_equal(factor.perm_r, np.arange(A.shape[0]))
            and np.array_equal(factor.perm_c, np.arange(A.shape[0]))):
        raise FactorizationError("Incomplete Cholesky needs a factorization without pivoting")
    pivots = factor.U.diagonal()
    bad = np.flatnonzero(~(pivots > 0.0))
    if len(bad):
        raise FactorizationError(f"Nonpositive pivot {pivots[bad[0]]:.3e} in row {bad[0]}; "
                                 f"the matrix is not positive definite")
    return factor, pivots


def diagonal_shifts(A: sp.csc_matrix) -> list[float]:
    """Shifts alpha tried in turn for A + alpha * diag(A), ending with one that makes A diagonally dominant."""
    diagonal = A.diagonal()
    if np.any(diagonal <= 0.0):
        return [0.0]
    off_diagonal = np.asarray(abs(A).sum(axis=1)).ravel() - diagonal
    dominant = float(np.max(off_diagonal / diagonal)) - 1.0
    shifts = [0.0, 1e-2, 1e-1]
    if dominant > 0.0:
        shifts = [s for s in shifts if s < dominant] + [dominant + 1e-2]
    return shifts


def incomplete_cholesky(A, droptol: float = DEFAULT_DROPTOL, fill_factor: float = 10.0) -> Preconditioner:
    """Incomplete L D L^T from the pivot-free incomplete LU of a symmetric matrix.

    With no dropping this is the exact Cholesky factorization. When a pivot
    breaks down the factorization is retried on A + alpha * diag(A) for the
    shifts of ``diagonal_shifts``.
    """
    start = time.perf_counter()
    A = _square_csc(A)
    shifts = diagonal_shifts(A)
    for shift in shifts:
        shifted = A if shift == 0.0 else (A + shift * sp.diags(A.diagonal())).tocsc()
        try:
            factor, pivots = _ldlt_factor(shifted, droptol, fill_factor)
        except FactorizationError as e:
            if shift == shifts[-1]:
                raise
            logging.debug(f"IC({droptol:g}) with shift {shift:g} failed: {e}")
            continue
        if shift > 0.0:
            logging.warning(f"IC({droptol:g}) needed the diagonal shift {shift:.3g}")
        break
    lower = sp.csr_matrix(factor.L)
    upper = sp.csr_matrix(factor.L.T)

    def solve(x: np.ndarray) -> np.ndarray:
        y = spsolve_triangular(lower, x, lower=True, unit_diagonal=True)
        return spsolve_triangular(upper, y / pivots, lower=False, unit_diagonal=True)

    elapsed = time.perf_counter() - start
    return Preconditioner(f"ic({droptol:g})", solve, elapsed)


def gauss_seidel_preconditioner(A) -> Preconditioner:
    """One forward Gauss-Seidel sweep, x -> (D + L)^-1 x."""
    start = time.perf_counter()
    A = sp.csr_matrix(A, dtype=float)
    diagonal = A.diagonal()
    bad = np.flatnonzero(diagonal == 0.0)
    if len(bad):
        raise FactorizationError(f"Zero diagonal entry in row {bad[0]}, Gauss-Seidel is undefined")
    lower = sp.tril(A, format="csr")

    def solve(x: np.ndarray) -> np.ndarray:
        return spsolve_triangular(lower, x, lower=True)

    return Preconditioner("gs", solve, time.perf_counter() - start)


def make_preconditioner(kind: PreconditionerKind, A, droptol: float = DEFAULT_DROPTOL) -> Preconditioner:
    if kind == PreconditionerKind.NONE:
        return IDENTITY
    if kind == PreconditionerKind.ILU:
        return ilu(A, droptol)
    if kind == PreconditionerKind.IC:
        return incomplete_cholesky(A, droptol)
    return gauss_seidel_preconditioner(A)


def gmres(A, b: np.ndarray, preconditioner: Optional[Preconditioner] = None, tol: float = DEFAULT_TOL,
          max_iter: Optional[int] = None, restart: Optional[int] = None,
          x0: Optional[np.ndarray] = None) -> tuple[np.ndarray, SolveReport]:
    """Left-preconditioned GMRES with modified Gram-Schmidt and Givens rotations.

    Without ``restart`` the Krylov basis is never discarded. Convergence is
    measured on the preconditioned residual relative to M^-1 b.
    """
    operator = aslinearoperator(A)
    precond = preconditioner or IDENTITY
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = n if max_iter is None else max_iter
    cycle = max(1, min(restart or max_iter, max_iter)) if max_iter > 0 else 1
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    start = time.perf_counter()
    reference = np.linalg.norm(precond(b))
    if reference == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, residuals=[0.0], t_precond=precond.setup_seconds)

    residuals: list[float] = []
    iterations = 0
    stagnated = False
    while True:
        r = precond(b - operator.matvec(x))
        beta = np.linalg.norm(r)
        relative = beta / reference
        if not residuals:
            residuals.append(relative)
        if relative <= tol or iterations >= max_iter or stagnated:
            break

        basis = [r / beta]
        columns: list[np.ndarray] = []
        cs: list[float] = []
        sn: list[float] = []
        g = [beta]
        for k in range(min(cycle, max_iter - iterations)):
            w = precond(operator.matvec(basis[k]))
            w_norm = np.linalg.norm(w)
            h = np.zeros(k + 2)
            for i in range(k + 1):
                h[i] = np.dot(w, basis[i])
                w = w - h[i] * basis[i]
            h[k + 1] = np.linalg.norm(w)
            breakdown = h[k + 1] <= np.finfo(float).eps * w_norm
            if not breakdown:
                basis.append(w / h[k + 1])
            for i in range(k):
                h[i], h[i + 1] = cs[i] * h[i] + sn[i] * h[i + 1], -sn[i] * h[i] + cs[i] * h[i + 1]
            denom = np.hypot(h[k], h[k + 1])
            if denom == 0.0:
                stagnated = True
                break
            cs.append(h[k] / denom)
            sn.append(h[k + 1] / denom)
            h[k] = denom
            g.append(-sn[k] * g[k])
            g[k] = cs[k] * g[k]
            columns.append(h[:k + 1])
            iterations += 1
            residuals.append(abs(g[k + 1]) / reference)
            if residuals[-1] <= tol:
                break
            if breakdown:
                # invariant subspace without reaching tol
                stagnated = True
                break
        steps = len(columns)
        if steps:
            triangle = np.zeros((steps, steps))
            for j, column in enumerate(columns):
                triangle[:j + 1, j] = column
            y = solve_triangular(triangle, np.asarray(g[:steps]), lower=False)
            x = x + np.column_stack(basis[:steps]) @ y

    elapsed = time.perf_counter() - start
    converged = relative <= tol
    if not converged:
        logging.warning(f"GMRES stopped after {iterations} iterations at relative residual {relative:.3e}")
    return x, SolveReport(iterations, float(relative), converged, stagnated and not converged, residuals,
                          precond.setup_seconds, elapsed)


def cg(A, b: np.ndarray, preconditioner: Optional[Preconditioner] = None, tol: float = DEFAULT_TOL,
       max_iter: Optional[int] = None, x0: Optional[np.ndarray] = None) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned conjugate gradients stopping on ||b - Ax|| / ||b|| <= tol.

    Stagnation is reported when the best residual has not improved for
    CG_STAGNATION_WINDOW iterations.
    """
    operator = aslinearoperator(A)
    precond = preconditioner or IDENTITY
    b = np.asarray(b, dtype=float)
    n = len(b)
    max_iter = max(10 * n, 1) if max_iter is None else max_iter
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)

    start = time.perf_counter()
    reference = np.linalg.norm(b)
    if reference == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True, residuals=[0.0], t_precond=precond.setup_seconds)

    r = b - operator.matvec(x)
    z = precond(r)
    p = z.copy()
    rz = np.dot(r, z)
    relative = np.linalg.norm(r) / reference
    residuals = [relative]
    best, best_at = relative, 0
    iterations = 0
    stagnated = False
    while relative > tol and iterations < max_iter:
        q = operator.matvec(p)
        curvature = np.dot(p, q)
        if curvature < 0.0:
            raise FactorizationError(f"CG found negative curvature {curvature:.3e}; "
                                     f"the matrix is not positive definite")
        if curvature == 0.0:
            stagnated = True
            break
        alpha = rz / curvature
        x = x + alpha * p
        r = r - alpha * q
        iterations += 1
        relative = np.linalg.norm(r) / reference
        residuals.append(relative)
        if relative < best:
            best, best_at = relative, iterations
        elif iterations - best_at >= CG_STAGNATION_WINDOW:
            stagnated = True
            break
        z = precond(r)
        rz_next = np.dot(r, z)
        p = z + (rz_next / rz) * p
        rz = rz_next

    # the recursive residual drifts, report the true one
    relative = float(np.linalg.norm(b - operator.matvec(x)) / reference)
    elapsed = time.perf_counter() - start
    converged = relative <= tol
    if stagnated and not converged:
        logging.warning(f"CG stagnated after {iterations} iterations at relative residual {relative:.3e}")
    return x, SolveReport(iterations, relative, converged, stagnated and not converged, residuals,
                          precond.setup_seconds, elapsed)


def _inverse_operator(A: sp.csc_matrix, direct_limit: int) -> Optional[LinearOperator]:
    n = A.shape[0]
    if n <= direct_limit:
        try:
            lu = splu(A)
        except RuntimeError:
            return None
        return LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"), dtype=float)

    transposed = A.T.tocsc()
    forward_precond = ilu(A)
    adjoint_precond = ilu(transposed)

    def matvec(x):
        solution, report = gmres(A, np.ravel(x), forward_precond, tol=CONDEST_INNER_TOL)
        return solution

    def rmatvec(x):
        solution, report = gmres(transposed, np.ravel(x), adjoint_precond, tol=CONDEST_INNER_TOL)
        return solution

    return LinearOperator((n, n), matvec=matvec, rmatvec=rmatvec, dtype=float)


def condest_1norm(A, direct_limit: int = CONDEST_DIRECT_LIMIT) -> float:
    """Lower bound for the 1-norm condition number, ||A||_1 times an estimate of ||A^-1||_1.

    The inverse norm uses Hager's iteration with one starting vector, which is
    deterministic, and is at least 1 / min_j ||A e_j||_1, so the estimate never
    falls below the ratio of the largest to the smallest column norm. Singular
    matrices give inf.
    """
    A = _square_csc(A)
    start = time.perf_counter()
    try:
        inverse = _inverse_operator(A, direct_limit)
    except FactorizationError:
        return float("inf")
    if inverse is None:
        return float("inf")
    columns = np.asarray(abs(A).sum(axis=0)).ravel()
    inverse_norm = max(onenormest(inverse, t=1), 1.0 / columns.min())
    estimate = float(columns.max() * inverse_norm)
    if not np.isfinite(estimate):
        return float("inf")
    logging.debug(f"condest {estimate:.3e} for n={A.shape[0]} in {time.perf_counter() - start:.3f}s")
    return estimate
