"""Sparse linear-system container with direct and restarted-GMRES solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceError, SingularSystemError, SolverError


@dataclass
class SparseSystem:
    """Square system given by triplets (duplicates summed) or a compressed matrix.

    ``constraint`` optionally holds a dense row ``c``; it is appended as a
    Lagrange multiplier enforcing ``c . x = 0`` (the multiplier is dropped from
    the returned solution).
    """
    n: int
    rows: np.ndarray | None = None
    cols: np.ndarray | None = None
    vals: np.ndarray | None = None
    rhs: np.ndarray | None = None
    matrix: sp.spmatrix | None = None
    constraint: np.ndarray | None = None
    _csr: sp.csr_matrix | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.rhs is None:
            self.rhs = np.zeros(self.n)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rhs.shape[0] != self.n:
            raise SolverError("right-hand side has the wrong length")
        if self.matrix is None and self.rows is not None:
            r = np.asarray(self.rows)
            c = np.asarray(self.cols)
            if r.size and (r.min() < 0 or r.max() >= self.n or c.min() < 0 or c.max() >= self.n):
                raise SolverError("triplet index out of range")

    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            if self.matrix is not None:
                A = sp.csr_matrix(self.matrix)
            else:
                A = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, self.n)).tocsr()
            A.sum_duplicates()
            if A.shape != (self.n, self.n):
                raise SolverError("matrix is not n x n")
            if not np.all(np.isfinite(A.data)) or not np.all(np.isfinite(self.rhs)):
                raise SolverError("non-finite entries in the system")
            self._csr = A
        return self._csr

    def augmented(self):
        """Matrix and right-hand side including the optional constraint row/column."""
        A = self.csr()
        if self.constraint is None:
            return A, self.rhs
        c = sp.csr_matrix(np.asarray(self.constraint, dtype=float).reshape(1, -1))
        K = sp.bmat([[A, c.T], [c, None]], format="csc")
        return K, np.concatenate([self.rhs, [0.0]])

    def residual(self, x: np.ndarray) -> float:
        return float(np.max(np.abs(self.csr() @ x - self.rhs), initial=0.0))

    def dump(self, path) -> None:
        """Write the matrix in 1-based coordinate text (row col value)."""
        A = self.csr().tocoo()
        with open(path, "w") as fh:
            fh.write(f"% {self.n} {self.n} {A.nnz}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i + 1} {j + 1} {v:.17g}\n")


def factorize(A: sp.spmatrix):
    """Sparse LU factorisation; raises SingularSystemError on exact singularity."""
    try:
        with np.errstate(all="ignore"):
            lu = spla.splu(sp.csc_matrix(A), permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    d = np.abs(lu.U.diagonal())
    if not np.all(np.isfinite(d)) or d.min() <= 1e-15 * max(d.max(), 1e-300):
        raise SingularSystemError("factorisation produced a (numerically) zero pivot")
    return lu


def solve_direct(system: SparseSystem) -> np.ndarray:
    K, b = system.augmented()
    lu = factorize(K)
    full = lu.solve(b)
    if not np.all(np.isfinite(full)):
        raise SingularSystemError("non-finite solution")
    bound = 1e-10 * (1.0 + np.max(np.abs(b), initial=0.0))
    r = b - K @ full
    res = np.max(np.abs(r), initial=0.0)
    # a few steps of iterative refinement for ill-conditioned saddle systems
    for _ in range(3):
        if res <= bound:
            break
        full = full + lu.solve(r)
        r = b - K @ full
        res = np.max(np.abs(r), initial=0.0)
    if res > bound:
        raise SingularSystemError(f"direct solve residual {res:.3e} too large")
    return full[: system.n]


def jacobi_preconditioner(A: sp.spmatrix) -> spla.LinearOperator:
    d = np.asarray(sp.csr_matrix(A).diagonal(), dtype=float)
    if np.any(d == 0):
        raise SolverError("zero diagonal entry; Jacobi preconditioner undefined")
    inv = 1.0 / d
    return spla.LinearOperator(A.shape, matvec=lambda x: inv * x, dtype=float)


def block_diagonal_preconditioner(A: sp.spmatrix, n_velocity: int, pressure_mass: sp.spmatrix | None = None):
    """diag(A_uu^{-1}, M_p^{-1}) for a saddle-point matrix [[A_uu, B^T], [B, 0]].

    The velocity block is factorised exactly; the pressure block uses the given
    pressure mass matrix (or its diagonal when None falls back to identity).
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    Auu = A[:n_velocity, :n_velocity]
    lu = factorize(Auu)
    n_p = n - n_velocity
    if pressure_mass is not None:
        mp = np.asarray(sp.csr_matrix(pressure_mass).diagonal(), dtype=float)
    else:
        mp = np.ones(n_p)

    def apply(x):
        out = np.empty_like(x)
        out[:n_velocity] = lu.solve(x[:n_velocity])
        out[n_velocity:] = x[n_velocity:] / mp
        return out

    return spla.LinearOperator((n, n), matvec=apply, dtype=float)


def solve_krylov(system: SparseSystem, preconditioner=None, tol: float = 1e-10, max_iter: int = 500,
                 restart: int = 50, return_iterations: bool = False):
    """Restarted GMRES. ``preconditioner`` is a LinearOperator/callable approximating A^{-1}, or
    one of the strings "jacobi" and "none". Raises ConvergenceError if ``tol`` is not reached."""
    K, b = system.augmented()
    if isinstance(preconditioner, str):
        M = jacobi_preconditioner(K) if preconditioner == "jacobi" else None
    elif callable(preconditioner) and not isinstance(preconditioner, spla.LinearOperator):
        M = spla.LinearOperator(K.shape, matvec=preconditioner, dtype=float)
    else:
        M = preconditioner
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.gmres(K, b, rtol=tol, atol=0.0, restart=restart, maxiter=max_iter, M=M,
                         callback=cb, callback_type="pr_norm")
    bnorm = np.linalg.norm(b)
    rel = np.linalg.norm(K @ x - b) / (bnorm if bnorm > 0 else 1.0)
    if info != 0 or rel > tol * 10:
        raise ConvergenceError(f"GMRES stopped after {count[0]} iterations, relative residual {rel:.3e}")
    x = x[: system.n]
    return (x, count[0]) if return_iterations else x


def factorize_regularized(A: sp.spmatrix, shift: float = 1e-14):
    """Fast approximate LU for symmetric-pattern saddle systems.

    Zero diagonal entries get a tiny negative shift so a fill-reducing ordering
    of A + A^T can be used without pivoting. The factor is only meant as the
    preconditioner of a defect-correction loop that uses the exact matrix.
    """
    A = sp.csc_matrix(A)
    d = A.diagonal()
    scale = float(np.max(np.abs(d), initial=1.0))
    Ar = A + sp.diags(np.where(d == 0, -shift * scale, 0.0))
    try:
        with np.errstate(all="ignore"):
            return spla.splu(sp.csc_matrix(Ar), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                             options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
