"""Symmetric positive definite solves and Dirichlet elimination."""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dofs import DofMap

DENSE_LIMIT = 3000


class SolverError(RuntimeError):
    """Linear solve failed (no convergence, indefinite matrix, non-finite values)."""


class NotPositiveDefinite(SolverError):
    pass


def solve_spd(M, b, tol: float = 1e-12, max_iter: int | None = None, x0=None, info: dict | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Returns ``x`` with ``|M x - b| <= tol |b|``.  A non-positive curvature
    ``p^T M p`` or a non-finite iterate raises :class:`NotPositiveDefinite`.
    If ``info`` is given, the iteration count is stored under ``"iterations"``.
    """
    M = sp.csr_matrix(M) if not sp.issparse(M) else M.tocsr()
    b = np.asarray(b, dtype=float)
    n = b.size
    if n == 0:
        return np.zeros(0)
    max_iter = 10 * n if max_iter is None else max_iter
    diag = M.diagonal()
    if np.any(diag <= 0.0) or not np.all(np.isfinite(diag)):
        raise NotPositiveDefinite("matrix has a non-positive or non-finite diagonal entry")
    inv_diag = 1.0 / diag
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0:
        if info is not None:
            info["iterations"] = 0
        return np.zeros(n)
    r = b - M @ x
    z = inv_diag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(max_iter + 1):
        if np.linalg.norm(r) <= tol * bnorm:
            if info is not None:
                info["iterations"] = it
            return x
        Mp = M @ p
        curv = float(p @ Mp)
        if not np.isfinite(curv) or curv <= 0.0:
            raise NotPositiveDefinite(f"CG breakdown: curvature {curv:.3g} along search direction")
        a = rz / curv
        x += a * p
        r -= a * Mp
        z = inv_diag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not reach tolerance {tol:g} in {max_iter} iterations")


def eliminate_dirichlet(K_full, f_full, dofmap: DofMap):
    """Drop constrained rows and columns (homogeneous Dirichlet data)."""
    free = dofmap.free_dofs
    K = sp.csr_matrix(K_full)[free][:, free].tocsr()
    f = None if f_full is None else np.asarray(f_full, dtype=float)[free]
    return K, f


class SPDFactor:
    """Reusable factorisation of an SPD matrix.

    Small systems use a dense Cholesky factor, which also detects loss of
    definiteness; large ones fall back to sparse LU.  Every solve checks the
    backward error ``|M x - b| <= tol (|M| |x| + |b|)``.
    """

    def __init__(self, M, tol: float = 1e-9):
        self.n = M.shape[0]
        self.M = sp.csr_matrix(M)
        self.tol = tol
        self._norm = float(abs(self.M).sum(axis=1).max()) if self.n else 0.0
        if self.n == 0:
            self._solve = lambda b: np.zeros(0)
        elif self.n <= DENSE_LIMIT:
            dense = self.M.toarray()
            if not np.all(np.isfinite(dense)):
                raise NotPositiveDefinite("matrix has non-finite entries")
            try:
                cf = sla.cho_factor(dense, lower=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite(f"Cholesky factorisation failed: {exc}") from None
            self._solve = lambda b: sla.cho_solve(cf, b, check_finite=False)
        else:
            lu = spla.splu(self.M.tocsc())
            self._solve = lu.solve

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution")
        scale = self._norm * np.linalg.norm(x, np.inf) + np.linalg.norm(b, np.inf)
        if scale > 0.0:
            res = np.linalg.norm(self.M @ x - b, np.inf)
            if res > self.tol * scale:
                raise SolverError(f"direct solve backward error {res / scale:.3g} exceeds {self.tol:g}")
        return x


def factorize(M, method: str = "direct", tol: float = 1e-9):
    """Return an object with ``solve(b)``; ``method`` is ``direct`` or ``cg``."""
    if method == "direct":
        return SPDFactor(M, tol)
    if method == "cg":
        return _CGSolver(M, tol)
    raise ValueError(f"unknown linear solver {method!r}")


class _CGSolver:
    def __init__(self, M, tol):
        self.M = sp.csr_matrix(M)
        self.tol = min(tol, 1e-12)

    def solve(self, b):
        return solve_spd(self.M, b, tol=self.tol)
