"""Sparse direct solves and condition-number estimates."""

from __future__ import annotations

import glob
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_LIMIT = 6000
RESIDUAL_TOL = 1e-9
SINGULAR_RESIDUAL = 1e-6


class FactorizationFailed(RuntimeError):
    """The matrix is structurally or numerically singular."""


class NonConvergence(RuntimeError):
    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


@dataclass
class SolveReport:
    x: np.ndarray
    residual: float
    method: str
    iterations: int | None = None


def _locate_mkl() -> None:
    # pypardiso only searches sys.prefix; pip may place MKL under /usr/local
    if os.environ.get("PYPARDISO_MKL_RT"):
        return
    for root in dict.fromkeys([sys.prefix, sys.exec_prefix, "/usr/local"]):
        hits = sorted(glob.glob(f"{root}/lib*/libmkl_rt.so*"), key=len)
        if hits:
            os.environ["PYPARDISO_MKL_RT"] = hits[0]
            return


def _load_pardiso():
    _locate_mkl()
    try:
        import pypardiso
        pypardiso.PyPardisoSolver()  # loads the shared library
    except Exception as exc:  # ImportError, or mkl_rt missing
        log.info("PARDISO unavailable (%s), using SuperLU", exc)
        return None
    return pypardiso


_PARDISO = _load_pardiso()
if _PARDISO is not None:
    from pypardiso.pardiso_wrapper import PyPardisoError


class PardisoLU:
    """Factorization of a real unsymmetric matrix kept inside one PARDISO handle."""

    def __init__(self, matrix):
        self.matrix = sp.csr_matrix(matrix)
        self.matrix.sort_indices()
        self.solver = _PARDISO.PyPardisoSolver(mtype=11)
        try:
            self.solver.factorize(self.matrix)
        except (ValueError, PyPardisoError) as exc:
            raise FactorizationFailed(str(exc)) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        return np.asarray(self.solver.solve(self.matrix, np.asarray(b, dtype=float))).ravel()

    def free(self) -> None:
        self.solver.free_memory(everything=True)


def factorize(matrix) -> spla.SuperLU:
    mat = sp.csc_matrix(matrix)
    if not np.all(np.isfinite(mat.data)):
        raise FactorizationFailed("matrix has non-finite entries")
    try:
        lu = spla.splu(mat, permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise FactorizationFailed(str(exc)) from exc
    diag = np.abs(lu.U.diagonal())
    if diag.size and not (np.all(np.isfinite(diag)) and diag.min() > 0):
        raise FactorizationFailed("zero or non-finite pivot")
    return lu


def relative_residual(matrix, x: np.ndarray, b: np.ndarray) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(matrix @ x - b)
    return float(r / nb) if nb > 0 else float(r)


def _refined(lu, matrix, b: np.ndarray):
    x = lu.solve(b)
    res = relative_residual(matrix, x, b)
    it = 0
    # iterative refinement, cheap with the factorization at hand
    while res > RESIDUAL_TOL and it < 3 and np.all(np.isfinite(x)):
        x = x + lu.solve(b - matrix @ x)
        res = relative_residual(matrix, x, b)
        it += 1
    return x, res, it


def solve_matrix(matrix, b: np.ndarray, backend: str = "auto") -> SolveReport:
    """Direct solve with up to three steps of iterative refinement.

    ``backend`` is ``pardiso``, ``superlu`` or ``auto`` (PARDISO when the MKL
    runtime loads, SuperLU otherwise).  PARDISO perturbs tiny pivots instead of
    failing, so a PARDISO solve that misses the residual target is retried with
    SuperLU, which detects exact singularity.  A residual above
    ``SINGULAR_RESIDUAL`` after refinement is reported as a failed factorization.
    """
    b = np.asarray(b, dtype=float)
    if backend == "auto":
        backend = "pardiso" if _PARDISO is not None else "superlu"
    if backend not in ("pardiso", "superlu"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "pardiso" and _PARDISO is None:
        raise RuntimeError("PARDISO backend requested but not available")
    mat = sp.csr_matrix(matrix)
    if not np.all(np.isfinite(mat.data)):
        raise FactorizationFailed("matrix has non-finite entries")
    res = np.inf
    if backend == "pardiso":
        lu = PardisoLU(mat)
        try:
            x, res, it = _refined(lu, mat, b)
        finally:
            lu.free()
        if not (res <= RESIDUAL_TOL):
            log.info("PARDISO residual %.3e, retrying with SuperLU", res)
    if not (res <= RESIDUAL_TOL):
        backend = "superlu"
        x, res, it = _refined(factorize(mat), mat, b)
    if not np.all(np.isfinite(x)) or not (res <= SINGULAR_RESIDUAL):
        raise FactorizationFailed(f"relative residual {res:.3e} after refinement")
    if res > RESIDUAL_TOL:
        log.warning("relative residual %.3e above %.0e", res, RESIDUAL_TOL)
    return SolveReport(x, res, backend, it)


def solve(system, backend: str = "auto") -> SolveReport:
    """Solve a ``SaddleSystem`` (or anything with ``matrix`` and ``rhs``)."""
    return solve_matrix(system.matrix, system.rhs, backend)


def _is_symmetric(mat, tol=1e-12) -> bool:
    if sp.issparse(mat):
        diff = abs(mat - mat.T)
        big = abs(mat).max()
        return diff.nnz == 0 or diff.max() <= tol * big
    return np.abs(mat - mat.T).max() <= tol * np.abs(mat).max()


def condition_number(matrix, mode: str = "auto", tol: float = 1e-3, maxiter: int = 5000) -> float:
    """2-norm condition number sigma_max / sigma_min.

    ``dense`` uses all singular values (absolute eigenvalues for symmetric
    input); ``iterative`` uses Lanczos for the largest and shift-invert
    Lanczos around zero, on the sparse LU factorization, for the smallest.
    Returns ``inf`` for a singular matrix.
    """
    n = matrix.shape[0]
    if mode == "auto":
        mode = "dense" if n <= DENSE_LIMIT else "iterative"
    if mode == "dense":
        a = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix, dtype=float)
        if _is_symmetric(a):
            s = np.abs(la.eigvalsh(a))
        else:
            s = la.svdvals(a)
        smin = s.min()
        return float(s.max() / smin) if smin > 0 else float("inf")
    if mode != "iterative":
        raise ValueError(f"unknown mode {mode!r}")
    return _iterative_condition(sp.csc_matrix(matrix), tol, maxiter)


def _iterative_condition(mat: sp.csc_matrix, tol: float, maxiter: int) -> float:
    n = mat.shape[0]
    if n <= 2:
        return condition_number(mat, "dense")
    try:
        lu = factorize(mat)
    except FactorizationFailed:
        return float("inf")
    symmetric = _is_symmetric(mat)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(n)
    try:
        if symmetric:
            smax = abs(spla.eigsh(mat, k=1, which="LM", tol=tol, maxiter=maxiter, v0=v0,
                                  return_eigenvectors=False)[0])
            inv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
            mu = abs(spla.eigsh(inv, k=1, which="LM", tol=tol, maxiter=maxiter, v0=v0,
                                return_eigenvectors=False)[0])
        else:
            normal = spla.LinearOperator((n, n), matvec=lambda x: mat.T @ (mat @ x), dtype=float)
            smax = np.sqrt(spla.eigsh(normal, k=1, which="LM", tol=tol, maxiter=maxiter, v0=v0,
                                      return_eigenvectors=False)[0])
            inv = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(lu.solve(x, trans="T")), dtype=float)
            mu = np.sqrt(spla.eigsh(inv, k=1, which="LM", tol=tol, maxiter=maxiter, v0=v0,
                                    return_eigenvectors=False)[0])
    except spla.ArpackNoConvergence as exc:
        vals = np.abs(exc.eigenvalues)
        est = float(vals.max()) if vals.size else float("nan")
        raise NonConvergence("Lanczos iteration did not converge", est) from exc
    return float(smax * mu)


def system_condition(system, mode: str = "auto", include_constraint: bool = True) -> float:
    mat = system.matrix if include_constraint else system.without_constraint()
    return condition_number(mat, mode)


def write_matrix_market(path, matrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), comment=comment)


def read_matrix_market(path) -> sp.csr_matrix:
    return sp.csr_matrix(scipy.io.mmread(str(path)))
