"""Real/complex Krylov solvers, dense oracle solvers and CSR utilities.

All iterative solvers report the *true* relative residual ``||b - A x|| / ||b||``
in their :class:`SolveStats`; recurrence estimates are only used to decide
when to check it.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

from ocschur import _kernels
from ocschur.errors import BreakdownError, ContractError, SingularMatrixError

_EPS = np.finfo(float).eps


@dataclass
class SolveStats:
    iterations: int
    relative_residual: float
    converged: bool
    wall_time: float = 0.0
    history: list = field(default_factory=list, repr=False)
    flag: str = ""

    def as_dict(self, prefix=""):
        return {
            f"{prefix}iterations": int(self.iterations),
            f"{prefix}relative_residual": float(self.relative_residual),
            f"{prefix}converged": bool(self.converged),
            f"{prefix}wall_time": float(self.wall_time),
        }


@dataclass
class LinearOperator:
    """Matrix-free square operator with an optional preconditioner ``r -> M^{-1} r``."""

    dimension: int
    apply: Callable[[np.ndarray], np.ndarray]
    dtype: np.dtype = np.dtype(np.float64)
    apply_preconditioner: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x):
        return self.apply(x)

    @property
    def shape(self):
        return (self.dimension, self.dimension)


def _as_callable(m):
    if isinstance(m, LinearOperator):
        return m.apply
    if m is None or (callable(m) and not hasattr(m, "shape")):
        return m
    if sp.issparse(m) or isinstance(m, np.ndarray):
        return lambda x, _m=m: _m @ x
    raise TypeError(f"cannot use {type(m).__name__} as an operator")


def as_operator(a, precond=None):
    """Wrap a dense array, sparse matrix or :class:`LinearOperator`."""
    if isinstance(a, LinearOperator):
        if precond is None:
            return a
        return LinearOperator(a.dimension, a.apply, a.dtype, _as_callable(precond))
    if sp.issparse(a) or isinstance(a, np.ndarray):
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ContractError(f"operator must be square, got shape {a.shape}")
        return LinearOperator(a.shape[0], lambda x, _a=a: _a @ x, np.dtype(a.dtype),
                              _as_callable(precond))
    raise TypeError(f"cannot use {type(a).__name__} as an operator")


def check_csr(a, symmetric=False):
    """Validate CSR invariants; raise :class:`ContractError` on violation."""
    if not sp.isspmatrix_csr(a) and not isinstance(a, sp.csr_array):
        raise ContractError("matrix is not in CSR format")
    indptr, indices = a.indptr, a.indices
    for i in range(a.shape[0]):
        row = indices[indptr[i]:indptr[i + 1]]
        if row.size > 1 and np.any(np.diff(row) <= 0):
            raise ContractError(f"column indices of row {i} are not strictly increasing")
    if symmetric:
        if a.shape[0] != a.shape[1] or (a - a.T).count_nonzero() != 0:
            raise ContractError("matrix flagged symmetric is not exactly symmetric")
    return True


def write_matrix_market(path, a, symmetric=False):
    scipy.io.mmwrite(str(path), sp.coo_matrix(a),
                     symmetry="symmetric" if symmetric else "general")


def read_matrix_market(path):
    a = sp.csr_matrix(scipy.io.mmread(str(path)))
    a.sort_indices()
    return a


def _check_finite(v, where):
    if not np.all(np.isfinite(v)):
        raise BreakdownError(f"non-finite values in {where}")


def _givens(a, b):
    """Rotation ``(c, s, r)`` with ``[c, s; -conj(s), c] [a; b] = [r; 0]``."""
    if b == 0:
        return 1.0, 0.0, a
    if a == 0:
        return 0.0, 1.0, b
    abs_a = abs(a)
    t = np.hypot(abs_a, abs(b))
    phase = a / abs_a
    return abs_a / t, phase * np.conj(b) / t, phase * t


def gmres(op, b, tol=1e-10, restart=200, max_iter=1000, x0=None, precond=None,
          callback=None):
    """Right-preconditioned restarted GMRES for real or complex operators.

    Preconditioned directions are stored (flexible variant), so a preconditioner
    that is applied inexactly, e.g. via inner iterative solves, is tolerated.

    Returns
    -------
    x : ndarray
    stats : SolveStats
        ``converged`` is set only when the true relative residual is at most
        ``tol``. Hitting ``max_iter`` returns the best iterate, not an error.
    """
    a = as_operator(op, precond)
    m_inv = a.apply_preconditioner
    b = np.asarray(b)
    t0 = time.perf_counter()
    dtype = np.result_type(a.dtype, b.dtype, np.float64)
    n = a.dimension
    if b.shape != (n,):
        raise ContractError(f"rhs shape {b.shape} does not match operator dimension {n}")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=dtype), SolveStats(0, 0.0, True, time.perf_counter() - t0)

    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    r = b - a(x) if x0 is not None else b.astype(dtype)
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    its = 0
    best = (x.copy(), beta)
    stalled_cycles = 0
    restart = max(1, int(restart))

    while beta / bnorm > tol and its < max_iter:
        m = min(restart, max_iter - its)
        basis = np.zeros((m + 1, n), dtype=dtype)
        zdirs = np.zeros((m, n), dtype=dtype)
        hess = np.zeros((m + 1, m), dtype=dtype)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=dtype)
        g = np.zeros(m + 1, dtype=dtype)
        g[0] = beta
        basis[0] = r / beta
        k_done = 0
        h1 = np.zeros(m + 1, dtype=dtype)
        h2 = np.zeros(m + 1, dtype=dtype)
        for k in range(m):
            z = basis[k] if m_inv is None else np.asarray(m_inv(basis[k]), dtype=dtype)
            _check_finite(z, "preconditioner output")
            zdirs[k] = z
            w = np.array(a(z), dtype=dtype)
            _check_finite(w, "Arnoldi vector")
            wnorm0 = np.linalg.norm(w)
            h1[:k + 1] = 0
            h2[:k + 1] = 0
            _kernels.mgs_orthogonalize(basis, k + 1, w, h1)
            _kernels.mgs_orthogonalize(basis, k + 1, w, h2)
            hcol = h1[:k + 1] + h2[:k + 1]
            hnorm = np.linalg.norm(w)
            for j in range(k):
                tmp = cs[j] * hcol[j] + sn[j] * hcol[j + 1]
                hcol[j + 1] = -np.conj(sn[j]) * hcol[j] + cs[j] * hcol[j + 1]
                hcol[j] = tmp
            c, s, rr = _givens(hcol[k], hnorm)
            cs[k], sn[k] = c, s
            hess[:k + 1, k] = hcol
            hess[k, k] = rr
            g[k + 1] = -np.conj(s) * g[k]
            g[k] = c * g[k]
            its += 1
            k_done = k + 1
            est = abs(g[k + 1]) / bnorm
            history.append(est)
            if callback is not None:
                callback(its, est)
            if not np.isfinite(est):
                raise BreakdownError("non-finite residual estimate in GMRES")
            if hnorm <= 1e-14 * max(wnorm0, np.finfo(float).tiny) or est <= tol:
                break
            basis[k + 1] = w / hnorm
        y = sla.solve_triangular(hess[:k_done, :k_done], g[:k_done], lower=False,
                                 check_finite=False)
        x = x + zdirs[:k_done].T @ y
        r = b - a(x)
        _check_finite(r, "GMRES residual")
        new_beta = np.linalg.norm(r)
        history[-1] = new_beta / bnorm
        if new_beta < best[1]:
            best = (x.copy(), new_beta)
            stalled_cycles = 0
        else:
            stalled_cycles += 1
        beta = new_beta
        if stalled_cycles >= 2:
            break

    x, beta = best
    rel = beta / bnorm
    flag = "" if rel <= tol else ("max_iter" if its >= max_iter else "stagnated")
    return x, SolveStats(its, rel, rel <= tol, time.perf_counter() - t0, history, flag)


def _symmetry_probe(a, rng, rtol=1e-10):
    n = a.dimension
    u = rng.standard_normal(n)
    v = rng.standard_normal(n)
    au, av = np.asarray(a(u)), np.asarray(a(v))
    lhs, rhs = np.dot(v, au), np.dot(u, av)
    scale = np.linalg.norm(au) * np.linalg.norm(v) + np.linalg.norm(av) * np.linalg.norm(u)
    return abs(lhs - rhs) <= rtol * max(scale, np.finfo(float).tiny)


def minres(op, b, tol=1e-10, max_iter=1000, x0=None, precond=None, check_symmetry=True,
           seed=0):
    """Preconditioned MINRES for real symmetric (possibly indefinite) operators.

    The preconditioner must be symmetric positive definite. ``stats.history``
    holds the recurrence residual estimate, which is the 2-norm of the true
    residual without preconditioning and is nonincreasing.
    """
    a = as_operator(op, precond)
    m_inv = a.apply_preconditioner
    b = np.asarray(b, dtype=np.float64)
    t0 = time.perf_counter()
    n = a.dimension
    if np.iscomplexobj(np.zeros(0, dtype=a.dtype)):
        raise ContractError("minres requires a real operator")
    if check_symmetry and not _symmetry_probe(a, np.random.default_rng(seed)):
        raise ContractError("operator failed the symmetry probe x^T A y == y^T A x")
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(0, 0.0, True, time.perf_counter() - t0)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r1 = b - a(x) if x0 is not None else b.copy()
    y = r1 if m_inv is None else np.asarray(m_inv(r1), dtype=np.float64)
    beta1 = float(np.dot(r1, y))
    if beta1 < 0:
        raise ContractError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1)
    history = [np.linalg.norm(r1) / bnorm]
    if beta1 == 0.0:
        return x, SolveStats(0, history[0], history[0] <= tol, time.perf_counter() - t0, history)

    oldb, beta, dbar, epsln = 0.0, beta1, 0.0, 0.0
    phibar, cs, sn = beta1, -1.0, 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()
    its = 0
    rel_true = history[0]
    converged = False
    while its < max_iter:
        its += 1
        v = y / beta
        y = np.asarray(a(v), dtype=np.float64)
        if its >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(np.dot(v, y))
        y = y - (alfa / beta) * r2
        r1, r2 = r2, y
        y = r2 if m_inv is None else np.asarray(m_inv(r2), dtype=np.float64)
        oldb = beta
        bb = float(np.dot(r2, y))
        if bb < 0:
            raise ContractError("preconditioner is not positive definite")
        beta = np.sqrt(bb)
        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), _EPS)
        cs, sn = gbar / gamma, beta / gamma
        phi = cs * phibar
        phibar = sn * phibar
        w1, w2 = w2, w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        _check_finite(x, "MINRES iterate")
        est = phibar / beta1 * history[0]
        history.append(est)
        if est <= tol or beta <= _EPS * beta1:
            rel_true = np.linalg.norm(b - a(x)) / bnorm
            if rel_true <= tol:
                converged = True
                break
            if beta <= _EPS * beta1:
                break
    else:
        rel_true = np.linalg.norm(b - a(x)) / bnorm
        converged = rel_true <= tol
    flag = "" if converged else "max_iter"
    return x, SolveStats(its, rel_true, converged, time.perf_counter() - t0, history, flag)


def cg(op, b, tol=1e-10, max_iter=1000, x0=None, precond=None):
    """Preconditioned conjugate gradients for Hermitian positive definite operators."""
    a = as_operator(op, precond)
    m_inv = a.apply_preconditioner
    b = np.asarray(b)
    t0 = time.perf_counter()
    dtype = np.result_type(a.dtype, b.dtype, np.float64)
    n = a.dimension
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n, dtype=dtype), SolveStats(0, 0.0, True, time.perf_counter() - t0)
    x = np.zeros(n, dtype=dtype) if x0 is None else np.array(x0, dtype=dtype)
    r = b.astype(dtype) - (a(x) if x0 is not None else 0)
    z = r if m_inv is None else m_inv(r)
    p = z.copy()
    rz = np.vdot(r, z)
    history = [np.linalg.norm(r) / bnorm]
    its = 0
    while history[-1] > tol and its < max_iter:
        ap = a(p)
        pap = np.vdot(p, ap)
        if pap == 0 or not np.isfinite(pap):
            raise BreakdownError("CG breakdown: p^H A p is zero or non-finite")
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        its += 1
        history.append(np.linalg.norm(r) / bnorm)
        z = r if m_inv is None else m_inv(r)
        rz_new = np.vdot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    rel = np.linalg.norm(b - a(x)) / bnorm
    return x, SolveStats(its, rel, rel <= tol, time.perf_counter() - t0, history,
                         "" if rel <= tol else "max_iter")


def dense_solve(a, b):
    """Partial-pivot LU solve of ``A X = B`` (real or complex)."""
    a = np.asarray(a.toarray() if sp.issparse(a) else a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError("dense_solve needs a square matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.size and (diag.min() == 0.0 or diag.min() <= _EPS * diag.max() * 1e-3):
        raise SingularMatrixError("zero pivot encountered in dense LU")
    return sla.lu_solve((lu, piv), b)


def dense_eigenvalues(a, b=None, sym_rtol=1e-10):
    """Eigenvalues of the symmetric pencil ``A x = lambda B x`` in ascending order."""
    a = np.asarray(a.toarray() if sp.issparse(a) else a, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(a - a.T).max(initial=0.0) > sym_rtol * scale:
        raise ContractError("dense_eigenvalues requires a symmetric matrix")
    a = 0.5 * (a + a.T)
    if b is None:
        return sla.eigh(a, eigvals_only=True)
    b = np.asarray(b.toarray() if sp.issparse(b) else b, dtype=np.float64)
    bscale = max(np.abs(b).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(b - b.T).max(initial=0.0) > sym_rtol * bscale:
        raise ContractError("B must be symmetric")
    b = 0.5 * (b + b.T)
    try:
        sla.cholesky(b)
    except sla.LinAlgError as exc:
        raise ContractError("B must be positive definite") from exc
    return sla.eigh(a, b, eigvals_only=True)


def iterative_refinement(solver, op, b, sweeps=5, tol=1e-14):
    """Refine ``x`` with corrections ``solver(b - A x)``.

    Returns the best iterate seen. Two consecutive residual increases stop the
    refinement and set ``stats.flag = "stagnated"``.
    """
    a = as_operator(op)
    b = np.asarray(b)
    t0 = time.perf_counter()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), SolveStats(0, 0.0, True, time.perf_counter() - t0)
    x = np.zeros_like(b, dtype=np.result_type(b.dtype, a.dtype))
    r = b.astype(x.dtype)
    rnorm = bnorm
    best_x, best_r = x, rnorm
    history = [1.0]
    grow = 0
    flag = ""
    k = 0
    for k in range(1, sweeps + 1):
        d = np.asarray(solver(r))
        _check_finite(d, "refinement correction")
        x = x + d
        r = b - a(x)
        new = np.linalg.norm(r)
        history.append(new / bnorm)
        grow = grow + 1 if new > rnorm else 0
        rnorm = new
        if new < best_r:
            best_x, best_r = x, new
        if new <= tol * bnorm:
            break
        if grow >= 2:
            flag = "stagnated"
            break
    rel = best_r / bnorm
    return best_x, SolveStats(k, rel, rel <= tol, time.perf_counter() - t0, history, flag)


def linearity_defect(op, rng, alpha=0.7, beta=-1.3):
    """``||A(ax+by) - aAx - bAy|| / (||Ax|| + ||Ay||)`` on random probes."""
    a = as_operator(op)
    n = a.dimension
    x = rng.standard_normal(n)
    y = rng.standard_normal(n)
    ax, ay = a(x), a(y)
    lhs = a(alpha * x + beta * y)
    return np.linalg.norm(lhs - alpha * ax - beta * ay) / (np.linalg.norm(ax) + np.linalg.norm(ay))
