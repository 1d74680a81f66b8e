"""Distributed optimal control: KKT system, Schur complement and its exact
complex factorization, range-space and full-space solvers.

The discrete problem is::

    minimize   1/2 ||y - y_target||_V^2 + phi/2 ||u||_V^2
    subject to K y + K_c y_c = V u

and the negative Schur complement on the multipliers is
``S = K V^{-1} K + V / phi = (K + c V) V^{-1} (K - c V)`` with ``c = -i / sqrt(phi)``.
"""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ocschur import krylov, mesh_fem
from ocschur.errors import ContractError, SingularMatrixError
from ocschur.krylov import LinearOperator, SolveStats

PRECONDITIONERS = ("none", "pmgw_Sp", "pmgw_Sc")
OUTER_SOLVERS = ("minres", "gmres")


def _splu(a):
    try:
        return spla.splu(sp.csc_matrix(a))
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc


def _lu_solve(lu, x):
    # SuperLU factors of a real matrix only accept real right-hand sides
    if np.iscomplexobj(x) and lu.L.dtype.kind == "f":
        return lu.solve(np.ascontiguousarray(x.real)) + 1j * lu.solve(np.ascontiguousarray(x.imag))
    return lu.solve(x)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    K: sp.csr_matrix
    V: sp.csr_matrix
    K_c: sp.csr_matrix
    y_target: np.ndarray
    y_c: np.ndarray
    phi: float
    ops: mesh_fem.AssembledOperators | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.phi > 0:
            raise ContractError(f"regularization phi must be positive, got {self.phi}")
        n = self.K.shape[0]
        if self.K.shape != (n, n) or self.V.shape != (n, n):
            raise ContractError("K and V must be square of equal size")
        if self.K_c.shape[0] != n or self.y_target.shape != (n,):
            raise ContractError("K_c rows and target length must equal dim(K)")
        if self.y_c.shape != (self.K_c.shape[1],):
            raise ContractError("y_c length must equal the column count of K_c")

    @classmethod
    def from_operators(cls, ops, y_target, y_c, phi):
        return cls(ops.K, ops.V, ops.K_c, np.asarray(y_target, float),
                   np.asarray(y_c, float), float(phi), ops)

    @property
    def n(self):
        return self.K.shape[0]

    def with_phi(self, phi):
        """Same operators and data with a different regularization."""
        return ControlProblem(self.K, self.V, self.K_c, self.y_target, self.y_c,
                              float(phi), self.ops)

    @cached_property
    def _v_lu(self):
        return _splu(self.V)

    def solve_v(self, x):
        return _lu_solve(self._v_lu, np.asarray(x))

    @cached_property
    def constraint_rhs(self):
        """``K_c y_c``."""
        return self.K_c @ self.y_c

    @cached_property
    def schur_rhs(self):
        """``K_c y_c + K y_target``: right-hand side of ``S lambda = ...``."""
        return self.constraint_rhs + self.K @ self.y_target


def thermal_problem(n, phi):
    """Heat control on the unit square with the piecewise target and ``y_c = y_target``."""
    mesh = mesh_fem.build_unit_square_mesh(n)
    ops = mesh_fem.assemble_operators(mesh, mesh_fem.Physics.heat())
    target = mesh_fem.target_thermal_nodal(mesh)
    return ControlProblem.from_operators(ops, target[ops.free_dofs],
                                         target[ops.constrained_dofs], phi)


STRESS_UNITS = {"Pa": 1.0, "MPa": 1e-6}


def elasticity_problem(n, phi, pressure=1e5, physics=None, units="Pa"):
    """Plane-strain cantilever whose target is the displacement under ``pressure``.

    ``pressure`` and the default modulus are given in pascals; ``units="MPa"``
    rescales both, which multiplies K by 1e-6.  Displacements are unchanged but
    ``phi`` then means something different: phi in MPa units equals
    phi * 1e-12 in Pa units.
    """
    if units not in STRESS_UNITS:
        raise ContractError(f"units must be one of {sorted(STRESS_UNITS)}")
    f = STRESS_UNITS[units]
    physics = physics or mesh_fem.Physics.elasticity()
    if f != 1.0:
        physics = dataclasses.replace(physics, young_modulus=physics.young_modulus * f)
        pressure = pressure * f
    mesh = mesh_fem.build_cantilever_mesh(n)
    ops = mesh_fem.assemble_operators(mesh, physics)
    target = mesh_fem.forward_solve_elastic_target(mesh, physics, pressure, ops)
    return ControlProblem.from_operators(ops, target, np.zeros(ops.m), phi)


@dataclass(frozen=True, eq=False)
class KktSystem:
    """Assembled saddle-point system.

    With ``scale = s != 1`` the constraint row is multiplied by ``s`` and the
    unknown in the third block is ``lambda / s``; :meth:`split` undoes this.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n: int
    scale: float = 1.0

    def apply(self, x):
        return self.matrix @ x

    def split(self, x):
        """``(y, u, lambda)`` from a stacked solution vector."""
        n = self.n
        return x[:n], x[n:2 * n], self.scale * x[2 * n:]

    def stack(self, y, u, lam):
        return np.concatenate([y, u, np.asarray(lam) / self.scale])

    def block_errors(self, x):
        """Residual of each block row relative to its largest term.

        For block row ``i`` this is ``||r_i|| / max(||b_i||, max_j ||A_ij x_j||)``,
        so a zero right-hand side (the constraint row without boundary data)
        is measured against ``||K y||`` rather than the whole system.
        """
        n = self.n
        r = self.rhs - self.matrix @ x
        out = []
        for i in range(3):
            rows = self.matrix[i * n:(i + 1) * n]
            terms = [np.linalg.norm(self.rhs[i * n:(i + 1) * n])]
            terms += [np.linalg.norm(rows[:, j * n:(j + 1) * n] @ x[j * n:(j + 1) * n])
                      for j in range(3)]
            scale = max(terms)
            out.append(float(np.linalg.norm(r[i * n:(i + 1) * n]) / scale) if scale else 0.0)
        return out


def auto_constraint_scale(problem):
    """``max diag V / max diag K``: balances the constraint row against the first row."""
    kd = np.abs(problem.K.diagonal()).max()
    return float(np.abs(problem.V.diagonal()).max() / kd) if kd > 0 else 1.0


def assemble_kkt(problem, constraint_scale=1.0):
    """Block system ``[[V, 0, K], [0, phi V, -V], [K, -V, 0]]`` and its rhs.

    ``constraint_scale`` multiplies the constraint row and column (a symmetric
    equilibration; ``"auto"`` picks :func:`auto_constraint_scale`).  Badly
    scaled units, e.g. stiffness in pascals, otherwise put a floor of order
    ``eps * ||K|| ||y|| / ||V y_target||`` under the attainable true residual.
    """
    k, v = problem.K, problem.V
    if k.shape != v.shape:
        raise ContractError("K and V dimensions differ")
    s = auto_constraint_scale(problem) if constraint_scale == "auto" else float(constraint_scale)
    if not (np.isfinite(s) and s > 0):
        raise ContractError("constraint scale must be positive")
    ks, vs = (k, v) if s == 1.0 else (s * k, s * v)
    mat = sp.bmat([[v, None, ks],
                   [None, problem.phi * v, -vs],
                   [ks, -vs, None]], format="csr")
    mat.sort_indices()
    rhs = np.concatenate([v @ problem.y_target, np.zeros(problem.n), -s * problem.constraint_rhs])
    return KktSystem(mat, rhs, problem.n, s)


def apply_schur(problem, v):
    """``S v = K V^{-1} K v + V v / phi`` without forming ``S``."""
    v = np.asarray(v)
    return problem.K @ problem.solve_v(problem.K @ v) + (problem.V @ v) / problem.phi


def schur_operator(problem):
    return LinearOperator(problem.n, lambda v: apply_schur(problem, v))


@dataclass(frozen=True, eq=False)
class SchurFactors:
    """``factor_plus = K + c V`` and ``factor_minus = K - c V`` with ``c = 1/(i sqrt(phi))``."""

    K: sp.csr_matrix
    V: sp.csr_matrix
    c: complex
    phi: float

    def factor(self, sign):
        return (self.K + (sign * self.c) * self.V).tocsr()

    @cached_property
    def factor_plus(self):
        return self.factor(+1)

    @cached_property
    def factor_minus(self):
        return self.factor(-1)

    def alpha(self, sign):
        """Coefficient of ``V`` in the requested factor."""
        return sign * self.c


def build_complex_factors(problem):
    if not problem.phi > 0:
        raise ContractError("phi must be positive")
    c = 1.0 / (1j * np.sqrt(problem.phi))
    return SchurFactors(problem.K, problem.V, complex(c), problem.phi)


class DirectFactorSolver:
    """Sparse complex LU of each factor, computed once and cached per sign."""

    name = "direct"

    def __init__(self):
        self._cache = {}

    def __call__(self, factors, sign, rhs, tol=None):
        t0 = time.perf_counter()
        key = (id(factors), sign)
        if key not in self._cache:
            self._cache = {k: v for k, v in self._cache.items() if k[0] == id(factors)}
            self._cache[key] = (factors, _splu(factors.factor(sign)))
        lu = self._cache[key][1]
        rhs = np.asarray(rhs, dtype=complex)
        x = lu.solve(rhs)
        a = factors.factor_plus if sign == 1 else factors.factor_minus
        bn = np.linalg.norm(rhs)
        rel = np.linalg.norm(rhs - a @ x) / bn if bn else 0.0
        return x, SolveStats(1, rel, True, time.perf_counter() - t0)


class GmresFactorSolver:
    """Unpreconditioned GMRES on a complex factor (small problems only)."""

    name = "gmres"

    def __init__(self, restart=200, max_iter=5000):
        self.restart = restart
        self.max_iter = max_iter

    def __call__(self, factors, sign, rhs, tol=1e-12):
        a = factors.factor_plus if sign == 1 else factors.factor_minus
        return krylov.gmres(a, np.asarray(rhs, dtype=complex), tol=tol,
                            restart=self.restart, max_iter=self.max_iter)


@dataclass
class SolutionTriple:
    y: np.ndarray
    u: np.ndarray
    lam: np.ndarray
    imag_leak: float = 0.0
    converged: bool = True
    flags: tuple = ()

    def stacked(self):
        return np.concatenate([self.y, self.u, self.lam])


def _factored_schur_solve(problem, factors, factor_solver, rhs, tol):
    """Solve ``S x = rhs`` through the two complex factors; returns the complex iterate."""
    a, st_plus = factor_solver(factors, +1, rhs, tol)
    b = problem.V @ a
    lam, st_minus = factor_solver(factors, -1, b, tol)
    return lam, st_plus, st_minus


def solve_range_space(problem, factor_solver=None, tol=1e-12):
    """Range-space method: one exact Schur solve through the complex factors.

    Returns
    -------
    solution : SolutionTriple
    stats : tuple of SolveStats
        Inner statistics for the ``K + cV`` and ``K - cV`` solves, in that order.
    """
    factor_solver = factor_solver or DirectFactorSolver()
    factors = build_complex_factors(problem)
    lam_c, st_plus, st_minus = _factored_schur_solve(problem, factors, factor_solver,
                                                     problem.schur_rhs, tol)
    lam = np.ascontiguousarray(lam_c.real)
    leak = float(np.max(np.abs(lam_c.imag), initial=0.0))
    y = problem.y_target - problem.solve_v(problem.K @ lam)
    u = lam / problem.phi
    flags = []
    converged = bool(st_plus.converged and st_minus.converged)
    if not converged:
        flags.append("inner_not_converged")
    if leak > 1e-6 * max(np.max(np.abs(lam), initial=0.0), np.finfo(float).tiny):
        flags.append("imag_leak")
    return SolutionTriple(y, u, lam, leak, converged, tuple(flags)), (st_plus, st_minus)


def sp_factor(problem):
    """Real SPD factor ``K + V / sqrt(phi)`` of the Pearson-Wathen approximation."""
    return (problem.K + problem.V / np.sqrt(problem.phi)).tocsr()


def apply_sp(problem, x):
    """``S_p x = (K + V/sqrt(phi)) V^{-1} (K + V/sqrt(phi)) x``."""
    f = sp_factor(problem)
    return f @ problem.solve_v(f @ x)


class SpSolver:
    """Applies ``S_p^{-1}`` with a cached factorization (or a supplied inner solver)."""

    def __init__(self, problem, inner_solver=None):
        self.problem = problem
        if inner_solver is None:
            lu = _splu(sp_factor(problem))
            inner_solver = lambda r: _lu_solve(lu, r)
        self.inner_solver = inner_solver

    def __call__(self, rhs):
        w = self.inner_solver(rhs)
        return self.inner_solver(self.problem.V @ w)


def solve_sp(problem, rhs, inner_solver=None):
    """Solve ``S_p x = rhs`` with two real SPD inner solves."""
    return SpSolver(problem, inner_solver)(np.asarray(rhs))


class PmgwPreconditioner:
    """Block-diagonal ``blockdiag(V, phi V, S_hat)^{-1}`` for the KKT system.

    ``backend`` is ``"exact_Sc"`` (complex factorization of ``S``) or
    ``"approx_Sp"`` (Pearson-Wathen approximation).
    """

    def __init__(self, problem, backend="exact_Sc", factor_solver=None, sp_inner=None,
                 inner_tol=1e-12, scale=1.0):
        if backend not in ("exact_Sc", "approx_Sp"):
            raise ContractError(f"unknown Schur backend {backend!r}")
        t0 = time.perf_counter()
        self.problem = problem
        self.backend = backend
        self.scale = float(scale)
        self.inner_tol = inner_tol
        self.imag_leak = 0.0
        self.schur_solves = 0
        self.solve_time = 0.0
        self.inner_stats = []
        if backend == "exact_Sc":
            self.factors = build_complex_factors(problem)
            self.factor_solver = factor_solver or DirectFactorSolver()
            if hasattr(self.factor_solver, "prepare"):
                self.factor_solver.prepare(self.factors)
        else:
            self.sp_solver = SpSolver(problem, sp_inner)
        problem.solve_v(np.zeros(problem.n))
        self.build_time = time.perf_counter() - t0

    def solve_schur(self, r3):
        t0 = time.perf_counter()
        if self.backend == "exact_Sc":
            lam, s1, s2 = _factored_schur_solve(self.problem, self.factors, self.factor_solver,
                                                r3, self.inner_tol)
            self.inner_stats.extend([s1, s2])
            self.imag_leak = max(self.imag_leak, float(np.max(np.abs(lam.imag), initial=0.0)))
            out = np.ascontiguousarray(lam.real)
        else:
            out = self.sp_solver(r3)
        self.schur_solves += 1
        self.solve_time += time.perf_counter() - t0
        return out

    def __call__(self, residual):
        residual = np.asarray(residual, dtype=float)
        n = self.problem.n
        if not np.any(residual):
            return np.zeros(3 * n)
        r1, r2, r3 = residual[:n], residual[n:2 * n], residual[2 * n:]
        z1 = self.problem.solve_v(r1)
        z2 = self.problem.solve_v(r2) / self.problem.phi
        # third block of the equilibrated system is s^2 S
        z3 = self.solve_schur(r3) / self.scale ** 2 if np.any(r3) else np.zeros(n)
        return np.concatenate([z1, z2, z3])


def apply_pmgw(problem, schur_backend, residual, **kwargs):
    """One application of the block preconditioner; see :class:`PmgwPreconditioner`."""
    return PmgwPreconditioner(problem, schur_backend, **kwargs)(residual)


def solve_full_space(problem, precond="pmgw_Sc", outer=None, tol=1e-10, max_iter=2000,
                     restart=200, factor_solver=None, sp_inner=None, inner_tol=1e-12,
                     constraint_scale="auto", block_tol=None, max_refinements=5):
    """Solve the whole KKT system with MINRES or right-preconditioned GMRES.

    ``outer`` defaults to GMRES for ``pmgw_Sc`` (inexact complex inner solves
    break exact symmetry) and MINRES otherwise.  The tolerance applies to the
    true relative residual of the system returned by
    ``assemble_kkt(problem, constraint_scale)``.

    With ``block_tol`` set, the solve is followed by up to ``max_refinements``
    correction solves ``A d = r`` until every entry of
    :meth:`KktSystem.block_errors` is at most ``block_tol``; ``converged``
    then refers to that test.

    Returns
    -------
    solution : SolutionTriple
    stats : SolveStats
        ``iterations`` counts outer Krylov iterations.
    """
    if precond not in PRECONDITIONERS:
        raise ContractError(f"precond must be one of {PRECONDITIONERS}")
    outer = outer or ("gmres" if precond == "pmgw_Sc" else "minres")
    if outer not in OUTER_SOLVERS:
        raise ContractError(f"outer must be one of {OUTER_SOLVERS}")
    if precond == "pmgw_Sc" and outer == "minres":
        raise ContractError("pmgw_Sc requires the GMRES outer solver")
    kkt = assemble_kkt(problem, constraint_scale)
    m = None
    if precond != "none":
        backend = "exact_Sc" if precond == "pmgw_Sc" else "approx_Sp"
        m = PmgwPreconditioner(problem, backend, factor_solver=factor_solver,
                               sp_inner=sp_inner, inner_tol=inner_tol, scale=kkt.scale)

    def krylov_solve(rhs):
        if outer == "gmres":
            return krylov.gmres(kkt.matrix, rhs, tol=tol, restart=restart,
                                max_iter=max_iter, precond=m)
        return krylov.minres(kkt.matrix, rhs, tol=tol, max_iter=max_iter, precond=m)

    x, stats = krylov_solve(kkt.rhs)
    if block_tol is not None:
        for _ in range(max_refinements):
            if max(kkt.block_errors(x)) <= block_tol:
                break
            d, st = krylov_solve(kkt.rhs - kkt.matrix @ x)
            x = x + d
            stats.iterations += st.iterations
            stats.wall_time += st.wall_time
        stats.converged = max(kkt.block_errors(x)) <= block_tol
        bn = np.linalg.norm(kkt.rhs)
        stats.relative_residual = float(np.linalg.norm(kkt.rhs - kkt.matrix @ x) / bn) if bn else 0.0
    y, u, lam = kkt.split(x)
    leak = getattr(m, "imag_leak", 0.0)
    flags = () if stats.converged else ("not_converged",)
    return SolutionTriple(y.copy(), u.copy(), lam.copy(), leak, stats.converged, flags), stats


@dataclass
class DiagnosticsReport:
    constraint_violation: float
    target_mismatch: float
    control_norm: float
    objective: float
    state_energy_norm: float
    violation_defined: bool = True

    def as_dict(self, prefix=""):
        return {f"{prefix}{k}": v for k, v in self.__dict__.items()}


def v_norm(v_mat, q):
    return float(np.sqrt(max(np.dot(q, v_mat @ q), 0.0)))


def diagnostics(problem, solution):
    """Constraint violation, target mismatch and norms of a candidate solution."""
    y, u = np.asarray(solution.y, float), np.asarray(solution.u, float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
        raise ContractError("solution vectors must be finite")
    ky = problem.K @ y
    resid = ky + problem.constraint_rhs - problem.V @ u
    kyn = np.linalg.norm(ky)
    defined = kyn > 0
    violation = float(np.linalg.norm(resid) / kyn) if defined else float("inf")
    diff = v_norm(problem.V, y - problem.y_target)
    tnorm = v_norm(problem.V, problem.y_target)
    mismatch = diff / tnorm if tnorm > 0 else diff
    unorm = v_norm(problem.V, u)
    objective = 0.5 * diff ** 2 + 0.5 * problem.phi * unorm ** 2
    return DiagnosticsReport(violation, mismatch, unorm, objective,
                             v_norm(problem.V, y), defined)


def dense_schur(problem):
    """Dense ``K V^{-1} K + V / phi`` (small problems, oracle use)."""
    k, v = problem.K.toarray(), problem.V.toarray()
    return k @ np.linalg.solve(v, k) + v / problem.phi


def dense_complex_product(factors):
    """Dense ``(K + cV) V^{-1} (K - cV)`` (small problems, oracle use)."""
    v = factors.V.toarray()
    return factors.factor_plus.toarray() @ np.linalg.solve(v, factors.factor_minus.toarray())


def dense_sp(problem):
    f = sp_factor(problem).toarray()
    return f @ np.linalg.solve(problem.V.toarray(), f)
