"""FETI-DP dual interface solver with optional edge augmentation.

Unknowns per subdomain are split into corner DOFs ``c`` (assembled, shared
exactly) and the rest ``r``.  Continuity of the ``r`` interface values is
enforced by multipliers ``lambda`` through signed Boolean maps ``B^s``.
Eliminating ``u_r`` and the coarse unknowns ``z = (u_c, mu)`` gives::

    (F_rr + F_z C^{-1} F_z^T) lambda = d_r - F_z C^{-1} g_z

which is solved by right-preconditioned GMRES with the Dirichlet
preconditioner.  ``mu`` are the augmentation coefficients: the total
multiplier is ``lambda + Q mu`` and ``Q^T (sum_s B^s u^s) = 0`` holds exactly
at every iterate.  All transposes are plain (not conjugate), as the complex
operators are complex symmetric.
"""
from __future__ import annotations

import dataclasses
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ocschur import krylov
from ocschur.errors import CoarseProblemError, ContractError
from ocschur.feti.augmentation import build_edge_rbm_augmentation, empty_augmentation
from ocschur.feti.partition import partition_structured
from ocschur.feti.subdomain import OperatorSpec, assemble_subdomain_operators
from ocschur.krylov import LinearOperator, SolveStats


@dataclass(frozen=True)
class FetiConfig:
    s_x: int = 2
    s_y: int = 2
    augment: bool = True
    tol: float = 1e-10
    max_iter: int = 500
    deterministic: bool = True
    threads: int = 1
    restart: int = 200
    dual_solver: str = "gmres"

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ContractError("tol must lie in (0, 1)")
        if self.max_iter < 1 or self.restart < 1:
            raise ContractError("max_iter and restart must be positive")
        if self.dual_solver not in ("gmres", "cg"):
            raise ContractError("dual_solver must be 'gmres' or 'cg'")
        if self.threads < 1:
            raise ContractError("threads must be >= 1")

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown FETI config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class FetiStats(SolveStats):
    """Dual iteration counts plus interface and timing diagnostics."""

    jump: float = 0.0
    dual_residual: float = 0.0
    setup_time: float = 0.0
    solve_time: float = 0.0
    n_multipliers: int = 0
    coarse_size: int = 0
    tightenings: int = 0

    def as_dict(self, prefix=""):
        d = super().as_dict(prefix)
        d.update({f"{prefix}jump": float(self.jump),
                  f"{prefix}setup_time": float(self.setup_time),
                  f"{prefix}solve_time": float(self.solve_time)})
        return d


@dataclass(eq=False)
class CoarseProblem:
    """Dense corner-plus-augmentation matrix ``C`` and its LU factors.

    The corner block scales like the stiffness and the augmentation block
    like its inverse, so ``C`` is symmetrically equilibrated by its row norms
    before factoring; the singularity check applies to the equilibrated pivots.
    """

    matrix: np.ndarray = field(repr=False)
    n_corners: int = 0
    n_augment: int = 0
    lu: tuple = field(default=None, repr=False)
    scaling: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        n = self.matrix.shape[0]
        if n == 0:
            return
        if not np.all(np.isfinite(self.matrix)):
            raise CoarseProblemError("coarse matrix has non-finite entries")
        rows = np.abs(self.matrix).max(axis=1)
        if rows.min() == 0:
            raise CoarseProblemError(f"coarse matrix has {np.sum(rows == 0)} zero rows")
        d = 1.0 / np.sqrt(rows)
        with warnings.catch_warnings():
            # exact zero pivots are reported below as CoarseProblemError
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            lu, piv = sla.lu_factor(d[:, None] * self.matrix * d[None, :], check_finite=False)
        pivots = np.abs(np.diag(lu))
        ratio = pivots.min() / pivots.max()
        if ratio <= 1e-13:
            raise CoarseProblemError(
                f"coarse problem ({self.n_corners} corner + {self.n_augment} augmentation "
                f"unknowns) is singular: equilibrated pivot ratio {ratio:.2e}")
        self.lu = (lu, piv)
        self.scaling = d

    @property
    def size(self):
        return self.matrix.shape[0]

    def solve(self, rhs):
        if self.size == 0:
            return np.zeros((0,) + np.shape(rhs)[1:], dtype=np.asarray(rhs).dtype)
        d = self.scaling if np.ndim(rhs) == 1 else self.scaling[:, None]
        return d * sla.lu_solve(self.lu, d * rhs, check_finite=False)


def _sparse_blocks(n, blocks, dtype):
    rows, cols, vals = [], [], []
    for ids, blk in blocks:
        if ids.size == 0:
            continue
        rows.append(np.repeat(ids, ids.size))
        cols.append(np.tile(ids, ids.size))
        vals.append(np.asarray(blk, dtype=dtype).ravel())
    if not rows:
        return sp.csr_matrix((n, n), dtype=dtype)
    a = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    a.sum_duplicates()
    return a


class FetiDpSolver:
    """Setup (factorizations, dual operator, coarse problem) for one operator.

    Parameters
    ----------
    spec : OperatorSpec
        ``A = K + alpha V``.
    partition : FetiPartition
    config : FetiConfig, optional
    """

    def __init__(self, spec, partition, config=None, augmentation=None):
        t0 = time.perf_counter()
        self.spec = spec
        self.partition = partition
        self.config = config or FetiConfig(partition.s_x, partition.s_y)
        self.dtype = spec.dtype
        self.A = spec.global_matrix(partition.ops).astype(self.dtype)
        self.subops = assemble_subdomain_operators(spec, partition, self.config.threads)
        if self.config.augment:
            self.aug = augmentation or build_edge_rbm_augmentation(partition)
        else:
            self.aug = empty_augmentation(partition.n_multipliers)
        dpn = partition.physics.dofs_per_node
        node = partition.ops.free_dofs // dpn
        self.dof_multiplicity = partition.multiplicity[node].astype(float)
        self._assemble()
        self.setup_time = time.perf_counter() - t0

    def _assemble(self):
        p = self.partition
        nl, nc = p.n_multipliers, p.n_corners
        dt = self.dtype
        f_rc = np.zeros((nl, nc), dtype=dt)
        k_cc = np.zeros((nc, nc), dtype=dt)
        frr_blocks, m_blocks = [], []
        for so in self.subops:
            s = so.sub
            sign = s.mult_sign
            xb = sign[:, None] * so.X_b[s.mult_r_pos, :]
            frr_blocks.append((s.mult_ids, xb))
            if nc and s.corner_ids.size:
                f_rc[np.ix_(s.mult_ids, s.corner_ids)] += sign[:, None] * so.X_c[s.mult_r_pos, :]
                k_cc[np.ix_(s.corner_ids, s.corner_ids)] += so.K_star_cc
            # W B S_bb B^T W with W = 1/2 on every multiplier
            m_blocks.append((s.mult_ids, 0.25 * np.outer(sign, sign) * so.S_bb))
        self.F_rr = _sparse_blocks(nl, frr_blocks, dt)
        self.M = _sparse_blocks(nl, m_blocks, dt)
        self.F_rc = f_rc
        q = self.aug.Q
        self.F_z = np.hstack([f_rc, (self.F_rr @ q).astype(dt)]) if q.shape[1] else f_rc
        c = np.zeros((nc + q.shape[1],) * 2, dtype=dt)
        c[:nc, :nc] = k_cc
        if q.shape[1]:
            qf = q.T @ f_rc
            c[:nc, nc:] = -qf.T
            c[nc:, :nc] = -qf
            c[nc:, nc:] = -(q.T @ self.F_z[:, nc:])
        self.coarse = CoarseProblem(c, nc, q.shape[1])

    # dual operator pieces
    def apply_dual(self, lam):
        out = self.F_rr @ lam
        if self.coarse.size:
            out = out + self.F_z @ self.coarse.solve(self.F_z.T @ lam)
        return out

    def apply_preconditioner(self, r):
        return self.aug.project(self.M @ self.aug.project(r))

    def dual_operator(self):
        return LinearOperator(self.partition.n_multipliers, self.apply_dual, self.dtype)

    def _local_rhs(self, f):
        p = self.partition
        out = []
        for so in self.subops:
            r_dofs = so.sub.dofs[so.sub.r_local]
            out.append(f[r_dofs] / self.dof_multiplicity[r_dofs])
        return out, f[p.corner_dofs]

    def _dual_rhs(self, f_r, f_c):
        p = self.partition
        nl = p.n_multipliers
        d = np.zeros(nl, dtype=self.dtype)
        fstar = np.asarray(f_c, dtype=self.dtype).copy()
        for so, fr in zip(self.subops, f_r):
            w = so.solve_rr(fr)
            s = so.sub
            np.add.at(d, s.mult_ids, s.mult_sign * w[s.mult_r_pos])
            if s.corner_ids.size:
                np.add.at(fstar, s.corner_ids, -(so.A_rc.T @ w))
        g = np.concatenate([fstar, -(self.aug.Q.T @ d)]) if self.aug.n_columns else fstar
        return d, g

    def _solve_local(self, so, fr, u_c, lam_tot):
        s = so.sub
        rhs = np.asarray(fr, dtype=self.dtype).copy()
        if s.corner_ids.size:
            rhs -= so.A_rc @ u_c[s.corner_ids]
        rhs[s.mult_r_pos] -= s.mult_sign * lam_tot[s.mult_ids]
        return so.solve_rr(rhs)

    def recover(self, lam, f_r, g):
        """Primal solution and subdomain ``r`` values for a given ``lambda``."""
        p = self.partition
        nc = p.n_corners
        z = self.coarse.solve(g + self.F_z.T @ lam) if self.coarse.size else np.zeros(0, self.dtype)
        u_c = z[:nc]
        lam_tot = lam + self.aug.Q @ z[nc:] if self.aug.n_columns else lam
        jobs = list(zip(self.subops, f_r))
        if self.config.threads > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                u_r = list(pool.map(lambda j: self._solve_local(j[0], j[1], u_c, lam_tot), jobs))
        else:
            u_r = [self._solve_local(so, fr, u_c, lam_tot) for so, fr in jobs]
        x = np.zeros(p.ops.n, dtype=self.dtype)
        for so, ur in zip(self.subops, u_r):
            r_dofs = so.sub.dofs[so.sub.r_local]
            x[r_dofs] += ur / self.dof_multiplicity[r_dofs]
        x[p.corner_dofs] = u_c
        jump = np.zeros(p.n_multipliers, dtype=self.dtype)
        for so, ur in zip(self.subops, u_r):
            s = so.sub
            np.add.at(jump, s.mult_ids, s.mult_sign * ur[s.mult_r_pos])
        return x, jump

    def solve(self, rhs, tol=None, max_iter=None):
        """Solve ``A x = rhs``; returns ``(x, FetiStats)``.

        The dual tolerance starts at ``tol`` and is tightened (continuing from
        the current multipliers) until the primal residual and the interface
        jump both meet ``tol``.
        """
        t0 = time.perf_counter()
        cfg = self.config
        tol = cfg.tol if tol is None else tol
        max_iter = cfg.max_iter if max_iter is None else max_iter
        f = np.asarray(rhs)
        if f.shape != (self.partition.ops.n,):
            raise ContractError("rhs length must equal the number of free DOFs")
        dt = np.result_type(self.dtype, f.dtype)
        f = f.astype(dt)
        common = dict(n_multipliers=self.partition.n_multipliers, coarse_size=self.coarse.size,
                      setup_time=self.setup_time)
        fn = np.linalg.norm(f)
        if fn == 0:
            return np.zeros_like(f), FetiStats(0, 0.0, True, 0.0, [], "", **common)
        if dt != self.dtype:
            # real operator with complex data: solve real and imaginary parts
            xr, sr = self.solve(f.real, tol, max_iter)
            xi, si = self.solve(f.imag, tol, max_iter)
            x = xr + 1j * xi
            res = np.linalg.norm(f - self.A @ x) / fn
            st = FetiStats(sr.iterations + si.iterations, res, sr.converged and si.converged,
                           time.perf_counter() - t0, sr.history + si.history,
                           sr.flag or si.flag, max(sr.jump, si.jump), **common)
            return x, st

        f_r, f_c = self._local_rhs(f)
        d, g = self._dual_rhs(f_r, f_c)
        b = d - self.F_z @ self.coarse.solve(g) if self.coarse.size else d
        op = self.dual_operator()
        pre = krylov.LinearOperator(op.dimension, self.apply_preconditioner, self.dtype)
        lam = np.zeros(op.dimension, dtype=self.dtype)
        iters, history, tightenings = 0, [], 0
        dual_tol = tol
        flag = ""
        x = jump = None
        res = np.inf
        dual_res = 0.0
        while True:
            remaining = max_iter - iters
            if remaining <= 0:
                flag = flag or "max_iter"
                break
            if np.linalg.norm(b) > 0:
                if cfg.dual_solver == "cg":
                    lam, st = krylov.cg(op, b, tol=dual_tol, max_iter=remaining, x0=lam,
                                        precond=pre)
                else:
                    lam, st = krylov.gmres(op, b, tol=dual_tol, restart=cfg.restart,
                                           max_iter=remaining, x0=lam, precond=pre)
                iters += st.iterations
                history.extend(st.history)
                dual_res = st.relative_residual
                dual_ok = st.converged
                flag = st.flag
            else:
                dual_ok, dual_res = True, 0.0
            x, jump = self.recover(lam, f_r, g)
            res = np.linalg.norm(f - self.A @ x) / fn
            jmax = np.max(np.abs(jump), initial=0.0)
            xmax = np.max(np.abs(x), initial=0.0)
            if res <= tol and jmax <= tol * xmax:
                break
            if not dual_ok or dual_tol <= 1e-15:
                flag = flag or "stagnated"
                break
            dual_tol = max(dual_tol / 10.0, 1e-15)
            tightenings += 1
        if x is None:
            x, jump = self.recover(lam, f_r, g)
            res = np.linalg.norm(f - self.A @ x) / fn
        converged = bool(res <= tol and np.max(np.abs(jump), initial=0.0)
                         <= tol * np.max(np.abs(x), initial=0.0))
        stats = FetiStats(iters, float(res), bool(converged), time.perf_counter() - t0, history,
                          "" if converged else (flag or "not_converged"),
                          float(np.max(np.abs(jump), initial=0.0)), float(dual_res),
                          solve_time=time.perf_counter() - t0, tightenings=tightenings, **common)
        return x, stats


def feti_dp_solve(spec, partition, rhs, config=None):
    """One-shot setup and solve; see :class:`FetiDpSolver`."""
    solver = FetiDpSolver(spec, partition, config)
    return solver.solve(rhs)


def dirichlet_preconditioner_apply(subops, partition, residual):
    """``W (sum_s B^s S_bb^s B^s^T) W r`` with ``W = 1/2`` (two owners per multiplier)."""
    r = np.asarray(residual)
    if r.shape != (partition.n_multipliers,):
        raise ContractError("dual residual has the wrong length")
    w = 0.5
    dtype = np.result_type(r.dtype, *[so.S_bb.dtype for so in subops])
    out = np.zeros(partition.n_multipliers, dtype=dtype)
    for so in subops:
        s = so.sub
        if s.mult_ids.size == 0:
            continue
        local = s.mult_sign * (w * r[s.mult_ids])
        np.add.at(out, s.mult_ids, w * s.mult_sign * (so.S_bb @ local))
    return out


class FetiFactorSolver:
    """Complex factor solver for the range-space and full-space methods.

    One FETI-DP setup is cached per factor (sign) and regularization value.
    """

    name = "feti"

    def __init__(self, partition, config=None):
        self.partition = partition
        self.config = config or FetiConfig(partition.s_x, partition.s_y)
        self._cache = {}
        self.setup_time = 0.0

    @classmethod
    def for_problem(cls, problem, s_x, s_y, config=None):
        ops = problem.ops
        if ops is None:
            raise ContractError("problem has no mesh to partition")
        part = partition_structured(ops.mesh, s_x, s_y, ops.physics, ops)
        return cls(part, config or FetiConfig(s_x, s_y))

    def solver_for(self, factors, sign):
        key = (complex(factors.c), sign)
        if key not in self._cache:
            if factors.K.shape[0] != self.partition.ops.n:
                raise ContractError("factor dimension does not match the partition")
            solver = FetiDpSolver(OperatorSpec.from_factors(factors, sign), self.partition,
                                  self.config)
            self.setup_time += solver.setup_time
            self._cache = {k: v for k, v in self._cache.items() if k[0] == key[0]}
            self._cache[key] = solver
        return self._cache[key]

    def prepare(self, factors):
        for sign in (1, -1):
            self.solver_for(factors, sign)

    def __call__(self, factors, sign, rhs, tol=None):
        return self.solver_for(factors, sign).solve(np.asarray(rhs, dtype=complex), tol=tol)
