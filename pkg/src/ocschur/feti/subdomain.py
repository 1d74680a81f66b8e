"""Subdomain operators ``A^s = K^s + alpha V^s`` split into corner and remaining blocks."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ocschur import mesh_fem
from ocschur.errors import ContractError, SingularMatrixError


@dataclass(frozen=True)
class OperatorSpec:
    """``A = K + alpha V`` on the free DOFs; ``alpha = 0`` gives the real stiffness."""

    alpha: complex = 0.0

    @classmethod
    def stiffness(cls):
        return cls(0.0)

    @classmethod
    def from_factors(cls, factors, sign):
        """``K + cV`` (``sign=+1``) or ``K - cV`` (``sign=-1``)."""
        if sign not in (1, -1):
            raise ContractError("sign must be +1 or -1")
        return cls(complex(sign * factors.c))

    @property
    def is_real(self):
        return complex(self.alpha).imag == 0

    @property
    def dtype(self):
        return np.float64 if self.is_real else np.complex128

    def coefficient(self):
        return complex(self.alpha).real if self.is_real else complex(self.alpha)

    def combine(self, k, v):
        a = self.coefficient()
        return k if a == 0 else (k + a * v)

    def global_matrix(self, ops):
        return self.combine(ops.K, ops.V).tocsr()

    def conjugate(self):
        return OperatorSpec(complex(self.alpha).conjugate())


def local_matrices(partition):
    """Per-subdomain ``(K^s, V^s)`` on free local DOFs, assembled from local elements only."""
    cache = partition.__dict__.get("_local_matrices")
    if cache is not None:
        return cache
    mesh, physics = partition.mesh, partition.physics
    dpn = physics.dofs_per_node
    ke, me = mesh_fem.element_matrices(mesh, physics)
    out = []
    for s in partition.subdomains:
        local_nodes = np.searchsorted(s.nodes, mesh.elements[s.elements])
        conn = mesh_fem.element_dofs(local_nodes, dpn)
        n_full = s.nodes.size * dpn
        keep = s.local_full_dofs
        k = mesh_fem.assemble_matrix(conn, ke, n_full)[keep][:, keep].tocsr()
        v = mesh_fem.assemble_matrix(conn, me, n_full)[keep][:, keep].tocsr()
        out.append((k, v))
    out = tuple(out)
    partition.__dict__["_local_matrices"] = out
    return out


@dataclass(eq=False)
class SubdomainOperator:
    """Blocks of ``A^s`` and the dense local quantities the dual problem needs.

    ``X_c = A_rr^{-1} A_rc`` and ``X_b = A_rr^{-1} B_r^T`` (multiplier columns) are
    precomputed; the subdomains are small, so dense storage is cheap.
    """

    sub: object
    A: sp.csr_matrix = field(repr=False)
    A_rr: sp.csr_matrix = field(repr=False)
    A_rc: sp.csr_matrix = field(repr=False)
    A_cc: np.ndarray = field(repr=False)
    lu_rr: object = field(repr=False)
    X_c: np.ndarray = field(repr=False)
    X_b: np.ndarray = field(repr=False)
    S_bb: np.ndarray = field(repr=False)

    def solve_rr(self, rhs):
        return self.lu_rr.solve(np.asarray(rhs, dtype=self.X_b.dtype))

    @property
    def K_star_cc(self):
        """Local corner Schur complement ``A_cc - A_cr A_rr^{-1} A_rc``."""
        return self.A_cc - (self.A_rc.T @ self.X_c)


def _factor(a, what, sid):
    try:
        lu = spla.splu(sp.csc_matrix(a))
    except RuntimeError as exc:
        raise SingularMatrixError(f"{what} of subdomain {sid} is singular: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    if diag.size and diag.min() <= 1e-13 * diag.max():
        raise SingularMatrixError(f"{what} of subdomain {sid} is numerically singular")
    return lu


def _dirichlet_block(a_rr, sub):
    i, b = sub.i_pos, sub.b_pos
    a_bb = a_rr[b][:, b].toarray()
    if i.size == 0 or b.size == 0:
        return a_bb
    a_ii = a_rr[i][:, i]
    a_ib = a_rr[i][:, b].toarray()
    lu = _factor(a_ii, "A_ii", sub.index)
    return a_bb - a_rr[b][:, i] @ lu.solve(a_ib)


def build_subdomain_operator(spec, sub, k, v):
    a = spec.combine(k, v).astype(spec.dtype).tocsr()
    r, c = sub.r_local, sub.c_local
    a_rr = a[r][:, r].tocsr()
    a_rc = a[r][:, c].tocsr()
    a_cc = a[c][:, c].toarray()
    lu = _factor(a_rr, "A_rr", sub.index)
    x_c = lu.solve(a_rc.toarray()) if c.size else np.zeros((r.size, 0), spec.dtype)
    bt = np.zeros((r.size, sub.mult_ids.size), dtype=spec.dtype)
    bt[sub.mult_r_pos, np.arange(sub.mult_ids.size)] = sub.mult_sign
    x_b = lu.solve(bt) if bt.shape[1] else bt
    return SubdomainOperator(sub, a, a_rr, a_rc, a_cc, lu, x_c, x_b, _dirichlet_block(a_rr, sub))


def assemble_subdomain_operators(spec, partition, threads=1):
    """Factor every subdomain; results come back in subdomain order regardless of ``threads``."""
    mats = local_matrices(partition)
    jobs = list(zip(partition.subdomains, mats))
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda j: build_subdomain_operator(spec, j[0], *j[1]), jobs))
    return [build_subdomain_operator(spec, s, k, v) for s, (k, v) in jobs]


def reassemble_global(partition, subops):
    """``sum_s R_s^T A^s R_s``; equals the global operator."""
    n = partition.ops.n
    rows, cols, vals = [], [], []
    for so in subops:
        coo = so.A.tocoo()
        rows.append(so.sub.dofs[coo.row])
        cols.append(so.sub.dofs[coo.col])
        vals.append(coo.data)
    return sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n)).tocsr()


def dense_schur_complement(a, interior):
    """Dense Schur complement of ``a[interior, interior]`` (oracle helper)."""
    a = np.asarray(a)
    i = np.asarray(interior)
    b = np.setdiff1d(np.arange(a.shape[0]), i)
    return a[np.ix_(b, b)] - a[np.ix_(b, i)] @ sla.solve(a[np.ix_(i, i)], a[np.ix_(i, b)])
