"""Fast oracle checks run by ``ocschur verify``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from ocschur import _kernels, control
from ocschur.feti import FetiConfig, FetiDpSolver, OperatorSpec, partition_structured


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    threshold: float

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.3e} (threshold {self.threshold:.1e})"


def _le(name, value, threshold):
    return Check(name, bool(value <= threshold), float(value), threshold)


def check_factorization(phi=1e-5, n=4):
    p = control.thermal_problem(n, phi)
    s = control.dense_schur(p)
    prod = control.dense_complex_product(control.build_complex_factors(p))
    return _le("factorization exactness", np.linalg.norm(prod - s) / np.linalg.norm(s), 1e-12)


def check_pearson_bound(phi=1e-5, n=4):
    p = control.thermal_problem(n, phi)
    ev = sla.eigh(control.dense_schur(p), control.dense_sp(p), eigvals_only=True)
    excess = max(0.5 - ev.min(), ev.max() - 1.0, 0.0)
    return _le("Pearson eigenvalue bound", excess, 1e-10)


def check_range_space(phi=1e-5, n=8):
    p = control.thermal_problem(n, phi)
    kkt = control.assemble_kkt(p)
    ref = spla.spsolve(kkt.matrix.tocsc(), kkt.rhs)
    sol, _ = control.solve_range_space(p)
    return _le("range-space vs KKT oracle",
               np.linalg.norm(sol.stacked() - ref) / np.linalg.norm(ref), 1e-8)


def check_full_space(phi=2e-5, n=8):
    p = control.thermal_problem(n, phi)
    _, st = control.solve_full_space(p, "pmgw_Sc", tol=1e-10)
    return _le("preconditioned full-space iterations", st.iterations, 3)


def check_feti(phi=2e-8, n=16):
    p = control.thermal_problem(n, phi)
    ops = p.ops
    part = partition_structured(ops.mesh, 2, 2, ops.physics, ops)
    factors = control.build_complex_factors(p)
    a = factors.factor_minus.tocsc()
    ref = spla.spsolve(a, p.schur_rhs.astype(complex))
    solver = FetiDpSolver(OperatorSpec.from_factors(factors, -1), part, FetiConfig(2, 2))
    x, _ = solver.solve(p.schur_rhs.astype(complex))
    return _le("FETI-DP vs direct solve", np.linalg.norm(x - ref) / np.linalg.norm(ref), 1e-8)


def check_kernels(m=40, k=6):
    rng = np.random.default_rng(0)
    basis = np.ascontiguousarray(np.linalg.qr(rng.standard_normal((m, k)))[0].T)
    w = rng.standard_normal(m)
    h = np.zeros(k)
    _kernels.mgs_orthogonalize(basis, k, w, h)
    return _le(f"{_kernels.BACKEND} kernel orthogonality", np.abs(basis @ w).max(), 1e-14)


CHECKS = (check_factorization, check_pearson_bound, check_range_space, check_full_space,
          check_feti, check_kernels)


def run_checks():
    return [c() for c in CHECKS]
