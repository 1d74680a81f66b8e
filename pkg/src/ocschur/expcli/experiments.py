"""Experiment suites: regularization sweeps, scalability, backend comparison."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ocschur import control, krylov
from ocschur.errors import OcschurError
from ocschur.expcli.io import SCHEMA_VERSION, emit, read_results
from ocschur.feti import FetiConfig, FetiDpSolver, FetiFactorSolver, OperatorSpec
from ocschur.feti.partition import partition_structured
from ocschur.feti.study import build_problem, factor_pair_iterations, subdomain_grid

COLUMNS = {
    "phi_sweep": ("key", "phi", "iters_minus", "iters_plus", "solve_time",
                  "aug_iters_minus", "aug_iters_plus", "aug_solve_time", "converged",
                  "constraint_violation", "target_mismatch", "control_norm", "imag_leak"),
    "scalability": ("key", "n", "dofs", "elements", "h", "H", "nsub", "phi", "augment",
                    "iters_minus", "iters_plus", "converged", "setup_time", "solve_time"),
    "precond_compare": ("key", "phi", "sp_build_time", "sp_per_solve_time", "sp_ni",
                        "sp_total_time", "sp_converged", "sc_build_time", "sc_per_solve_time",
                        "sc_ni", "sc_total_time", "sc_converged", "agreement"),
    "accuracy_cliff": ("key", "phi", "rs_constraint_violation", "rs_target_mismatch",
                       "fs_constraint_violation", "fs_target_mismatch", "fs_iterations",
                       "fs_converged", "agreement", "imag_leak"),
}
TRAILER = ("error", "experiment", "config_hash", "schema_version")


def _feti_config(config, s_x, s_y, augment, tol=None):
    return FetiConfig(s_x=s_x, s_y=s_y, augment=augment, tol=tol or config.tol,
                      max_iter=config.max_iter, deterministic=config.deterministic)


def _partition(problem, config):
    ops = problem.ops
    return partition_structured(ops.mesh, config.s_x, config.s_y, ops.physics, ops)


def _rel(a, b):
    d = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / d) if d else float(np.linalg.norm(a))


def phi_sweep_row(config, phi):
    """Range-space solve through FETI-DPH on both factors, unaugmented then augmented."""
    problem = build_problem(config.physics, config.n, phi, config.units)
    part = _partition(problem, config)
    row = {"phi": phi}
    variants = ((False, ""), (True, "aug_")) if config.augment else ((False, ""),)
    for augment, prefix in variants:
        fs = FetiFactorSolver(part, _feti_config(config, config.s_x, config.s_y, augment))
        sol, (st_plus, st_minus) = control.solve_range_space(problem, fs, tol=config.tol)
        row[prefix + "iters_minus"] = st_minus.iterations
        row[prefix + "iters_plus"] = st_plus.iterations
        row[prefix + "solve_time"] = st_minus.solve_time + st_plus.solve_time
        row["converged"] = bool(row.get("converged", True) and sol.converged)
    diag = control.diagnostics(problem, sol)
    row.update(constraint_violation=diag.constraint_violation,
               target_mismatch=diag.target_mismatch, control_norm=diag.control_norm,
               imag_leak=sol.imag_leak)
    return row


def scalability_row(config, n):
    phi = config.phis[0]
    problem = build_problem(config.physics, n, phi, config.units)
    s_x, s_y = subdomain_grid(problem, config.h_ratio)
    ops = problem.ops
    part = partition_structured(ops.mesh, s_x, s_y, ops.physics, ops)
    cfg = _feti_config(config, s_x, s_y, config.augment)
    row = {"n": n, "dofs": ops.n, "elements": ops.mesh.n_elements, "h": ops.mesh.h,
           "H": ops.mesh.h * config.h_ratio, "nsub": s_x * s_y, "phi": phi,
           "augment": config.augment}
    st_m, st_p = factor_pair_iterations(problem, part, cfg)
    row.update(iters_minus=st_m.iterations, iters_plus=st_p.iterations,
               converged=bool(st_m.converged and st_p.converged),
               setup_time=st_m.setup_time + st_p.setup_time,
               solve_time=st_m.solve_time + st_p.solve_time)
    return row


def _inner_solvers(problem, config):
    """Factor solver for ``S_c`` and real inner solver for ``S_p``."""
    if config.inner_solver == "direct":
        return control.DirectFactorSolver(), None
    part = _partition(problem, config)
    cfg = _feti_config(config, config.s_x, config.s_y, config.augment, config.inner_tol)
    fs = FetiFactorSolver(part, cfg)
    sp = FetiDpSolver(OperatorSpec(1.0 / np.sqrt(problem.phi)), part, cfg)
    return fs, lambda r: sp.solve(np.asarray(r, dtype=float))[0]


def precond_compare_row(config, phi):
    problem = build_problem(config.physics, config.n, phi, config.units)
    row = {"phi": phi}
    sols = {}
    for name, precond in (("sp", "pmgw_Sp"), ("sc", "pmgw_Sc")):
        t0 = time.perf_counter()
        fs, sp_inner = _inner_solvers(problem, config)
        kkt = control.assemble_kkt(problem, "auto")
        m = control.PmgwPreconditioner(problem, "approx_Sp" if name == "sp" else "exact_Sc",
                                       factor_solver=fs, sp_inner=sp_inner,
                                       inner_tol=config.inner_tol, scale=kkt.scale)
        build = time.perf_counter() - t0
        if name == "sp":
            x, st = krylov.minres(kkt.matrix, kkt.rhs, tol=config.tol,
                                  max_iter=config.max_iter, precond=m)
        else:
            x, st = krylov.gmres(kkt.matrix, kkt.rhs, tol=config.tol, restart=200,
                                 max_iter=config.max_iter, precond=m)
        sols[name] = x
        per = m.solve_time / m.schur_solves if m.schur_solves else 0.0
        row.update({f"{name}_build_time": build, f"{name}_per_solve_time": per,
                    f"{name}_ni": st.iterations,
                    f"{name}_total_time": time.perf_counter() - t0,
                    f"{name}_converged": bool(st.converged)})
    row["agreement"] = _rel(sols["sp"], sols["sc"])
    return row


def accuracy_cliff_row(config, phi):
    problem = build_problem(config.physics, config.n, phi, config.units)
    fs, _ = _inner_solvers(problem, config)
    rs, _ = control.solve_range_space(problem, fs, tol=config.inner_tol)
    fs_sol, st = control.solve_full_space(problem, "pmgw_Sc", tol=config.tol,
                                          max_iter=config.max_iter, factor_solver=fs,
                                          inner_tol=config.inner_tol, block_tol=config.block_tol)
    d_rs = control.diagnostics(problem, rs)
    d_fs = control.diagnostics(problem, fs_sol)
    return {"phi": phi,
            "rs_constraint_violation": d_rs.constraint_violation,
            "rs_target_mismatch": d_rs.target_mismatch,
            "fs_constraint_violation": d_fs.constraint_violation,
            "fs_target_mismatch": d_fs.target_mismatch,
            "fs_iterations": st.iterations, "fs_converged": bool(st.converged),
            "agreement": _rel(rs.stacked(), fs_sol.stacked()),
            "imag_leak": rs.imag_leak}


ROW_FUNCS = {"phi_sweep": phi_sweep_row, "scalability": scalability_row,
             "precond_compare": precond_compare_row, "accuracy_cliff": accuracy_cliff_row}


def work_keys(config):
    return list(config.sizes) if config.kind == "scalability" else list(config.phis)


def _safe_row(config, key):
    base = {"key": key}
    try:
        row = ROW_FUNCS[config.kind](config, key)
        row["error"] = ""
    except OcschurError as exc:
        # the failure is part of the result; the sweep continues
        row = {"error": f"{type(exc).__name__}: {exc}"}
    row = {**base, **row}
    row.update(experiment=config.kind, config_hash=config.config_hash(),
               schema_version=SCHEMA_VERSION)
    return row


def run(config, skip=()):
    """All rows of ``config`` in sweep order, omitting keys in ``skip``.

    Independent rows run on ``config.threads`` worker threads; the returned
    order never depends on scheduling.
    """
    keys = [k for k in work_keys(config) if k not in set(skip)]
    if config.threads > 1 and len(keys) > 1:
        with ThreadPoolExecutor(config.threads) as pool:
            return list(pool.map(lambda k: _safe_row(config, k), keys))
    return [_safe_row(config, k) for k in keys]


def run_phi_sweep(config):
    return run(config.replace(kind="phi_sweep"))


def run_scalability(config):
    return run(config.replace(kind="scalability"))


def run_precond_compare(config):
    return run(config.replace(kind="precond_compare"))


def run_accuracy_cliff(config):
    return run(config.replace(kind="accuracy_cliff"))


def columns_for(kind):
    return COLUMNS[kind] + TRAILER


def run_and_emit(config, out=None, fmt=None, resume=True):
    """Run, merge with rows already in ``out`` for the same config hash, and write.

    Returns ``(rows, text)``.
    """
    fmt = fmt or config.format
    existing = []
    if out and resume:
        old_rows, old_hash = read_results(out)
        if old_hash == config.config_hash():
            existing = [r for r in old_rows if not r.get("error")]
    done = {r["key"]: r for r in existing}
    fresh = {r["key"]: r for r in run(config, skip=done)}
    rows = [done.get(k) or fresh[k] for k in work_keys(config)]
    allow_empty = config.allow_empty or not work_keys(config)
    text = emit(rows, fmt, out, config, columns_for(config.kind), allow_empty)
    return rows, text
