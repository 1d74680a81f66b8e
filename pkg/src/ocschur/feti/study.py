"""Iteration-count studies for the FETI-DP solver on the complex factors."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ocschur import control, mesh_fem
from ocschur.errors import ContractError, OcschurError
from ocschur.feti.partition import partition_structured
from ocschur.feti.solver import FetiConfig, FetiDpSolver
from ocschur.feti.subdomain import OperatorSpec

SCALABILITY_COLUMNS = ("dofs", "elements", "h", "H", "nsub", "phi", "augment",
                       "iters_minus", "iters_plus", "converged", "setup_time", "solve_time")


def build_problem(physics, n, phi, units="Pa"):
    if physics == mesh_fem.HEAT:
        return control.thermal_problem(n, phi)
    if physics == mesh_fem.ELASTICITY:
        return control.elasticity_problem(n, phi, units=units)
    raise ContractError(f"unknown physics {physics!r}")


def subdomain_grid(problem, h_ratio):
    mesh = problem.ops.mesh
    if mesh.n_x % h_ratio or mesh.n_y % h_ratio:
        raise ContractError(f"H/h = {h_ratio} does not divide the {mesh.n_x}x{mesh.n_y} grid")
    return mesh.n_x // h_ratio, mesh.n_y // h_ratio


def factor_pair_iterations(problem, partition, config, rhs=None):
    """Solve ``(K - cV) x = b`` and ``(K + cV) x = b``; returns both stats, minus first."""
    factors = control.build_complex_factors(problem)
    b = problem.schur_rhs if rhs is None else rhs
    out = []
    for sign in (-1, 1):
        solver = FetiDpSolver(OperatorSpec.from_factors(factors, sign), partition, config)
        _, st = solver.solve(np.asarray(b, dtype=complex))
        out.append(st)
    return out


def scalability_study(sizes, phi=2e-8, h_ratio=8, config=None, physics=mesh_fem.HEAT,
                      out=None):
    """One row per mesh size at fixed ``H/h``.

    Parameters
    ----------
    sizes : iterable of int
        Elements through the depth (heat: per axis).
    out : path-like, optional
        Write the rows as CSV.
    """
    config = config or FetiConfig()
    rows = []
    for n in sizes:
        problem = build_problem(physics, n, phi)
        s_x, s_y = subdomain_grid(problem, h_ratio)
        ops = problem.ops
        part = partition_structured(ops.mesh, s_x, s_y, ops.physics, ops)
        cfg = config.replace(s_x=s_x, s_y=s_y)
        row = {"dofs": ops.n, "elements": ops.mesh.n_elements, "h": ops.mesh.h,
               "H": ops.mesh.h * h_ratio, "nsub": s_x * s_y, "phi": phi, "augment": cfg.augment}
        try:
            st_m, st_p = factor_pair_iterations(problem, part, cfg)
            row.update(iters_minus=st_m.iterations, iters_plus=st_p.iterations,
                       converged=st_m.converged and st_p.converged,
                       setup_time=st_m.setup_time + st_p.setup_time,
                       solve_time=st_m.solve_time + st_p.solve_time)
        except OcschurError as exc:
            row.update(iters_minus=-1, iters_plus=-1, converged=False, setup_time=0.0,
                       solve_time=0.0, error=str(exc))
        rows.append(row)
    if out is not None:
        write_rows_csv(rows, out, SCALABILITY_COLUMNS)
    return rows


def write_rows_csv(rows, path, columns):
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
            w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path
