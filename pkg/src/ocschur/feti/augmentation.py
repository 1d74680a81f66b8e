"""Edge-based rigid-body-mode augmentation of the coarse space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ocschur import mesh_fem
from ocschur.errors import ContractError

MODE_NAMES = {mesh_fem.HEAT: ("translation",),
              mesh_fem.ELASTICITY: ("translation_x", "translation_y", "rotation")}


@dataclass(frozen=True, eq=False)
class AugmentationSpace:
    """Columns of ``Q`` over the multiplier space, one block per interface edge.

    ``labels[j]`` is ``(edge pair, mode name)`` for column ``j``.
    """

    Q: np.ndarray
    labels: tuple
    basis: np.ndarray

    @property
    def n_columns(self):
        return self.Q.shape[1]

    def project(self, lam):
        """Remove the components of ``lam`` in the span of ``Q``."""
        if self.basis.shape[1] == 0:
            return lam
        return lam - self.basis @ (self.basis.T @ lam)


def empty_augmentation(n_multipliers):
    return AugmentationSpace(np.zeros((n_multipliers, 0)), (), np.zeros((n_multipliers, 0)))


def build_edge_rbm_augmentation(partition, physics=None, rank_tol=1e-10):
    """Translations (and, for elasticity, the in-plane rotation) of every edge.

    The rotation of an edge is taken about its own geometric midpoint, so the
    rotation column vanishes on a midpoint node.  Columns have unit 2-norm.

    Raises
    ------
    ContractError
        If the columns are linearly dependent; the message lists them.  This
        happens for elasticity when an edge holds a single node (``H/h = 2``).
    """
    physics = physics or partition.physics
    ops = partition.ops
    dpn = physics.dofs_per_node
    n_mult = partition.n_multipliers
    full = ops.free_dofs[partition.multiplier_dofs]
    node = full // dpn
    comp = full % dpn
    xy = partition.mesh.nodes[node]

    columns, labels = [], []
    for key, idx in partition.edges:
        key = tuple(int(k) for k in key)
        if physics.kind == mesh_fem.HEAT:
            col = np.zeros(n_mult)
            col[idx] = 1.0
            columns.append(col)
            labels.append((key, "translation"))
            continue
        mid = 0.5 * (xy[idx].min(axis=0) + xy[idx].max(axis=0))
        for c, name in ((0, "translation_x"), (1, "translation_y")):
            col = np.zeros(n_mult)
            col[idx[comp[idx] == c]] = 1.0
            columns.append(col)
            labels.append((key, name))
        col = np.zeros(n_mult)
        rel = xy[idx] - mid
        col[idx] = np.where(comp[idx] == 0, -rel[:, 1], rel[:, 0])
        columns.append(col)
        labels.append((key, "rotation"))

    if not columns:
        return empty_augmentation(n_mult)
    q = np.column_stack(columns)
    norms = np.linalg.norm(q, axis=0)
    dead = [labels[j] for j in np.flatnonzero(norms <= rank_tol)]
    if dead:
        raise ContractError(f"augmentation columns are zero (rank deficient): {dead}")
    q = q / norms
    basis, r = np.linalg.qr(q)
    rdiag = np.abs(np.diag(r))
    dependent = np.flatnonzero(rdiag <= rank_tol * rdiag.max())
    if dependent.size:
        raise ContractError("augmentation columns are linearly dependent: "
                            f"{[labels[j] for j in dependent]}")
    return AugmentationSpace(q, tuple(labels), basis)
