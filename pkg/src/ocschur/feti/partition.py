"""Structured non-overlapping partitions, corners, edges and jump operators."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ocschur import mesh_fem
from ocschur.errors import ContractError


@dataclass(frozen=True, eq=False)
class Subdomain:
    """One block of the subdomain grid.

    All DOF arrays hold *free* (non-Dirichlet) global indices.  ``r`` DOFs are
    the local DOFs that are not corners; ``b`` (a subset of ``r``) carries
    Lagrange multipliers and ``i`` is the remaining interior set.
    """

    index: int
    block: tuple
    elements: np.ndarray
    nodes: np.ndarray
    dofs: np.ndarray
    local_full_dofs: np.ndarray = field(repr=False)
    c_local: np.ndarray = field(repr=False)
    r_local: np.ndarray = field(repr=False)
    corner_ids: np.ndarray = field(repr=False)
    mult_ids: np.ndarray = field(repr=False)
    mult_r_pos: np.ndarray = field(repr=False)
    mult_sign: np.ndarray = field(repr=False)
    i_pos: np.ndarray = field(repr=False)
    b_pos: np.ndarray = field(repr=False)

    @property
    def n_local(self):
        return self.dofs.size

    @property
    def n_r(self):
        return self.r_local.size

    def jump(self, y_local):
        """Contribution ``B^s y^s`` as ``(multiplier ids, values)``."""
        return self.mult_ids, self.mult_sign * y_local[self.r_local][self.mult_r_pos]


@dataclass(frozen=True, eq=False)
class FetiPartition:
    mesh: mesh_fem.StructuredMesh
    physics: mesh_fem.Physics
    ops: mesh_fem.AssembledOperators = field(repr=False)
    s_x: int
    s_y: int
    subdomains: tuple = field(repr=False)
    corner_dofs: np.ndarray = field(repr=False)
    interface_dofs: np.ndarray = field(repr=False)
    multiplier_dofs: np.ndarray = field(repr=False)
    multiplier_pairs: np.ndarray = field(repr=False)
    edges: tuple = field(repr=False)
    multiplicity: np.ndarray = field(repr=False)

    @property
    def n_subdomains(self):
        return len(self.subdomains)

    @property
    def n_multipliers(self):
        return self.multiplier_dofs.size

    @property
    def n_corners(self):
        return self.corner_dofs.size

    @property
    def h_ratio(self):
        """``H / h`` along x."""
        return self.mesh.n_x // self.s_x

    def restrict(self, x):
        """Subdomain restrictions of a global free-DOF vector."""
        return [x[s.dofs] for s in self.subdomains]

    def jump(self, local_vectors):
        """``sum_s B^s y^s`` for a list of local vectors."""
        dtype = np.result_type(*[np.asarray(v).dtype for v in local_vectors])
        out = np.zeros(self.n_multipliers, dtype=dtype)
        for s, y in zip(self.subdomains, local_vectors):
            ids, vals = s.jump(np.asarray(y))
            np.add.at(out, ids, vals)
        return out

    def corner_count_nodes(self):
        dpn = self.physics.dofs_per_node
        return np.unique(self.ops.free_dofs[self.corner_dofs] // dpn).size


def partition_structured(mesh, s_x, s_y, physics=None, ops=None):
    """Split a structured mesh into ``s_x * s_y`` uniform blocks.

    Corners are subdomain-grid vertices shared by at least two subdomains
    (cross points and interface ends on a free boundary); Dirichlet DOFs are
    never corners.  Remaining interface DOFs each get one multiplier with
    ``+1`` on the lower-numbered subdomain and ``-1`` on the other.
    """
    physics = physics or mesh_fem.Physics.heat()
    if ops is None:
        ops = mesh_fem.assemble_operators(mesh, physics)
    if int(s_x) != s_x or int(s_y) != s_y or s_x < 1 or s_y < 1:
        raise ContractError("subdomain counts must be positive integers")
    s_x, s_y = int(s_x), int(s_y)
    if mesh.n_x % s_x or mesh.n_y % s_y:
        raise ContractError(f"{mesh.n_x}x{mesh.n_y} grid is not divisible into {s_x}x{s_y} blocks")
    hx, hy = mesh.n_x // s_x, mesh.n_y // s_y
    if hx < 2 or hy < 2:
        raise ContractError(f"H/h must be at least 2, got {hx}x{hy}")
    if s_x * s_y < 2:
        raise ContractError("need at least two subdomains")

    dpn = physics.dofs_per_node
    nxn = mesh.n_x + 1
    g2f = ops.global_to_free
    node_i = np.arange(mesh.n_nodes) % nxn
    node_j = np.arange(mesh.n_nodes) // nxn

    # node multiplicity from the grid geometry
    on_vline = (node_i % hx == 0) & (node_i > 0) & (node_i < mesh.n_x)
    on_hline = (node_j % hy == 0) & (node_j > 0) & (node_j < mesh.n_y)
    multiplicity = (1 + on_vline) * (1 + on_hline)
    vertex = (node_i % hx == 0) & (node_j % hy == 0)
    corner_node = vertex & (multiplicity >= 2)

    def free_of(nodes):
        d = (nodes[:, None] * dpn + np.arange(dpn)).ravel()
        f = g2f[d]
        return f[f >= 0]

    corner_dofs = np.sort(free_of(np.flatnonzero(corner_node)))
    corner_index = -np.ones(ops.n, dtype=np.int64)
    corner_index[corner_dofs] = np.arange(corner_dofs.size)
    iface_nodes = np.flatnonzero(multiplicity >= 2)
    interface_dofs = np.sort(free_of(iface_nodes))

    el_i = np.arange(mesh.n_elements) % mesh.n_x
    el_j = np.arange(mesh.n_elements) // mesh.n_x
    el_block = (el_j // hy) * s_x + el_i // hx

    # owners of each free DOF, in subdomain order
    owners = [[] for _ in range(ops.n)]
    blocks = []
    for q in range(s_y):
        for p in range(s_x):
            sid = q * s_x + p
            ii, jj = np.meshgrid(np.arange(p * hx, (p + 1) * hx + 1),
                                 np.arange(q * hy, (q + 1) * hy + 1))
            nodes = np.sort((jj * nxn + ii).ravel())
            full = (nodes[:, None] * dpn + np.arange(dpn)).ravel()
            free = g2f[full]
            keep = free >= 0
            blocks.append((sid, (p, q), np.flatnonzero(el_block == sid), nodes, free[keep],
                           np.flatnonzero(keep)))
            for d in free[keep]:
                owners[d].append(sid)

    mult_dofs = np.array([d for d in interface_dofs if corner_index[d] < 0], dtype=np.int64)
    pairs = np.array([owners[d] for d in mult_dofs], dtype=np.int64).reshape(-1, 2)
    if mult_dofs.size and any(len(owners[d]) != 2 for d in mult_dofs):
        raise ContractError("non-corner interface DOF shared by more than two subdomains")
    mult_index = -np.ones(ops.n, dtype=np.int64)
    mult_index[mult_dofs] = np.arange(mult_dofs.size)

    edge_keys = sorted({tuple(p) for p in pairs})
    edges = tuple((key, np.flatnonzero((pairs[:, 0] == key[0]) & (pairs[:, 1] == key[1])))
                  for key in edge_keys)

    subdomains = []
    for sid, block, elements, nodes, dofs, full_pos in blocks:
        is_c = corner_index[dofs] >= 0
        c_local = np.flatnonzero(is_c)
        r_local = np.flatnonzero(~is_c)
        r_dofs = dofs[r_local]
        has_mult = mult_index[r_dofs] >= 0
        mult_r_pos = np.flatnonzero(has_mult)
        m_ids = mult_index[r_dofs[mult_r_pos]]
        sign = np.where(pairs[m_ids, 0] == sid, 1.0, -1.0)
        subdomains.append(Subdomain(
            sid, block, elements, nodes, dofs, full_pos, c_local, r_local,
            corner_index[dofs[c_local]], m_ids, mult_r_pos, sign,
            np.flatnonzero(~has_mult), mult_r_pos))

    return FetiPartition(mesh, physics, ops, s_x, s_y, tuple(subdomains), corner_dofs,
                         interface_dofs, mult_dofs, pairs, edges, multiplicity)
