"""Structured-grid Q1 finite elements for heat conduction and plane-strain
elasticity.

Nodes are numbered row-major (``node = j * (n_x + 1) + i`` for the node at
``(i*h, j*h)``), elements likewise, with counterclockwise local node order.
Vector-valued DOFs are interleaved per node: ``dof = node * dpn + component``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ocschur import _kernels
from ocschur.errors import AssemblyError, ContractError, DomainError, InvalidMeshError

HEAT = "heat"
ELASTICITY = "elasticity"

# reference coordinates of the four local nodes, counterclockwise
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True, eq=False)
class StructuredMesh:
    """Uniform grid of square Q1 elements on ``[0, length_x] x [0, length_y]``."""

    n_x: int
    n_y: int
    h: float
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray

    @property
    def length_x(self):
        return self.n_x * self.h

    @property
    def length_y(self):
        return self.n_y * self.h

    @property
    def n_nodes(self):
        return (self.n_x + 1) * (self.n_y + 1)

    @property
    def n_elements(self):
        return self.n_x * self.n_y

    def node_id(self, i, j):
        return j * (self.n_x + 1) + i


@dataclass(frozen=True)
class Physics:
    kind: str = HEAT
    conductivity: float = 1.0
    young_modulus: float = 20.7e6
    poisson_ratio: float = 0.45
    density: float = 1.1

    def __post_init__(self):
        if self.kind not in (HEAT, ELASTICITY):
            raise ContractError(f"unknown physics kind {self.kind!r}")
        if self.kind == ELASTICITY:
            if not 0.0 < self.poisson_ratio < 0.5:
                raise ContractError("poisson_ratio must lie strictly in (0, 0.5)")
            if self.young_modulus <= 0:
                raise ContractError("young_modulus must be positive")
        if self.kind == HEAT and self.conductivity != 1.0:
            raise ContractError("only unit conductivity is supported")

    @classmethod
    def heat(cls):
        return cls(kind=HEAT)

    @classmethod
    def elasticity(cls, young_modulus=20.7e6, poisson_ratio=0.45, density=1.1):
        return cls(kind=ELASTICITY, young_modulus=young_modulus,
                   poisson_ratio=poisson_ratio, density=density)

    @property
    def dofs_per_node(self):
        return 1 if self.kind == HEAT else 2

    def material(self):
        if self.kind == HEAT:
            return {"conductivity": self.conductivity}
        return {"young_modulus": self.young_modulus,
                "poisson_ratio": self.poisson_ratio,
                "density": self.density}


@dataclass(frozen=True, eq=False)
class AssembledOperators:
    """Stiffness ``K``, volume ``V`` and constrained stiffness ``K_c``.

    ``K`` and ``V`` act on the free DOFs only; ``K_full``/``V_full`` are the
    unconstrained operators over every DOF of the mesh.
    """

    K: sp.csr_matrix
    V: sp.csr_matrix
    K_c: sp.csr_matrix
    K_full: sp.csr_matrix
    V_full: sp.csr_matrix
    free_dofs: np.ndarray
    constrained_dofs: np.ndarray
    mesh: StructuredMesh
    physics: Physics
    global_to_free: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.K.shape[0]

    @property
    def m(self):
        return self.K_c.shape[1]


def build_rectangle_mesh(n_x, n_y, h):
    """Uniform mesh of ``n_x * n_y`` square elements of side ``h``."""
    if int(n_x) != n_x or int(n_y) != n_y or n_x < 2 or n_y < 2:
        raise InvalidMeshError(f"need at least 2 elements per axis, got {n_x}x{n_y}")
    if not h > 0:
        raise InvalidMeshError("mesh size must be positive")
    n_x, n_y = int(n_x), int(n_y)
    ii, jj = np.meshgrid(np.arange(n_x + 1), np.arange(n_y + 1))
    nodes = np.column_stack([ii.ravel() * h, jj.ravel() * h])

    ei, ej = np.meshgrid(np.arange(n_x), np.arange(n_y))
    ei, ej = ei.ravel(), ej.ravel()
    first = ej * (n_x + 1) + ei
    elements = np.column_stack([first, first + 1, first + n_x + 2, first + n_x + 1])

    on_bnd = (ii.ravel() == 0) | (ii.ravel() == n_x) | (jj.ravel() == 0) | (jj.ravel() == n_y)
    boundary = np.flatnonzero(on_bnd)
    return StructuredMesh(n_x, n_y, float(h), nodes, elements.astype(np.int64), boundary)


def build_unit_square_mesh(n):
    """Mesh of the unit square with ``n`` elements per axis, ``h = 1/n``."""
    if int(n) != n or n < 2:
        raise InvalidMeshError(f"n must be an integer >= 2, got {n}")
    return build_rectangle_mesh(n, n, 1.0 / n)


def build_cantilever_mesh(n):
    """3:1 cantilever ``[0, 3] x [0, 1]`` with ``n`` elements through the depth."""
    if int(n) != n or n < 2:
        raise InvalidMeshError(f"n must be an integer >= 2, got {n}")
    return build_rectangle_mesh(3 * n, n, 1.0 / n)


def _shape_gradients(xi, eta):
    dxi = 0.25 * _XI * (1.0 + _ETA * eta)
    deta = 0.25 * _ETA * (1.0 + _XI * xi)
    return dxi, deta


def _shape_values(xi, eta):
    return 0.25 * (1.0 + _XI * xi) * (1.0 + _ETA * eta)


def element_mass(h, dofs_per_node=1):
    """Consistent Q1 mass matrix of a square element of side ``h``."""
    detj = h * h / 4.0
    me = np.zeros((4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            n = _shape_values(xi, eta)
            me += np.outer(n, n) * detj
    if dofs_per_node == 1:
        return me
    return np.kron(me, np.eye(dofs_per_node))


def element_stiffness_heat(h):
    detj = h * h / 4.0
    ke = np.zeros((4, 4))
    for xi in _GAUSS:
        for eta in _GAUSS:
            dxi, deta = _shape_gradients(xi, eta)
            gx, gy = dxi * (2.0 / h), deta * (2.0 / h)
            ke += (np.outer(gx, gx) + np.outer(gy, gy)) * detj
    return ke


def plane_strain_matrix(young_modulus, poisson_ratio):
    e, nu = young_modulus, poisson_ratio
    c = e / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return c * np.array([[1.0 - nu, nu, 0.0],
                         [nu, 1.0 - nu, 0.0],
                         [0.0, 0.0, 0.5 - nu]])


def element_stiffness_elastic(h, young_modulus, poisson_ratio):
    d = plane_strain_matrix(young_modulus, poisson_ratio)
    detj = h * h / 4.0
    ke = np.zeros((8, 8))
    for xi in _GAUSS:
        for eta in _GAUSS:
            dxi, deta = _shape_gradients(xi, eta)
            gx, gy = dxi * (2.0 / h), deta * (2.0 / h)
            b = np.zeros((3, 8))
            b[0, 0::2] = gx
            b[1, 1::2] = gy
            b[2, 0::2] = gy
            b[2, 1::2] = gx
            ke += b.T @ d @ b * detj
    return ke


def element_matrices(mesh, physics):
    """Return ``(ke, me)`` shared by every element of the uniform mesh."""
    if physics.kind == HEAT:
        ke = element_stiffness_heat(mesh.h)
    else:
        ke = element_stiffness_elastic(mesh.h, physics.young_modulus, physics.poisson_ratio)
    return ke, element_mass(mesh.h, physics.dofs_per_node)


def element_dofs(elements, dofs_per_node):
    """Expand node connectivity ``(n_el, 4)`` to DOF connectivity."""
    if dofs_per_node == 1:
        return np.asarray(elements, dtype=np.int64)
    comps = np.arange(dofs_per_node)
    return (elements[:, :, None] * dofs_per_node + comps).reshape(len(elements), -1)


def assemble_matrix(conn_dofs, ke, n_dofs):
    rows, cols, vals = _kernels.element_triplets(conn_dofs, ke)
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n_dofs, n_dofs)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def constrained_dofs_for(mesh, physics):
    dpn = physics.dofs_per_node
    if physics.kind == HEAT:
        nodes = mesh.boundary_nodes
    else:
        nodes = np.flatnonzero(np.isclose(mesh.nodes[:, 0], 0.0))
    return np.sort((nodes[:, None] * dpn + np.arange(dpn)).ravel())


def assemble_operators(mesh, physics):
    """Assemble ``K``, ``V`` and ``K_c`` with Dirichlet DOFs eliminated.

    Heat problems are constrained on the whole boundary, elasticity problems
    on the clamped edge ``x = 0``.
    """
    dpn = physics.dofs_per_node
    n_dofs = mesh.n_nodes * dpn
    ke, me = element_matrices(mesh, physics)
    conn = element_dofs(mesh.elements, dpn)
    k_full = assemble_matrix(conn, ke, n_dofs)
    v_full = assemble_matrix(conn, me, n_dofs)

    constrained = constrained_dofs_for(mesh, physics)
    mask = np.ones(n_dofs, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    g2f = -np.ones(n_dofs, dtype=np.int64)
    g2f[free] = np.arange(free.size)

    k = k_full[free][:, free].tocsr()
    v = v_full[free][:, free].tocsr()
    k_c = k_full[free][:, constrained].tocsr()
    for a in (k, v, k_c):
        a.sort_indices()
    return AssembledOperators(k, v, k_c, k_full, v_full, free, constrained,
                              mesh, physics, g2f)


def evaluate_target_thermal(point):
    """Target temperature: ``(2x1-1)^2 (2x2-1)^2`` on ``[0, 1/2]^2``, else 0."""
    x1, x2 = float(point[0]), float(point[1])
    if not (0.0 <= x1 <= 1.0 and 0.0 <= x2 <= 1.0):
        raise DomainError(f"point {point} outside the unit square")
    if x1 <= 0.5 and x2 <= 0.5:
        return (2.0 * x1 - 1.0) ** 2 * (2.0 * x2 - 1.0) ** 2
    return 0.0


def target_thermal_nodal(mesh):
    """Nodal interpolant of the target temperature over all mesh nodes."""
    return np.array([evaluate_target_thermal(p) for p in mesh.nodes])


def dirichlet_values_thermal(mesh, ops=None):
    """Boundary values ``y_c`` (the target evaluated at constrained nodes)."""
    nodes = mesh.boundary_nodes if ops is None else ops.constrained_dofs
    return np.array([evaluate_target_thermal(mesh.nodes[j]) for j in nodes])


def pressure_load(mesh, physics, pressure):
    """Consistent nodal forces of a uniform downward traction on ``y = 0``."""
    if physics.kind != ELASTICITY:
        raise ContractError("pressure load requires elasticity physics")
    f = np.zeros(mesh.n_nodes * 2)
    for i in range(mesh.n_x):
        for node in (mesh.node_id(i, 0), mesh.node_id(i + 1, 0)):
            f[2 * node + 1] -= 0.5 * pressure * mesh.h
    return f


def forward_solve_elastic_target(mesh, physics, pressure, ops=None):
    """Displacement under a bottom-edge pressure load, used as target state."""
    if ops is None:
        ops = assemble_operators(mesh, physics)
    f = pressure_load(mesh, physics, pressure)[ops.free_dofs]
    if not np.any(f):
        return np.zeros(ops.n)
    try:
        lu = spla.splu(ops.K.tocsc())
    except RuntimeError as exc:
        raise AssemblyError(f"stiffness matrix is singular: {exc}") from exc
    y = lu.solve(f)
    scale = spla.norm(ops.K, np.inf)
    best, best_err = y, np.inf
    for _ in range(4):
        r = f - ops.K @ y
        # normwise backward error; plain relative residual is floored by cond(K)
        err = np.linalg.norm(r, np.inf) / (scale * np.linalg.norm(y, np.inf) + np.linalg.norm(f, np.inf))
        if err < best_err:
            best, best_err = y.copy(), err
        if err <= 1e-15:
            break
        y = y + lu.solve(r)
    if best_err > 1e-13:
        raise AssemblyError(f"forward solve backward error {best_err:.2e} exceeds 1e-13")
    y = best
    return y


def export_matrix_market(ops, directory):
    """Write ``K.mtx``, ``V.mtx`` (symmetric) and ``K_c.mtx`` to ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, mat, sym in (("K", ops.K, "symmetric"), ("V", ops.V, "symmetric"),
                           ("K_c", ops.K_c, "general")):
        path = directory / f"{name}.mtx"
        scipy.io.mmwrite(str(path), sp.coo_matrix(mat), symmetry=sym)
        paths[name] = path
    return paths


def mesh_to_json(mesh, physics):
    return json.dumps({
        "n_x": mesh.n_x,
        "n_y": mesh.n_y,
        "h": mesh.h,
        "physics": physics.kind,
        "material": physics.material(),
    }, sort_keys=True)


def mesh_from_json(text):
    doc = json.loads(text)
    mesh = build_rectangle_mesh(doc["n_x"], doc["n_y"], doc["h"])
    physics = Physics(kind=doc["physics"], **doc.get("material", {}))
    return mesh, physics
