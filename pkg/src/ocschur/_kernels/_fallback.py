"""Pure NumPy implementations of the hot kernels.

Semantics must match ``_ckernels.pyx`` exactly; the test suite runs both.
"""
import numpy as np


def element_triplets(conn_dofs, ke):
    """COO triplets for a uniform element matrix scattered over many elements.

    Parameters
    ----------
    conn_dofs : (n_el, m) int64 array
        Global DOF ids of each element, in local order.
    ke : (m, m) float64 array
        Element matrix shared by all elements.

    Returns
    -------
    rows, cols : int64 arrays of length ``n_el * m * m``
    vals : float64 array of the same length
    """
    conn_dofs = np.ascontiguousarray(conn_dofs, dtype=np.int64)
    ke = np.ascontiguousarray(ke, dtype=np.float64)
    n_el, m = conn_dofs.shape
    rows = np.repeat(conn_dofs, m, axis=1).ravel()
    cols = np.tile(conn_dofs, (1, m)).ravel()
    vals = np.tile(ke.ravel(), n_el)
    return rows, cols, vals


def mgs_orthogonalize(basis, k, w, h):
    """Modified Gram-Schmidt of ``w`` against ``basis[:k]`` (rows), in place.

    ``h[j]`` receives the Hermitian projection coefficient ``<basis[j], w>``.
    """
    for j in range(k):
        v = basis[j]
        c = np.vdot(v, w)
        h[j] = c
        w -= c * v


def scatter_add(out, idx, vals):
    """``out[idx[k]] += vals[k]`` with repeated indices accumulated in order."""
    np.add.at(out, idx, vals)
