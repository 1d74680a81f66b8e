"""Hot inner-loop kernels.

The compiled Cython extension is used when it was built; otherwise the NumPy
fallback is selected at import. Set ``OCSCHUR_PURE_PYTHON=1`` to force the
fallback.
"""
import os

from . import _fallback

fallback = _fallback
compiled = None

if os.environ.get("OCSCHUR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled
    except ImportError:
        compiled = None

_impl = compiled if compiled is not None else _fallback
BACKEND = "cython" if compiled is not None else "python"

element_triplets = _impl.element_triplets
mgs_orthogonalize = _impl.mgs_orthogonalize
scatter_add = _impl.scatter_add

__all__ = ["BACKEND", "compiled", "fallback", "element_triplets",
           "mgs_orthogonalize", "scatter_add"]
