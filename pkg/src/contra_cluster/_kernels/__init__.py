"""Hot numerical kernels with a compiled core and a numpy fallback.

The Cython extension is used when it was built and importable; setting
``CONTRA_CLUSTER_PURE=1`` forces the numpy implementations. ``BACKEND``
reports which one is active.
"""
import importlib
import os

from . import _pykernels


def _load_compiled():
    if os.environ.get("CONTRA_CLUSTER_PURE"):
        return None
    try:
        return importlib.import_module(f"{__name__}._ckernels")
    except ImportError:
        return None


_ckernels = _load_compiled()

_impl = _ckernels if _ckernels is not None else _pykernels
BACKEND = "cython" if _ckernels is not None else "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
sq_dists = _impl.sq_dists
kmeans_assign = _impl.kmeans_assign
tsne_binary_search = _impl.tsne_binary_search
tsne_grad = _impl.tsne_grad

__all__ = [
    "BACKEND",
    "im2col",
    "col2im",
    "sq_dists",
    "kmeans_assign",
    "tsne_binary_search",
    "tsne_grad",
]
