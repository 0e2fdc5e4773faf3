import os
import subprocess
import sys

import numpy as np
import pytest

from contra_cluster import _kernels
from contra_cluster._kernels import _pykernels

compiled = _kernels._ckernels
needs_ext = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def test_backend_flag_matches_selection():
    assert _kernels.BACKEND == ("cython" if compiled is not None else "numpy")


def test_pure_env_forces_numpy():
    env = dict(os.environ, CONTRA_CLUSTER_PURE="1")
    out = subprocess.run(
        [sys.executable, "-c", "import contra_cluster as c; print(c.KERNEL_BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_sq_dists_reference(rng):
    a, b = rng.normal(size=(7, 3)), rng.normal(size=(5, 3))
    expected = ((a[:, None] - b[None]) ** 2).sum(-1)
    np.testing.assert_allclose(_pykernels.sq_dists(a, b), expected, atol=1e-12)
    assert np.all(_pykernels.sq_dists(a, a).diagonal() >= 0)


def test_kmeans_assign_reference(rng):
    x, c = rng.normal(size=(40, 4)), rng.normal(size=(3, 4))
    labels, mind = _pykernels.kmeans_assign(x, c)
    d = ((x[:, None] - c[None]) ** 2).sum(-1)
    np.testing.assert_array_equal(labels, d.argmin(1))
    np.testing.assert_allclose(mind, d.min(1), atol=1e-12)


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_im2col_col2im_parity(dtype, rng):
    xp = np.ascontiguousarray(rng.normal(size=(2, 3, 9, 9)).astype(dtype))
    a = _pykernels.im2col(xp, 4, 2, 3, 3)
    b = compiled.im2col(xp, 4, 2, 3, 3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(_pykernels.col2im(a, 9, 9, 2), compiled.col2im(np.ascontiguousarray(a), 9, 9, 2))


@needs_ext
def test_distance_kernels_parity(rng):
    x, c = rng.normal(size=(300, 16)), rng.normal(size=(7, 16))
    np.testing.assert_allclose(_pykernels.sq_dists(x, c), compiled.sq_dists(x, c), atol=1e-10)
    la, ma = _pykernels.kmeans_assign(x, c)
    lb, mb = compiled.kmeans_assign(x, c)
    np.testing.assert_array_equal(la, lb)
    np.testing.assert_allclose(ma, mb, atol=1e-10)


@needs_ext
def test_tsne_kernels_parity(rng):
    x = rng.normal(size=(60, 5))
    d = np.ascontiguousarray(_pykernels.sq_dists(x, x))
    pa, ba = _pykernels.tsne_binary_search(d, 10.0, 1e-5, 100)
    pb, bb = compiled.tsne_binary_search(d, 10.0, 1e-5, 100)
    np.testing.assert_allclose(pa, pb, atol=1e-10)
    np.testing.assert_allclose(ba, bb, rtol=1e-8)
    p = (pa + pa.T) / (2 * len(x))
    y = np.ascontiguousarray(rng.normal(size=(60, 2)))
    ga, ka = _pykernels.tsne_grad(p, y)
    gb, kb = compiled.tsne_grad(np.ascontiguousarray(p), y)
    np.testing.assert_allclose(ga, gb, atol=1e-10)
    assert ka == pytest.approx(kb, rel=1e-9)
