import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from dagad import kernels
from dagad.graph import random_graph

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS, reason="extension not built")


def _graph_case(seed, n=30, heads=3, dim=4):
    g = random_graph(n, 2, 0.15, seed=seed, communities=1)
    indptr, indices = g.closed_csr()
    rng = np.random.default_rng(seed)
    s_self = rng.normal(size=(n, heads))
    s_nb = rng.normal(size=(n, heads))
    z = rng.normal(size=(n, heads, dim))
    return indptr, indices, s_self, s_nb, z


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_spmm_matches_scipy(name):
    rng = np.random.default_rng(1)
    m = sp.random(40, 40, density=0.1, random_state=2, format="csr")
    m.sort_indices()
    x = rng.normal(size=(40, 5))
    out = kernels.spmm(m.indptr, m.indices, m.data, x, impl=BACKENDS[name])
    np.testing.assert_allclose(out, m @ x, rtol=0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_spmm_empty_rows(name):
    indptr = np.array([0, 0, 1, 1])
    out = kernels.spmm(indptr, np.array([2]), np.array([3.0]), np.eye(3), impl=BACKENDS[name])
    np.testing.assert_array_equal(out, [[0, 0, 0], [0, 0, 3], [0, 0, 0]])


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_attention_rows_sum_to_one(name):
    indptr, indices, s_self, s_nb, z = _graph_case(3)
    alpha, _ = kernels.gat_attention_forward(indptr, indices, s_self, s_nb, z, 0.2,
                                             impl=BACKENDS[name])
    sums = np.add.reduceat(alpha, indptr[:-1], axis=0)
    np.testing.assert_allclose(sums, 1.0, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_attention_against_loop(name):
    indptr, indices, s_self, s_nb, z = _graph_case(4, n=8)
    alpha, out = kernels.gat_attention_forward(indptr, indices, s_self, s_nb, z, 0.2,
                                               impl=BACKENDS[name])
    for i in range(8):
        nb = indices[indptr[i]:indptr[i + 1]]
        for h in range(z.shape[1]):
            e = s_self[i, h] + s_nb[nb, h]
            e = np.where(e > 0, e, 0.2 * e)
            w = np.exp(e - e.max())
            w /= w.sum()
            np.testing.assert_allclose(alpha[indptr[i]:indptr[i + 1], h], w, atol=1e-12)
            np.testing.assert_allclose(out[i, h], w @ z[nb, h], atol=1e-12)


@needs_compiled
@pytest.mark.parametrize("seed", range(5))
def test_backends_agree(seed):
    indptr, indices, s_self, s_nb, z = _graph_case(seed)
    c, p = BACKENDS["compiled"], BACKENDS["python"]
    fa = kernels.gat_attention_forward(indptr, indices, s_self, s_nb, z, 0.2, impl=c)
    fb = kernels.gat_attention_forward(indptr, indices, s_self, s_nb, z, 0.2, impl=p)
    for a, b in zip(fa, fb):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    g = np.random.default_rng(seed).normal(size=z.shape)
    ba = kernels.gat_attention_backward(indptr, indices, s_self, s_nb, z, fa[0], g, 0.2, impl=c)
    bb = kernels.gat_attention_backward(indptr, indices, s_self, s_nb, z, fb[0], g, 0.2, impl=p)
    for a, b in zip(ba, bb):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-11)


def test_backend_name():
    assert kernels.BACKEND in BACKENDS


def test_environment_forces_fallback():
    env = dict(os.environ, DAGAD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import dagad; print(dagad.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
