"""NumPy/SciPy implementations of the hot kernels.

Semantics are identical to ``_kernels.pyx``; these are used when the compiled
module is missing or ``DAGAD_PURE_PYTHON=1`` is set.

All adjacency arguments are CSR triples over the *closed* neighbourhood
(self loops included), so every row segment is non-empty.
"""
import numpy as np
import scipy.sparse as sp


def _rows(indptr):
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def spmm(indptr, indices, data, x):
    n = len(indptr) - 1
    s = sp.csr_matrix((data, indices, indptr), shape=(n, x.shape[0]))
    return np.ascontiguousarray(s @ x)


def gat_attention_forward(indptr, indices, s_self, s_nb, z, slope):
    n, heads, _ = z.shape
    rows = _rows(indptr)
    starts = indptr[:-1]
    pre = s_self[rows] + s_nb[indices]
    logits = np.where(pre > 0, pre, slope * pre)
    shifted = logits - np.maximum.reduceat(logits, starts, axis=0)[rows]
    ex = np.exp(shifted)
    alpha = ex / np.add.reduceat(ex, starts, axis=0)[rows]
    out = np.empty_like(z)
    for h in range(heads):
        a = sp.csr_matrix((alpha[:, h], indices, indptr), shape=(n, n))
        out[:, h, :] = a @ z[:, h, :]
    return alpha, out


def gat_attention_backward(indptr, indices, s_self, s_nb, z, alpha, grad_out, slope):
    n, heads, _ = z.shape
    rows = _rows(indptr)
    starts = indptr[:-1]
    g_alpha = np.einsum("ehd,ehd->eh", grad_out[rows], z[indices])
    g_z = np.empty_like(z)
    for h in range(heads):
        a = sp.csr_matrix((alpha[:, h], indices, indptr), shape=(n, n))
        g_z[:, h, :] = a.T @ grad_out[:, h, :]
    c = np.add.reduceat(alpha * g_alpha, starts, axis=0)
    g_logits = alpha * (g_alpha - c[rows])
    pre = s_self[rows] + s_nb[indices]
    g_pre = np.where(pre > 0, g_logits, slope * g_logits)
    g_self = np.add.reduceat(g_pre, starts, axis=0)
    g_nb = np.zeros_like(s_nb)
    np.add.at(g_nb, indices, g_pre)
    return g_self, g_nb, g_z
