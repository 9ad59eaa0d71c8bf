"""Numpy implementation of the small-block kernels.

Every routine here is a closed-form polynomial in the matrix entries
(Laplace expansion, explicit signed minors); nothing pivots. All functions
accept stacks: the last two axes are the matrix, leading axes broadcast.
This module is the fallback when the compiled ``_ckernels`` extension is
unavailable, and the reference it is tested against.
"""
import numpy as np


def det(m):
    """Determinant by Laplace expansion along the first row (n <= 4)."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    if n == 0:
        return np.ones(m.shape[:-2])
    if n == 1:
        return m[..., 0, 0].copy()
    if n == 2:
        return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]
    total = np.zeros(m.shape[:-2])
    rest = m[..., 1:, :]
    for j in range(n):
        minor = np.delete(rest, j, axis=-1)
        term = m[..., 0, j] * det(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


def cofactor(m):
    """Matrix of signed minors, ``m @ cofactor(m).T == det(m) * I``."""
    m = np.asarray(m, dtype=float)
    n = m.shape[-1]
    out = np.empty(m.shape)
    if n == 1:
        out[..., 0, 0] = 1.0
        return out
    for i in range(n):
        without_row = np.delete(m, i, axis=-2)
        for j in range(n):
            sign = -1.0 if (i + j) % 2 else 1.0
            out[..., i, j] = sign * det(np.delete(without_row, j, axis=-1))
    return out


def nabla(a, b, c, d):
    """Nonsingular partial determinant ``B adj(D) C - det(D) A``."""
    d = np.asarray(d, dtype=float)
    adj = np.swapaxes(cofactor(d), -1, -2)
    return np.asarray(b) @ adj @ np.asarray(c) - det(d)[..., None, None] * np.asarray(a)


def adjugate_derivative(d):
    """``T[k, l, c, e] = d adj(D)[k, l] / d D[c, e]`` for a single matrix.

    ``adj(D)[k, l]`` is the (l, k) cofactor; its derivative with respect to
    ``D[c, e]`` is the second-order cofactor obtained by deleting rows
    {l, c} and columns {k, e}, zero when a row or column repeats.
    """
    d = np.asarray(d, dtype=float)
    r = d.shape[0]
    t = np.zeros((r, r, r, r))
    for k in range(r):
        for l in range(r):
            for c in range(r):
                if c == l:
                    continue
                for e in range(r):
                    if e == k:
                        continue
                    rows = [x for x in range(r) if x != l and x != c]
                    cols = [x for x in range(r) if x != k and x != e]
                    cp = c - (c > l)
                    ep = e - (e > k)
                    sign = -1.0 if (l + k + cp + ep) % 2 else 1.0
                    t[k, l, c, e] = sign * det(d[np.ix_(rows, cols)])
    return t


def nabla_block_jacobian(a, b, c, d):
    """Derivatives of every nabla entry with respect to every block entry.

    Returns an array ``J`` of shape ``(4, r, r, r, r)`` where
    ``J[blk, x, y, p, q] = d nabla[x, y] / d block[p, q]`` and ``blk``
    indexes (A, B, C, D).
    """
    a, b, c, d = (np.asarray(x, dtype=float) for x in (a, b, c, d))
    r = a.shape[0]
    eye = np.eye(r)
    cof = cofactor(d)
    adj = cof.T
    jac = np.empty((4, r, r, r, r))
    jac[0] = -det(d) * np.einsum("xp,yq->xypq", eye, eye)
    jac[1] = np.einsum("xp,qy->xypq", eye, adj @ c)
    jac[2] = np.einsum("xp,yq->xypq", b @ adj, eye)
    t = adjugate_derivative(d)
    jac[3] = np.einsum("xk,klpq,ly->xypq", b, t, c) - np.einsum("pq,xy->xypq", cof, a)
    return jac


def nabla_batch(s, rows1, rows2, cols1, cols2):
    """Nabla of one partition evaluated on a stack of data matrices ``(K, M, N)``."""
    s = np.asarray(s, dtype=float)
    r1, r2 = np.asarray(rows1), np.asarray(rows2)
    c1, c2 = np.asarray(cols1), np.asarray(cols2)
    a = s[:, r1[:, None], c1[None, :]]
    b = s[:, r1[:, None], c2[None, :]]
    c = s[:, r2[:, None], c1[None, :]]
    d = s[:, r2[:, None], c2[None, :]]
    return nabla(a, b, c, d)
