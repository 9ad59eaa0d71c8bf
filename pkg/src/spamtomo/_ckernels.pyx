# cython: language_level=3
"""Compiled small-block kernels (r <= 4).

Same contracts as ``_pykernels`` for single matrices, plus the batched
nabla used by the Monte-Carlo loops. Determinants use Laplace expansion on
fixed stack buffers so the polynomial identities hold without pivoting.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

DEF MAXR = 4


cdef double _det(const double* m, int n) noexcept nogil:
    # m is row-major n x n
    cdef double buf[(MAXR - 1) * (MAXR - 1)]
    cdef double total = 0.0, sign = 1.0
    cdef int j, i, col, k
    if n == 0:
        return 1.0
    if n == 1:
        return m[0]
    if n == 2:
        return m[0] * m[3] - m[1] * m[2]
    for j in range(n):
        k = 0
        for i in range(1, n):
            for col in range(n):
                if col != j:
                    buf[k] = m[i * n + col]
                    k += 1
        total += sign * m[j] * _det(buf, n - 1)
        sign = -sign
    return total


cdef double _minor_det(const double* m, int n, int skip_r0, int skip_r1,
                       int skip_c0, int skip_c1) noexcept nogil:
    # determinant of m with up to two rows and two columns removed (-1 = none)
    cdef double buf[MAXR * MAXR]
    cdef int i, j, k = 0, size = n
    if skip_r0 >= 0:
        size -= 1
    if skip_r1 >= 0:
        size -= 1
    for i in range(n):
        if i == skip_r0 or i == skip_r1:
            continue
        for j in range(n):
            if j == skip_c0 or j == skip_c1:
                continue
            buf[k] = m[i * n + j]
            k += 1
    return _det(buf, size)


cdef void _cofactor(const double* m, int n, double* out) noexcept nogil:
    cdef int i, j
    if n == 1:
        out[0] = 1.0
        return
    for i in range(n):
        for j in range(n):
            out[i * n + j] = (-1.0 if (i + j) % 2 else 1.0) * _minor_det(m, n, i, -1, j, -1)


cdef void _nabla(const double* a, const double* b, const double* c,
                 const double* d, int n, double* out) noexcept nogil:
    cdef double cof[MAXR * MAXR]
    cdef double bad[MAXR * MAXR]
    cdef double detd, acc
    cdef int x, y, k
    _cofactor(d, n, cof)
    detd = 0.0
    for k in range(n):
        detd += d[k] * cof[k]
    # bad = B @ adj(D) = B @ cof.T
    for x in range(n):
        for y in range(n):
            acc = 0.0
            for k in range(n):
                acc += b[x * n + k] * cof[y * n + k]
            bad[x * n + y] = acc
    for x in range(n):
        for y in range(n):
            acc = 0.0
            for k in range(n):
                acc += bad[x * n + k] * c[k * n + y]
            out[x * n + y] = acc - detd * a[x * n + y]


def _square(m):
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] > MAXR or arr.shape[0] < 1:
        raise ValueError(f"expected a square matrix of size 1..{MAXR}, got shape {arr.shape}")
    return arr


def det(m):
    cdef double[:, ::1] mv = _square(m)
    return _det(&mv[0, 0], mv.shape[0])


def cofactor(m):
    cdef double[:, ::1] mv = _square(m)
    cdef int n = mv.shape[0]
    out = np.empty((n, n))
    cdef double[:, ::1] ov = out
    _cofactor(&mv[0, 0], n, &ov[0, 0])
    return out


def nabla(a, b, c, d):
    cdef double[:, ::1] av = _square(a)
    cdef double[:, ::1] bv = _square(b)
    cdef double[:, ::1] cv = _square(c)
    cdef double[:, ::1] dv = _square(d)
    cdef int n = av.shape[0]
    if bv.shape[0] != n or cv.shape[0] != n or dv.shape[0] != n:
        raise ValueError("blocks must share one size")
    out = np.empty((n, n))
    cdef double[:, ::1] ov = out
    _nabla(&av[0, 0], &bv[0, 0], &cv[0, 0], &dv[0, 0], n, &ov[0, 0])
    return out


def adjugate_derivative(d):
    cdef double[:, ::1] dv = _square(d)
    cdef int n = dv.shape[0]
    out = np.zeros((n, n, n, n))
    cdef double[:, :, :, ::1] tv = out
    cdef int k, l, c, e, cp, ep
    for k in range(n):
        for l in range(n):
            for c in range(n):
                if c == l:
                    continue
                cp = c - (1 if c > l else 0)
                for e in range(n):
                    if e == k:
                        continue
                    ep = e - (1 if e > k else 0)
                    tv[k, l, c, e] = ((-1.0 if (l + k + cp + ep) % 2 else 1.0)
                                      * _minor_det(&dv[0, 0], n, l, c, k, e))
    return out


def nabla_block_jacobian(a, b, c, d):
    cdef double[:, ::1] av = _square(a)
    cdef double[:, ::1] bv = _square(b)
    cdef double[:, ::1] cv = _square(c)
    cdef double[:, ::1] dv = _square(d)
    cdef int n = av.shape[0]
    cdef double cof[MAXR * MAXR]
    cdef double adjc[MAXR * MAXR]
    cdef double badj[MAXR * MAXR]
    cdef double detd = 0.0, acc
    cdef int x, y, p, q, k, l
    _cofactor(&dv[0, 0], n, cof)
    for k in range(n):
        detd += dv[0, k] * cof[k]
    for x in range(n):
        for y in range(n):
            acc = 0.0
            for k in range(n):
                acc += cof[k * n + x] * cv[k, y]
            adjc[x * n + y] = acc
            acc = 0.0
            for k in range(n):
                acc += bv[x, k] * cof[y * n + k]
            badj[x * n + y] = acc

    tarr = adjugate_derivative(dv)
    cdef double[:, :, :, ::1] t = tarr
    out = np.zeros((4, n, n, n, n))
    cdef double[:, :, :, :, ::1] j = out
    for x in range(n):
        for y in range(n):
            j[0, x, y, x, y] = -detd
            for q in range(n):
                j[1, x, y, x, q] = adjc[q * n + y]
            for p in range(n):
                j[2, x, y, p, y] = badj[x * n + p]
            for p in range(n):
                for q in range(n):
                    acc = 0.0
                    for k in range(n):
                        for l in range(n):
                            acc += bv[x, k] * t[k, l, p, q] * cv[l, y]
                    j[3, x, y, p, q] = acc - cof[p * n + q] * av[x, y]
    return out


def nabla_batch(s, rows1, rows2, cols1, cols2):
    cdef double[:, :, ::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef long[::1] r1 = np.ascontiguousarray(rows1, dtype=np.int_)
    cdef long[::1] r2 = np.ascontiguousarray(rows2, dtype=np.int_)
    cdef long[::1] c1 = np.ascontiguousarray(cols1, dtype=np.int_)
    cdef long[::1] c2 = np.ascontiguousarray(cols2, dtype=np.int_)
    cdef int n = r1.shape[0]
    cdef Py_ssize_t nk = sv.shape[0], kk
    cdef int x, y
    cdef double a[MAXR * MAXR]
    cdef double b[MAXR * MAXR]
    cdef double c[MAXR * MAXR]
    cdef double d[MAXR * MAXR]
    if n > MAXR or r2.shape[0] != n or c1.shape[0] != n or c2.shape[0] != n:
        raise ValueError("index lists must share one length <= 4")
    out = np.empty((nk, n, n))
    cdef double[:, :, ::1] ov = out
    with nogil:
        for kk in range(nk):
            for x in range(n):
                for y in range(n):
                    a[x * n + y] = sv[kk, r1[x], c1[y]]
                    b[x * n + y] = sv[kk, r1[x], c2[y]]
                    c[x * n + y] = sv[kk, r2[x], c1[y]]
                    d[x * n + y] = sv[kk, r2[x], c2[y]]
            _nabla(a, b, c, d, n, &ov[kk, 0, 0])
    return out
