# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False
"""Compiled hot kernels. Semantics match ``_kernels_py`` exactly."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def local_move(adj, order, init, double min_gain):
    cdef double[:, ::1] a = np.ascontiguousarray(adj, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    cdef long long[::1] order_v = np.ascontiguousarray(order, dtype=np.int64)
    comm_arr = np.array(init, dtype=np.int64)
    cdef long long[::1] comm = comm_arr
    cdef double[::1] k = np.zeros(n)
    cdef double[::1] tot = np.zeros(n)
    cdef double[::1] neigh_w = np.zeros(n)
    cdef unsigned char[::1] mark = np.zeros(n, dtype=np.uint8)
    cdef Py_ssize_t i, j, c, idx, ci, cj, best_c
    cdef double s, two_m = 0.0, m, ki, stay, best_gain, gain
    cdef int sweeps = 0
    cdef bint moved = True

    for i in range(n):
        s = 0.0
        for j in range(n):
            s += a[i, j]
        k[i] = s
        two_m += s
    m = two_m / 2.0
    for i in range(n):
        tot[comm[i]] += k[i]

    while moved:
        moved = False
        sweeps += 1
        for idx in range(n):
            i = order_v[idx]
            ci = comm[i]
            ki = k[i]
            for j in range(n):
                if j != i and a[i, j] > 0.0:
                    cj = comm[j]
                    mark[cj] = 1
                    neigh_w[cj] += a[i, j]
            tot[ci] -= ki
            stay = neigh_w[ci] - tot[ci] * ki / two_m
            best_c = ci
            best_gain = stay
            for c in range(n):
                if mark[c] and c != ci:
                    gain = neigh_w[c] - tot[c] * ki / two_m
                    if gain > best_gain:
                        best_gain = gain
                        best_c = c
            if best_c != ci and (best_gain - stay) / m <= min_gain:
                best_c = ci
            tot[best_c] += ki
            if best_c != ci:
                comm[i] = best_c
                moved = True
            for c in range(n):
                mark[c] = 0
                neigh_w[c] = 0.0
    return comm_arr, sweeps


def im2col(x, int k, int pad):
    cdef double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3]
    cdef Py_ssize_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1
    out = np.zeros((n * ho * wo, c * k * k))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t b, y, xx, ch, kh, kw, row, col, sy, sx
    for b in range(n):
        for y in range(ho):
            for xx in range(wo):
                row = (b * ho + y) * wo + xx
                col = 0
                for ch in range(c):
                    for kh in range(k):
                        sy = y + kh - pad
                        for kw in range(k):
                            sx = xx + kw - pad
                            if 0 <= sy < h and 0 <= sx < w:
                                ov[row, col] = xv[b, ch, sy, sx]
                            col += 1
    return out


def col2im(cols, shape, int k, int pad):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1
    cdef double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(n * ho * wo, c * k * k)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    cdef double[:, :, :, ::1] dv = dxp
    cdef Py_ssize_t b, y, xx, ch, kh, kw, row
    for b in range(n):
        for kh in range(k):
            for kw in range(k):
                for ch in range(c):
                    for y in range(ho):
                        for xx in range(wo):
                            row = (b * ho + y) * wo + xx
                            dv[b, ch, y + kh, xx + kw] += cv[row, (ch * k + kh) * k + kw]
    return dxp[:, :, pad:pad + h, pad:pad + w].copy()
