"""Pure-Python versions of the hot kernels.

These mirror ``_kernels.pyx`` statement for statement so both backends
produce bit-identical results. They are used when the compiled extension
is unavailable or when ``CVTNET_PURE_PYTHON=1`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def local_move(adj, order, init, min_gain):
    """Greedy Louvain node moves on a dense adjacency matrix.

    ``adj`` holds self-loops on the diagonal counted twice (so row sums are
    weighted degrees). ``init`` gives starting community labels in
    ``0..n-1``. Returns the final label per node (not densified) and the
    number of full sweeps performed.
    """
    a = np.ascontiguousarray(adj, dtype=np.float64).tolist()
    n = len(a)
    order = [int(v) for v in order]
    comm = [int(v) for v in init]

    k = [0.0] * n
    two_m = 0.0
    for i in range(n):
        s = 0.0
        row = a[i]
        for j in range(n):
            s += row[j]
        k[i] = s
        two_m += s
    m = two_m / 2.0

    tot = [0.0] * n
    for i in range(n):
        tot[comm[i]] += k[i]

    neigh_w = [0.0] * n
    mark = [False] * n
    sweeps = 0
    moved = True
    while moved:
        moved = False
        sweeps += 1
        for idx in range(n):
            i = order[idx]
            ci = comm[i]
            ki = k[i]
            row = a[i]
            for j in range(n):
                if j != i and row[j] > 0.0:
                    cj = comm[j]
                    mark[cj] = True
                    neigh_w[cj] += row[j]
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
                mark[c] = False
                neigh_w[c] = 0.0
    return np.asarray(comm, dtype=np.int64), sweeps


def im2col(x, k, pad):
    """Unfold ``x`` of shape (N, C, H, W) into (N*H*W, C*k*k) patches (stride 1)."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    ho, wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * k * k)


def col2im(cols, shape, k, pad):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to input shape."""
    n, c, h, w = shape
    ho = h + 2 * pad - k + 1
    wo = w + 2 * pad - k + 1
    cols = cols.reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for kh in range(k):
        for kw in range(k):
            dxp[:, :, kh:kh + ho, kw:kw + wo] += cols[:, :, :, :, kh, kw].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + h, pad:pad + w].copy()
