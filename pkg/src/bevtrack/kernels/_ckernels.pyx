# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see pykernels for the reference).

The recurrent matmuls go through BLAS dgemm; gate math and the assignment
search run as plain C loops. Gate layout and tie-breaking are identical to
the NumPy backend so the two are interchangeable.
"""

import numpy as np

from libc.math cimport INFINITY
from scipy.linalg.cython_blas cimport dgemm

cdef char TRANS_N = b'N'
cdef char TRANS_T = b'T'
cdef double ONE = 1.0


cdef void _gemm_nn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out, double beta) noexcept:
    # out (m,n) <- a (m,k) @ b (k,n) + beta * out   (row-major buffers)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[1]
    dgemm(&TRANS_N, &TRANS_N, &n, &m, &k, &ONE, &b[0, 0], &n, &a[0, 0], &k,
          &beta, &out[0, 0], &n)


cdef void _gemm_nt(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out, double beta) noexcept:
    # out (m,n) <- a (m,k) @ b.T, with b (n,k)
    cdef int m = a.shape[0], k = a.shape[1], n = b.shape[0]
    dgemm(&TRANS_T, &TRANS_N, &n, &m, &k, &ONE, &b[0, 0], &k, &a[0, 0], &k,
          &beta, &out[0, 0], &n)


cdef void _gemm_tn(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out, double beta) noexcept:
    # out (m,n) <- a.T @ b, with a (k,m), b (k,n)
    cdef int k = a.shape[0], m = a.shape[1], n = b.shape[1]
    dgemm(&TRANS_N, &TRANS_T, &n, &m, &k, &ONE, &b[0, 0], &n, &a[0, 0], &m,
          &beta, &out[0, 0], &n)


def lstm_seq_forward(xw, wh, h0, c0):
    """See pykernels.lstm_seq_forward.

    The recurrent matmul runs through BLAS and the state updates are fused
    C loops; the bulk transcendental evaluations go through NumPy's SIMD
    ufuncs (writing straight into the gate cache), which outruns per-element
    libm calls and keeps the two backends in exact numerical lockstep.
    """
    xw = np.ascontiguousarray(xw, dtype=np.float64)
    wh = np.ascontiguousarray(wh, dtype=np.float64)
    cdef double[:, :, ::1] xw_v = xw
    cdef double[:, ::1] wh_v = wh
    cdef double[:, ::1] hp = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(c0, dtype=np.float64)
    cdef Py_ssize_t T = xw_v.shape[0], B = xw_v.shape[1], H4 = xw_v.shape[2]
    cdef Py_ssize_t H = H4 // 4
    h_arr = np.empty((T, B, H))
    c_arr = np.empty((T, B, H))
    g_arr = np.empty((T, B, H4))
    z_arr = np.empty((B, H4))
    tanh_c_arr = np.empty((B, H))
    cdef double[:, :, ::1] h_v = h_arr
    cdef double[:, :, ::1] c_v = c_arr
    cdef double[:, ::1] z = z_arr
    cdef double[:, ::1] gate_t
    cdef double[:, ::1] tanh_c = tanh_c_arr
    cdef Py_ssize_t t, b, j
    cdef double cc
    for t in range(T):
        z[:, :] = xw_v[t]
        _gemm_nn(hp, wh_v, z, 1.0)
        gates_t = g_arr[t]
        # sigmoid(i, f) and sigmoid(o) blocks, tanh(g) block, vectorized
        np.negative(z_arr[:, : 2 * H], out=gates_t[:, : 2 * H])
        np.negative(z_arr[:, 3 * H :], out=gates_t[:, 3 * H :])
        np.exp(gates_t[:, : 2 * H], out=gates_t[:, : 2 * H])
        np.exp(gates_t[:, 3 * H :], out=gates_t[:, 3 * H :])
        gates_t[:, : 2 * H] += 1.0
        gates_t[:, 3 * H :] += 1.0
        np.reciprocal(gates_t[:, : 2 * H], out=gates_t[:, : 2 * H])
        np.reciprocal(gates_t[:, 3 * H :], out=gates_t[:, 3 * H :])
        np.tanh(z_arr[:, 2 * H : 3 * H], out=gates_t[:, 2 * H : 3 * H])
        gate_t = gates_t
        for b in range(B):
            for j in range(H):
                cc = gate_t[b, H + j] * cp[b, j] + gate_t[b, j] * gate_t[b, 2 * H + j]
                c_v[t, b, j] = cc
        np.tanh(c_arr[t], out=tanh_c_arr)
        for b in range(B):
            for j in range(H):
                h_v[t, b, j] = gate_t[b, 3 * H + j] * tanh_c[b, j]
        hp = h_v[t]
        cp = c_v[t]
    return h_arr, c_arr, g_arr


def lstm_seq_backward(wh, h, c, gates, h0, c0, dh):
    """See pykernels.lstm_seq_backward."""
    wh = np.ascontiguousarray(wh, dtype=np.float64)
    cdef double[:, ::1] wh_v = wh
    cdef double[:, :, ::1] h_v = np.ascontiguousarray(h, dtype=np.float64)
    cdef double[:, :, ::1] c_v = np.ascontiguousarray(c, dtype=np.float64)
    cdef double[:, :, ::1] g_v = np.ascontiguousarray(gates, dtype=np.float64)
    cdef double[:, ::1] h0_v = np.ascontiguousarray(h0, dtype=np.float64)
    cdef double[:, ::1] c0_v = np.ascontiguousarray(c0, dtype=np.float64)
    cdef double[:, :, ::1] dh_v = np.ascontiguousarray(dh, dtype=np.float64)
    cdef Py_ssize_t T = h_v.shape[0], B = h_v.shape[1], H = h_v.shape[2]
    dxw_arr = np.empty((T, B, 4 * H))
    dwh_arr = np.zeros((H, 4 * H))
    dhc_arr = np.zeros((B, H))
    dc_arr = np.zeros((B, H))
    tanh_c_arr = np.empty((B, H))
    cdef double[:, :, ::1] dxw = dxw_arr
    cdef double[:, ::1] dwh = dwh_arr
    cdef double[:, ::1] dhc = dhc_arr
    cdef double[:, ::1] dc = dc_arr
    cdef double[:, ::1] tanh_c = tanh_c_arr
    cdef double[:, ::1] cp, hp, dz
    cdef Py_ssize_t t, b, j
    cdef double gi, gf, gg, go, tc, dht, dct
    c_np = np.asarray(c_v)
    for t in range(T - 1, -1, -1):
        cp = c_v[t - 1] if t > 0 else c0_v
        hp = h_v[t - 1] if t > 0 else h0_v
        dz = dxw[t]
        np.tanh(c_np[t], out=tanh_c_arr)
        for b in range(B):
            for j in range(H):
                gi = g_v[t, b, j]
                gf = g_v[t, b, H + j]
                gg = g_v[t, b, 2 * H + j]
                go = g_v[t, b, 3 * H + j]
                tc = tanh_c[b, j]
                dht = dh_v[t, b, j] + dhc[b, j]
                dct = dc[b, j] + dht * go * (1.0 - tc * tc)
                dz[b, j] = dct * gg * gi * (1.0 - gi)
                dz[b, H + j] = dct * cp[b, j] * gf * (1.0 - gf)
                dz[b, 2 * H + j] = dct * gi * (1.0 - gg * gg)
                dz[b, 3 * H + j] = dht * tc * go * (1.0 - go)
                dc[b, j] = dct * gf
        _gemm_nt(dz, wh_v, dhc, 0.0)
        _gemm_tn(hp, dz, dwh, 1.0)
    return dxw_arr, dwh_arr, dhc_arr, dc_arr


def hungarian_square(cost):
    """See pykernels.hungarian_square."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("hungarian_square expects a square matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian_square requires finite costs")
    cdef double[:, ::1] a = cost
    cdef Py_ssize_t n = a.shape[0]
    u_arr = np.zeros(n + 1)
    v_arr = np.zeros(n + 1)
    p_arr = np.zeros(n + 1, dtype=np.int64)
    way_arr = np.zeros(n + 1, dtype=np.int64)
    minv_arr = np.empty(n + 1)
    used_arr = np.zeros(n + 1, dtype=np.uint8)
    cdef double[::1] u = u_arr, v = v_arr, minv = minv_arr
    cdef long[::1] p = p_arr, way = way_arr
    cdef unsigned char[::1] used = used_arr
    cdef Py_ssize_t i, j, j0, j1, i0
    cdef double cur, delta
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_arr = np.empty(n, dtype=np.int64)
    cdef long[::1] col = col_arr
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col_arr
