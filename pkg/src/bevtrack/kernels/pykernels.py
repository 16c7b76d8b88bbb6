"""NumPy reference implementations of the hot kernels.

Kept in lockstep with the compiled versions in ``_ckernels.pyx``: same
signatures, same gate layout, same tie-breaking. The parity test suite
asserts agreement between the two backends.

LSTM gate layout along the last axis is [input, forget, cell, output],
each block of width H. The forward pass receives the input contribution
``xw = x @ w_x + b`` precomputed for every step, so only the recurrent
part runs inside the time loop.
"""

import numpy as np


def _sigmoid(z):
    out = np.empty_like(z)
    np.negative(z, out=out)
    np.exp(out, out=out)
    out += 1.0
    np.reciprocal(out, out=out)
    return out


def lstm_seq_forward(xw, wh, h0, c0):
    """Run an LSTM over T steps for a batch of B sequences.

    xw: (T, B, 4H) input pre-activations, wh: (H, 4H), h0/c0: (B, H).
    Returns (h, c, gates): h and c are (T, B, H) state stacks, gates is
    the (T, B, 4H) stack of post-activation gate values needed by the
    backward pass.
    """
    T, B, four_h = xw.shape
    H = four_h // 4
    h = np.empty((T, B, H))
    c = np.empty((T, B, H))
    gates = np.empty((T, B, four_h))
    h_prev = h0
    c_prev = c0
    for t in range(T):
        z = xw[t] + h_prev @ wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c_t = f * c_prev + i * g
        h_t = o * np.tanh(c_t)
        gates[t, :, :H] = i
        gates[t, :, H : 2 * H] = f
        gates[t, :, 2 * H : 3 * H] = g
        gates[t, :, 3 * H :] = o
        c[t] = c_t
        h[t] = h_t
        h_prev = h_t
        c_prev = c_t
    return h, c, gates


def lstm_seq_backward(wh, h, c, gates, h0, c0, dh):
    """Backward pass matching `lstm_seq_forward`.

    dh: (T, B, H) upstream gradient on every hidden state.
    Returns (dxw, dwh, dh0, dc0).
    """
    T, B, H = h.shape
    wh_t = wh.T
    dxw = np.empty((T, B, 4 * H))
    dwh = np.zeros_like(wh)
    dh_carry = np.zeros((B, H))
    dc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H : 2 * H]
        g = gates[t, :, 2 * H : 3 * H]
        o = gates[t, :, 3 * H :]
        c_prev = c[t - 1] if t > 0 else c0
        h_prev = h[t - 1] if t > 0 else h0
        dh_t = dh[t] + dh_carry
        tanh_c = np.tanh(c[t])
        do = dh_t * tanh_c
        dc = dc + dh_t * o * (1.0 - tanh_c * tanh_c)
        dz = dxw[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = do * o * (1.0 - o)
        dh_carry = dz @ wh_t
        dwh += h_prev.T @ dz
        dc = dc * f
    return dxw, dwh, dh_carry, dc


def hungarian_square(cost):
    """Exact minimum-cost perfect matching on a square cost matrix.

    Shortest-augmenting-path formulation with row/column potentials,
    O(n^3). Returns an int64 array `col` with col[r] = column assigned
    to row r. Ties resolve to the lowest column index scanned first,
    matching the compiled backend exactly.
    """
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError("hungarian_square expects a square matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("hungarian_square requires finite costs")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j]: row matched to column j (0 = none)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = cost[i0 - 1, :] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        col[p[j] - 1] = j - 1
    return col
