"""Hot numeric kernels.

Every kernel exists in two flavours: ``*_numpy`` (always available) and
``*_numba`` (``None`` when numba is missing). The unsuffixed name is the one
selected by :mod:`ugsv._accel`. All arrays are float64 and C-contiguous.

LSTM gate layout in the packed weight matrix ``W`` of shape ``(I + H, 4H)``
is ``[input, forget, output, candidate]``.
"""
import numpy as np

from ._accel import njit, pick


# ---------------------------------------------------------------- LSTM --

def _lstm_forward_loop(W, b, X, mask, h0, c0):
    S, B, I = X.shape
    H = h0.shape[1]
    Wx = np.ascontiguousarray(W[:I])
    Wh = np.ascontiguousarray(W[I:])
    # input projection for every step at once; only h @ Wh is sequential
    AX = (np.dot(np.ascontiguousarray(X).reshape(S * B, I), Wx) + b).reshape(S, B, 4 * H)
    G = np.zeros((S, B, 4 * H))
    TC = np.zeros((S, B, H))
    Hs = np.zeros((S, B, H))
    Cs = np.zeros((S, B, H))
    h = h0.copy()
    c = c0.copy()
    for s in range(S):
        a = AX[s] + np.dot(h, Wh)
        gi = 1.0 / (1.0 + np.exp(-a[:, :H]))
        gf = 1.0 / (1.0 + np.exp(-a[:, H:2 * H]))
        go = 1.0 / (1.0 + np.exp(-a[:, 2 * H:3 * H]))
        gg = np.tanh(a[:, 3 * H:])
        G[s, :, :H] = gi
        G[s, :, H:2 * H] = gf
        G[s, :, 2 * H:3 * H] = go
        G[s, :, 3 * H:] = gg
        c_new = gf * c + gi * gg
        tc = np.tanh(c_new)
        TC[s] = tc
        h_new = go * tc
        m = mask[s].reshape(B, 1)
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h
        Hs[s] = h
        Cs[s] = c
    return Hs, Cs, G, TC


def _lstm_backward_loop(W, X, Hs, h0, G, TC, Cs, c0, mask, dHs, dh_last, dc_last):
    S, B, I = X.shape
    H = c0.shape[1]
    DA = np.zeros((S, B, 4 * H))
    dh = dh_last.copy()
    dc = dc_last.copy()
    WhT = np.ascontiguousarray(W[I:].T)
    for s in range(S - 1, -1, -1):
        m = mask[s].reshape(B, 1)
        dh = dh + dHs[s]
        if s > 0:
            c_prev = Cs[s - 1]
        else:
            c_prev = c0
        gi = G[s, :, :H]
        gf = G[s, :, H:2 * H]
        go = G[s, :, 2 * H:3 * H]
        gg = G[s, :, 3 * H:]
        tc = TC[s]
        dh_new = m * dh
        dc_new = m * dc + dh_new * go * (1.0 - tc * tc)
        DA[s, :, :H] = dc_new * gg * gi * (1.0 - gi)
        DA[s, :, H:2 * H] = dc_new * c_prev * gf * (1.0 - gf)
        DA[s, :, 2 * H:3 * H] = dh_new * tc * go * (1.0 - go)
        DA[s, :, 3 * H:] = dc_new * gi * (1.0 - gg * gg)
        dc = dc_new * gf + (1.0 - m) * dc
        dh = np.dot(np.ascontiguousarray(DA[s]), WhT) + (1.0 - m) * dh
    # weight gradients as single GEMMs over all steps
    Hprev = np.zeros((S, B, H))
    Hprev[0] = h0
    Hprev[1:] = Hs[:-1]
    DA2 = DA.reshape(S * B, 4 * H)
    dW = np.zeros_like(W)
    dW[:I] = np.dot(np.ascontiguousarray(X).reshape(S * B, I).T, DA2)
    dW[I:] = np.dot(Hprev.reshape(S * B, H).T, DA2)
    db = DA2.sum(axis=0)
    dX = np.dot(DA2, np.ascontiguousarray(W[:I].T)).reshape(S, B, I)
    return dW, db, dX, dh, dc


lstm_forward_numpy = _lstm_forward_loop
lstm_backward_numpy = _lstm_backward_loop
lstm_forward_numba = njit(_lstm_forward_loop)
lstm_backward_numba = njit(_lstm_backward_loop)


def lstm_forward(W, b, X, mask, h0, c0):
    """Run a masked batch of sequences through one LSTM layer.

    ``X`` is ``(steps, batch, in)``; ``mask[s, k] == 0`` freezes the state of
    sequence ``k`` at step ``s``, which lets sequences of unequal length share
    one right-padded array. Returns ``(Hs, Cs, G, TC)``: carried hidden and
    cell states per step, activated gates and ``tanh`` of the updated cell.
    """
    fn = pick(lstm_forward_numba, lstm_forward_numpy)
    return fn(W, b, X, mask, h0, c0)


def lstm_backward(W, X, Hs, h0, G, TC, Cs, c0, mask, dHs, dh_last, dc_last):
    """BPTT through :func:`lstm_forward`. Returns ``(dW, db, dX, dh0, dc0)``."""
    fn = pick(lstm_backward_numba, lstm_backward_numpy)
    return fn(W, X, Hs, h0, G, TC, Cs, c0, mask, dHs, dh_last, dc_last)


# ---------------------------------------------------- occupancy entropy --

def _joint_entropy_loop(coords, lo, cell, extent):
    F, J, D = coords.shape
    V = extent ** D
    counts = np.zeros((J, V))
    for f in range(F):
        for j in range(J):
            v = 0
            for d in range(D):
                k = int(np.floor((coords[f, j, d] - lo[d]) / cell[d]))
                if k < 0:
                    k = 0
                elif k >= extent:
                    k = extent - 1
                v = v * extent + k
            counts[j, v] += 1.0
    out = np.zeros(J)
    for j in range(J):
        e = 0.0
        for v in range(V):
            if counts[j, v] > 0.0:
                r = counts[j, v] / F
                e -= r * np.log(r)
        out[j] = e
    return out


def joint_entropy_numpy(coords, lo, cell, extent):
    F, J, D = coords.shape
    V = extent ** D
    k = np.floor((coords - lo) / cell).astype(np.int64)
    np.clip(k, 0, extent - 1, out=k)
    flat = np.zeros((F, J), dtype=np.int64)
    for d in range(D):
        flat = flat * extent + k[:, :, d]
    flat += np.arange(J)[None, :] * V
    counts = np.bincount(flat.ravel(), minlength=J * V).reshape(J, V)
    r = counts / F
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(r > 0, -r * np.log(np.where(r > 0, r, 1.0)), 0.0)
    return terms.sum(axis=1)


joint_entropy_numba = njit(_joint_entropy_loop)


def joint_entropy(coords, lo, cell, extent):
    """Per-joint entropy of grid-cell occupancy over frames.

    ``coords`` is ``(frames, joints, dims)``; the grid has ``extent`` cells per
    axis starting at ``lo`` with widths ``cell``. Out-of-grid positions clamp to
    the nearest boundary cell.
    """
    fn = pick(joint_entropy_numba, joint_entropy_numpy)
    return fn(coords, lo, cell, int(extent))


# ------------------------------------------------------ nearest centroid --

def _nearest_loop(X, C):
    N, D = X.shape
    K = C.shape[0]
    labels = np.zeros(N, dtype=np.int64)
    dist = np.zeros(N)
    for n in range(N):
        best = np.inf
        arg = 0
        for k in range(K):
            acc = 0.0
            for d in range(D):
                diff = X[n, d] - C[k, d]
                acc += diff * diff
            if acc < best:
                best = acc
                arg = k
        labels[n] = arg
        dist[n] = best
    return labels, dist


def nearest_numpy(X, C):
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * (X @ C.T) + (C * C).sum(axis=1)[None, :]
    np.maximum(d2, 0.0, out=d2)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), d2[np.arange(X.shape[0]), labels]


nearest_numba = njit(_nearest_loop)


def nearest(X, C):
    """Index of and squared distance to the closest row of ``C`` for each row of ``X``."""
    fn = pick(nearest_numba, nearest_numpy)
    return fn(np.ascontiguousarray(X, dtype=np.float64), np.ascontiguousarray(C, dtype=np.float64))
