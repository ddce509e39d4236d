"""Hot loops: recurrent cell forward/backward and linear-chain CRF dynamic programs.

Every function here is numba-compatible and is compiled with ``@njit``
unless ``MNER_DISABLE_JIT`` is set (see ``mner._jit``).  Arrays must be
C-contiguous float64.

CRF transition matrices are ``(L + 2, L + 2)``: row/column ``L`` is the
virtual START state and ``L + 1`` is STOP.
"""

import numpy as np

from ._jit import njit


@njit
def sigmoid(a):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@njit
def logsumexp1d(v):
    m = np.max(v)
    if not np.isfinite(m):
        return m
    return m + np.log(np.sum(np.exp(v - m)))


@njit
def lstm_forward(x, w_ix, w_ih, w_ic, w_cx, w_ch, w_ox, w_oh, w_oc,
                 b_i, b_c, b_o, gate_reads_x):
    """Coupled-gate LSTM over ``x`` (T, n) from a zero state.

    i_t = sigmoid([W_ix x_t] + W_ih h_{t-1} + W_ic c_{t-1} + b_i)
    c_t = (1 - i_t) * c_{t-1} + i_t * tanh(W_cx x_t + W_ch h_{t-1} + b_c)
    o_t = sigmoid(W_ox x_t + W_oh h_{t-1} + W_oc c_t + b_o)
    h_t = o_t * tanh(c_t)

    The bracketed term is only present when ``gate_reads_x`` is true.
    Returns (hs, cs, i, g, o), each (T, H).
    """
    T = x.shape[0]
    H = b_i.shape[0]
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    ig = np.zeros((T, H))
    gg = np.zeros((T, H))
    og = np.zeros((T, H))
    # input projections for all steps at once
    xc = np.dot(x, w_cx.T) + b_c
    xo = np.dot(x, w_ox.T) + b_o
    if gate_reads_x:
        xi = np.dot(x, w_ix.T) + b_i
    else:
        xi = np.zeros((T, H)) + b_i
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        i = sigmoid(xi[t] + np.dot(w_ih, h) + np.dot(w_ic, c))
        g = np.tanh(xc[t] + np.dot(w_ch, h))
        c = (1.0 - i) * c + i * g
        o = sigmoid(xo[t] + np.dot(w_oh, h) + np.dot(w_oc, c))
        h = o * np.tanh(c)
        hs[t] = h
        cs[t] = c
        ig[t] = i
        gg[t] = g
        og[t] = o
    return hs, cs, ig, gg, og


@njit
def lstm_backward(dhs, x, hs, cs, ig, gg, og, w_ix, w_ih, w_ic, w_cx, w_ch,
                  w_ox, w_oh, w_oc, gate_reads_x):
    """Backprop through ``lstm_forward`` given dLoss/dh for every step.

    Returns (dx, dW_ix, dW_ih, dW_ic, dW_cx, dW_ch, dW_ox, dW_oh, dW_oc,
    db_i, db_c, db_o).  dW_ix is all-zero when the gate ignores x.
    """
    T = x.shape[0]
    H = hs.shape[1]
    da_i = np.zeros((T, H))
    da_g = np.zeros((T, H))
    da_o = np.zeros((T, H))
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    zero = np.zeros(H)
    for t in range(T - 1, -1, -1):
        c_prev = cs[t - 1] if t > 0 else zero
        i = ig[t]
        g = gg[t]
        o = og[t]
        tc = np.tanh(cs[t])
        dh = dhs[t] + dh_next
        dao = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc) + np.dot(dao, w_oc)
        dai = dc * (g - c_prev) * i * (1.0 - i)
        dag = dc * i * (1.0 - g * g)
        dc_next = dc * (1.0 - i) + np.dot(dai, w_ic)
        dh_next = np.dot(dao, w_oh) + np.dot(dag, w_ch) + np.dot(dai, w_ih)
        da_i[t] = dai
        da_g[t] = dag
        da_o[t] = dao
    dx = np.dot(da_o, w_ox) + np.dot(da_g, w_cx)
    if gate_reads_x:
        dx += np.dot(da_i, w_ix)
    h_prev = np.zeros((T, H))
    c_prev_all = np.zeros((T, H))
    if T > 1:
        h_prev[1:] = hs[:-1]
        c_prev_all[1:] = cs[:-1]
    da_i_t = np.ascontiguousarray(da_i.T)
    da_g_t = np.ascontiguousarray(da_g.T)
    da_o_t = np.ascontiguousarray(da_o.T)
    if gate_reads_x:
        dw_ix = np.dot(da_i_t, x)
    else:
        dw_ix = np.zeros_like(w_ix)
    dw_ih = np.dot(da_i_t, h_prev)
    dw_ic = np.dot(da_i_t, c_prev_all)
    dw_cx = np.dot(da_g_t, x)
    dw_ch = np.dot(da_g_t, h_prev)
    dw_ox = np.dot(da_o_t, x)
    dw_oh = np.dot(da_o_t, h_prev)
    dw_oc = np.dot(da_o_t, cs)
    db_i = da_i.sum(axis=0)
    db_c = da_g.sum(axis=0)
    db_o = da_o.sum(axis=0)
    return (dx, dw_ix, dw_ih, dw_ic, dw_cx, dw_ch, dw_ox, dw_oh, dw_oc,
            db_i, db_c, db_o)


@njit
def crf_alpha(emit, trans):
    """Forward log-messages (T, L) and log-partition."""
    T, L = emit.shape
    alpha = np.empty((T, L))
    alpha[0] = trans[L, :L] + emit[0]
    for t in range(1, T):
        for j in range(L):
            alpha[t, j] = logsumexp1d(alpha[t - 1] + trans[:L, j]) + emit[t, j]
    log_z = logsumexp1d(alpha[T - 1] + trans[:L, L + 1])
    return alpha, log_z


@njit
def crf_beta(emit, trans):
    T, L = emit.shape
    beta = np.empty((T, L))
    beta[T - 1] = trans[:L, L + 1]
    for t in range(T - 2, -1, -1):
        nxt = emit[t + 1] + beta[t + 1]
        for i in range(L):
            beta[t, i] = logsumexp1d(trans[i, :L] + nxt)
    return beta


@njit
def crf_path_score(emit, trans, y):
    T, L = emit.shape
    s = trans[L, y[0]] + emit[0, y[0]]
    for t in range(1, T):
        s += trans[y[t - 1], y[t]] + emit[t, y[t]]
    s += trans[y[T - 1], L + 1]
    return s


@njit
def crf_nll_grad(emit, trans, y):
    """Negative log-likelihood of ``y`` with its gradient.

    Returns (loss, d_emit, d_trans).  Entries of d_trans for transitions
    into START or out of STOP are always zero.
    """
    T, L = emit.shape
    alpha, log_z = crf_alpha(emit, trans)
    beta = crf_beta(emit, trans)
    loss = log_z - crf_path_score(emit, trans, y)
    d_emit = np.exp(alpha + beta - log_z)
    d_trans = np.zeros_like(trans)
    d_trans[L, :L] = d_emit[0]
    d_trans[:L, L + 1] = d_emit[T - 1]
    for t in range(1, T):
        for i in range(L):
            for j in range(L):
                d_trans[i, j] += np.exp(alpha[t - 1, i] + trans[i, j] + emit[t, j]
                                        + beta[t, j] - log_z)
    d_emit[0, y[0]] -= 1.0
    d_trans[L, y[0]] -= 1.0
    for t in range(1, T):
        d_emit[t, y[t]] -= 1.0
        d_trans[y[t - 1], y[t]] -= 1.0
    d_trans[y[T - 1], L + 1] -= 1.0
    return loss, d_emit, d_trans


@njit
def crf_viterbi(emit, trans):
    """Best path and its score; ties go to the lower label index."""
    T, L = emit.shape
    delta = np.empty((T, L))
    back = np.zeros((T, L), dtype=np.int64)
    delta[0] = trans[L, :L] + emit[0]
    for t in range(1, T):
        for j in range(L):
            best = 0
            best_v = delta[t - 1, 0] + trans[0, j]
            for i in range(1, L):
                v = delta[t - 1, i] + trans[i, j]
                if v > best_v:
                    best_v = v
                    best = i
            delta[t, j] = best_v + emit[t, j]
            back[t, j] = best
    last = 0
    best_v = delta[T - 1, 0] + trans[0, L + 1]
    for j in range(1, L):
        v = delta[T - 1, j] + trans[j, L + 1]
        if v > best_v:
            best_v = v
            last = j
    path = np.empty(T, dtype=np.int64)
    path[T - 1] = last
    for t in range(T - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, best_v
