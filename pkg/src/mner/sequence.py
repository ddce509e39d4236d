"""Entity Bi-LSTM and linear-chain CRF.

The recurrent cell is the coupled-gate form with peepholes:

    i_t = sigmoid(W_xi h_{t-1} + W_ci c_{t-1} + b_i)          (literal)
    i_t = sigmoid(W_xi x_t + W_hi h_{t-1} + W_ci c_{t-1} + b_i) (standard)
    c_t = (1 - i_t) * c_{t-1} + i_t * tanh(W_xc x_t + W_hc h_{t-1} + b_c)
    o_t = sigmoid(W_xo x_t + W_ho h_{t-1} + W_co c_t + b_o)
    h_t = o_t * tanh(c_t)

In the literal form the input gate never sees x_t and the weight named
W_xi multiplies h_{t-1}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import DTYPE, Tape, register_op, sigmoid

ENTITY_TYPES = ("PER", "LOC", "ORG", "MISC")
LABELS = ("O",) + tuple(f"{p}-{t}" for t in ENTITY_TYPES for p in ("B", "I"))
LABEL_INDEX = {lab: k for k, lab in enumerate(LABELS)}

GATES = ("literal", "standard")


def lstm_param_names(gate: str) -> tuple[str, ...]:
    if gate == "literal":
        return ("W_xi", "W_ci", "W_xc", "W_hc", "W_xo", "W_ho", "W_co", "b_i", "b_c", "b_o")
    if gate == "standard":
        return ("W_xi", "W_hi", "W_ci", "W_xc", "W_hc", "W_xo", "W_ho", "W_co", "b_i", "b_c", "b_o")
    raise ValueError(f"lstm gate must be one of {GATES}, got {gate!r}")


def lstm_param_shapes(prefix: str, n_in: int, hidden: int, gate: str) -> dict[str, tuple]:
    H = hidden
    shapes = {
        "W_xi": (H, H) if gate == "literal" else (H, n_in),
        "W_hi": (H, H),
        "W_ci": (H, H),
        "W_xc": (H, n_in),
        "W_hc": (H, H),
        "W_xo": (H, n_in),
        "W_ho": (H, H),
        "W_co": (H, H),
        "b_i": (H,),
        "b_c": (H,),
        "b_o": (H,),
    }
    return {f"{prefix}.{k}": shapes[k] for k in lstm_param_names(gate)}


@dataclass
class LstmParams:
    weights: dict  # short name -> array
    gate: str = "literal"

    @classmethod
    def from_store(cls, store, prefix: str, gate: str = "literal") -> "LstmParams":
        return cls({k: store[f"{prefix}.{k}"] for k in lstm_param_names(gate)}, gate)

    @property
    def hidden(self) -> int:
        return self.weights["b_i"].shape[0]

    @property
    def n_in(self) -> int:
        return self.weights["W_xc"].shape[1]

    def kernel_args(self):
        return _kernel_args([self.weights[k] for k in lstm_param_names(self.gate)], self.gate)


def _kernel_args(ws, gate):
    """Map the named weights onto the kernel's (w_ix, w_ih, ...) slots."""
    if gate == "literal":
        w_ih, w_ic, w_cx, w_ch, w_ox, w_oh, w_oc, b_i, b_c, b_o = ws
        w_ix = np.zeros((w_ih.shape[0], w_cx.shape[1]))
        reads_x = False
    else:
        w_ix, w_ih, w_ic, w_cx, w_ch, w_ox, w_oh, w_oc, b_i, b_c, b_o = ws
        reads_x = True
    return (w_ix, w_ih, w_ic, w_cx, w_ch, w_ox, w_oh, w_oc, b_i, b_c, b_o, reads_x)


def _grads_by_name(kgrads, gate):
    dw_ix, dw_ih, dw_ic, dw_cx, dw_ch, dw_ox, dw_oh, dw_oc, db_i, db_c, db_o = kgrads
    if gate == "literal":
        return [dw_ih, dw_ic, dw_cx, dw_ch, dw_ox, dw_oh, dw_oc, db_i, db_c, db_o]
    return [dw_ix, dw_ih, dw_ic, dw_cx, dw_ch, dw_ox, dw_oh, dw_oc, db_i, db_c, db_o]


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray


def lstm_step(params: LstmParams, x, prev: LstmState) -> LstmState:
    x = np.asarray(x, dtype=DTYPE)
    H = params.hidden
    if x.shape != (params.n_in,):
        raise ValueError(f"lstm_step: input width {x.shape} does not match {params.n_in}")
    if prev.h.shape != (H,) or prev.c.shape != (H,):
        raise ValueError(f"lstm_step: state widths {prev.h.shape}/{prev.c.shape}, expected ({H},)")
    w = params.weights
    if params.gate == "literal":
        a_i = w["W_xi"] @ prev.h + w["W_ci"] @ prev.c + w["b_i"]
    else:
        a_i = w["W_xi"] @ x + w["W_hi"] @ prev.h + w["W_ci"] @ prev.c + w["b_i"]
    i = sigmoid(a_i)
    c = (1.0 - i) * prev.c + i * np.tanh(w["W_xc"] @ x + w["W_hc"] @ prev.h + w["b_c"])
    o = sigmoid(w["W_xo"] @ x + w["W_ho"] @ prev.h + w["W_co"] @ c + w["b_o"])
    return LstmState(o * np.tanh(c), c)


def lstm_run(params: LstmParams, xs) -> np.ndarray:
    """Hidden states (T, H) from a zero initial state."""
    xs = np.ascontiguousarray(xs, dtype=DTYPE)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("lstm: need a non-empty (T, n) sequence")
    if xs.shape[1] != params.n_in:
        raise ValueError(f"lstm: input width {xs.shape[1]} does not match {params.n_in}")
    return kernels.lstm_forward(xs, *params.kernel_args())[0]


def bilstm_encode(fw: LstmParams, bw: LstmParams, contexts) -> np.ndarray:
    """Concatenated [forward; backward] hidden states, shape (T, 2H)."""
    xs = np.ascontiguousarray(contexts, dtype=DTYPE)
    if xs.ndim != 2 or xs.shape[0] == 0:
        raise ValueError("bilstm_encode: empty sequence")
    hf = lstm_run(fw, xs)
    hb = lstm_run(bw, xs[::-1])[::-1]
    return np.concatenate([hf, hb], axis=1)


# --------------------------------------------------------------------------
# CRF
# --------------------------------------------------------------------------

@dataclass
class CrfParams:
    w_emit: np.ndarray  # (L, 2H)
    b_emit: np.ndarray  # (L,)
    trans: np.ndarray  # (L + 2, L + 2); START = L, STOP = L + 1

    @classmethod
    def from_store(cls, store, prefix="crf") -> "CrfParams":
        return cls(store[f"{prefix}.W_emit"], store[f"{prefix}.b_emit"], store[f"{prefix}.trans"])

    @property
    def n_labels(self) -> int:
        return self.trans.shape[0] - 2

    def emissions(self, hidden) -> np.ndarray:
        return np.asarray(hidden) @ self.w_emit.T + self.b_emit

    def masked_transitions(self) -> np.ndarray:
        """Transitions with the unusable START/STOP entries set to -inf."""
        return mask_transitions(self.trans)


def crf_param_shapes(prefix: str, n_labels: int, width: int) -> dict[str, tuple]:
    return {
        f"{prefix}.W_emit": (n_labels, width),
        f"{prefix}.b_emit": (n_labels,),
        f"{prefix}.trans": (n_labels + 2, n_labels + 2),
    }


def mask_transitions(trans) -> np.ndarray:
    t = np.array(trans, dtype=DTYPE)
    L = t.shape[0] - 2
    t[:, L] = -np.inf  # into START
    t[L + 1, :] = -np.inf  # out of STOP
    t[L, L + 1] = -np.inf  # empty sequence
    return t


def bio_constraint_mask(labels=LABELS) -> np.ndarray:
    """Additive (L+2, L+2) mask forbidding O->I-X, B-X->I-Y, I-X->I-Y, START->I-X."""
    L = len(labels)
    m = np.zeros((L + 2, L + 2))
    for j, lab in enumerate(labels):
        if not lab.startswith("I-"):
            continue
        typ = lab[2:]
        m[L, j] = -np.inf
        for i, prev in enumerate(labels):
            if prev == "O" or prev[2:] != typ:
                m[i, j] = -np.inf
    return m


def _check_crf(emissions, trans):
    e = np.ascontiguousarray(emissions, dtype=DTYPE)
    t = np.ascontiguousarray(trans, dtype=DTYPE)
    if e.ndim != 2 or e.shape[0] < 1:
        raise ValueError(f"emissions must be (T>=1, L), got {e.shape}")
    if t.shape != (e.shape[1] + 2, e.shape[1] + 2):
        raise ValueError(f"transitions shape {t.shape} does not match {e.shape[1]} labels")
    return e, t


def _check_labels(y, T, L):
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (T,):
        raise ValueError(f"label sequence length {y.shape} does not match {T} emissions")
    if y.size and (y.min() < 0 or y.max() >= L):
        raise ValueError(f"label index out of range [0, {L})")
    return np.ascontiguousarray(y)


def crf_score(trans, emissions, y) -> float:
    e, t = _check_crf(emissions, trans)
    y = _check_labels(y, *e.shape)
    return float(kernels.crf_path_score(e, t, y))


def crf_log_partition(trans, emissions) -> float:
    e, t = _check_crf(emissions, trans)
    return float(kernels.crf_alpha(e, t)[1])


def crf_nll(trans, emissions, y) -> float:
    e, t = _check_crf(emissions, trans)
    y = _check_labels(y, *e.shape)
    return float(kernels.crf_nll_grad(e, t, y)[0])


def viterbi_decode(trans, emissions, constraint=None):
    """Best label indices and their score; lower index wins ties."""
    e, t = _check_crf(emissions, trans)
    if constraint is not None:
        t = np.ascontiguousarray(t + constraint)
    path, score = kernels.crf_viterbi(e, t)
    return path, float(score)


# --------------------------------------------------------------------------
# tape primitives
# --------------------------------------------------------------------------

def _lstm_fwd(vals, attrs):
    x = np.ascontiguousarray(vals[0])
    gate = attrs["gate"]
    ws = [np.ascontiguousarray(v) for v in vals[1:]]
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"lstm: need a non-empty (T, n) input, got {x.shape}")
    if x.shape[1] != ws[lstm_param_names(gate).index("W_xc")].shape[1]:
        raise ValueError(f"lstm: input shape {x.shape} incompatible with "
                         f"W_xc shape {ws[lstm_param_names(gate).index('W_xc')].shape}")
    args = _kernel_args(ws, gate)
    hs, cs, ig, gg, og = kernels.lstm_forward(x, *args)
    return hs, (x, args, cs, ig, gg, og)


def _lstm_bwd(g, vals, hs, cache, attrs):
    x, args, cs, ig, gg, og = cache
    out = kernels.lstm_backward(np.ascontiguousarray(g), x, hs, cs, ig, gg, og, *args[:8], args[11])
    return [out[0]] + _grads_by_name(out[1:], attrs["gate"])


def _crf_nll_fwd(vals, attrs):
    e, t = _check_crf(vals[0], vals[1])
    y = _check_labels(attrs["y"], *e.shape)
    loss, de, dt = kernels.crf_nll_grad(e, t, y)
    return np.array(loss), (de, dt)


def _crf_nll_bwd(g, vals, out, cache, attrs):
    de, dt = cache
    return [g * de, g * dt]


register_op("lstm", _lstm_fwd, _lstm_bwd)
register_op("crf_nll", _crf_nll_fwd, _crf_nll_bwd)


def tape_lstm(tape: Tape, x: int, weight_ids, gate: str, fused: bool = True) -> int:
    """Hidden-state sequence node (T, H).

    ``weight_ids`` follow ``lstm_param_names(gate)``.  With ``fused=False``
    the recurrence is spelled out in elementary primitives.
    """
    if fused:
        return tape.apply("lstm", x, *weight_ids, gate=gate)
    w = dict(zip(lstm_param_names(gate), weight_ids))
    T = tape.value(x).shape[0]
    H = tape.value(w["b_i"]).shape[0]
    one = tape.const(np.ones(H))
    h = c = tape.const(np.zeros(H))
    hs = []
    for t in range(T):
        xt = tape.pick(x, t)
        if gate == "literal":
            a_i = tape.add(tape.affine(h, w["W_xi"]), tape.affine(c, w["W_ci"], w["b_i"]))
        else:
            a_i = tape.add(tape.affine(xt, w["W_xi"]),
                           tape.add(tape.affine(h, w["W_hi"]), tape.affine(c, w["W_ci"], w["b_i"])))
        i = tape.sigmoid(a_i)
        cand = tape.tanh(tape.add(tape.affine(xt, w["W_xc"]), tape.affine(h, w["W_hc"], w["b_c"])))
        c = tape.add(tape.mul(tape.sub(one, i), c), tape.mul(i, cand))
        a_o = tape.add(tape.affine(xt, w["W_xo"]),
                       tape.add(tape.affine(h, w["W_ho"]), tape.affine(c, w["W_co"], w["b_o"])))
        h = tape.mul(tape.sigmoid(a_o), tape.tanh(c))
        hs.append(tape.reshape(h, (1, H)))
    return tape.concat(*hs, axis=0)


def tape_crf_nll(tape: Tape, emissions: int, trans: int, y, fused: bool = True) -> int:
    """Scalar node logZ - score(y)."""
    y = [int(v) for v in y]
    if fused:
        return tape.apply("crf_nll", emissions, trans, y=y)
    T, L = tape.value(emissions).shape
    START, STOP = L, L + 1
    # score of the gold path
    terms = [tape.pick(trans, (START, y[0]))]
    for t in range(T):
        terms.append(tape.pick(emissions, (t, y[t])))
        if t:
            terms.append(tape.pick(trans, (y[t - 1], y[t])))
    terms.append(tape.pick(trans, (y[-1], STOP)))
    score = tape.sum(tape.concat(*[tape.reshape(v, (1,)) for v in terms]))
    # forward algorithm
    real = list(range(L))
    from_real = tape.apply("transpose", tape.gather(trans, real))  # (L + 2, L): [to, from]
    pair = tape.apply("transpose", tape.gather(from_real, real))  # (L, L): [from, to]
    stop = tape.pick(from_real, STOP)
    start = tape.gather(tape.pick(trans, START), real)
    alpha = tape.add(start, tape.pick(emissions, 0))
    for t in range(1, T):
        scores = tape.add(tape.reshape(alpha, (L, 1)), pair)
        alpha = tape.add(tape.logsumexp(scores, axis=0), tape.pick(emissions, t))
    log_z = tape.logsumexp(tape.add(alpha, stop))
    return tape.sub(log_z, score)


def _transpose_fwd(vals, attrs):
    return np.ascontiguousarray(vals[0].T), None


register_op("transpose", _transpose_fwd, lambda g, v, o, c, a: [g.T])
