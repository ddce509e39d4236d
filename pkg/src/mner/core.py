"""Dense float64 arithmetic with a reverse-mode tape and gradient checking."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

DTYPE = np.float64


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

class ParameterStore:
    """Named float64 tensors with fixed shapes.

    Values may be updated in place by an optimizer; shapes and names never
    change once created.
    """

    def __init__(self, entries: Mapping[str, np.ndarray] | None = None, seed: int = 0):
        self.seed = int(seed)
        self._entries: dict[str, np.ndarray] = {}
        for name, value in (entries or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=DTYPE, order="C")
        if arr.size == 0:
            raise ValueError(f"parameter {name!r} has zero-sized shape {arr.shape}")
        self._entries[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._entries.items()}

    def n_scalars(self) -> int:
        return sum(v.size for v in self._entries.values())

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._entries.items()}, seed=self.seed)

    def merge(self, other: "ParameterStore") -> "ParameterStore":
        out = self.copy()
        for k, v in other.items():
            out.add(k, v)
        return out

    def assign(self, name: str, value) -> None:
        """Overwrite a tensor's contents; the shape must not change."""
        cur = self._entries[name]
        value = np.asarray(value, dtype=DTYPE)
        if value.shape != cur.shape:
            raise ValueError(f"{name}: shape {value.shape} does not match {cur.shape}")
        cur[...] = value

    def equals(self, other: "ParameterStore") -> bool:
        """Bit-exact comparison of names, shapes, and values."""
        if self.names() != other.names():
            return False
        return all(
            self[k].shape == other[k].shape and self[k].tobytes() == other[k].tobytes()
            for k in self._entries
        )


def _name_rng(seed: int, name: str) -> np.random.Generator:
    # per-name streams keep each tensor independent of insertion order
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


def init_parameters(shapes, scheme="uniform", seed: int = 0, radius: float = 0.1) -> ParameterStore:
    """Create a ParameterStore.

    ``shapes`` is a mapping or an iterable of (name, shape) pairs.  ``scheme``
    is ``"zeros"``, ``"uniform"`` (U(-radius, radius)) or
    ``"scaled-uniform"`` (Glorot: radius = sqrt(6 / (fan_in + fan_out))).
    """
    pairs = list(shapes.items()) if isinstance(shapes, Mapping) else list(shapes)
    if not pairs:
        raise ValueError("no shapes given")
    if scheme in ("uniform", "scaled-uniform") and not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    store = ParameterStore(seed=seed)
    seen = set()
    for name, shape in pairs:
        if name in seen:
            raise ValueError(f"duplicate parameter name {name!r}")
        seen.add(name)
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if any(s <= 0 for s in shape):
            raise ValueError(f"parameter {name!r} has zero-sized shape {shape}")
        if scheme == "zeros":
            value = np.zeros(shape)
        elif scheme == "uniform":
            value = _name_rng(seed, name).uniform(-radius, radius, size=shape)
        elif scheme == "scaled-uniform":
            fan_out = shape[0]
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else 1
            r = np.sqrt(6.0 / (fan_in + fan_out))
            value = _name_rng(seed, name).uniform(-r, r, size=shape)
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        store.add(name, value)
    return store


# --------------------------------------------------------------------------
# plain numeric helpers
# --------------------------------------------------------------------------

def sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(a, dtype=DTYPE)))


def logsumexp(x, axis=None):
    x = np.asarray(x, dtype=DTYPE)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def softmax(scores, axis=-1):
    """Max-shifted softmax; shift-invariant and overflow-free."""
    s = np.asarray(scores, dtype=DTYPE)
    if s.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(s - np.max(s, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

@dataclass
class Op:
    """A differentiable primitive.

    ``forward(values, attrs) -> (out, cache)`` and
    ``backward(grad, values, out, cache, attrs) -> sequence of input grads``
    (``None`` for inputs that receive no gradient).
    """

    name: str
    forward: Callable
    backward: Callable


OPS: dict[str, Op] = {}


def register_op(name: str, forward: Callable, backward: Callable) -> None:
    OPS[name] = Op(name, forward, backward)


@dataclass
class Node:
    op: str  # "const", "param", or a registered op name
    inputs: tuple[int, ...]
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    cache: object = None
    name: str | None = None


class Tape:
    """Ordered record of primitive applications.

    Node ids are list positions, so inputs always precede their consumers.
    """

    def __init__(self, check_finite: bool = True):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self.check_finite = check_finite

    def __len__(self):
        return len(self.nodes)

    def _push(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def const(self, value) -> int:
        return self._push(Node("const", (), np.asarray(value, dtype=DTYPE)))

    def param(self, name: str, value) -> int:
        """Register a trainable leaf; the same name always maps to one node."""
        if name in self.params:
            return self.params[name]
        nid = self._push(Node("param", (), np.asarray(value, dtype=DTYPE), name=name))
        self.params[name] = nid
        return nid

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def apply(self, op: str, *inputs: int, **attrs) -> int:
        try:
            spec = OPS[op]
        except KeyError:
            raise ValueError(f"unknown primitive {op!r}") from None
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{op}: input node {i} is not on this tape")
        vals = [self.nodes[i].value for i in inputs]
        out, cache = spec.forward(vals, attrs)
        out = np.asarray(out, dtype=DTYPE)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise FloatingPointError(f"{op} produced a non-finite value")
        return self._push(Node(op, tuple(inputs), out, attrs, cache))

    # sugar for the common primitives
    def affine(self, x, w, b=None):
        return self.apply("affine", x, w) if b is None else self.apply("affine", x, w, b)

    def sigmoid(self, x):
        return self.apply("sigmoid", x)

    def tanh(self, x):
        return self.apply("tanh", x)

    def mul(self, a, b):
        return self.apply("mul", a, b)

    def add(self, a, b):
        return self.apply("add", a, b)

    def sub(self, a, b):
        return self.apply("sub", a, b)

    def concat(self, *xs, axis=-1):
        return self.apply("concat", *xs, axis=axis)

    def sum(self, x, axis=None):
        return self.apply("sum", x, axis=axis)

    def logsumexp(self, x, axis=None):
        return self.apply("logsumexp", x, axis=axis)

    def softmax(self, x, axis=-1):
        return self.apply("softmax", x, axis=axis)

    def pick(self, x, index):
        return self.apply("pick", x, index=index)

    def gather(self, x, indices):
        return self.apply("gather", x, indices=np.asarray(indices, dtype=np.int64))

    def reshape(self, x, shape):
        return self.apply("reshape", x, shape=tuple(shape))

    def backward(self, loss: int) -> dict[str, np.ndarray]:
        return tape_backward(self, loss)

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from the leaves without touching the cache."""
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.op in ("const", "param"):
                vals.append(node.value)
            else:
                out, _ = OPS[node.op].forward([vals[i] for i in node.inputs], node.attrs)
                vals.append(np.asarray(out, dtype=DTYPE))
        return vals


def tape_forward(tape: Tape, primitive: str, inputs: Iterable[int], **attrs) -> int:
    return tape.apply(primitive, *inputs, **attrs)


def tape_backward(tape: Tape, loss: int) -> dict[str, np.ndarray]:
    """dLoss/dParam for every parameter leaf registered on ``tape``."""
    lv = tape.nodes[loss].value
    if lv.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {lv.shape}")
    grads: list[np.ndarray | None] = [None] * (loss + 1)
    grads[loss] = np.ones_like(lv)
    for nid in range(loss, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = tape.nodes[nid]
        if node.op in ("const", "param"):
            continue
        vals = [tape.nodes[i].value for i in node.inputs]
        in_grads = OPS[node.op].backward(g, vals, node.value, node.cache, node.attrs)
        for i, gi in zip(node.inputs, in_grads):
            if gi is None:
                continue
            if grads[i] is None:
                grads[i] = np.array(gi, dtype=DTYPE)
            else:
                grads[i] = grads[i] + gi
        grads[nid] = None
    out = {}
    for name, nid in tape.params.items():
        g = grads[nid] if nid <= loss else None
        out[name] = np.zeros_like(tape.nodes[nid].value) if g is None else g.reshape(tape.nodes[nid].value.shape)
    return out


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _affine_fwd(vals, attrs):
    x, w = vals[0], vals[1]
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ValueError(f"affine: input shape {x.shape} incompatible with weight shape {w.shape}")
    out = x @ w.T
    if len(vals) == 3:
        b = vals[2]
        if b.shape != (w.shape[0],):
            raise ValueError(f"affine: bias shape {b.shape} incompatible with weight shape {w.shape}")
        out = out + b
    return out, None


def _affine_bwd(g, vals, out, cache, attrs):
    x, w = vals[0], vals[1]
    dx = g @ w
    dw = np.outer(g, x) if x.ndim == 1 else g.T @ x
    res = [dx, dw]
    if len(vals) == 3:
        res.append(g if g.ndim == 1 else g.sum(axis=0))
    return res


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _add_fwd(vals, attrs):
    _broadcast_shape("add", *vals)
    return vals[0] + vals[1], None


def _add_bwd(g, vals, out, cache, attrs):
    return [_unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)]


def _sub_fwd(vals, attrs):
    _broadcast_shape("sub", *vals)
    return vals[0] - vals[1], None


def _sub_bwd(g, vals, out, cache, attrs):
    return [_unbroadcast(g, vals[0].shape), _unbroadcast(-g, vals[1].shape)]


def _mul_fwd(vals, attrs):
    _broadcast_shape("elementwise-mul", *vals)
    return vals[0] * vals[1], None


def _mul_bwd(g, vals, out, cache, attrs):
    a, b = vals
    return [_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)]


def _concat_fwd(vals, attrs):
    axis = attrs.get("axis", -1)
    ref = vals[0]
    for v in vals[1:]:
        if v.ndim != ref.ndim or any(
            a != b for k, (a, b) in enumerate(zip(v.shape, ref.shape)) if k != axis % ref.ndim
        ):
            raise ValueError(f"concat: shapes {ref.shape} and {v.shape} do not conform on axis {axis}")
    return np.concatenate(vals, axis=axis), None


def _concat_bwd(g, vals, out, cache, attrs):
    axis = attrs.get("axis", -1)
    cuts = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return np.split(g, cuts, axis=axis)


def _sum_fwd(vals, attrs):
    return np.sum(vals[0], axis=attrs.get("axis")), None


def _sum_bwd(g, vals, out, cache, attrs):
    x = vals[0]
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [np.broadcast_to(g, x.shape).copy()]


def _lse_fwd(vals, attrs):
    x = vals[0]
    if x.size == 0:
        raise ValueError("logsumexp: empty input")
    axis = attrs.get("axis")
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.log(s) + m
    p = e / s
    out = out.reshape(()) if axis is None else np.squeeze(out, axis=axis)
    return out, p


def _lse_bwd(g, vals, out, p, attrs):
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [g * p]


def _softmax_fwd(vals, attrs):
    return softmax(vals[0], axis=attrs.get("axis", -1)), None


def _softmax_bwd(g, vals, out, cache, attrs):
    axis = attrs.get("axis", -1)
    return [out * (g - np.sum(g * out, axis=axis, keepdims=True))]


def _pick_fwd(vals, attrs):
    x = vals[0]
    idx = attrs["index"]
    try:
        return np.array(x[idx]), None
    except IndexError:
        raise ValueError(f"pick-index: index {idx} out of range for shape {x.shape}") from None


def _pick_bwd(g, vals, out, cache, attrs):
    dx = np.zeros_like(vals[0])
    dx[attrs["index"]] += g
    return [dx]


def _gather_fwd(vals, attrs):
    x = vals[0]
    idx = attrs["indices"]
    if idx.size and (idx.min() < -x.shape[0] or idx.max() >= x.shape[0]):
        raise ValueError(f"gather: indices out of range for shape {x.shape}")
    return x[idx], None


def _gather_bwd(g, vals, out, cache, attrs):
    dx = np.zeros_like(vals[0])
    np.add.at(dx, attrs["indices"], g)
    return [dx]


def _reshape_fwd(vals, attrs):
    x = vals[0]
    try:
        return x.reshape(attrs["shape"]), None
    except ValueError:
        raise ValueError(f"reshape: cannot view {x.shape} as {attrs['shape']}") from None


def _reshape_bwd(g, vals, out, cache, attrs):
    return [g.reshape(vals[0].shape)]


def _sigmoid_bwd(g, vals, out, cache, attrs):
    return [g * out * (1.0 - out)]


def _tanh_bwd(g, vals, out, cache, attrs):
    return [g * (1.0 - out * out)]


register_op("affine", _affine_fwd, _affine_bwd)
register_op("sigmoid", lambda v, a: (sigmoid(v[0]), None), _sigmoid_bwd)
register_op("tanh", lambda v, a: (np.tanh(v[0]), None), _tanh_bwd)
register_op("mul", _mul_fwd, _mul_bwd)
register_op("add", _add_fwd, _add_bwd)
register_op("sub", _sub_fwd, _sub_bwd)
register_op("concat", _concat_fwd, _concat_bwd)
register_op("sum", _sum_fwd, _sum_bwd)
register_op("logsumexp", _lse_fwd, _lse_bwd)
register_op("softmax", _softmax_fwd, _softmax_bwd)
register_op("pick", _pick_fwd, _pick_bwd)
register_op("gather", _gather_fwd, _gather_bwd)
register_op("reshape", _reshape_fwd, _reshape_bwd)
OPS["elementwise-mul"] = OPS["mul"]
OPS["pick-index"] = OPS["pick"]


# --------------------------------------------------------------------------
# gradient verification
# --------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    offending: str | None  # "name[index]" of the worst scalar
    passed: bool
    n_checked: int
    per_parameter: dict[str, float]

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"max_rel_error={self.max_rel_error:.3e} worst={self.offending} "
                f"checked={self.n_checked} {verdict}")


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def finite_difference_check(loss_fn, store: ParameterStore, h: float = 1e-5, tol: float = 1e-4,
                            names: Iterable[str] | None = None,
                            value_fn=None, atol: float = 0.0) -> GradCheckReport:
    """Compare analytic gradients with central differences, scalar by scalar.

    ``loss_fn(store)`` must return ``(loss, grads)`` where ``grads`` maps
    parameter names to arrays (missing names count as zero gradient).
    ``value_fn(store)``, if given, returns the loss alone and is used for
    the perturbed evaluations.  Scalars whose absolute disagreement is at
    most ``atol`` are treated as agreeing; with the default 0 only the
    relative error counts.
    """
    value_fn = value_fn or (lambda s: loss_fn(s)[0])
    if not h > 0:
        raise ValueError("step h must be positive")
    base, grads = loss_fn(store)
    again, _ = loss_fn(store)
    if float(base) != float(again):
        raise ValueError("loss function is not deterministic")
    worst, worst_at = 0.0, None
    per = {}
    count = 0
    for name in (names if names is not None else store.names()):
        arr = store[name]
        analytic = np.asarray(grads.get(name, np.zeros_like(arr)))
        flat = arr.reshape(-1)
        a_flat = analytic.reshape(-1)
        pworst = 0.0
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            lp = float(value_fn(store))
            flat[k] = orig - h
            lm = float(value_fn(store))
            flat[k] = orig
            num = (lp - lm) / (2.0 * h)
            err = float(relative_error(a_flat[k], num))
            if abs(a_flat[k] - num) <= atol:
                err = 0.0
            count += 1
            pworst = max(pworst, err)
            if worst_at is None or err > worst:
                worst = err
                worst_at = f"{name}{[int(i) for i in np.unravel_index(k, arr.shape)]}"
        per[name] = pworst
    return GradCheckReport(worst, worst_at, worst < tol, count, per)
