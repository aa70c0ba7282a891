"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape`. Outside
a tape every op is a plain forward computation (inference mode); the numeric
code path is the same either way, so forward values do not depend on whether
gradients are being tracked.

    with Tape():
        loss = mse(matmul(x, w), y, mask)
        backward(loss)
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError, SchemaError, ShapeError

_ACTIVE: list[Tape] = []


class Tape:
    """Append-only record of differentiable operations, in execution order."""

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def record(self, op, inputs, backward_fn):
        self.nodes.append((op, inputs, backward_fn))
        return len(self.nodes) - 1


def active_tape():
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape_node", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.tape_node = None  # (tape, index) once produced by a recorded op
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracks(t):
    return t.requires_grad or t.tape_node is not None


def _result(op, out, inputs, backward_fn):
    """Wrap a forward value and, under a tape, record how to differentiate it."""
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op}: non-finite value in forward result")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t.requires_grad = False
    t.tape_node = None
    tape = active_tape()
    if tape is not None and any(_tracks(x) for x in inputs):
        t.tape_node = (tape, tape.record(op, inputs, backward_fn))
    return t


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- core ops -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


elementwise_mul = mul


def scale(a, c):
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    if a.ndim > 2 or b.ndim > 2:
        raise ShapeError(f"matmul: only vectors and matrices, got {a.shape} and {b.shape}")

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise InputError("concat: empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors,
                   lambda g: tuple(np.split(g, bounds, axis=ax)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: mismatched shapes {sorted(shapes)}")
    return _result("stack", np.stack([t.data for t in tensors], axis=axis), tensors,
                   lambda g: tuple(np.moveaxis(g, axis, 0)))


def slice_(a, key):
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _result("slice", a.data[key], (a,), backward)


def gather_rows(a, index):
    """``a[index]`` along the first axis; ``index`` may have any shape."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < -len(a.data) or index.max() >= len(a.data)):
        raise ShapeError(f"gather_rows: index out of range for {len(a.data)} rows")

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result("gather_rows", a.data[index], (a,), backward)


def scatter_add(a, index, num_rows):
    """Sum rows of ``a`` into ``num_rows`` buckets: ``out[index[i]] += a[i]``."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape != a.shape[:1]:
        raise ShapeError(f"scatter_add: index shape {index.shape} vs rows {a.shape[:1]}")
    out = np.zeros((num_rows,) + a.shape[1:])
    np.add.at(out, index, a.data)
    return _result("scatter_add", out, (a,), lambda g: (g[index],))


def sum_(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape):
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inverse = None if axes is None else np.argsort(axes)
    return _result("transpose", out, (a,), lambda g: (np.transpose(g, inverse),))


# --- nonlinearities -------------------------------------------------------

def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    pos = x.data > 0
    return _result("leaky_relu", np.where(pos, x.data, slope * x.data), (x,),
                   lambda g: (np.where(pos, g, slope * g),))


def relu(x):
    return leaky_relu(x, 0.0)


def elu(x):
    x = as_tensor(x)
    pos = x.data > 0
    neg = np.expm1(np.minimum(x.data, 0.0))
    return _result("elu", np.where(pos, x.data, neg), (x,),
                   lambda g: (np.where(pos, g, g * (neg + 1.0)),))


def _sigmoid(z):
    # branch-free stable logistic
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _result("exp", e, (x,), lambda g: (g * e,))


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _result("log", out, (x,), lambda g: (g / x.data,))


def _softmax_np(z, axis, mask):
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x, axis=-1, mask=None):
    """Max-shifted softmax. Entries where ``mask`` is False get weight exactly 0."""
    x = as_tensor(x)
    if x.data.size == 0 or x.shape[axis] == 0:
        raise InputError("softmax of an empty vector")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=axis)):
            raise InputError("softmax: a slice is fully masked")
    s = _softmax_np(x.data, axis, mask)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (x,), backward)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)
    return _result("where", np.where(cond, a.data, b.data), (a, b),
                   lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                              _unbroadcast(np.where(cond, 0.0, g), b.shape)))


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when ``training`` is False or ``rate`` is 0."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# --- fused recurrent op ----------------------------------------------------

def lstm_sequence(x, mask, weight, bias, reverse=False):
    """Run an LSTM over a zero-padded batch of sequences and return final states.

    Args:
        x: ``(T, B, d_in)`` inputs.
        mask: ``(T, B)`` booleans; False steps leave the state untouched.
        weight: ``(d_in + d_h, 4 * d_h)`` acting on ``[x_t, h_{t-1}]``; column
            blocks are the input, forget, output and candidate gates.
        bias: ``(4 * d_h,)``.
        reverse: walk the time axis from the end.

    Returns:
        ``(B, d_h)`` hidden state after the last unmasked step (zeros when a
        sequence is fully masked).
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    mask = np.asarray(mask, dtype=bool)
    T, B, d_in = x.shape
    if mask.shape != (T, B):
        raise ShapeError(f"lstm_sequence: mask shape {mask.shape}, expected {(T, B)}")
    d_h = weight.shape[1] // 4
    if weight.shape != (d_in + d_h, 4 * d_h) or bias.shape != (4 * d_h,):
        raise ShapeError(f"lstm_sequence: weight {weight.shape} / bias {bias.shape} "
                         f"incompatible with input width {d_in}")
    W, b = weight.data, bias.data
    h = np.zeros((B, d_h))
    c = np.zeros((B, d_h))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    saved = []
    for t in steps:
        xh = np.concatenate([x.data[t], h], axis=1)
        z = xh @ W + b
        ifo = _sigmoid(z[:, :3 * d_h])
        i, f, o = ifo[:, :d_h], ifo[:, d_h:2 * d_h], ifo[:, 2 * d_h:]
        gc = np.tanh(z[:, 3 * d_h:])
        c_new = f * c + i * gc
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[t][:, None]
        saved.append((t, xh, i, f, o, gc, c, tc, m))
        c = np.where(m, c_new, c)
        h = np.where(m, h_new, h)

    def backward(g):
        dx = np.zeros_like(x.data)
        dW = np.zeros_like(W)
        db = np.zeros_like(b)
        dh = g.copy()
        dc = np.zeros((B, d_h))
        for t, xh, i, f, o, gc, c_prev, tc, m in reversed(saved):
            dh_new = np.where(m, dh, 0.0)
            dc_new = np.where(m, dc, 0.0) + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([
                dc_new * gc * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dh_new * tc * o * (1.0 - o),
                dc_new * i * (1.0 - gc * gc),
            ], axis=1)
            dW += xh.T @ dz
            db += dz.sum(axis=0)
            dxh = dz @ W.T
            dx[t] = dxh[:, :d_in]
            dh = dxh[:, d_in:] + np.where(m, 0.0, dh)
            dc = dc_new * f + np.where(m, 0.0, dc)
        return dx, dW, db

    return _result("lstm_sequence", h, (x, weight, bias), backward)


# --- losses ---------------------------------------------------------------

def _check_mask(mask, n):
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise ShapeError(f"mask shape {mask.shape}, expected ({n},)")
    if not mask.any():
        raise InputError("loss mask selects no nodes")
    return mask


def mse(pred, target, mask=None):
    """Mean squared error over masked rows; ``pred`` may be ``(N,)`` or ``(N, 1)``."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    flat = pred.data.reshape(len(pred.data), -1)
    if flat.shape[1] != 1 or target.shape != (len(flat),):
        raise ShapeError(f"mse: prediction {pred.shape} vs target {target.shape}")
    mask = _check_mask(np.ones(len(flat), bool) if mask is None else mask, len(flat))
    diff = np.where(mask, flat[:, 0] - target, 0.0)
    count = mask.sum()
    value = np.asarray((diff * diff).sum() / count)
    return _result("mse", value, (pred,),
                   lambda g: ((2.0 * g / count * diff).reshape(pred.shape),))


def cross_entropy(logits, labels, mask=None):
    """Mean softmax cross-entropy over masked rows (log-sum-exp stabilized)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    mask = _check_mask(np.ones(n, bool) if mask is None else mask, n)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.flatnonzero(mask)
    count = len(rows)
    value = np.asarray((logsum[rows] - z[rows, labels[rows]]).sum() / count)

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(n), labels] -= 1.0
        p[~mask] = 0.0
        return (p * (g / count),)

    return _result("cross_entropy", value, (logits,), backward)


# --- differentiation ------------------------------------------------------

def backward(loss, params=()):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked leaf reachable from loss.

    Tensors listed in ``params`` get a zeroed gradient first, so unreachable
    parameters end up with an explicit zero rather than ``None``.
    """
    for p in params:
        p.zero_grad()
    if loss.data.shape not in ((), (1,)):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape_node is None:
        return
    tape, top = loss.tape_node
    grads = {top: np.ones_like(loss.data)}
    for idx in range(top, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        _, inputs, fn = tape.nodes[idx]
        for inp, gi in zip(inputs, fn(g)):
            if inp.tape_node is not None and inp.tape_node[0] is tape:
                j = inp.tape_node[1]
                grads[j] = grads[j] + gi if j in grads else gi
            elif inp.requires_grad:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad = inp.grad + gi


def grad_check(f, inputs, eps=1e-5, max_coords=None, rng=None):
    """Largest relative gap between tape gradients and central differences.

    ``f`` maps the list ``inputs`` (leaf tensors) to a scalar tensor. With
    ``max_coords`` set, that many coordinates per input are sampled using
    ``rng`` (a numpy Generator) instead of checking them all.
    """
    for t in inputs:
        t.requires_grad = True
    with Tape():
        loss = f(inputs)
        backward(loss, params=inputs)
    analytic = [t.grad.copy() for t in inputs]
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, max_coords, replace=False)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            up = f(inputs).item()
            flat[k] = orig - eps
            down = f(inputs).item()
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            a = ga.reshape(-1)[k]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst


# --- checkpoints ----------------------------------------------------------

def params_to_json(params):
    """``name -> {shape, data}``; values may be tensors or plain arrays."""
    out = {}
    for name, t in params.items():
        arr = np.asarray(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
        out[name] = {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
    return out


def params_from_json(doc):
    out = {}
    for name, entry in doc.items():
        if not isinstance(entry, dict) or "shape" not in entry or "data" not in entry:
            raise SchemaError(f"params.{name}", "expected {shape, data}")
        data = np.asarray(entry["data"], dtype=np.float64)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape)):
            raise SchemaError(f"params.{name}", f"{data.size} values for shape {shape}")
        out[name] = data.reshape(shape)
    return out


def save_checkpoint(params, path, **extra):
    doc = {"schema_version": 1, **extra, "params": params_to_json(params)}
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n")


def load_checkpoint(path):
    """Returns ``(arrays, document)``; ``document`` keeps any extra keys."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"not valid JSON: {exc}") from None
    if "params" not in doc:
        raise SchemaError("params", "missing field")
    return params_from_json(doc["params"]), doc
