"""Reverse-mode autodiff on numpy arrays via an append-only tape.

Every op below accepts a mix of ``Var`` and plain ndarray arguments.  When no
``Var`` is present, the op is just numpy (no recording), so model code runs
identically (same calls, same order, same bits) with gradients on or off.
Gradients accumulate additively at fan-out points; the tape is in topological
order by construction, so one reverse sweep suffices.
"""

import numpy as np

from .errors import NonScalarLoss


class Tape:
    """Append-only record of operations; nodes are (parent vars, vjp)."""

    def __init__(self):
        self.nodes = []

    def leaf(self, value):
        return _record(self, np.asarray(value, dtype=np.float64), (), None)

    def __len__(self):
        return len(self.nodes)


class Var:
    __slots__ = ("value", "tape", "idx")

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"


def _record(tape, value, parents, vjp):
    v = Var(np.asarray(value, dtype=np.float64), tape, len(tape.nodes))
    tape.nodes.append((parents, vjp))
    return v


def val(x):
    """Underlying ndarray of a Var, or the array itself."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Gradients:
    def __init__(self, table):
        self._table = table

    def wrt(self, var):
        g = self._table[var.idx]
        if g is None:
            return np.zeros_like(var.value)
        return g


def backward(tape, loss):
    """Reverse sweep from a scalar loss; returns gradients for every Var."""
    if not isinstance(loss, Var):
        raise NonScalarLoss("loss is not on the tape")
    if loss.value.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.value.shape}, expected a scalar")
    table = [None] * len(tape.nodes)
    table[loss.idx] = np.ones_like(loss.value)
    for idx in range(loss.idx, -1, -1):
        g = table[idx]
        if g is None:
            continue
        parents, vjp = tape.nodes[idx]
        if vjp is None:
            continue
        for parent, pg in zip(parents, vjp(g)):
            if table[parent.idx] is None:
                table[parent.idx] = pg.copy()
            else:
                table[parent.idx] = table[parent.idx] + pg
    return Gradients(table)


# ---------------------------------------------------------------------------
# ops


def add(a, b):
    tape = _tape_of(a, b)
    out = val(a) + val(b)
    if tape is None:
        return out
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: _unbroadcast(g, a.value.shape))
    if isinstance(b, Var):
        parents.append(b)
        grads.append(lambda g: _unbroadcast(g, b.value.shape))
    return _record(tape, out, tuple(parents), lambda g: tuple(f(g) for f in grads))


def sub(a, b):
    return add(a, scale(b, -1.0))


def mul(a, b):
    """Elementwise multiply with numpy broadcasting."""
    tape = _tape_of(a, b)
    av, bv = val(a), val(b)
    out = av * bv
    if tape is None:
        return out
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: _unbroadcast(g * bv, av.shape))
    if isinstance(b, Var):
        parents.append(b)
        grads.append(lambda g: _unbroadcast(g * av, bv.shape))
    return _record(tape, out, tuple(parents), lambda g: tuple(f(g) for f in grads))


def scale(x, c):
    """Hadamard product with a constant (scalar or array); c carries no gradient."""
    c = np.asarray(c, dtype=np.float64)
    if not isinstance(x, Var):
        return val(x) * c
    out = x.value * c
    return _record(x.tape, out, (x,), lambda g: (_unbroadcast(g * c, x.value.shape),))


def matmul(a, b):
    """Matrix product for operands with ndim >= 2 (batch dims broadcast)."""
    tape = _tape_of(a, b)
    av, bv = val(a), val(b)
    out = av @ bv
    if tape is None:
        return out
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape))
    if isinstance(b, Var):
        parents.append(b)
        grads.append(lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape))
    return _record(tape, out, tuple(parents), lambda g: tuple(f(g) for f in grads))


def graph_shift(s, x):
    """Diffusion by a constant shift operator: S @ x along the node axis."""
    s = np.asarray(s, dtype=np.float64)
    if not isinstance(x, Var):
        return s @ val(x)
    out = s @ x.value
    st = s.T
    return _record(x.tape, out, (x,), lambda g: (st @ g,))


def dot(a, b):
    """Inner product of 1-d vectors."""
    tape = _tape_of(a, b)
    av, bv = val(a), val(b)
    out = av @ bv
    if tape is None:
        return out
    parents, grads = [], []
    if isinstance(a, Var):
        parents.append(a)
        grads.append(lambda g: g * bv)
    if isinstance(b, Var):
        parents.append(b)
        grads.append(lambda g: g * av)
    return _record(tape, out, tuple(parents), lambda g: tuple(f(g) for f in grads))


def tanh(x):
    if not isinstance(x, Var):
        return np.tanh(val(x))
    y = np.tanh(x.value)
    return _record(x.tape, y, (x,), lambda g: ((1.0 - y * y) * g,))


def sigmoid(x):
    def _sig(v):
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        ev = np.exp(v[~pos])
        out[~pos] = ev / (1.0 + ev)
        return out

    if not isinstance(x, Var):
        return _sig(val(x))
    y = _sig(x.value)
    return _record(x.tape, y, (x,), lambda g: (y * (1.0 - y) * g,))


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(val(x), 0.0)
    y = np.maximum(x.value, 0.0)
    mask = (x.value > 0).astype(np.float64)
    return _record(x.tape, y, (x,), lambda g: (mask * g,))


def identity(x):
    return x


def reshape(x, shape):
    if not isinstance(x, Var):
        return val(x).reshape(shape)
    orig = x.value.shape
    return _record(x.tape, x.value.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def transpose(x, axes):
    if not isinstance(x, Var):
        return val(x).transpose(axes)
    inv = np.argsort(axes)
    return _record(x.tape, x.value.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x):
    """Swap the last two axes (batched matrix transpose)."""
    nd = np.ndim(val(x))
    axes = list(range(nd))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


def vec_cm(x):
    """Column-major vectorization of the trailing (n, H) axes (node-fastest).

    (n, H) -> (n*H,);  (B, n, H) -> (B, n*H).  Entry (i, h) lands at h*n + i.
    """
    v = val(x)
    if v.ndim == 2:
        n, h = v.shape
        if not isinstance(x, Var):
            return v.T.reshape(n * h)
        out = x.value.T.reshape(n * h)
        return _record(x.tape, out, (x,), lambda g: (g.reshape(h, n).T,))
    if v.ndim == 3:
        b, n, h = v.shape
        if not isinstance(x, Var):
            return v.transpose(0, 2, 1).reshape(b, n * h)
        out = x.value.transpose(0, 2, 1).reshape(b, n * h)
        return _record(x.tape, out, (x,), lambda g: (g.reshape(b, h, n).transpose(0, 2, 1),))
    raise ValueError("vec_cm expects a 2-d or 3-d array")


def concat(xs, axis=0):
    tape = _tape_of(*xs)
    vals = [val(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    sizes = [v.shape[axis] for v in vals]
    offsets = np.cumsum([0] + sizes)
    parents, slots = [], []
    for k, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append(x)
            slots.append(k)

    def vjp(g):
        pieces = []
        for k in slots:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[k], offsets[k + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _record(tape, out, tuple(parents), vjp)


def slice_axis0(x, start, stop):
    """x[start:stop] along axis 0; gradient zero-pads back."""
    if not isinstance(x, Var):
        return val(x)[start:stop]
    out = x.value[start:stop]
    full = x.value.shape

    def vjp(g):
        pad = np.zeros(full)
        pad[start:stop] = g
        return (pad,)

    return _record(x.tape, out, (x,), vjp)


def softmax(x, axis=-1):
    def _sm(v):
        shifted = v - v.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=axis, keepdims=True)

    if not isinstance(x, Var):
        return _sm(val(x))
    y = _sm(x.value)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _record(x.tape, y, (x,), vjp)


def abs_(x):
    if not isinstance(x, Var):
        return np.abs(val(x))
    y = np.abs(x.value)
    sgn = np.sign(x.value)
    return _record(x.tape, y, (x,), lambda g: (sgn * g,))


def log(x):
    if not isinstance(x, Var):
        return np.log(val(x))
    y = np.log(x.value)
    xv = x.value
    return _record(x.tape, y, (x,), lambda g: (g / xv,))


def sum_(x, axis=None):
    if not isinstance(x, Var):
        return val(x).sum(axis=axis)
    out = x.value.sum(axis=axis)
    shape = x.value.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(np.float64),)
        gg = np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(np.float64),)

    return _record(x.tape, out, (x,), vjp)


def mean(x, axis=None):
    size = val(x).size if axis is None else val(x).shape[axis]
    return scale(sum_(x, axis=axis), 1.0 / size)


def bank_contract(shifted, bank):
    """sum_k shifted[k] @ bank[k], accumulated left to right.

    shifted: K arrays/Vars of shape (..., n, F_in); bank: (K, F_in, F_out).
    One tape node covers the whole tap contraction, keeping BPTT tapes short.
    """
    bankv = val(bank)
    k_order = bankv.shape[0]
    if len(shifted) != k_order:
        raise ValueError(f"{len(shifted)} shifted signals for a bank of order {k_order}")
    xs = [val(x) for x in shifted]
    out = xs[0] @ bankv[0]
    for k in range(1, k_order):
        out = out + xs[k] @ bankv[k]
    tape = _tape_of(bank, *shifted)
    if tape is None:
        return out
    parents, plans = [], []
    for k, x in enumerate(shifted):
        if isinstance(x, Var):
            parents.append(x)
            plans.append(("x", k))
    if isinstance(bank, Var):
        parents.append(bank)
        plans.append(("bank", None))

    def vjp(g):
        grads = []
        for kind, k in plans:
            if kind == "x":
                grads.append(g @ bankv[k].T)
            else:
                gb = np.empty_like(bankv)
                for kk in range(k_order):
                    gk = np.swapaxes(xs[kk], -1, -2) @ g
                    gb[kk] = _unbroadcast(gk, bankv[kk].shape)
                grads.append(gb)
        return tuple(grads)

    return _record(tape, out, tuple(parents), vjp)


NONLINEARITIES = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "identity": identity,
}


def apply_nonlinearity(tag, x):
    if tag in NONLINEARITIES:
        return NONLINEARITIES[tag](x)
    if tag == "softmax":
        return softmax(x, axis=-1)
    raise ValueError(f"unknown nonlinearity tag {tag!r}")
