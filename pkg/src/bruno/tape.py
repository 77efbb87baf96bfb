"""Reverse-mode automatic differentiation on a flat record tape.

Nodes are appended in execution order and addressed by dense integer
ids, so the id order is already a topological order.  Each node stores
an opcode, up to two parent ids, a small auxiliary payload, and its
forward data.  Data may be a scalar or a dense vector; matrix products
are recorded as a single node, so graph length scales with the number
of time steps rather than with the square of the layer width.

The public op functions (`exp`, `clamp`, `matvec`, ...) accept either a
`Value` or plain numbers/arrays.  With no `Value` operand they fall
through to the identical numpy expression without recording anything.
Model code can therefore be written once and run both on and off the
tape, and the two paths stay bit-identical because they execute the
same floating-point operations.

Failure policy: any op whose forward result is non-finite raises
`NumericInstabilityError` at record time, and `backward` raises
`GradientExplosionError` carrying the id of the first node (in reverse
sweep order) whose accumulated adjoint is non-finite.  Nothing is ever
silently flushed to zero.
"""

from __future__ import annotations

import math
from array import array

import numpy as np

__all__ = [
    "Tape",
    "Value",
    "Gradients",
    "TapeError",
    "NumericInstabilityError",
    "GradientExplosionError",
    "exp",
    "ln",
    "powf",
    "absval",
    "sign",
    "clamp",
    "vsum",
    "mean_all",
    "pick",
    "matvec",
    "detach",
    "spike_sg",
    "ste",
    "custom_unary",
    "raw",
    "NODE_BYTES",
]

# Accounting constant for reported graph memory: opcode byte, two int32
# parent slots, aux and data references, plus one float64 payload with
# amortised array-object overhead.  Reported peak_bytes is
# node_count * NODE_BYTES, an index of graph size, not process RSS.
NODE_BYTES = 120

(
    _LEAF,
    _ADD,
    _SUB,
    _MUL,
    _DIV,
    _NEG,
    _EXP,
    _LN,
    _POW,
    _ABS,
    _SIGN,
    _CLAMP,
    _SUM,
    _SUMLAST,
    _MEAN,
    _PICK,
    _MATVEC,
    _DETACH,
    _SPIKE,
    _STE,
    _CUSTOM,
) = range(21)

_OP_NAMES = {
    _LEAF: "leaf",
    _ADD: "add",
    _SUB: "sub",
    _MUL: "mul",
    _DIV: "div",
    _NEG: "neg",
    _EXP: "exp",
    _LN: "ln",
    _POW: "pow",
    _ABS: "abs",
    _SIGN: "sign",
    _CLAMP: "clamp",
    _SUM: "sum",
    _SUMLAST: "sum_last",
    _MEAN: "mean",
    _PICK: "pick",
    _MATVEC: "matvec",
    _DETACH: "detach",
    _SPIKE: "spike_sg",
    _STE: "ste",
    _CUSTOM: "custom",
}


class TapeError(RuntimeError):
    """Misuse of the tape API: wrong tape, bad shapes, non-scalar loss."""


class NumericInstabilityError(ArithmeticError):
    """A forward op produced a non-finite result."""


class GradientExplosionError(NumericInstabilityError):
    """An adjoint became non-finite during the reverse sweep.

    `node_id` identifies the first node, in reverse sweep order, whose
    accumulated adjoint failed the finite check.
    """

    def __init__(self, node_id: int, message: str | None = None):
        self.node_id = node_id
        super().__init__(message or f"non-finite adjoint at node {node_id}")


class Value:
    """Handle to one tape node: the owning tape, its id, and forward data."""

    __slots__ = ("tape", "id", "data")

    # make numpy defer mixed ndarray-Value arithmetic to our reflected
    # operators instead of absorbing the Value into an object array
    __array_ufunc__ = None

    def __init__(self, tape: "Tape", node_id: int, data):
        self.tape = tape
        self.id = node_id
        self.data = data

    @property
    def shape(self):
        return np.shape(self.data)

    def __repr__(self):
        return f"Value(id={self.id}, data={self.data!r})"

    def __add__(self, other):
        return _binary(_ADD, self, other)

    def __radd__(self, other):
        return _binary(_ADD, other, self)

    def __sub__(self, other):
        return _binary(_SUB, self, other)

    def __rsub__(self, other):
        return _binary(_SUB, other, self)

    def __mul__(self, other):
        return _binary(_MUL, self, other)

    def __rmul__(self, other):
        return _binary(_MUL, other, self)

    def __truediv__(self, other):
        return _binary(_DIV, self, other)

    def __rtruediv__(self, other):
        return _binary(_DIV, other, self)

    def __neg__(self):
        return self.tape._record(_NEG, self.id, -1, None, np.negative(self.data))

    def __pow__(self, exponent):
        return powf(self, exponent)

    def __abs__(self):
        return absval(self)


class Gradients:
    """Leaf adjoints from one backward sweep, keyed by node id.

    Leaves that the loss does not reach (for example behind a `detach`)
    read back as exact zeros.  Maps from independent sweeps are
    combinable with `add_`, which is how per-shard gradients merge.
    """

    __slots__ = ("_grads",)

    def __init__(self, grads: dict):
        self._grads = grads

    def wrt(self, value: Value):
        g = self._grads.get(value.id)
        if g is not None:
            return g
        if np.ndim(value.data) == 0:
            return np.float64(0.0)
        return np.zeros(np.shape(value.data))

    def add_(self, other: "Gradients") -> "Gradients":
        for k, v in other._grads.items():
            mine = self._grads.get(k)
            self._grads[k] = v if mine is None else mine + v
        return self

    def __contains__(self, value: Value) -> bool:
        return value.id in self._grads

    def __len__(self) -> int:
        return len(self._grads)


class Tape:
    """Flat append-only op record with a destructive reverse sweep.

    `reset()` drops all nodes so one tape object can be reused across
    training steps; outstanding `Value` handles from before the reset
    must not be used again.
    """

    def __init__(self):
        self._op = array("B")
        self._pa = array("i")
        self._pb = array("i")
        self._aux: list = []
        self._data: list = []

    def leaf(self, value) -> Value:
        """Register a parameter scalar or array as a gradient target."""
        if isinstance(value, Value):
            raise TapeError("leaf() takes raw data, not a Value")
        if np.ndim(value) == 0:
            data = np.float64(value)
        else:
            data = np.array(value, dtype=np.float64)
        return self._record(_LEAF, -1, -1, None, data)

    def node_count(self) -> int:
        return len(self._op)

    def reset(self) -> None:
        del self._op[:]
        del self._pa[:]
        del self._pb[:]
        self._aux.clear()
        self._data.clear()

    def _record(self, op: int, pa: int, pb: int, aux, data) -> Value:
        if type(data) is np.ndarray:
            if not np.isfinite(data).all():
                raise NumericInstabilityError(
                    f"non-finite result in op {_OP_NAMES[op]!r} "
                    f"at node {len(self._op)}"
                )
        elif not math.isfinite(data):
            raise NumericInstabilityError(
                f"non-finite result in op {_OP_NAMES[op]!r} "
                f"at node {len(self._op)}"
            )
        node_id = len(self._op)
        self._op.append(op)
        self._pa.append(pa)
        self._pb.append(pb)
        self._aux.append(aux)
        self._data.append(data)
        return Value(self, node_id, data)

    def backward(self, loss: Value) -> Gradients:
        """Reverse sweep from a scalar loss; returns leaf adjoints.

        Adjoint buffers are freed as soon as a node is consumed, which
        is safe because every child has a higher id than its parents.
        """
        if not isinstance(loss, Value) or loss.tape is not self:
            raise TapeError("loss must be a Value recorded on this tape")
        if np.ndim(loss.data) != 0:
            raise TapeError("loss must be scalar")
        ops, pas, pbs = self._op, self._pa, self._pb
        auxs, datas = self._aux, self._data
        adj: list = [None] * (loss.id + 1)
        adj[loss.id] = np.float64(1.0)
        leaf_grads: dict = {}
        with np.errstate(all="ignore"):
            for i in range(loss.id, -1, -1):
                g = adj[i]
                if g is None:
                    continue
                adj[i] = None
                if type(g) is np.ndarray:
                    if not np.isfinite(g).all():
                        raise GradientExplosionError(i)
                elif not math.isfinite(g):
                    raise GradientExplosionError(i)
                op = ops[i]
                if op == _LEAF:
                    leaf_grads[i] = g
                    continue
                pa = pas[i]
                pb = pbs[i]
                ca = cb = None
                if op == _MUL:
                    if pb >= 0 and pa >= 0:
                        ca = g * datas[pb]
                        cb = g * datas[pa]
                    elif pa >= 0:
                        ca = g * auxs[i]
                    else:
                        cb = g * auxs[i]
                elif op == _ADD:
                    ca = g
                    cb = g
                elif op == _SUB:
                    ca = g
                    cb = -g
                elif op == _CUSTOM:
                    vjp, aux = auxs[i]
                    ca = vjp(g, datas[pa], datas[i], aux)
                elif op == _CLAMP:
                    lo, hi = auxs[i]
                    d = datas[pa]
                    ca = g * ((d > lo) & (d < hi))
                elif op == _SIGN or op == _DETACH:
                    pass
                elif op == _MATVEC:
                    wc, xc = auxs[i]
                    wd = datas[pa] if pa >= 0 else wc
                    if pa >= 0:
                        xd = datas[pb] if pb >= 0 else xc
                        if xd.ndim == 1:
                            ca = np.outer(g, xd)
                        else:
                            ca = np.matmul(g.T, xd)
                    if pb >= 0:
                        cb = np.matmul(g, wd)
                elif op == _SPIKE:
                    thr, slope = auxs[i]
                    d = datas[pa]
                    ca = g / (1.0 + slope * np.abs(d - thr)) ** 2
                elif op == _STE:
                    mask = auxs[i]
                    ca = g if mask is None else g * mask
                elif op == _DIV:
                    if pb >= 0:
                        bd = datas[pb]
                        cb = -g * datas[i] / bd
                        if pa >= 0:
                            ca = g / bd
                    else:
                        ca = g / auxs[i]
                elif op == _NEG:
                    ca = -g
                elif op == _EXP:
                    ca = g * datas[i]
                elif op == _LN:
                    ca = g / datas[pa]
                elif op == _POW:
                    p = auxs[i]
                    ca = g * p * datas[pa] ** (p - 1.0)
                elif op == _ABS:
                    ca = g * np.sign(datas[pa])
                elif op == _SUM:
                    ca = np.full(np.shape(datas[pa]), g)
                elif op == _SUMLAST:
                    pshape = np.shape(datas[pa])
                    ca = np.broadcast_to(
                        np.expand_dims(np.asarray(g), -1), pshape
                    ).copy()
                elif op == _MEAN:
                    d = datas[pa]
                    ca = np.full(np.shape(d), g / np.size(d))
                elif op == _PICK:
                    d = datas[pa]
                    z = np.zeros(np.shape(d))
                    idx = auxs[i]
                    if d.ndim == 1:
                        z[idx] = g
                    else:
                        z[np.arange(len(idx)), idx] = g
                    ca = z
                else:
                    raise TapeError(f"no backward rule for op {op}")
                if ca is not None and pa >= 0:
                    a0 = adj[pa]
                    adj[pa] = ca if a0 is None else a0 + ca
                if cb is not None and pb >= 0:
                    b0 = adj[pb]
                    adj[pb] = cb if b0 is None else b0 + cb
        return Gradients(leaf_grads)


_BINOPS = {_ADD: np.add, _SUB: np.subtract, _MUL: np.multiply, _DIV: np.divide}
_SAVE_OTHER = (_MUL, _DIV)


def _copy_const(c):
    # operand values saved for backward are copied so that caller-side
    # buffer reuse cannot corrupt the sweep
    if isinstance(c, np.ndarray):
        return np.array(c, dtype=np.float64)
    return float(c)


def _binary(op, a, b):
    a_on = isinstance(a, Value)
    if a_on and isinstance(b, Value):
        t = a.tape
        if b.tape is not t:
            raise TapeError("operands live on different tapes")
        if a.shape != b.shape:
            raise TapeError(
                f"shape mismatch in {_OP_NAMES[op]}: {a.shape} vs {b.shape}"
            )
        with np.errstate(all="ignore"):
            data = _BINOPS[op](a.data, b.data)
        return t._record(op, a.id, b.id, None, data)
    if a_on:
        v, c, pa_side = a, b, True
    else:
        v, c, pa_side = b, a, False
    with np.errstate(all="ignore"):
        data = _BINOPS[op](a.data if a_on else a, b if a_on else b.data)
    if np.shape(data) != v.shape:
        raise TapeError(
            f"constant operand of {_OP_NAMES[op]} may not broadcast past "
            f"the tape operand shape {v.shape}"
        )
    aux = _copy_const(c) if op in _SAVE_OTHER else None
    if pa_side:
        return v.tape._record(op, v.id, -1, aux, data)
    return v.tape._record(op, -1, v.id, aux, data)


def exp(x):
    if isinstance(x, Value):
        with np.errstate(over="ignore"):
            return x.tape._record(_EXP, x.id, -1, None, np.exp(x.data))
    return np.exp(x)


def ln(x):
    if isinstance(x, Value):
        with np.errstate(divide="ignore", invalid="ignore"):
            return x.tape._record(_LN, x.id, -1, None, np.log(x.data))
    return np.log(x)


def powf(x, exponent):
    """Raise to a constant real exponent."""
    p = float(exponent)
    if isinstance(x, Value):
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            return x.tape._record(_POW, x.id, -1, p, np.power(x.data, p))
    return np.power(x, p)


def absval(x):
    if isinstance(x, Value):
        return x.tape._record(_ABS, x.id, -1, None, np.abs(x.data))
    return np.abs(x)


def sign(x):
    """Elementwise sign with gradient defined as identically zero."""
    if isinstance(x, Value):
        return x.tape._record(_SIGN, x.id, -1, None, np.sign(x.data))
    return np.sign(x)


def clamp(x, lo, hi):
    """Clip to [lo, hi]; gradient is 1 strictly inside the band, 0 at
    and beyond the bounds.

    The boundary convention is deliberate.  For a stiff saturating
    update like x' = clamp(x + (target - x) * r, lo, hi) with r >> 1,
    the state pins exactly at a bound and the raw update's
    linearization 1 - r is a wildly explosive artifact of explicit
    Euler; the continuous flow it approximates has sensitivity
    exp(-r) ~ 0 there.  Treating the bound itself as outside the pass
    band reports the flow's derivative, not the scheme's.
    """
    lo = float(lo)
    hi = float(hi)
    if lo > hi:
        raise TapeError(f"clamp bounds out of order: {lo} > {hi}")
    if isinstance(x, Value):
        return x.tape._record(_CLAMP, x.id, -1, (lo, hi), np.clip(x.data, lo, hi))
    return np.clip(x, lo, hi)


def vsum(x, axis=None):
    """Sum all elements (axis=None) or along the last axis (axis=-1)."""
    if axis not in (None, -1):
        raise TapeError("vsum supports axis=None or axis=-1 only")
    if not isinstance(x, Value):
        return np.sum(x, axis=axis)
    data = np.sum(x.data, axis=axis)
    op = _SUM if axis is None else _SUMLAST
    return x.tape._record(op, x.id, -1, None, data)


def mean_all(x):
    """Mean over all elements."""
    if not isinstance(x, Value):
        return np.mean(x)
    return x.tape._record(_MEAN, x.id, -1, None, np.mean(x.data))


def pick(x, index):
    """Gather along the last axis: one index for 1-D data, a per-row
    index vector for 2-D data."""
    if not isinstance(x, Value):
        d = np.asarray(x)
        if d.ndim == 1:
            return d[int(index)]
        idx = np.asarray(index, dtype=np.int64)
        return d[np.arange(len(idx)), idx]
    d = x.data
    if not isinstance(d, np.ndarray):
        raise TapeError("pick needs vector data")
    if d.ndim == 1:
        i = int(index)
        if not 0 <= i < d.shape[0]:
            raise TapeError(f"pick index {i} out of range for {d.shape}")
        return x.tape._record(_PICK, x.id, -1, i, d[i])
    if d.ndim == 2:
        idx = np.array(index, dtype=np.int64)
        if idx.shape != (d.shape[0],):
            raise TapeError(
                f"pick needs one index per row: got {idx.shape} for {d.shape}"
            )
        if idx.min() < 0 or idx.max() >= d.shape[1]:
            raise TapeError("pick index out of range")
        data = d[np.arange(d.shape[0]), idx]
        return x.tape._record(_PICK, x.id, -1, idx, data)
    raise TapeError("pick supports 1-D or 2-D data")


def matvec(w, x):
    """Product of a weight matrix w (out, in) with x (in,) or a batch of
    rows x (..., in); records one node regardless of matrix size."""
    w_on = isinstance(w, Value)
    x_on = isinstance(x, Value)
    wd = w.data if w_on else np.asarray(w, dtype=np.float64)
    xd = x.data if x_on else np.asarray(x, dtype=np.float64)
    if np.ndim(wd) != 2:
        raise TapeError(f"matvec weight must be 2-D, got shape {np.shape(wd)}")
    if np.ndim(xd) not in (1, 2) or np.shape(xd)[-1] != np.shape(wd)[1]:
        raise TapeError(
            f"matvec shapes incompatible: w {np.shape(wd)}, x {np.shape(xd)}"
        )
    data = np.matmul(xd, wd.T)
    if not (w_on or x_on):
        return data
    if w_on and x_on and w.tape is not x.tape:
        raise TapeError("operands live on different tapes")
    t = w.tape if w_on else x.tape
    aux = (None if w_on else _copy_const(wd), None if x_on else _copy_const(xd))
    return t._record(
        _MATVEC, w.id if w_on else -1, x.id if x_on else -1, aux, data
    )


def detach(x):
    """Forward identity that blocks gradient flow."""
    if not isinstance(x, Value):
        return x
    return x.tape._record(_DETACH, -1, -1, None, x.data)


def spike_sg(v, threshold, slope):
    """Unit spike where v >= threshold, with a fast-sigmoid surrogate.

    Forward is the exact step function.  Backward scales the incoming
    gradient by 1 / (1 + slope * |v - threshold|)**2.
    """
    thr = float(threshold)
    k = float(slope)
    if not isinstance(v, Value):
        return np.where(np.greater_equal(v, thr), 1.0, 0.0)
    data = np.where(np.greater_equal(v.data, thr), 1.0, 0.0)
    return v.tape._record(_SPIKE, v.id, -1, (thr, k), data)


def ste(x, quantized, pass_mask=None):
    """Adopt off-tape data with a straight-through gradient to x.

    Forward takes `quantized` as the node value; backward hands the
    incoming gradient to x unchanged, multiplied by `pass_mask` where
    given (zero entries gate regions a quantiser clamped).
    """
    if not isinstance(x, Value):
        return quantized
    qshape = np.shape(quantized)
    if qshape != x.shape:
        raise TapeError(f"ste data shape {qshape} != input shape {x.shape}")
    if pass_mask is not None:
        if np.shape(pass_mask) != x.shape:
            raise TapeError("ste pass_mask shape mismatch")
        pass_mask = np.array(pass_mask, dtype=np.float64)
    if np.ndim(quantized) == 0:
        qdata = np.float64(quantized)
    else:
        qdata = np.array(quantized, dtype=np.float64)
    return x.tape._record(_STE, x.id, -1, pass_mask, qdata)


def raw(x):
    """Underlying data of a Value; raw inputs pass through unchanged."""
    return x.data if isinstance(x, Value) else x


def custom_unary(x, forward, vjp, aux=None):
    """Record a custom differentiable unary op.

    `forward(x_data, aux)` computes the result; `vjp(g, x_data,
    out_data, aux)` maps the incoming gradient to the operand.  With a
    raw operand the forward function is applied directly.
    """
    if not isinstance(x, Value):
        return forward(x, aux)
    data = forward(x.data, aux)
    return x.tape._record(_CUSTOM, x.id, -1, (vjp, aux), data)
