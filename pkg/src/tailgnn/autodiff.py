"""Reverse-mode autodiff over dense float64 tensors.

A Tape records operations in append order; backward() walks the record
in reverse, accumulating vector-Jacobian products. Tensors without a
tape are constants and receive no gradient. Broadcasting is deliberately
restricted: binary ops require equal shapes or a scalar operand, and
broadcasting against *constants* goes through mul_const.
"""

import numpy as np

from tailgnn import kernels
from tailgnn.errors import (
    AxisOutOfRange,
    DetachedTensor,
    EvenKernel,
    NotScalar,
    ShapeMismatch,
)


class Tensor:
    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data, tape=None, node_id=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        kind = "leaf" if self.tape and self.node_id in self.tape._leaves else (
            "taped" if self.tape else "const")
        return f"Tensor(shape={self.data.shape}, {kind})"

    # arithmetic sugar; all routed through the module-level ops
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)


class _Node:
    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tape:
    """Append-only operation record; single-threaded by design."""

    def __init__(self):
        self._nodes = []
        self._leaves = []
        self._leaf_shapes = {}
        self._closed = False

    def leaf(self, data):
        """Register a differentiable input (parameter) on this tape."""
        arr = np.asarray(data, dtype=np.float64)
        t = self._record(arr, [], None)
        self._leaves.append(t.node_id)
        self._leaf_shapes[t.node_id] = arr.shape
        return t

    def _record(self, value, parents, backward_fn):
        if self._closed:
            raise DetachedTensor("tape already consumed by backward()")
        nid = len(self._nodes)
        self._nodes.append(_Node(parents, backward_fn))
        return Tensor(value, tape=self, node_id=nid)

    def backward(self, loss):
        """Gradients of a scalar loss for every node; clears the tape.

        Returns a dict node_id -> ndarray. Leaves unreachable from the
        loss get zero gradients.
        """
        if loss.tape is not self:
            raise DetachedTensor("loss does not belong to this tape")
        if loss.data.size != 1:
            raise NotScalar(f"loss has shape {loss.data.shape}")
        grads = {loss.node_id: np.ones_like(loss.data)}
        for nid in range(len(self._nodes) - 1, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self._nodes[nid]
            if node.backward_fn is None:
                continue
            for pid, pg in zip(node.parents, node.backward_fn(g)):
                if pid is None or pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        for lid in self._leaves:
            if lid not in grads:
                grads[lid] = np.zeros(self._leaf_shapes[lid])
        self._closed = True
        self._nodes = []
        return grads


def _wrap(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _tape_of(*tensors):
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise DetachedTensor("operands live on different tapes")
            tape = t.tape
    return tape


def _emit(value, inputs, backward_fn):
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    parents = [t.node_id for t in inputs]
    return tape._record(value, parents, backward_fn)


def _check_binary_shapes(a, b, op):
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ShapeMismatch(f"{op}: shapes {a.data.shape} vs {b.data.shape}")


def _reduce_to(grad, shape):
    # undo scalar broadcasting in binary ops
    if grad.shape == shape:
        return grad
    return np.sum(grad).reshape(shape) if shape != () else np.sum(grad)


# --- elementwise ---

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "add")
    value = a.data + b.data

    def bwd(g):
        return [_reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)]

    return _emit(value, [a, b], bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "sub")
    value = a.data - b.data

    def bwd(g):
        return [_reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)]

    return _emit(value, [a, b], bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "mul")
    value = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return [_reduce_to(g * bd, ad.shape), _reduce_to(g * ad, bd.shape)]

    return _emit(value, [a, b], bwd)


def add_bias(x, b):
    """Add a 1-d bias along the last axis of x."""
    x, b = _wrap(x), _wrap(b)
    if b.data.ndim != 1 or x.data.shape[-1] != b.data.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.data.shape} vs {b.data.shape}")
    value = x.data + b.data

    def bwd(g):
        return [g, g.reshape(-1, b.data.shape[0]).sum(axis=0)]

    return _emit(value, [x, b], bwd)


def mul_const(x, c):
    """x * c where c is a non-differentiable array broadcastable to x."""
    x = _wrap(x)
    c = np.asarray(c, dtype=np.float64)
    if np.broadcast_shapes(x.data.shape, c.shape) != x.data.shape:
        raise ShapeMismatch(f"mul_const: {c.shape} does not broadcast to {x.data.shape}")
    value = x.data * c

    def bwd(g):
        return [g * c]

    return _emit(value, [x], bwd)


def relu(x):
    x = _wrap(x)
    value = np.maximum(x.data, 0.0)
    pos = x.data > 0.0  # derivative at 0 is defined as 0

    def bwd(g):
        return [g * pos]

    return _emit(value, [x], bwd)


def leaky_relu(x, slope=0.2):
    x = _wrap(x)
    value = np.where(x.data > 0.0, x.data, slope * x.data)
    factor = np.where(x.data > 0.0, 1.0, slope)

    def bwd(g):
        return [g * factor]

    return _emit(value, [x], bwd)


def sigmoid(x):
    x = _wrap(x)
    value = np.empty_like(x.data)
    pos = x.data >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    value[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return [g * value * (1.0 - value)]

    return _emit(value, [x], bwd)


def exp(x):
    x = _wrap(x)
    value = np.exp(x.data)

    def bwd(g):
        return [g * value]

    return _emit(value, [x], bwd)


def log(x):
    x = _wrap(x)
    value = np.log(x.data)
    xd = x.data

    def bwd(g):
        return [g / xd]

    return _emit(value, [x], bwd)


def clip_min(x, lo):
    """Elementwise max(x, lo); gradient is zero on clipped entries."""
    x = _wrap(x)
    value = np.maximum(x.data, lo)
    keep = x.data > lo

    def bwd(g):
        return [g * keep]

    return _emit(value, [x], bwd)


# --- linear algebra ---

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeMismatch("matmul requires >=2-d operands")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(f"matmul: inner extents {ad.shape} vs {bd.shape}")
    if ad.shape[:-2] != bd.shape[:-2] and bd.ndim != 2 and ad.ndim != 2:
        raise ShapeMismatch(f"matmul: batch extents {ad.shape} vs {bd.shape}")
    value = np.matmul(ad, bd)

    need_da = a.tape is not None  # detached operands discard their gradient
    need_db = b.tape is not None

    def bwd(g):
        da = db = None
        if need_da:
            da = np.matmul(g, np.swapaxes(bd, -1, -2))
            if da.shape != ad.shape:  # a was an unbatched operand
                da = da.sum(axis=tuple(range(da.ndim - ad.ndim)))
        if need_db:
            db = np.matmul(np.swapaxes(ad, -1, -2), g)
            if db.shape != bd.shape:
                db = db.sum(axis=tuple(range(db.ndim - bd.ndim)))
        return [da, db]

    return _emit(value, [a, b], bwd)


def conv1d_dilated(x, w, bias, dilation=1):
    """Length-preserving dilated convolution.

    x: (length, c_in) or (batch, length, c_in); w: (kernel, c_in, c_out);
    bias: (c_out,). Zero padding of (kernel-1)/2 * dilation on each side.
    """
    x, w, bias = _wrap(x), _wrap(w), _wrap(bias)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or w.data.ndim != 3 or bias.data.ndim != 1:
        raise ShapeMismatch("conv1d_dilated operand ranks")
    kernel, c_in, c_out = w.data.shape
    if kernel % 2 == 0:
        raise EvenKernel(f"kernel size {kernel} must be odd")
    if dilation < 1:
        raise ShapeMismatch(f"dilation {dilation} must be >= 1")
    if xd.shape[2] != c_in or bias.data.shape[0] != c_out:
        raise ShapeMismatch(
            f"conv1d_dilated: x {xd.shape}, w {w.data.shape}, bias {bias.data.shape}")
    pad = (kernel - 1) // 2 * dilation
    xpad = np.zeros((xd.shape[0], xd.shape[1] + 2 * pad, c_in))
    xpad[:, pad:pad + xd.shape[1], :] = xd
    xpad = np.ascontiguousarray(xpad)
    out = kernels.conv1d_forward(xpad, np.ascontiguousarray(w.data),
                                 np.ascontiguousarray(bias.data), dilation)
    if squeeze:
        out = out[0]

    need_dx = x.tape is not None  # a detached input discards its gradient

    def bwd(g):
        g3 = np.ascontiguousarray(g[None] if squeeze else g)
        dxpad, dw, dbias = kernels.conv1d_backward(
            xpad, np.ascontiguousarray(w.data), g3, dilation,
            need_dx=need_dx)
        if not need_dx:
            return [None, dw, dbias]
        dx = dxpad[:, pad:pad + xd.shape[1], :]
        if squeeze:
            dx = dx[0]
        return [dx, dw, dbias]

    return _emit(out, [x, w, bias], bwd)


# --- reductions ---

def _check_axis(x, axis):
    if axis is None:
        return
    if not -x.data.ndim <= axis < x.data.ndim:
        raise AxisOutOfRange(f"axis {axis} for shape {x.data.shape}")


def reduce_sum(x, axis=None):
    x = _wrap(x)
    _check_axis(x, axis)
    value = x.data.sum(axis=axis)
    shape = x.data.shape

    def bwd(g):
        if axis is None:
            return [np.broadcast_to(g, shape).copy()]
        return [np.broadcast_to(np.expand_dims(g, axis), shape).copy()]

    return _emit(value, [x], bwd)


def reduce_mean(x, axis=None):
    x = _wrap(x)
    _check_axis(x, axis)
    count = x.data.size if axis is None else x.data.shape[axis]
    value = x.data.mean(axis=axis)
    shape = x.data.shape

    def bwd(g):
        if axis is None:
            return [np.broadcast_to(g / count, shape).copy()]
        return [np.broadcast_to(np.expand_dims(g, axis) / count, shape).copy()]

    return _emit(value, [x], bwd)


def reduce_max(x, axis=None):
    """Max reduction; ties route the gradient to the first max index."""
    x = _wrap(x)
    _check_axis(x, axis)
    shape = x.data.shape
    if axis is None:
        flat_idx = int(np.argmax(x.data))
        value = x.data.reshape(-1)[flat_idx]

        def bwd(g):
            dx = np.zeros(shape)
            dx.reshape(-1)[flat_idx] = np.asarray(g).reshape(())
            return [dx]
    else:
        idx = np.argmax(x.data, axis=axis)
        value = np.take_along_axis(x.data, np.expand_dims(idx, axis), axis=axis)
        value = np.squeeze(value, axis=axis)

        def bwd(g):
            dx = np.zeros(shape)
            np.put_along_axis(dx, np.expand_dims(idx, axis),
                              np.expand_dims(g, axis), axis=axis)
            return [dx]

    return _emit(value, [x], bwd)


# --- shape ops ---

def reshape(x, shape):
    x = _wrap(x)
    old = x.data.shape
    try:
        value = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None

    def bwd(g):
        return [g.reshape(old)]

    return _emit(value, [x], bwd)


def transpose(x, axes=None):
    x = _wrap(x)
    value = np.transpose(x.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bwd(g):
        return [np.transpose(g, inv)]

    return _emit(value, [x], bwd)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    datas = [t.data for t in tensors]
    try:
        value = np.concatenate(datas, axis=axis)
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    sizes = [d.shape[axis] for d in datas]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return [np.take(g, range(bounds[i], bounds[i + 1]), axis=axis)
                for i in range(len(datas))]

    return _emit(value, tensors, bwd)


def slice_(x, key):
    """Basic slicing; backward scatters the gradient back, zeros elsewhere."""
    x = _wrap(x)
    value = x.data[key]
    shape = x.data.shape

    def bwd(g):
        dx = np.zeros(shape)
        dx[key] = g
        return [dx]

    return _emit(value, [x], bwd)


# --- graph-structured ops used by the GNN layers ---

def outer_add(u, v):
    """out[..., i, j] = u[..., i] + v[..., j]."""
    u, v = _wrap(u), _wrap(v)
    if u.data.shape != v.data.shape:
        raise ShapeMismatch(f"outer_add: {u.data.shape} vs {v.data.shape}")
    value = u.data[..., :, None] + v.data[..., None, :]

    def bwd(g):
        return [g.sum(axis=-1), g.sum(axis=-2)]

    return _emit(value, [u, v], bwd)


def masked_softmax(x, mask):
    """Softmax over the last axis restricted to mask==1 entries.

    mask is a constant 0/1 array broadcastable to x's shape; positions
    outside the mask get output 0. Rows must contain at least one masked
    entry (callers are responsible for rejecting isolated nodes).
    """
    x = _wrap(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
    neg = np.where(mask, x.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(neg - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    value = e / s

    def bwd(g):
        dot = (g * value).sum(axis=-1, keepdims=True)
        return [value * (g - dot)]

    return _emit(value, [x], bwd)


def neighbor_max(x, neighbor_lists):
    """out[..., i, :] = elementwise max over j in N_i of x[..., j, :].

    Ties route the gradient to the smallest neighbor index. Every
    neighbor list must be nonempty.
    """
    x = _wrap(x)
    xd = x.data
    n = len(neighbor_lists)
    out = np.empty(xd.shape[:-2] + (n, xd.shape[-1]))
    argmaxes = []
    for i, nbrs in enumerate(neighbor_lists):
        sub = np.take(xd, nbrs, axis=-2)
        am = np.argmax(sub, axis=-2)  # first max within the list order
        out[..., i, :] = np.take_along_axis(
            sub, np.expand_dims(am, -2), axis=-2).squeeze(-2)
        argmaxes.append(am)

    def bwd(g):
        dx = np.zeros_like(xd)
        for i, nbrs in enumerate(neighbor_lists):
            src = np.asarray(nbrs)[argmaxes[i]]  # (..., f) of source rows
            gi = g[..., i, :]
            flat_src = src.reshape(-1, src.shape[-1])
            flat_g = gi.reshape(-1, gi.shape[-1])
            dxf = dx.reshape(-1, xd.shape[-2], xd.shape[-1])
            rows = np.arange(flat_src.shape[0])[:, None]
            cols = np.arange(xd.shape[-1])[None, :]
            np.add.at(dxf, (rows, flat_src, cols), flat_g)
        return [dx]

    return _emit(out, [x], bwd)


# --- verification ---

def backward(loss):
    """Convenience wrapper: gradients of a scalar loss on its own tape."""
    if loss.tape is None:
        raise DetachedTensor("loss is a constant")
    return loss.tape.backward(loss)


def finite_difference_check(f, x, eps=1e-5):
    """Max relative error between backward and central differences.

    f maps a Tensor to a scalar Tensor and must be deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xt = tape.leaf(x)
    loss = f(xt)
    grad = tape.backward(loss)[xt.node_id]
    grad = np.broadcast_to(grad, x.shape)

    def eval_at(arr):
        return float(f(Tensor(arr)).data.reshape(()))

    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = eval_at((flat + bump).reshape(x.shape))
        lo = eval_at((flat - bump).reshape(x.shape))
        num = (hi - lo) / (2.0 * eps)
        ana = grad.reshape(-1)[i]
        denom = max(abs(num), abs(ana), 1e-8)
        worst = max(worst, abs(num - ana) / denom)
    return worst
