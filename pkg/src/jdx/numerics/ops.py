"""Differentiable operations recorded on the active tape.

Every public function takes Tensors (plus plain attributes such as padding)
and returns a Tensor.  `forward_op(kind, inputs, **attrs)` dispatches through
the OPS table, which is also the hook point for gradient-check sweeps.
Outputs are checked finite; a NaN/Inf fails fast naming the op.
"""

import numpy as np

from . import backend
from .tensor import Tensor, NumericsError, ShapeError, active_tape, recording


def _node(name, data, inputs, vjp):
    out = Tensor(data)
    if not np.all(np.isfinite(out.data)):
        raise NumericsError(f"op '{name}' produced non-finite values")
    if recording() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._is_node = True
        active_tape().record(name, out, inputs, vjp)
    return out


def _unbroadcast(g, shape):
    """Sum-reduce a broadcast gradient back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _require_broadcastable(name, a, b):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{name}: shapes {a.data.shape} and {b.data.shape} "
                         f"are not broadcast-compatible") from None


def add(a, b):
    _require_broadcastable("add", a, b)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _node("add", a.data + b.data, (a, b), vjp)


def sub(a, b):
    _require_broadcastable("sub", a, b)

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _node("sub", a.data - b.data, (a, b), vjp)


def mul(a, b):
    _require_broadcastable("mul", a, b)

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _node("mul", a.data * b.data, (a, b), vjp)


def scale(x, c):
    c = float(c)

    def vjp(g):
        return (c * g,)

    return _node("scale", c * x.data, (x,), vjp)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node("matmul", a.data @ b.data, (a, b), vjp)


def relu(x):
    def vjp(g):
        return ((x.data > 0.0) * g,)

    return _node("relu", np.maximum(x.data, 0.0), (x,), vjp)


def _sigmoid_stable(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    y = _sigmoid_stable(x.data)

    def vjp(g):
        return (y * (1.0 - y) * g,)

    return _node("sigmoid", y, (x,), vjp)


def tanh(x):
    y = np.tanh(x.data)

    def vjp(g):
        return ((1.0 - y * y) * g,)

    return _node("tanh", y, (x,), vjp)


def _conv_padding(padding, kh, kw):
    if padding == "same":
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"conv2d: 'same' padding needs odd kernel, got {(kh, kw)}")
        return (kh - 1) // 2, (kw - 1) // 2
    if padding == "valid":
        return 0, 0
    ph, pw = padding
    return int(ph), int(pw)


def conv2d(x, w, padding="valid", stride=1):
    """x (N,Cin,H,W) correlated with w (Cout,Cin,kh,kw); explicit padding."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.data.shape} and {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv2d: channel mismatch between input {x.data.shape} "
                         f"and kernel {w.data.shape}")
    if int(stride) < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    sh = sw = int(stride)
    kh, kw = w.data.shape[2], w.data.shape[3]
    ph, pw = _conv_padding(padding, kh, kw)
    if x.data.shape[2] + 2 * ph < kh or x.data.shape[3] + 2 * pw < kw:
        raise ShapeError(f"conv2d: kernel {w.data.shape} larger than padded input {x.data.shape}")
    out = backend.conv2d_forward(x.data, w.data, ph, pw, sh, sw)

    def vjp(g):
        return backend.conv2d_backward(x.data, w.data, np.ascontiguousarray(g), ph, pw, sh, sw)

    return _node("conv2d", out, (x, w), vjp)


def max_pool2d(x, window=(2, 2), stride=None):
    if x.data.ndim != 4:
        raise ShapeError(f"max_pool2d: need 4-d input, got {x.data.shape}")
    kh, kw = window
    sh, sw = (kh, kw) if stride is None else stride
    h, w = x.data.shape[2], x.data.shape[3]
    if kh > h or kw > w:
        raise ShapeError(f"max_pool2d: window {window} larger than input {x.data.shape}")
    out, arg = backend.maxpool_forward(x.data, kh, kw, sh, sw)

    def vjp(g):
        return (backend.maxpool_backward(np.ascontiguousarray(g), arg, h, w),)

    return _node("max_pool2d", out, (x,), vjp)


def _softmax_over(x, axes):
    m = x.max(axis=axes, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axes, keepdims=True)


def spatial_softmax(x):
    """Softmax jointly over the two trailing spatial axes."""
    if x.data.ndim < 2:
        raise ShapeError(f"spatial_softmax: need >= 2 dims, got {x.data.shape}")
    axes = (x.data.ndim - 2, x.data.ndim - 1)
    y = _softmax_over(x.data, axes)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=axes, keepdims=True)),)

    return _node("spatial_softmax", y, (x,), vjp)


def vector_softmax(x):
    """Softmax over the trailing axis."""
    y = _softmax_over(x.data, -1)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node("vector_softmax", y, (x,), vjp)


def broadcast_channel_scale(f, a):
    """f (N,C,H,W) scaled per channel by a (N,C) or (C,)."""
    if f.data.ndim != 4:
        raise ShapeError(f"broadcast_channel_scale: feature must be 4-d, got {f.data.shape}")
    c = f.data.shape[1]
    if a.data.shape not in ((f.data.shape[0], c), (c,)):
        raise ShapeError(f"broadcast_channel_scale: weights {a.data.shape} do not match "
                         f"channels of {f.data.shape}")
    av = a.data.reshape((-1, c, 1, 1))

    def vjp(g):
        gf = g * av
        ga = (g * f.data).sum(axis=(2, 3))
        if a.data.ndim == 1:
            ga = ga.sum(axis=0)
        return gf, ga

    return _node("broadcast_channel_scale", f.data * av, (f, a), vjp)


def broadcast_spatial_scale(f, m):
    """f (N,C,H,W) scaled per position by m (N,1,H,W)."""
    if f.data.ndim != 4 or m.data.ndim != 4 or m.data.shape[1] != 1 \
            or m.data.shape[0] != f.data.shape[0] or m.data.shape[2:] != f.data.shape[2:]:
        raise ShapeError(f"broadcast_spatial_scale: map {m.data.shape} does not match "
                         f"feature {f.data.shape}")

    def vjp(g):
        return g * m.data, (g * f.data).sum(axis=1, keepdims=True)

    return _node("broadcast_spatial_scale", f.data * m.data, (f, m), vjp)


def concat(*tensors, axis=0):
    if not tensors:
        raise ShapeError("concat: no inputs")
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[d.shape for d in datas]} "
                         f"along axis {axis}") from None
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.ascontiguousarray(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis))
                     for i in range(len(datas)))

    return _node("concat", out, tensors, vjp)


def mean_pool(x):
    """Global spatial mean: (N,C,H,W) -> (N,C)."""
    if x.data.ndim != 4:
        raise ShapeError(f"mean_pool: need 4-d input, got {x.data.shape}")
    n, c, h, w = x.data.shape

    def vjp(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.data.shape),)

    return _node("mean_pool", x.data.mean(axis=(2, 3)), (x,), vjp)


def embedding_lookup(table, indices):
    """Rows of table (V,E) selected by an integer index array."""
    idx = np.asarray(indices, dtype=np.int64)
    v = table.data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ShapeError(f"embedding_lookup: index out of range for table with {v} rows")

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.data.shape[1]))
        return (gt,)

    return _node("embedding_lookup", table.data[idx], (table,), vjp)


def slice_cols(x, start, stop):
    if x.data.ndim != 2:
        raise ShapeError(f"slice_cols: need 2-d input, got {x.data.shape}")

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _node("slice_cols", np.ascontiguousarray(x.data[:, start:stop]), (x,), vjp)


def reshape(x, shape):
    shape = tuple(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _node("reshape", x.data.reshape(shape), (x,), vjp)


def sum_all(x):
    def vjp(g):
        return (np.broadcast_to(g, x.data.shape),)

    return _node("sum_all", np.asarray(x.data.sum()), (x,), vjp)


def masked_cross_entropy(probs, indices, weights=None):
    """Weighted sum of -log probs[i, indices[i]] over rows.

    `probs` are probabilities (rows of a softmax), not logits.  Rows with
    weight 0 are skipped entirely so padded positions cannot inject log(0).
    """
    if probs.data.ndim != 2:
        raise ShapeError(f"masked_cross_entropy: need 2-d probabilities, got {probs.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    n, v = probs.data.shape
    if idx.shape != (n,):
        raise ShapeError(f"masked_cross_entropy: {n} rows but index shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= v):
        raise ShapeError(f"masked_cross_entropy: target index out of range for {v} classes")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    rows = np.arange(n)
    p = probs.data[rows, idx]
    active = w != 0.0
    val = -(w[active] * np.log(p[active])).sum() if active.any() else 0.0

    def vjp(g):
        gp = np.zeros_like(probs.data)
        gp[rows[active], idx[active]] = -np.asarray(g).item() * w[active] / p[active]
        return (gp,)

    return _node("masked_cross_entropy", np.asarray(val), (probs,), vjp)


OPS = {
    "conv2d": conv2d,
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "relu": relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "max_pool2d": max_pool2d,
    "spatial_softmax": spatial_softmax,
    "vector_softmax": vector_softmax,
    "broadcast_channel_scale": broadcast_channel_scale,
    "broadcast_spatial_scale": broadcast_spatial_scale,
    "concat": concat,
    "mean_pool": mean_pool,
    "embedding_lookup": embedding_lookup,
    "slice_cols": slice_cols,
    "reshape": reshape,
    "sum_all": sum_all,
    "masked_cross_entropy": masked_cross_entropy,
}


def forward_op(kind, inputs, **attrs):
    """Dispatch a recorded operation by kind name."""
    fn = OPS.get(kind)
    if fn is None:
        raise ValueError(f"unknown op kind '{kind}'")
    return fn(*inputs, **attrs)
