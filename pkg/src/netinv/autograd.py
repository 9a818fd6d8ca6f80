"""Dense tensors with reverse-mode automatic differentiation.

The tape is implicit: every tracked operation stores its input tensors and a
vector-Jacobian closure expressed in terms of the public ops. Running a
backward pass with ``create_graph=True`` therefore records the adjoint
computation itself, which is what makes the gradient-norm penalty
differentiable with respect to upstream inputs (a second-order replay).
"""

import numpy as np

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return pow_const(self, k)


def tensor(data, requires_grad=False, dtype=None):
    if dtype is None and not isinstance(data, np.ndarray):
        dtype = DEFAULT_DTYPE
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def parameter(data, dtype=None):
    return Tensor(data, requires_grad=True, dtype=dtype)


def _wrap(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def _from_op(data, inputs, vjp):
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = (tuple(inputs), vjp)
    return out


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    extra = g.data.ndim - len(shape)
    if extra > 0:
        g = sum_(g, axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.data.shape[i] != 1)
    if axes:
        g = sum_(g, axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def vjp(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _from_op(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def vjp(g):
        ga = _unbroadcast(g, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _from_op(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def vjp(g):
        ga = _unbroadcast(mul(g, b), a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _from_op(a.data * b.data, (a, b), vjp)


def div(a, b):
    a = _wrap(a, b if isinstance(b, Tensor) else None)
    b = _wrap(b, a)

    def vjp(g):
        ga = _unbroadcast(div(g, b), a.data.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.data.shape)
        return ga, gb

    return _from_op(a.data / b.data, (a, b), vjp)


def neg(a):
    a = _wrap(a)

    def vjp(g):
        return (neg(g),)

    return _from_op(-a.data, (a,), vjp)


def pow_const(a, k):
    a = _wrap(a)
    k = float(k)

    def vjp(g):
        return (mul(g, mul(pow_const(a, k - 1.0), _wrap(k, a))),)

    return _from_op(a.data ** k, (a,), vjp)


def square(a):
    return mul(a, a)


def exp(a):
    a = _wrap(a)
    out = _from_op(np.exp(a.data), (a,), None)
    if out._op is not None:
        res = out

        def vjp(g):
            return (mul(g, res),)

        out._op = ((a,), vjp)
    return out


def log(a):
    a = _wrap(a)

    def vjp(g):
        return (div(g, a),)

    return _from_op(np.log(a.data), (a,), vjp)


def sqrt(a):
    return pow_const(a, 0.5)


def leaky_relu(a, slope=0.01):
    a = _wrap(a)
    scale = np.where(a.data > 0, a.dtype.type(1), a.dtype.type(slope))

    def vjp(g):
        return (mul(g, Tensor(scale)),)

    return _from_op(a.data * scale, (a,), vjp)


def relu(a):
    return leaky_relu(a, slope=0.0)


def sigmoid(a):
    a = _wrap(a)
    # stable logistic: exp of the non-positive branch only
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    out = _from_op(out_data, (a,), None)
    if out._op is not None:
        res = out

        def vjp(g):
            return (mul(g, mul(res, sub(_wrap(1.0, res), res))),)

        out._op = ((a,), vjp)
    return out


def clamp01(a):
    """Clip to [0, 1] with pass-through gradient strictly inside the range."""
    a = _wrap(a)
    inside = ((a.data >= 0.0) & (a.data <= 1.0)).astype(a.dtype)

    def vjp(g):
        return (mul(g, Tensor(inside)),)

    return _from_op(np.clip(a.data, 0.0, 1.0), (a,), vjp)


def dropout(a, rate, rng, training=True):
    """Inverted dropout with an explicit RNG stream for reproducibility."""
    a = _wrap(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(a.data.shape) >= rate).astype(a.dtype) / a.dtype.type(1.0 - rate)
    return mul(a, Tensor(keep))


# ---------------------------------------------------------------------------
# shape manipulation

def reshape(a, shape):
    a = _wrap(a)
    orig = a.data.shape

    def vjp(g):
        return (reshape(g, orig),)

    return _from_op(a.data.reshape(shape), (a,), vjp)


def transpose(a, axes=None):
    a = _wrap(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (transpose(g, inverse),)

    return _from_op(np.transpose(a.data, axes), (a,), vjp)


def broadcast_to(a, shape):
    a = _wrap(a)
    orig = a.data.shape

    def vjp(g):
        return (_unbroadcast(g, orig),)

    return _from_op(np.broadcast_to(a.data, shape), (a,), vjp)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        outs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                outs.append(take_slice(g, axis, int(lo), int(hi)))
            else:
                outs.append(None)
        return tuple(outs)

    return _from_op(np.concatenate([t.data for t in tensors], axis=axis),
                    tuple(tensors), vjp)


def take_slice(a, axis, lo, hi):
    a = _wrap(a)
    orig = a.data.shape
    idx = tuple(slice(lo, hi) if d == axis else slice(None)
                for d in range(a.data.ndim))

    def vjp(g):
        return (pad_slice(g, orig, axis, lo),)

    return _from_op(a.data[idx], (a,), vjp)


def pad_slice(a, shape, axis, lo):
    """Embed ``a`` into zeros of ``shape`` starting at ``lo`` along ``axis``."""
    a = _wrap(a)
    hi = lo + a.data.shape[axis]
    idx = tuple(slice(lo, hi) if d == axis else slice(None)
                for d in range(len(shape)))

    def vjp(g):
        return (take_slice(g, axis, lo, hi),)

    out = np.zeros(shape, dtype=a.dtype)
    out[idx] = a.data
    return _from_op(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions

def sum_(a, axis=None, keepdims=False):
    a = _wrap(a)
    orig = a.data.shape
    # accumulate in 64-bit, return in the input dtype
    out_data = np.sum(a.data, axis=axis, keepdims=keepdims, dtype=np.float64)
    out_data = np.asarray(out_data, dtype=a.dtype)

    def vjp(g):
        if axis is None:
            kshape = (1,) * len(orig)
        elif not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(ax % len(orig) for ax in axes)
            kshape = tuple(1 if i in axes else n for i, n in enumerate(orig))
        else:
            kshape = g.data.shape
        return (broadcast_to(reshape(g, kshape), orig),)

    return _from_op(out_data, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    a = _wrap(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return div(sum_(a, axis=axis, keepdims=keepdims), _wrap(float(count), a))


# ---------------------------------------------------------------------------
# linear algebra / convolution

def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}")

    def vjp(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _from_op(a.data @ b.data, (a, b), vjp)


def _im2col_indices(C, H, W, kh, kw, stride, pad):
    out_h = (H + 2 * pad - kh) // stride + 1
    out_w = (W + 2 * pad - kw) // stride + 1
    i0 = np.repeat(np.arange(kh), kw)
    i0 = np.tile(i0, C)
    i1 = stride * np.repeat(np.arange(out_h), out_w)
    j0 = np.tile(np.arange(kw), kh * C)
    j1 = stride * np.tile(np.arange(out_w), out_h)
    i = i0.reshape(-1, 1) + i1.reshape(1, -1)
    j = j0.reshape(-1, 1) + j1.reshape(1, -1)
    c = np.repeat(np.arange(C), kh * kw).reshape(-1, 1)
    return c, i, j, out_h, out_w


def im2col(x, kh, kw, stride=1, pad=0):
    """Unfold [B,C,H,W] into [B, C*kh*kw, L] patch columns."""
    x = _wrap(x)
    B, C, H, W = x.data.shape
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")
    c, i, j, out_h, out_w = _im2col_indices(C, H, W, kh, kw, stride, pad)
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = padded[:, c, i, j]

    def vjp(g):
        return (col2im(g, (B, C, H, W), kh, kw, stride, pad),)

    return _from_op(cols, (x,), vjp)


def col2im(cols, img_shape, kh, kw, stride=1, pad=0):
    """Adjoint of im2col: scatter-add patch columns back into an image."""
    cols = _wrap(cols)
    B, C, H, W = img_shape
    c, i, j, out_h, out_w = _im2col_indices(C, H, W, kh, kw, stride, pad)
    padded = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    np.add.at(padded, (slice(None), c, i, j), cols.data)
    out = padded[:, :, pad:pad + H, pad:pad + W]

    def vjp(g):
        return (im2col(g, kh, kw, stride, pad),)

    return _from_op(out, (cols,), vjp)


def conv2d(x, kernel, stride=1, pad=0):
    """Cross-correlation of [B,C,H,W] with [F,C,kh,kw] kernels."""
    x, kernel = _wrap(x), _wrap(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and kernel, got {x.data.shape} and {kernel.data.shape}")
    B, C, H, W = x.data.shape
    F, Ck, kh, kw = kernel.data.shape
    if Ck != C:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape}, kernel {kernel.data.shape}")
    out_h = (H + 2 * pad - kh) // stride + 1
    out_w = (W + 2 * pad - kw) // stride + 1
    cols = im2col(x, kh, kw, stride, pad)                   # [B, C*kh*kw, L]
    cols2 = reshape(transpose(cols, (1, 0, 2)), (C * kh * kw, B * out_h * out_w))
    kmat = reshape(kernel, (F, C * kh * kw))
    out = matmul(kmat, cols2)                               # [F, B*L]
    out = reshape(out, (F, B, out_h, out_w))
    return transpose(out, (1, 0, 2, 3))


def maxpool2d(x, k=2):
    """Non-overlapping k x k max pooling; H and W must be divisible by k."""
    x = _wrap(x)
    B, C, H, W = x.data.shape
    if H % k or W % k:
        raise ShapeError(f"maxpool2d needs H, W divisible by {k}, got {x.data.shape}")
    windows = x.data.reshape(B, C, H // k, k, W // k, k).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(B, C, H // k, W // k, k * k)
    arg = np.argmax(windows, axis=-1)
    onehot = np.eye(k * k, dtype=x.dtype)[arg]              # [B,C,h,w,k*k]
    mask = onehot.reshape(B, C, H // k, W // k, k, k).transpose(0, 1, 2, 4, 3, 5)
    mask = mask.reshape(B, C, H, W)
    mask_t = Tensor(mask)
    out_data = np.max(windows, axis=-1)

    def vjp(g):
        # route pooled gradient back to argmax positions (first max on ties)
        up = broadcast_to(reshape(g, (B, C, H // k, 1, W // k, 1)),
                          (B, C, H // k, k, W // k, k))
        up = reshape(up, (B, C, H, W))
        return (mul(up, mask_t),)

    return _from_op(out_data, (x,), vjp)


def softmax(logits, axis=-1):
    """Row-stable softmax composed from tracked primitives."""
    logits = _wrap(logits)
    if logits.data.shape[axis] < 1:
        raise ShapeError(f"softmax axis is empty: {logits.data.shape}")
    shift = np.max(logits.data, axis=axis, keepdims=True)
    z = sub(logits, Tensor(shift))
    e = exp(z)
    return div(e, sum_(e, axis=axis, keepdims=True))


def log_softmax(logits, axis=-1):
    logits = _wrap(logits)
    shift = np.max(logits.data, axis=axis, keepdims=True)
    z = sub(logits, Tensor(shift))
    return sub(z, log(sum_(exp(z), axis=axis, keepdims=True)))


# ---------------------------------------------------------------------------
# backward machinery

def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._op is not None:
            for inp in node._op[0]:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def grad(out, wrt, create_graph=False):
    """Gradients of a scalar ``out`` w.r.t. each tensor in ``wrt``.

    Returns one Tensor per entry (zeros when no path exists). With
    ``create_graph=True`` the returned gradients remain differentiable.
    """
    if out.data.size != 1:
        raise ContractError(f"grad requires a scalar output, got shape {out.data.shape}")
    wrt = list(wrt)
    grads = {id(out): Tensor(np.ones_like(out.data))}
    keep = {id(t) for t in wrt}
    order = _toposort(out)
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._op is None:
            continue
        if id(node) not in keep:
            del grads[id(node)]
        inputs, vjp = node._op
        if create_graph:
            input_grads = vjp(g)
        else:
            with no_grad():
                input_grads = vjp(g)
        for inp, ig in zip(inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            prev = grads.get(id(inp))
            if prev is None:
                grads[id(inp)] = ig
            elif create_graph:
                grads[id(inp)] = add(prev, ig)
            else:
                with no_grad():
                    grads[id(inp)] = add(prev, ig)
    out_list = []
    for t in wrt:
        g = grads.get(id(t))
        out_list.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out_list


def backward(loss):
    """Accumulate ``d loss / d leaf`` into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    leaves = [n for n in _toposort(loss) if n._op is None and n.requires_grad]
    for leaf, g in zip(leaves, grad(loss, leaves)):
        if leaf.grad is None:
            leaf.grad = g
        else:
            with no_grad():
                leaf.grad = add(leaf.grad, g)


def grad_norm_sq(scalar_out, params):
    """Σ ‖d scalar_out / d θ‖² over ``params``, itself differentiable.

    The inner backward runs with graph construction enabled, so the result
    stays connected to whatever the parameters' gradients depend on (e.g.
    the images fed to a classifier).
    """
    params = list(params)
    if not params:
        raise ContractError("grad_norm_sq needs a non-empty parameter set")
    if not scalar_out.requires_grad:
        raise ContractError("scalar output is not connected to the tape")
    gs = grad(scalar_out, params, create_graph=True)
    total = None
    for g in gs:
        term = sum_(square(g))
        total = term if total is None else add(total, term)
    return total
