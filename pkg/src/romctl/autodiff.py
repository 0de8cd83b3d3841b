"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The engine records a computation graph as tensors are combined and replays
it in reverse topological order on ``backward``. The primitive set is
exactly what the models in this package need: elementwise arithmetic,
matmul, ReLU, reductions, reshapes, 1D convolution and its transpose, plus
an RK4 step that is differentiable end to end.

All arithmetic is float64; training is single-worker and deterministic for
a fixed seed.
"""

from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Context manager disabling graph recording (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def sum(self):
        return tsum(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor):
    """Populate ``grad`` for every tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)

    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# -- elementwise primitives ---------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _make(out_data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    return _make(out_data, (a, b), bwd)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _make(out_data, (a, b), bwd)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0  # derivative at 0 taken as 0
    out_data = np.where(mask, a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a.grad += g * mask

    return _make(out_data, (a,), bwd)


def square(a):
    return mul(a, a)


def tsum(a):
    a = as_tensor(a)
    out_data = np.asarray(a.data.sum())

    def bwd(g):
        if a.requires_grad:
            a.grad += np.broadcast_to(g, a.data.shape)

    return _make(out_data, (a,), bwd)


def mean(a):
    a = as_tensor(a)
    n = a.data.size
    out_data = np.asarray(a.data.mean())

    def bwd(g):
        if a.requires_grad:
            a.grad += np.broadcast_to(g / n, a.data.shape)

    return _make(out_data, (a,), bwd)


def sum_axis(a, axis, keepdims=True):
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, a.data.shape)

    return _make(out_data, (a,), bwd)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g / b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)

    return _make(out_data, (a, b), bwd)


def mse(a, b):
    """Mean squared error between two same-shape tensors."""
    d = sub(a, b)
    return mean(square(d))


# -- structural primitives ----------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a.grad += g @ b.data.swapaxes(-1, -2)
        if b.requires_grad:
            gb = a.data.swapaxes(-1, -2) @ g
            b.grad += _unbroadcast(gb, b.data.shape)

    return _make(out_data, (a, b), bwd)


def transpose(a):
    a = as_tensor(a)
    out_data = a.data.T

    def bwd(g):
        if a.requires_grad:
            a.grad += g.T

    return _make(out_data, (a,), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.grad += g.reshape(a.data.shape)

    return _make(out_data, (a,), bwd)


def rows(a, start, stop):
    """Contiguous row slice a[start:stop] of a 2-D tensor."""
    a = as_tensor(a)
    out_data = a.data[start:stop]

    def bwd(g):
        if a.requires_grad:
            a.grad[start:stop] += g

    return _make(out_data, (a,), bwd)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t.requires_grad:
                t.grad += piece

    return _make(out_data, tuple(tensors), bwd)


# -- convolution primitives ---------------------------------------------


def _im2col(x, k, stride, padding, l_out):
    """Gather sliding windows into a (N, C*K, L_out) patch matrix."""
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    cols = [xp[:, :, t : t + stride * (l_out - 1) + 1 : stride] for t in range(k)]
    return np.stack(cols, axis=2).reshape(x.shape[0], x.shape[1] * k, l_out)


def _col2im(gcols, n, c, k, stride, padding, l_in, l_out):
    """Scatter-add patch gradients back onto the padded input."""
    gcols = gcols.reshape(n, c, k, l_out)
    xp_grad = np.zeros((n, c, l_in + 2 * padding))
    for t in range(k):
        xp_grad[:, :, t : t + stride * (l_out - 1) + 1 : stride] += gcols[:, :, t]
    return xp_grad[:, :, padding : padding + l_in]


def _conv_forward(x, w, stride, padding):
    n, c, length = x.shape
    f, cw, k = w.shape
    assert cw == c
    l_out = (length + 2 * padding - k) // stride + 1
    cols = _im2col(x, k, stride, padding, l_out)
    out = np.matmul(_w_as_mat(w), cols)
    return out, cols


def _w_as_mat(w):
    # (F, C, K) -> (F, C*K) matching _im2col's (c, t) ordering
    return w.reshape(w.shape[0], -1)


def _conv_input_grad(g, w, stride, padding, l_in):
    """Adjoint of _conv_forward w.r.t. its input (also the transposed-conv map)."""
    n, f, l_out = g.shape
    _, c, k = w.shape
    gcols = np.matmul(_w_as_mat(w).T, g)
    return _col2im(gcols, n, c, k, stride, padding, l_in, l_out)


def _conv_weight_grad(cols, g, c, k):
    gw = np.tensordot(g, cols, axes=([0, 2], [0, 2]))
    return gw.reshape(g.shape[1], c, k)


def conv1d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of (N, C, L) input with (F, C, K) filters."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, length = x.data.shape
    f, cw, k = w.data.shape
    if cw != c:
        raise ValueError(f"filter channels {cw} do not match input channels {c}")
    if length + 2 * padding < k:
        raise ValueError("input too short for the given kernel and padding")
    out_data, cols = _conv_forward(x.data, w.data, stride, padding)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if x.requires_grad:
            x.grad += _conv_input_grad(g, w.data, stride, padding, length)
        if w.requires_grad:
            w.grad += _conv_weight_grad(cols, g, c, k)
        if b is not None and b.requires_grad:
            b.grad += g.sum(axis=(0, 2))

    return _make(out_data, parents, bwd)


def conv1d_transpose(x, w, b=None, stride=1, padding=0, output_padding=0):
    """Transposed 1D convolution: the adjoint of ``conv1d`` with the same
    (F, C, K) filters, mapping (N, F, L) back to (N, C, L_out) with
    L_out = (L - 1) * stride - 2 * padding + K + output_padding.
    """
    x, w = as_tensor(x), as_tensor(w)
    n, f, l_in = x.data.shape
    fw, c, k = w.data.shape
    if fw != f:
        raise ValueError(f"filter count {fw} does not match input channels {f}")
    l_out = (l_in - 1) * stride - 2 * padding + k + output_padding
    if l_out < 1:
        raise ValueError("transposed-convolution geometry yields empty output")
    # forward is the input-gradient map of a conv whose output length is l_in,
    # with the roles of padding/cropping swapped
    gcols = np.matmul(_w_as_mat(w.data).T, x.data)
    ypad = _col2im(gcols, n, c, k, stride, 0, l_out + 2 * padding, l_in)
    out_data = ypad[:, :, padding : padding + l_out]
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data[None, :, None]
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        gpad = np.zeros((n, c, l_out + 2 * padding))
        gpad[:, :, padding : padding + l_out] = g
        gp_cols = _im2col(gpad, k, stride, 0, l_in)
        if x.requires_grad:
            x.grad += np.matmul(_w_as_mat(w.data), gp_cols)
        if w.requires_grad:
            w.grad += np.tensordot(x.data, gp_cols,
                                   axes=([0, 2], [0, 2])).reshape(f, c, k)
        if b is not None and b.requires_grad:
            b.grad += g.sum(axis=(0, 2))

    return _make(out_data, parents, bwd)


# -- layers --------------------------------------------------------------


def _init_weight(rng, shape, fan_in):
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Linear:
    """Fully connected layer y = x @ W.T + b for (N, in) inputs."""

    def __init__(self, in_dim, out_dim, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.w = _init_weight(rng, (out_dim, in_dim), in_dim)
        self.b = _init_weight(rng, (out_dim,), in_dim) if bias else None

    def __call__(self, x):
        y = matmul(x, transpose(self.w))
        if self.b is not None:
            y = add(y, self.b)
        return y

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]


class Conv1d:
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kernel
        self.w = _init_weight(rng, (out_ch, in_ch, kernel), fan_in)
        self.b = _init_weight(rng, (out_ch,), fan_in) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return conv1d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]


class ConvTranspose1d:
    def __init__(self, in_ch, out_ch, kernel, stride=1, padding=0,
                 output_padding=0, bias=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_ch * kernel
        self.w = _init_weight(rng, (in_ch, out_ch, kernel), fan_in)
        self.b = _init_weight(rng, (out_ch,), fan_in) if bias else None
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def __call__(self, x):
        return conv1d_transpose(x, self.w, self.b, stride=self.stride,
                                padding=self.padding,
                                output_padding=self.output_padding)

    def params(self):
        return [self.w] if self.b is None else [self.w, self.b]


class MLP:
    """Stack of fully connected layers with ReLU between hidden layers.

    ``widths`` lists the layer sizes input-to-output; the final layer is
    linear. ``final_bias=False`` drops the bias of the output layer only.
    """

    def __init__(self, widths, rng=None, final_bias=True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = []
        for i in range(len(widths) - 1):
            last = i == len(widths) - 2
            self.layers.append(
                Linear(widths[i], widths[i + 1], bias=(final_bias or not last), rng=rng)
            )
        self.widths = list(widths)

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


# -- optimizer -----------------------------------------------------------


class Adam:
    """Adam with bias correction and per-epoch exponential lr decay."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 lr_decay=1.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr_decay = lr_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def end_epoch(self):
        self.lr *= self.lr_decay

    def zero_grad(self):
        for p in self.params:
            p.grad = None


# -- differentiable RK4 --------------------------------------------------


def rk4_step(f, state, u, dt):
    """One classical RK4 step of d(state)/dt = f(state, u), zero-order hold
    on ``u``. All stage evaluations stay on the graph so gradients flow
    through the integrator.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = f(state, u)
    k2 = f(add(state, mul(k1, dt / 2.0)), u)
    k3 = f(add(state, mul(k2, dt / 2.0)), u)
    k4 = f(add(state, mul(k3, dt)), u)
    for k in (k1, k2, k3, k4):
        if not np.all(np.isfinite(k.data)):
            raise FloatingPointError("non-finite RK4 stage value")
    incr = add(add(k1, mul(add(k2, k3), 2.0)), k4)
    return add(state, mul(incr, dt / 6.0))
