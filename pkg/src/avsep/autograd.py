"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A :class:`DiffValue` records the op that produced it; :meth:`DiffValue.backward`
walks the graph in reverse topological order and accumulates ``grad`` on every
node that requires it. Sequence tensors use PyTorch's (batch, channels, time)
layout for convolutions and (batch, time, features) for recurrent layers.
"""

from __future__ import annotations

import numpy as np

from .dsp import DEFAULT_STFT, StftConfig, recompose, recompose_adjoint


class GraphError(RuntimeError):
    pass


class DiffValue:
    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=None, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"DiffValue(shape={self.data.shape}, name={self.name!r})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Back-propagate ``grad`` (default 1 for scalars) to every upstream node."""
        if not self.requires_grad:
            raise GraphError("value is detached from any parameter")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("an explicit seed gradient is needed for non-scalar outputs")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise GraphError(f"seed gradient shape {grad.shape} != value shape {self.data.shape}")

        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents)

        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:  # leaf
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)


def param(data, name="") -> DiffValue:
    return DiffValue(data, requires_grad=True, name=name)


def const(data) -> DiffValue:
    return DiffValue(data, requires_grad=False)


def _lift(x) -> DiffValue:
    return x if isinstance(x, DiffValue) else const(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    return DiffValue(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> DiffValue:
    a, b = _lift(a), _lift(b)
    return DiffValue(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(x: DiffValue) -> DiffValue:
    mask = x.data > 0
    return DiffValue(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: DiffValue) -> DiffValue:
    y = _sigmoid(x.data)
    return DiffValue(y, (x,), lambda g: (g * y * (1 - y),))


def tanh(x: DiffValue) -> DiffValue:
    y = np.tanh(x.data)
    return DiffValue(y, (x,), lambda g: (g * (1 - y * y),))


def prelu(x: DiffValue, alpha: DiffValue) -> DiffValue:
    """Parametric ReLU with one slope per channel (axis 1)."""
    a = alpha.data.reshape(1, -1, *([1] * (x.data.ndim - 2)))
    pos = x.data > 0
    y = np.where(pos, x.data, a * x.data)

    def back(g):
        gx = np.where(pos, g, a * g)
        ga = np.where(pos, 0.0, g * x.data)
        ga = ga.sum(axis=tuple(i for i in range(x.data.ndim) if i != 1))
        return gx, ga.reshape(alpha.shape)

    return DiffValue(y, (x, alpha), back)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------- structural

def concat(values, axis: int) -> DiffValue:
    values = [_lift(v) for v in values]
    sizes = [v.shape[axis] for v in values]
    splits = np.cumsum(sizes)[:-1]
    return DiffValue(np.concatenate([v.data for v in values], axis=axis), values,
                     lambda g: tuple(np.split(g, splits, axis=axis)))


def transpose(x: DiffValue, axes) -> DiffValue:
    inv = np.argsort(axes)
    return DiffValue(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def gather_time(x: DiffValue, index: np.ndarray) -> DiffValue:
    """y[..., t] = x[..., index[t]] along the last axis (sample-and-hold upsampling)."""
    index = np.asarray(index)
    onehot = np.zeros((x.shape[-1], len(index)))
    onehot[index, np.arange(len(index))] = 1.0
    return DiffValue(x.data[..., index], (x,), lambda g: (g @ onehot.T,))


# ---------------------------------------------------------------- layers

def pointwise_conv(x: DiffValue, w: DiffValue, b: DiffValue | None = None) -> DiffValue:
    """1x1 convolution: (B, Cin, T) x (Cout, Cin) -> (B, Cout, T)."""
    y = np.einsum("oc,bct->bot", w.data, x.data, optimize=True)
    if b is not None:
        y = y + b.data[None, :, None]

    def back(g):
        gx = np.einsum("oc,bot->bct", w.data, g, optimize=True)
        gw = np.einsum("bot,bct->oc", g, x.data, optimize=True)
        return (gx, gw) if b is None else (gx, gw, g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return DiffValue(y, parents, back)


def linear(x: DiffValue, w: DiffValue, b: DiffValue | None = None) -> DiffValue:
    """(..., Din) x (Dout, Din) -> (..., Dout)."""
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def back(g):
        gx = g @ w.data
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.data.shape[-1])
        return (gx, gw) if b is None else (gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return DiffValue(y, parents, back)


def depthwise_conv(x: DiffValue, w: DiffValue, b: DiffValue, dilation: int) -> DiffValue:
    """Non-causal dilated depthwise convolution, zero 'same' padding.

    y[b, c, t] = sum_k w[c, k] x[b, c, t + (k - (K-1)/2) d] + b[c]
    """
    k_size = w.shape[1]
    half = (k_size - 1) // 2
    pad = half * dilation
    _, _, t_len = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad)))
    shifted = [xp[:, :, k * dilation : k * dilation + t_len] for k in range(k_size)]
    y = sum(w.data[None, :, k, None] * shifted[k] for k in range(k_size)) + b.data[None, :, None]

    def back(g):
        gp = np.zeros_like(xp)
        gw = np.empty_like(w.data)
        for k in range(k_size):
            gp[:, :, k * dilation : k * dilation + t_len] += w.data[None, :, k, None] * g
            gw[:, k] = np.einsum("bct,bct->c", g, shifted[k])
        return gp[:, :, pad : pad + t_len], gw, g.sum(axis=(0, 2))

    return DiffValue(y, (x, w, b), back)


class BatchNormState:
    """Running statistics owned by one batch-norm layer."""

    def __init__(self, channels: int, momentum: float = 0.1):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum


def batch_norm(x: DiffValue, gamma: DiffValue, beta: DiffValue, state: BatchNormState,
               training: bool, update: bool = True, eps: float = 1e-5) -> DiffValue:
    """Per-channel normalization over (batch, time) of a (B, C, T) tensor.

    Training mode uses batch statistics and, if ``update``, folds them into the
    running averages; otherwise the running averages are used.
    """
    axes = (0, 2)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if update:
            n = x.data.size / x.data.shape[1]
            m = state.momentum
            state.mean = (1 - m) * state.mean + m * mu
            state.var = (1 - m) * state.var + m * var * n / max(n - 1, 1)
    else:
        mu, var = state.mean, state.var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None]) * inv[None, :, None]
    y = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data[None, :, None]
        if training:
            gx = inv[None, :, None] * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv[None, :, None]
        return gx, gg, gb

    return DiffValue(y, (x, gamma, beta), back)


def layer_norm(x: DiffValue, gamma: DiffValue | None, beta: DiffValue | None, axis: int = -1,
               eps: float = 1e-5) -> DiffValue:
    """Normalize over one axis; affine parameters broadcast along that axis."""
    axis = axis % x.data.ndim
    mu = x.data.mean(axis=axis, keepdims=True)
    var = x.data.var(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    shape = [1] * x.data.ndim
    shape[axis] = x.data.shape[axis]
    other = tuple(i for i in range(x.data.ndim) if i != axis)
    if gamma is None:
        y = xhat
    else:
        y = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def back(g):
        gxhat = g if gamma is None else g * gamma.data.reshape(shape)
        gx = inv * (gxhat - gxhat.mean(axis=axis, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=axis, keepdims=True))
        if gamma is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=other), g.sum(axis=other)

    parents = (x,) if gamma is None else (x, gamma, beta)
    return DiffValue(y, parents, back)


def lstm(x: DiffValue, w_ih: DiffValue, w_hh: DiffValue, b: DiffValue, reverse: bool = False) -> DiffValue:
    """One LSTM direction over (B, T, D) -> (B, T, H), zero initial state.

    Gate order i, f, g, o:  c_t = f c_{t-1} + i g,  h_t = o tanh(c_t).
    """
    xs = x.data[:, ::-1] if reverse else x.data
    bsz, t_len, _ = xs.shape
    hid = w_hh.shape[1]
    pre_x = xs @ w_ih.data.T + b.data  # (B, T, 4H)
    h = np.zeros((bsz, hid))
    c = np.zeros((bsz, hid))
    hs = np.empty((t_len, bsz, hid))
    cs = np.empty((t_len, bsz, hid))
    gates = np.empty((t_len, bsz, 4 * hid))
    whh_t = w_hh.data.T
    for t in range(t_len):
        z = pre_x[:, t] + h @ whh_t
        i = _sigmoid(z[:, :hid])
        f = _sigmoid(z[:, hid : 2 * hid])
        gg = np.tanh(z[:, 2 * hid : 3 * hid])
        o = _sigmoid(z[:, 3 * hid :])
        c = f * c + i * gg
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, gg, o], axis=1)
        cs[t] = c
        hs[t] = h
    out = np.transpose(hs, (1, 0, 2))
    if reverse:
        out = out[:, ::-1]

    def back(g):
        gh_seq = g[:, ::-1] if reverse else g
        dz_all = np.empty((t_len, bsz, 4 * hid))
        dh_next = np.zeros((bsz, hid))
        dc_next = np.zeros((bsz, hid))
        for t in range(t_len - 1, -1, -1):
            i, f, gg, o = np.split(gates[t], 4, axis=1)
            tc = np.tanh(cs[t])
            dh = gh_seq[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            c_prev = cs[t - 1] if t > 0 else np.zeros_like(cs[t])
            di = dc * gg
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1)
            dz_all[t] = dz
            dh_next = dz @ w_hh.data
            dc_next = dc * f
        dz_bt = np.transpose(dz_all, (1, 0, 2))  # (B, T, 4H)
        gx = dz_bt @ w_ih.data
        if reverse:
            gx = gx[:, ::-1]
        g_wih = dz_bt.reshape(-1, 4 * hid).T @ xs.reshape(-1, xs.shape[-1])
        h_prev = np.concatenate([np.zeros((1, bsz, hid)), hs[:-1]], axis=0)
        g_whh = np.einsum("tbg,tbh->gh", dz_all, h_prev, optimize=True)
        g_b = dz_all.sum(axis=(0, 1))
        return gx, g_wih, g_whh, g_b

    return DiffValue(np.ascontiguousarray(out), (x, w_ih, w_hh, b), back)


def recompose_node(mag: DiffValue, phase: np.ndarray, cfg: StftConfig = DEFAULT_STFT) -> DiffValue:
    """(B, T, F) magnitude with a fixed phase -> (B, N) waveform."""
    wav = recompose(mag.data, phase, cfg)
    return DiffValue(wav, (mag,), lambda g: (recompose_adjoint(g, phase, cfg),))


def mean_squared_error(est: DiffValue, ref: np.ndarray) -> DiffValue:
    diff = est.data - ref
    return DiffValue(np.mean(diff**2), (est,), lambda g: (g * 2.0 * diff / diff.size,))


def seed_loss(out: DiffValue, value: float, gradient: np.ndarray) -> DiffValue:
    """Scalar node whose backward injects an externally computed gradient into ``out``."""
    return DiffValue(value, (out,), lambda g: (g * gradient,))
