"""A small dense-tensor neural network core.

Layers keep their own forward cache and implement ``backward``; a
:class:`Network` is an ordered stack of layers. Image tensors are NHWC
internally (channels last) so the convolution reduces to one GEMM over
im2col patches. Everything runs in float32 by default; build with
``dtype=np.float64`` for gradient checks.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import get_blas_funcs

from . import kernels

# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------


def kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def xavier_uniform(rng, shape, fan_in, fan_out, dtype):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------


class Layer:
    kind = "layer"
    tag = 0

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        self.input_grad = True

    def init(self, rng, dtype):
        pass

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a forward cache")
        cache, self._cache = self._cache, None
        return cache

    def spec(self) -> dict:
        return {"kind": self.kind}


def _gemm(dtype):
    return get_blas_funcs("gemm", dtype=np.dtype(dtype))


def conv2d_forward(x, weight, bias):
    """Single-image reference API: x (C, H, W), weight (C', C, k, k) -> (C', H, W)."""
    layer = Conv2D(weight.shape[1], weight.shape[0], weight.shape[2])
    layer.params = {"W": weight, "b": bias}
    if x.ndim != 3 or x.shape[0] != weight.shape[1]:
        raise ValueError(f"input {x.shape} does not match weights {weight.shape}")
    y = layer.forward(np.transpose(x, (1, 2, 0))[None])
    layer._cache = None
    return np.transpose(y[0], (2, 0, 1))


class Conv2D(Layer):
    """Same-padded, stride-1 cross-correlation. W is (out, in, k, k).

    Narrow inputs use a single im2col GEMM. Wide inputs use shifted GEMMs:
    on the flattened padded tensor every kernel tap is a contiguous row
    offset, so each tap is one GEMM on a view with no patch copy. Rows that
    fall in the padding are computed and discarded.
    """

    kind = "conv2d"
    tag = 1
    im2col_max_channels = 8

    def __init__(self, in_ch, out_ch, kernel=3):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("conv kernel must be odd")
        if in_ch <= 0 or out_ch <= 0:
            raise ValueError("channel counts must be positive")
        self.in_ch, self.out_ch, self.k = in_ch, out_ch, kernel

    def init(self, rng, dtype):
        fan_in = self.in_ch * self.k * self.k
        self.params = {
            "W": kaiming_uniform(rng, (self.out_ch, self.in_ch, self.k, self.k), fan_in, dtype),
            "b": np.zeros(self.out_ch, dtype=dtype),
        }

    @property
    def _use_im2col(self) -> bool:
        return self.in_ch <= self.im2col_max_channels

    def _taps(self):
        # (k, k, in, out): taps[i, j] is the in->out matrix of kernel tap (i, j)
        return np.ascontiguousarray(self.params["W"].transpose(2, 3, 1, 0))

    def _pad(self, x):
        n, h, w, c = x.shape
        p = self.k // 2
        xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
        xp[:, p:p + h, p:p + w] = x
        return xp

    def forward(self, x):
        n, h, w, c = x.shape
        if c != self.in_ch:
            raise ValueError(f"conv expects {self.in_ch} channels, got {c}")
        k = self.k
        xp = self._pad(x)
        taps = self._taps()
        if self._use_im2col:
            cols = np.empty((n, h, w, k * k * c), dtype=x.dtype)
            for i in range(k):
                for j in range(k):
                    s = (i * k + j) * c
                    cols[..., s:s + c] = xp[:, i:i + h, j:j + w, :]
            cols = cols.reshape(n * h * w, -1)
            y = cols @ taps.reshape(k * k * c, self.out_ch)
            y += self.params["b"]
            self._cache = (cols, x.shape)
            return y.reshape(n, h, w, self.out_ch)
        hp, wp = xp.shape[1], xp.shape[2]
        xf = xp.reshape(-1, c)
        m = xf.shape[0] - (k - 1) * (wp + 1)
        y = np.zeros((xf.shape[0], self.out_ch), dtype=x.dtype)
        gemm = _gemm(x.dtype)
        # y is C-ordered, so y.T is a Fortran view that gemm can accumulate into
        yt = y[:m].T
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                gemm(1.0, taps[i, j].T, xf[off:off + m].T, beta=1.0, c=yt, overwrite_c=1)
        y += self.params["b"]
        self._cache = (xf, x.shape)
        return y.reshape(n, hp, wp, self.out_ch)[:, :h, :w]

    def backward(self, dy):
        cached, shape = self._take_cache()
        n, h, w, c = shape
        k, p = self.k, self.k // 2
        taps = self._taps()
        self.grads["b"] += dy.sum(axis=(0, 1, 2))
        if self._use_im2col:
            cols = cached
            d2 = dy.reshape(-1, self.out_ch)
            dwm = cols.T @ d2
            self.grads["W"] += dwm.reshape(k, k, c, self.out_ch).transpose(3, 2, 0, 1)
            if not self.input_grad:
                return None
            dcols = (d2 @ taps.reshape(k * k * c, self.out_ch).T).reshape(n, h, w, -1)
            return kernels.col2im(dcols, k, c)
        xf = cached
        hp, wp = h + 2 * p, w + 2 * p
        m = xf.shape[0] - (k - 1) * (wp + 1)
        dyf = np.zeros((n, hp, wp, self.out_ch), dtype=dy.dtype)
        dyf[:, :h, :w] = dy
        dyf = dyf.reshape(-1, self.out_ch)[:m]
        dw = np.empty((k, k, c, self.out_ch), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                dw[i, j] = xf[off:off + m].T @ dyf
        self.grads["W"] += dw.transpose(3, 2, 0, 1)
        if not self.input_grad:
            return None
        dxf = np.zeros_like(xf)
        gemm = _gemm(dy.dtype)
        dyt = dyf.T
        for i in range(k):
            for j in range(k):
                off = i * wp + j
                gemm(1.0, taps[i, j].T, dyt, beta=1.0, c=dxf[off:off + m].T, overwrite_c=1, trans_a=1)
        return dxf.reshape(n, hp, wp, c)[:, p:p + h, p:p + w]

    def spec(self):
        return {"kind": self.kind, "in_ch": self.in_ch, "out_ch": self.out_ch, "kernel": self.k}


def maxpool2x2_forward(x):
    """x (N, H, W, C) -> (pooled, argmax index 0..3 within each window)."""
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"maxpool needs even spatial dims, got {x.shape[1:3]}")
    return kernels.maxpool_fwd(np.ascontiguousarray(x))


def maxpool2x2_backward(dy, arg):
    return kernels.maxpool_bwd(np.ascontiguousarray(dy), arg)


class MaxPool2x2(Layer):
    kind = "maxpool"
    tag = 6

    def forward(self, x):
        y, arg = maxpool2x2_forward(x)
        self._cache = arg
        return y

    def backward(self, dy):
        return maxpool2x2_backward(dy, self._take_cache())


class Flatten(Layer):
    kind = "flatten"
    tag = 7

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._take_cache())


def dense_forward(x, weight, bias):
    if x.shape[-1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ValueError(f"dense shape mismatch: x {x.shape}, W {weight.shape}, b {bias.shape}")
    return x @ weight.T + bias


class Dense(Layer):
    """Affine map; W is (out, in)."""

    kind = "dense"
    tag = 2

    def __init__(self, n_in, n_out, init="kaiming"):
        super().__init__()
        if n_in <= 0 or n_out <= 0:
            raise ValueError("dense dims must be positive")
        self.n_in, self.n_out, self.init_kind = n_in, n_out, init

    def init(self, rng, dtype):
        if self.init_kind == "xavier":
            w = xavier_uniform(rng, (self.n_out, self.n_in), self.n_in, self.n_out, dtype)
        else:
            w = kaiming_uniform(rng, (self.n_out, self.n_in), self.n_in, dtype)
        self.params = {"W": w, "b": np.zeros(self.n_out, dtype=dtype)}

    def forward(self, x):
        self._cache = x
        return dense_forward(x, self.params["W"], self.params["b"])

    def backward(self, dy):
        x = self._take_cache()
        self.grads["W"] += dy.T @ x
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["W"] if self.input_grad else None

    def spec(self):
        return {"kind": self.kind, "in": self.n_in, "out": self.n_out}


class Relu(Layer):
    kind = "relu"
    tag = 4

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._take_cache()


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class Sigmoid(Layer):
    kind = "sigmoid"
    tag = 5

    def forward(self, x):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._take_cache()
        return dy * y * (1 - y)


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class SoftmaxHead(Layer):
    kind = "softmax"
    tag = 8

    def forward(self, x):
        p = softmax(x)
        self._cache = p
        return p

    def backward(self, dy):
        p = self._take_cache()
        return p * (dy - (dy * p).sum(axis=-1, keepdims=True))


@dataclass
class LstmParams:
    Wx: np.ndarray  # (D, 4H), gate blocks ordered i, f, g, o
    Wh: np.ndarray  # (H, 4H)
    b: np.ndarray   # (4H,)


def lstm_step(x, h, c, params: LstmParams):
    """One LSTM step. Returns ``(h_next, c_next, cache)``."""
    hd = params.Wh.shape[0]
    if x.shape[-1] != params.Wx.shape[0] or h.shape[-1] != hd or c.shape[-1] != hd:
        raise ValueError("lstm_step shape mismatch")
    a = x @ params.Wx + h @ params.Wh + params.b
    i = sigmoid(a[..., :hd])
    f = sigmoid(a[..., hd:2 * hd])
    g = np.tanh(a[..., 2 * hd:3 * hd])
    o = sigmoid(a[..., 3 * hd:])
    c_next = f * c + i * g
    tc = np.tanh(c_next)
    h_next = o * tc
    return h_next, c_next, (x, h, c, i, f, g, o, tc)


def lstm_step_backward(dh, dc, cache, params: LstmParams, grads: dict):
    """Backprop one step; accumulates into ``grads`` and returns (dx, dh_prev, dc_prev)."""
    x, h, c, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1 - tc * tc)
    da = np.concatenate(
        [dc * g * i * (1 - i), dc * c * f * (1 - f), dc * i * (1 - g * g), do * o * (1 - o)], axis=-1
    )
    grads["Wx"] += x.T @ da
    grads["Wh"] += h.T @ da
    grads["b"] += da.sum(axis=0)
    return da @ params.Wx.T, da @ params.Wh.T, dc * f


class LSTM(Layer):
    """Runs a cell over (N, T, D) sequences and returns the final hidden state."""

    kind = "lstm"
    tag = 3

    def __init__(self, input_dim, hidden_dim, forget_bias=1.0):
        super().__init__()
        if input_dim <= 0 or hidden_dim <= 0:
            raise ValueError("LSTM dims must be positive")
        self.input_dim, self.hidden_dim, self.forget_bias = input_dim, hidden_dim, forget_bias

    def init(self, rng, dtype):
        d, h = self.input_dim, self.hidden_dim
        b = np.zeros(4 * h, dtype=dtype)
        b[h:2 * h] = self.forget_bias
        self.params = {
            "Wx": xavier_uniform(rng, (d, 4 * h), d, 4 * h, dtype),
            "Wh": xavier_uniform(rng, (h, 4 * h), h, 4 * h, dtype),
            "b": b,
        }

    @property
    def cell(self) -> LstmParams:
        return LstmParams(self.params["Wx"], self.params["Wh"], self.params["b"])

    def forward(self, x):
        n, t, d = x.shape
        if d != self.input_dim:
            raise ValueError(f"LSTM expects {self.input_dim} features, got {d}")
        h = np.zeros((n, self.hidden_dim), dtype=x.dtype)
        c = np.zeros_like(h)
        cell = self.cell
        caches = []
        for k in range(t):
            h, c, cache = lstm_step(x[:, k], h, c, cell)
            caches.append(cache)
        self._cache = (caches, x.shape)
        return h

    def backward(self, dy):
        caches, shape = self._take_cache()
        cell = self.cell
        dx = np.zeros(shape, dtype=dy.dtype)
        dh, dc = dy, np.zeros_like(dy)
        for k in range(len(caches) - 1, -1, -1):
            dx[:, k], dh, dc = lstm_step_backward(dh, dc, caches[k], cell, self.grads)
        return dx

    def spec(self):
        return {"kind": self.kind, "input_dim": self.input_dim, "hidden_dim": self.hidden_dim}


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def mse(pred, target):
    """Mean squared error over all elements and its gradient."""
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def cross_entropy(probs, labels):
    """Mean negative log-likelihood of ``labels`` and its gradient w.r.t. probs."""
    labels = np.asarray(labels)
    n, k = probs.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k})")
    picked = probs[np.arange(n), labels]
    grad = np.zeros_like(probs)
    grad[np.arange(n), labels] = -1.0 / (n * picked)
    return float(-np.mean(np.log(picked))), grad


def softmax_cross_entropy(logits, labels):
    """Fused loss on logits; gradient is ``(p - onehot) / N``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"label out of range [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(-np.mean(logp[np.arange(n), labels])), grad / n


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class Network:
    def __init__(self, layers, seed=0, dtype=np.float32, name="net"):
        self.layers = list(layers)
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.name = name
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng, self.dtype)
            layer.zero_grad()
        # the first layer never needs an input gradient
        if self.layers:
            self.layers[0].input_grad = False

    # parameters -------------------------------------------------------

    def parameters(self):
        """(label, param, grad) triples in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                out.append((f"{i}.{layer.kind}.{k}", layer.params[k], layer.grads[k]))
        return out

    def num_params(self) -> int:
        return sum(p.size for _, p, _ in self.parameters())

    def zero_grad(self):
        for layer in self.layers:
            for g in layer.grads.values():
                g.fill(0)

    def astype(self, dtype) -> "Network":
        """Copy of the network in another precision."""
        net = Network([], self.seed, dtype, self.name)
        import copy

        net.layers = copy.deepcopy(self.layers)
        net.config = getattr(self, "config", None)
        for layer in net.layers:
            for k in layer.params:
                layer.params[k] = layer.params[k].astype(dtype)
            layer.zero_grad()
            layer._cache = None
        return net

    @property
    def has_softmax_head(self) -> bool:
        return bool(self.layers) and isinstance(self.layers[-1], SoftmaxHead)

    # passes -----------------------------------------------------------

    def forward(self, x, upto=None):
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[:upto]:
            x = layer.forward(x)
        return x

    def backward(self, dy, upto=None):
        for layer in reversed(self.layers[:upto]):
            if dy is None:
                break
            dy = layer.backward(dy)
        return dy

    def predict(self, x, batch_size=64):
        """Inference in batches; drops caches afterwards."""
        x = np.asarray(x, dtype=self.dtype)
        outs = [self.forward(x[s:s + batch_size]) for s in range(0, len(x), batch_size)]
        for layer in self.layers:
            layer._cache = None
        return np.concatenate(outs) if outs else np.empty((0,))

    def loss_and_grad(self, x, target, loss: str):
        """Forward, loss, backward. Gradients are accumulated (call zero_grad first)."""
        if loss == "ce" and self.has_softmax_head:
            logits = self.forward(x, upto=-1)
            value, d = softmax_cross_entropy(logits, target)
            self.backward(d.astype(self.dtype), upto=-1)
        elif loss == "ce":
            value, d = cross_entropy(self.forward(x), target)
            self.backward(d.astype(self.dtype))
        elif loss == "mse":
            value, d = mse(self.forward(x), np.asarray(target, dtype=self.dtype))
            self.backward(d.astype(self.dtype))
        else:
            raise ValueError(f"unknown loss {loss!r}")
        return value

    def loss(self, x, target, loss: str) -> float:
        if loss == "ce":
            if self.has_softmax_head:
                value = softmax_cross_entropy(self.forward(x, upto=-1), target)[0]
            else:
                value = cross_entropy(self.forward(x), target)[0]
        else:
            value = mse(self.forward(x), np.asarray(target, dtype=self.dtype))[0]
        for layer in self.layers:
            layer._cache = None
        return value


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] = []
        self.v: list[np.ndarray] = []

    def step(self, params, grads):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(params) != len(self.m) or len(grads) != len(params):
            raise ValueError("parameter list changed between steps")
        self.t += 1
        bc1 = 1 - self.beta1**self.t
        bc2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape or p.shape != m.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)


def adam_step(params, grads, lr, state: Adam | None = None) -> Adam:
    """Functional wrapper: updates ``params`` in place and returns the state."""
    state = state or Adam(lr)
    state.lr = lr
    state.step(params, grads)
    return state


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    per_param: dict

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-4


def grad_check(net: Network, x, target, loss="mse", eps=1e-5, samples=None, seed=0, abs_floor=1e-6) -> GradCheckResult:
    """Compare backprop gradients with central differences.

    ``samples`` limits each parameter tensor to that many entries (a mix of
    the largest-gradient and random entries); ``None`` checks every entry.
    Relative error is ``|a - n| / max(|a|, |n|, abs_floor)``.

    An entry whose error exceeds 1e-6 is re-measured with ``eps / 10`` and
    the smaller error kept: a ReLU input within ``eps`` of zero makes the
    central difference straddle the kink, while a wrong backward pass
    disagrees at both step sizes.
    """
    if net.dtype != np.float64:
        raise ValueError("grad_check requires a float64 network")
    rng = np.random.default_rng(seed)
    net.zero_grad()
    net.loss_and_grad(x, target, loss)
    per_param = {}
    worst, worst_name = 0.0, ""
    for name, p, g in net.parameters():
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1).copy()
        if samples is None or samples >= flat_p.size:
            idx = np.arange(flat_p.size)
        else:
            top = np.argsort(-np.abs(flat_g), kind="stable")[: samples // 2]
            rand = rng.choice(flat_p.size, size=samples - len(top), replace=False)
            idx = np.unique(np.concatenate([top, rand]))
        err = 0.0
        for j in idx:
            ana = flat_g[j]
            rel = np.inf
            for step in (eps, eps / 10):
                old = flat_p[j]
                flat_p[j] = old + step
                lp = net.loss(x, target, loss)
                flat_p[j] = old - step
                lm = net.loss(x, target, loss)
                flat_p[j] = old
                num = (lp - lm) / (2 * step)
                rel = min(rel, abs(ana - num) / max(abs(ana), abs(num), abs_floor))
                if rel <= 1e-6:
                    break
            err = max(err, rel)
        per_param[name] = err
        if err >= worst:
            worst, worst_name = err, name
    net.zero_grad()
    return GradCheckResult(worst, worst_name, per_param)


# ---------------------------------------------------------------------------
# GNNW weight files
# ---------------------------------------------------------------------------

GNNW_MAGIC = b"GNNW"
GNNW_VERSION = 1


def save_weights(path, net: Network) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sII", GNNW_MAGIC, GNNW_VERSION, len(net.layers)))
        for layer in net.layers:
            fh.write(struct.pack("<BB", layer.tag, len(layer.params)))
            for k in sorted(layer.params):
                arr = np.ascontiguousarray(layer.params[k], dtype="<f4")
                fh.write(struct.pack("<B", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())


def load_weights(path, net: Network) -> Network:
    """Fill ``net`` in place from a GNNW file; rejects any architecture mismatch."""
    raw = open(path, "rb").read()
    if raw[:4] != GNNW_MAGIC:
        raise ValueError(f"{path}: not a GNNW file")
    _, version, n_layers = struct.unpack_from("<4sII", raw)
    if version != GNNW_VERSION:
        raise ValueError(f"{path}: unsupported GNNW version {version}")
    if n_layers != len(net.layers):
        raise ValueError(f"{path}: {n_layers} layers, network has {len(net.layers)}")
    off = 12
    loaded = []
    try:
        for layer in net.layers:
            tag, n_tensors = struct.unpack_from("<BB", raw, off)
            off += 2
            if tag != layer.tag or n_tensors != len(layer.params):
                raise ValueError(f"{path}: layer kind mismatch at {layer.kind}")
            tensors = {}
            for k in sorted(layer.params):
                (ndim,) = struct.unpack_from("<B", raw, off)
                off += 1
                shape = struct.unpack_from(f"<{ndim}I", raw, off)
                off += 4 * ndim
                if tuple(shape) != layer.params[k].shape:
                    raise ValueError(f"{path}: shape {shape} != {layer.params[k].shape} for {layer.kind}.{k}")
                count = int(np.prod(shape))
                if off + 4 * count > len(raw):
                    raise ValueError(f"{path}: payload truncated")
                tensors[k] = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(shape)
                off += 4 * count
            loaded.append(tensors)
    except struct.error as exc:
        raise ValueError(f"{path}: truncated file") from exc
    for layer, tensors in zip(net.layers, loaded):
        for k, v in tensors.items():
            layer.params[k] = v.astype(net.dtype)
        layer.zero_grad()
    return net
