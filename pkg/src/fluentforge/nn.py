"""Neural-network layers on top of the autodiff tape.

Weights are initialized uniform(-k, k) with k = 1/sqrt(fan_in); LSTM forget
gate biases start at 1.0, every other bias at 0.  Parameters live in float32
for training; `cast()` switches a whole module to float64 for gradient checks.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Base class: tracks parameters through attributes, recursively."""

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                out[attr] = value
            elif isinstance(value, Module):
                for name, p in value.parameters().items():
                    out[f"{attr}.{name}"] = p
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for name, p in item.parameters().items():
                            out[f"{attr}.{i}.{name}"] = p
        return dict(sorted(out.items()))

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state (running statistics) that checkpoints carry."""
        out = {name: np.asarray(getattr(self, name))
               for name in getattr(self, "_buffer_names", ())}
        for attr, value in vars(self).items():
            if isinstance(value, Module):
                for name, b in value.buffers().items():
                    out[f"{attr}.{name}"] = b
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for name, b in item.buffers().items():
                            out[f"{attr}.{i}.{name}"] = b
        return dict(sorted(out.items()))

    def set_buffer(self, name: str, value: np.ndarray):
        head, _, rest = name.partition(".")
        if not rest:
            current = getattr(self, name)
            if isinstance(current, (int, float)):
                setattr(self, name, type(current)(np.asarray(value).item()))
            else:
                setattr(self, name, np.asarray(value, dtype=np.asarray(current).dtype))
            return
        child = getattr(self, head)
        if isinstance(child, (list, tuple)):
            idx, _, rest = rest.partition(".")
            child = child[int(idx)]
        child.set_buffer(rest, value)

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def cast(self, dtype):
        for p in self.parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def _param(rng, shape, fan_in, dtype=np.float32) -> Tensor:
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, in_dim, out_dim, rng):
        self.weight = _param(rng, (in_dim, out_dim), in_dim)
        self.bias = _zeros((out_dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """'Same'-padded 1-D cross-correlation. x: (C_in, T), weight: (C_out, C_in, K)."""
    c_out, c_in, k = weight.shape
    t = x.shape[1]
    left = (k - 1) // 2
    xp = ad.pad(x, ((0, 0), (left, k - 1 - left)))
    y = None
    for j in range(k):
        term = weight[:, :, j] @ xp[:, j:j + t]
        y = term if y is None else y + term
    if bias is not None:
        y = y + ad.reshape(bias, (c_out, 1))
    return y


class Conv1d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng):
        fan_in = in_channels * kernel_size
        self.weight = _param(rng, (out_channels, in_channels, kernel_size), fan_in)
        self.bias = _zeros((out_channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride=(1, 1), padding=(1, 1)) -> Tensor:
    """2-D cross-correlation with zero padding. x: (C_in, H, W), weight: (C_out, C_in, kh, kw)."""
    c_out, c_in, kh, kw = weight.shape
    sh, sw = stride
    ph, pw = padding
    xp = ad.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    h_out = (x.shape[1] + 2 * ph - kh) // sh + 1
    w_out = (x.shape[2] + 2 * pw - kw) // sw + 1
    y = None
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, i:i + sh * h_out:sh, j:j + sw * w_out:sw]
            term = weight[:, :, i, j] @ ad.reshape(xs, (c_in, h_out * w_out))
            y = term if y is None else y + term
    y = ad.reshape(y, (c_out, h_out, w_out))
    if bias is not None:
        y = y + ad.reshape(bias, (c_out, 1, 1))
    return y


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, stride, padding, rng):
        kh, kw = kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = _param(rng, (out_channels, in_channels, kh, kw), in_channels * kh * kw)
        self.bias = _zeros((out_channels,))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm(Module):
    """Per-channel normalization over all non-channel axes of the input.

    Training mode uses the statistics of the given tensor; inference mode uses
    running statistics (momentum 0.9) and refuses to run before any update.
    """

    EPS = 1e-5
    _buffer_names = ("running_mean", "running_var", "num_updates")

    def __init__(self, channels, momentum=0.9):
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = _zeros((channels,))
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.num_updates = 0

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        axes = tuple(range(1, x.data.ndim))
        shape = (x.shape[0],) + (1,) * (x.data.ndim - 1)
        if training:
            mu = x
            for ax in reversed(axes):
                mu = ad.mean(mu, axis=ax, keepdims=True)
            centered = x - mu
            var = centered * centered
            for ax in reversed(axes):
                var = ad.mean(var, axis=ax, keepdims=True)
            self.running_mean = (self.momentum * self.running_mean
                                 + (1 - self.momentum) * mu.data.reshape(-1))
            self.running_var = (self.momentum * self.running_var
                                + (1 - self.momentum) * var.data.reshape(-1))
            self.num_updates += 1
            norm = centered * ad.power(var + self.EPS, -0.5)
        else:
            if self.num_updates == 0:
                raise RuntimeError("batch norm inference requested before any training update")
            mu = self.running_mean.reshape(shape).astype(x.data.dtype)
            sd = np.sqrt(self.running_var + self.EPS).reshape(shape).astype(x.data.dtype)
            norm = (x - Tensor(mu)) * Tensor(1.0 / sd)
        return norm * ad.reshape(self.gamma, shape) + ad.reshape(self.beta, shape)


class LayerNorm(Module):
    EPS = 1e-5

    def __init__(self, dim):
        self.gamma = Tensor(np.ones(dim, dtype=np.float32), requires_grad=True)
        self.beta = _zeros((dim,))

    def __call__(self, x: Tensor) -> Tensor:
        mu = ad.mean(x, axis=-1, keepdims=True)
        centered = x - mu
        var = ad.mean(centered * centered, axis=-1, keepdims=True)
        return centered * ad.power(var + self.EPS, -0.5) * self.gamma + self.beta


class LSTMCell(Module):
    """Standard LSTM with sigmoid input/forget/output gates and tanh candidate."""

    def __init__(self, in_dim, hidden_dim, rng):
        self.hidden_dim = hidden_dim
        self.w_x = _param(rng, (in_dim, 4 * hidden_dim), in_dim)
        self.w_h = _param(rng, (hidden_dim, 4 * hidden_dim), hidden_dim)
        bias = np.zeros(4 * hidden_dim, dtype=np.float32)
        bias[hidden_dim:2 * hidden_dim] = 1.0  # forget gate
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor, h_prev: Tensor, c_prev: Tensor):
        """x, h_prev, c_prev are (1, dim) rows; returns (h, c)."""
        hd = self.hidden_dim
        gates = x @ self.w_x + h_prev @ self.w_h + self.bias
        i = ad.sigmoid(gates[:, 0:hd])
        f = ad.sigmoid(gates[:, hd:2 * hd])
        g = ad.tanh(gates[:, 2 * hd:3 * hd])
        o = ad.sigmoid(gates[:, 3 * hd:4 * hd])
        c = f * c_prev + i * g
        h = o * ad.tanh(c)
        return h, c

    def zero_state(self, dtype=np.float32):
        z = np.zeros((1, self.hidden_dim), dtype=dtype)
        return Tensor(z), Tensor(z.copy())


class ConvLSTMCell(Module):
    """LSTM whose gate transforms are 1-D convolutions over a feature axis.

    States are (hidden_channels, F) maps; gate algebra matches LSTMCell.
    """

    def __init__(self, in_channels, hidden_channels, rng, kernel_size=3):
        self.hidden_channels = hidden_channels
        fan_x = in_channels * kernel_size
        fan_h = hidden_channels * kernel_size
        self.w_x = _param(rng, (4 * hidden_channels, in_channels, kernel_size), fan_x)
        self.w_h = _param(rng, (4 * hidden_channels, hidden_channels, kernel_size), fan_h)
        bias = np.zeros(4 * hidden_channels, dtype=np.float32)
        bias[hidden_channels:2 * hidden_channels] = 1.0
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor, h_prev: Tensor, c_prev: Tensor):
        """x: (C_in, F); h_prev, c_prev: (C_h, F); returns (h, c)."""
        ch = self.hidden_channels
        gates = conv1d(x, self.w_x) + conv1d(h_prev, self.w_h) + ad.reshape(self.bias, (4 * ch, 1))
        i = ad.sigmoid(gates[0:ch])
        f = ad.sigmoid(gates[ch:2 * ch])
        g = ad.tanh(gates[2 * ch:3 * ch])
        o = ad.sigmoid(gates[3 * ch:4 * ch])
        c = f * c_prev + i * g
        h = o * ad.tanh(c)
        return h, c

    def zero_state(self, width, dtype=np.float32):
        z = np.zeros((self.hidden_channels, width), dtype=dtype)
        return Tensor(z), Tensor(z.copy())


def softmax(x: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Max-subtracted softmax; positions where mask is True come out exactly 0."""
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.data.shape)
        if mask.all(axis=axis).any():
            raise ValueError("softmax row is fully masked")
        x = x + Tensor(np.where(mask, -1e30, 0.0).astype(x.data.dtype))
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = ad.exp(x - shift)
    if mask is not None:
        e = e * Tensor((~mask).astype(x.data.dtype))
    return e * ad.power(ad.sum_(e, axis=axis, keepdims=True), -1.0)


def sinusoidal_pe(max_len: int, dim: int) -> np.ndarray:
    """PE[pos, 2i] = sin(pos / 10000^(2i/dim)); PE[pos, 2i+1] = cos(same)."""
    if dim % 2:
        raise ValueError("positional encoding dimension must be even")
    pos = np.arange(max_len)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((max_len, dim))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class MultiHeadAttention(Module):
    """Scaled dot-product attention over multiple subspaces.

    Query and key/value inputs may have different widths; the attended output
    is projected back to model_dim.
    """

    def __init__(self, query_dim, kv_dim, model_dim, n_heads, rng):
        if model_dim % n_heads:
            raise ValueError("model_dim must be divisible by n_heads")
        self.n_heads = n_heads
        self.head_dim = model_dim // n_heads
        self.model_dim = model_dim
        self.w_q = _param(rng, (query_dim, model_dim), query_dim)
        self.w_k = _param(rng, (kv_dim, model_dim), kv_dim)
        self.w_v = _param(rng, (kv_dim, model_dim), kv_dim)
        self.w_o = _param(rng, (model_dim, model_dim), model_dim)
        self.b_o = _zeros((model_dim,))

    def __call__(self, query: Tensor, key: Tensor, value: Tensor,
                 mask: np.ndarray | None = None):
        """query: (Tq, dq); key/value: (Tk, dkv); mask: (Tq, Tk) True = blocked."""
        tq, tk = query.shape[0], key.shape[0]
        h, hd = self.n_heads, self.head_dim

        def split(x, t):
            return ad.transpose(ad.reshape(x, (t, h, hd)), (1, 0, 2))  # (h, t, hd)

        q = split(query @ self.w_q, tq)
        k = split(key @ self.w_k, tk)
        v = split(value @ self.w_v, tk)
        scores = q @ ad.transpose(k, (0, 2, 1)) * (1.0 / np.sqrt(hd))  # (h, tq, tk)
        head_mask = None if mask is None else np.broadcast_to(mask, (h, tq, tk))
        attn = softmax(scores, head_mask, axis=-1)
        ctx = attn @ v  # (h, tq, hd)
        merged = ad.reshape(ad.transpose(ctx, (1, 0, 2)), (tq, h * hd))
        return merged @ self.w_o + self.b_o, attn


class Embedding(Module):
    def __init__(self, vocab_size, dim, rng):
        self.weight = _param(rng, (vocab_size, dim), dim)

    def __call__(self, ids: np.ndarray) -> Tensor:
        return self.weight[np.asarray(ids, dtype=np.intp)]


def mse(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error over unmasked frames. mask: (T,) with 1 = keep."""
    target = Tensor(np.asarray(target, dtype=pred.data.dtype))
    diff = pred - target
    sq = diff * diff
    if mask is None:
        return ad.mean(sq)
    w = np.asarray(mask, dtype=pred.data.dtype)[:, None]
    denom = float(w.sum()) * pred.shape[1]
    if denom == 0:
        raise ValueError("loss over fully masked input")
    return ad.sum_(sq * w) * (1.0 / denom)


def mae(pred: Tensor, target: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    target = Tensor(np.asarray(target, dtype=pred.data.dtype))
    av = ad.absolute(pred - target)
    if mask is None:
        return ad.mean(av)
    w = np.asarray(mask, dtype=pred.data.dtype)[:, None]
    denom = float(w.sum()) * pred.shape[1]
    if denom == 0:
        raise ValueError("loss over fully masked input")
    return ad.sum_(av * w) * (1.0 / denom)


def cross_entropy(logits: Tensor, target_ids: np.ndarray, pad_id: int | None = None) -> Tensor:
    """Mean negative log-softmax probability of the target ids (pad ids excluded)."""
    target_ids = np.asarray(target_ids, dtype=np.intp)
    keep = np.ones(len(target_ids), dtype=bool) if pad_id is None else target_ids != pad_id
    if not keep.any():
        raise ValueError("loss over fully masked input")
    shift = np.max(logits.data, axis=1, keepdims=True)
    lse = ad.log(ad.sum_(ad.exp(logits - shift), axis=1, keepdims=False)) + Tensor(shift[:, 0])
    picked = logits[np.arange(len(target_ids)), target_ids]
    nll = (lse - picked)[keep]
    return ad.mean(nll)
