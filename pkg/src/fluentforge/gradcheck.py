"""Finite-difference verification of analytic gradients.

Central differences at eps 1e-4 in float64; relative error uses the
denominator max(|analytic|, |numeric|, 1e-8).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor

EPS = 1e-4
TOLERANCE = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name:<24} max_rel_error={self.max_rel_error:.6e}  {status}"


def grad_check(fn, inputs: list[Tensor], name: str = "fn", eps: float = EPS) -> GradCheckResult:
    """Compare analytic gradients of the scalar fn(*inputs) against central differences.

    Inputs must be float64 Tensors with requires_grad=True.
    """
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    out.backward()
    max_err = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else np.asarray(t.grad)
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn(*inputs).item()
            flat[i] = orig - eps
            lo = fn(*inputs).item()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * eps)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        max_err = max(max_err, err)
    return GradCheckResult(name, max_err)


def _rng(seed=1234):
    return np.random.default_rng(seed)


def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def check_linear(seed=1234):
    rng = _rng(seed)
    x, w, b = _t(rng, 4, 3), _t(rng, 3, 2), _t(rng, 2)
    return grad_check(lambda x, w, b: ad.sum_(x @ w + b), [x, w, b], "linear")


def check_conv1d(seed=1234):
    rng = _rng(seed)
    x, w, b = _t(rng, 3, 7), _t(rng, 4, 3, 3), _t(rng, 4)
    return grad_check(lambda x, w, b: ad.sum_(nn.conv1d(x, w, b)), [x, w, b], "conv1d")


def check_conv2d(seed=1234):
    rng = _rng(seed)
    x, w, b = _t(rng, 2, 5, 6), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    def fn(x, w, b):
        return ad.sum_(nn.conv2d(x, w, b, stride=(2, 2), padding=(1, 1)))
    return grad_check(fn, [x, w, b], "conv2d")


def check_batch_norm(seed=1234):
    rng = _rng(seed)
    x, gamma, beta = _t(rng, 3, 4, 5), _t(rng, 3), _t(rng, 3)
    probe = rng.standard_normal((3, 4, 5))  # random functional keeps input grads O(1)
    def fn(x, gamma, beta):
        bn = nn.BatchNorm(3)
        bn.gamma, bn.beta = gamma, beta
        return ad.sum_(bn(x, training=True) * probe)
    return grad_check(fn, [x, gamma, beta], "batch_norm")


def check_layer_norm(seed=1234):
    rng = _rng(seed)
    x, gamma, beta = _t(rng, 4, 6), _t(rng, 6), _t(rng, 6)
    def fn(x, gamma, beta):
        ln = nn.LayerNorm(6)
        ln.gamma, ln.beta = gamma, beta
        return ad.sum_(ad.power(ln(x), 2.0))
    return grad_check(fn, [x, gamma, beta], "layer_norm")


def check_softmax(seed=1234):
    rng = _rng(seed)
    x = _t(rng, 3, 5)
    mask = np.zeros((3, 5), dtype=bool)
    mask[:, 4] = True
    def fn(x):
        return ad.sum_(ad.power(nn.softmax(x, mask), 2.0))
    return grad_check(fn, [x], "softmax")


def check_lstm_cell(seed=1234):
    rng = _rng(seed)
    cell = nn.LSTMCell(3, 4, rng).cast(np.float64)
    x0, x1, x2 = _t(rng, 1, 3), _t(rng, 1, 3), _t(rng, 1, 3)
    params = list(cell.parameters().values())
    def fn(*args):
        xs = args[:3]
        h, c = cell.zero_state(np.float64)
        for x in xs:  # three unrolled steps
            h, c = cell(x, h, c)
        return ad.sum_(ad.power(h, 2.0)) + ad.sum_(ad.power(c, 2.0))
    return grad_check(fn, [x0, x1, x2] + params, "lstm_cell")


def check_conv_lstm_cell(seed=1234):
    rng = _rng(seed)
    cell = nn.ConvLSTMCell(2, 3, rng).cast(np.float64)
    x = _t(rng, 2, 5)
    params = list(cell.parameters().values())
    def fn(*args):
        h, c = cell.zero_state(5, np.float64)
        h, c = cell(args[0], h, c)
        return ad.sum_(ad.power(h, 2.0)) + ad.sum_(ad.power(c, 2.0))
    return grad_check(fn, [x] + params, "conv_lstm_cell")


def check_multi_head_attention(seed=1234):
    rng = _rng(seed)
    mha = nn.MultiHeadAttention(8, 8, 8, 2, rng).cast(np.float64)
    q, k, v = _t(rng, 3, 8), _t(rng, 4, 8), _t(rng, 4, 8)
    params = list(mha.parameters().values())
    def fn(*args):
        out, _ = mha(args[0], args[1], args[2])
        return ad.sum_(ad.power(out, 2.0))
    return grad_check(fn, [q, k, v] + params, "multi_head_attention")


def check_mse(seed=1234):
    rng = _rng(seed)
    x = _t(rng, 4, 3)
    target = rng.standard_normal((4, 3))
    mask = np.array([1.0, 1.0, 0.0, 1.0])
    return grad_check(lambda x: nn.mse(x, target, mask), [x], "mse")


def check_mae(seed=1234):
    rng = _rng(seed)
    x = _t(rng, 4, 3)
    target = rng.standard_normal((4, 3))
    return grad_check(lambda x: nn.mae(x, target), [x], "mae")


def check_cross_entropy(seed=1234):
    rng = _rng(seed)
    x = _t(rng, 5, 7)
    targets = np.array([1, 4, 0, 2, 6])
    return grad_check(lambda x: nn.cross_entropy(x, targets, pad_id=0), [x], "cross_entropy")


def _jitter_params(model, rng, scale=0.05):
    # moves zero-initialized biases off ReLU kinks so the loss is smooth
    # in a neighborhood of the evaluation point
    for t in model.parameters().values():
        t.data += scale * rng.standard_normal(t.data.shape)


def check_stutterzero_model(seed=1234):
    from . import stutterzero as sz
    rng = _rng(seed)
    model = sz.StutterZero(sz.micro_config(), np.random.default_rng(seed)).cast(np.float64)
    _jitter_params(model, rng)
    stuttered = rng.standard_normal((12, 8))
    fluent = rng.standard_normal((10, 8))
    tokens = [1, 4, 5, 4, 2]
    params = list(model.parameters().values())
    def fn(*args):
        return model.forward_train(stuttered, fluent, tokens)["total"]
    return grad_check(fn, params, "stutterzero")


def check_stutterformer_model(seed=1234):
    from . import stutterformer as sf
    rng = _rng(seed)
    model = sf.StutterFormer(sf.micro_config(), np.random.default_rng(seed)).cast(np.float64)
    _jitter_params(model, rng)
    stuttered = rng.standard_normal((8, 6))
    fluent = rng.standard_normal((7, 6))
    tokens = [1, 4, 5, 4, 2]
    params = list(model.parameters().values())
    def fn(*args):
        return model.forward_train(stuttered, fluent, tokens)["total"]
    return grad_check(fn, params, "stutterformer")


PRIMITIVE_CHECKS = {
    "linear": check_linear,
    "conv1d": check_conv1d,
    "conv2d": check_conv2d,
    "batch_norm": check_batch_norm,
    "layer_norm": check_layer_norm,
    "softmax": check_softmax,
    "lstm_cell": check_lstm_cell,
    "conv_lstm_cell": check_conv_lstm_cell,
    "multi_head_attention": check_multi_head_attention,
    "mse": check_mse,
    "mae": check_mae,
    "cross_entropy": check_cross_entropy,
    "stutterzero": check_stutterzero_model,
    "stutterformer": check_stutterformer_model,
}


def run_all(only: str | None = None, seed: int = 1234) -> list[GradCheckResult]:
    names = [only] if only else sorted(PRIMITIVE_CHECKS)
    if only and only not in PRIMITIVE_CHECKS:
        raise KeyError(f"unknown primitive: {only}")
    return [PRIMITIVE_CHECKS[n](seed) for n in names]
