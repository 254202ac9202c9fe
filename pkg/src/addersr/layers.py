"""Adder correlation, convolution, batch norm and the power activation.

Weights use the (c_out, c_in, k, k) layout for both adder and conv layers.
Every forward op records its gradient rule on the active tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigurationError, ParameterError, ShapeError
from .tensor import Tensor, add, emit, relu

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ALPHA_MIN, ALPHA_MAX = 0.1, 4.0


def same_padding(k: int) -> int:
    if k % 2 == 0:
        raise ParameterError(f"'same' padding needs an odd kernel, got k={k}")
    return (k - 1) // 2


def fan_in_bound(k: int, c_in: int) -> float:
    return math.sqrt(6.0 / (k * k * c_in))


@dataclass
class AdderLayerParams:
    """Filter bank plus optional batch-norm state.

    Conv layers reuse this container and leave the BN fields as None.
    """

    weight: Tensor
    stride: int = 1
    padding: int = 0
    bn_gamma: Tensor | None = None
    bn_beta: Tensor | None = None
    bn_running_mean: np.ndarray | None = None
    bn_running_var: np.ndarray | None = None

    def __post_init__(self):
        if self.stride < 1:
            raise ParameterError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ParameterError(f"padding must be non-negative, got {self.padding}")
        if self.bn_running_var is not None and np.any(self.bn_running_var < 0):
            raise ParameterError("running variance must be non-negative")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def has_bn(self) -> bool:
        return self.bn_gamma is not None

    @classmethod
    def create(cls, c_in, c_out, k, seed, *, padding="same", stride=1,
               batch_norm=False, gamma_init=1.0, name="layer"):
        """Fan-in uniform init, optional per-channel BN with the given gamma."""
        pad = same_padding(k) if padding == "same" else int(padding)
        b = fan_in_bound(k, c_in)
        rng = np.random.default_rng(seed)
        w = Tensor(rng.uniform(-b, b, size=(c_out, c_in, k, k)), requires_grad=True,
                   name=f"{name}.weight")
        p = cls(w, stride=stride, padding=pad)
        if batch_norm:
            p.bn_gamma = Tensor(np.full((1, c_out, 1, 1), float(gamma_init)),
                                requires_grad=True, name=f"{name}.bn_gamma")
            p.bn_beta = Tensor(np.zeros((1, c_out, 1, 1)), requires_grad=True,
                               name=f"{name}.bn_beta")
            p.bn_running_mean = np.zeros(c_out)
            p.bn_running_var = np.ones(c_out)
        return p

    def parameters(self) -> list[Tensor]:
        out = [self.weight]
        if self.has_bn:
            out += [self.bn_gamma, self.bn_beta]
        return out


@dataclass
class PowerActParams:
    alpha: Tensor = field(default_factory=lambda: Tensor(np.ones((1, 1, 1, 1)), requires_grad=True))

    @classmethod
    def fixed(cls, value: float = 1.0) -> "PowerActParams":
        return cls(Tensor(np.full((1, 1, 1, 1), float(value)), requires_grad=False))

    @property
    def value(self) -> float:
        return self.alpha.item()

    def clamp(self) -> None:
        np.clip(self.alpha.data, ALPHA_MIN, ALPHA_MAX, out=self.alpha.data)


def _prepare(x: Tensor, p: AdderLayerParams):
    n, c, h, w = x.shape
    if c != p.c_in:
        raise ShapeError(f"input has {c} channels, layer expects {p.c_in}")
    hp, wp = h + 2 * p.padding, w + 2 * p.padding
    if hp < p.k or wp < p.k:
        raise ShapeError(f"padded input {hp}x{wp} smaller than kernel {p.k}")
    ho = (hp - p.k) // p.stride + 1
    wo = (wp - p.k) // p.stride + 1
    if p.padding:
        pad = p.padding
        xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    return xp, ho, wo


def _crop(dxp: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return dxp
    return np.ascontiguousarray(dxp[:, :, pad:-pad, pad:-pad])


def adder_correlate(x: Tensor, p: AdderLayerParams, grad_mode: str = "surrogate") -> Tensor:
    """Negated L1 distance between each input patch and each filter.

    ``grad_mode`` selects the backward rule: ``"surrogate"`` (clipped input
    gradient, full-precision weight gradient) or ``"sign"`` (true subgradient).
    """
    if grad_mode not in ("surrogate", "sign"):
        raise ParameterError(f"unknown grad_mode {grad_mode!r}")
    xp, ho, wo = _prepare(x, p)
    y = _kernels.adder_forward(xp, p.weight.data, p.stride, ho, wo)
    mode = _kernels.SURROGATE if grad_mode == "surrogate" else _kernels.SIGN

    def backward_fn(g):
        dxp, dw = _kernels.adder_backward(xp, p.weight.data, np.ascontiguousarray(g), p.stride, mode)
        return _crop(dxp, p.padding), dw

    return emit("adder", (x, p.weight), y, backward_fn)


def adder_backward(x: Tensor, p: AdderLayerParams, dy: np.ndarray,
                   grad_mode: str = "surrogate") -> tuple[np.ndarray, np.ndarray]:
    xp, ho, wo = _prepare(x, p)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    if dy.shape != (x.shape[0], p.c_out, ho, wo):
        raise ShapeError(f"dY shape {dy.shape} does not match output {(x.shape[0], p.c_out, ho, wo)}")
    mode = _kernels.SURROGATE if grad_mode == "surrogate" else _kernels.SIGN
    dxp, dw = _kernels.adder_backward(xp, p.weight.data, dy, p.stride, mode)
    return _crop(dxp, p.padding), dw


def conv2d(x: Tensor, p: AdderLayerParams) -> Tensor:
    xp, ho, wo = _prepare(x, p)
    y = _kernels.conv_forward(xp, p.weight.data, p.stride, ho, wo)

    def backward_fn(g):
        dxp, dw = _kernels.conv_backward(xp, p.weight.data, np.ascontiguousarray(g), p.stride)
        return _crop(dxp, p.padding), dw

    return emit("conv", (x, p.weight), y, backward_fn)


def batch_norm(x: Tensor, p: AdderLayerParams, training: bool) -> Tensor:
    if not p.has_bn:
        raise ConfigurationError("layer has no batch-norm parameters")
    gamma, beta = p.bn_gamma, p.bn_beta
    n, c, h, w = x.shape
    m = n * h * w
    if training:
        if m < 2:
            raise ShapeError("training-mode batch norm needs at least 2 values per channel")
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        p.bn_running_mean *= 1.0 - BN_MOMENTUM
        p.bn_running_mean += BN_MOMENTUM * mean
        p.bn_running_var *= 1.0 - BN_MOMENTUM
        p.bn_running_var += BN_MOMENTUM * var * (m / (m - 1))
    else:
        mean, var = p.bn_running_mean, p.bn_running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    y = gamma.data * xhat + beta.data

    def backward_fn(g):
        dbeta = g.sum(axis=(0, 2, 3), keepdims=True)
        dgamma = (g * xhat).sum(axis=(0, 2, 3), keepdims=True)
        scale = gamma.data * inv.reshape(1, c, 1, 1)
        if training:
            dx = scale / m * (m * g - dbeta - xhat * dgamma)
        else:
            dx = scale * g
        return dx, dgamma, dbeta

    return emit("batch_norm", (x, gamma, beta), y, backward_fn)


def power_activation(y: Tensor, a: PowerActParams) -> Tensor:
    """Signed power map sign(y) * |y| ** alpha, differentiable in y and alpha."""
    alpha = a.alpha.item()
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    mag = np.abs(y.data)
    nz = mag > 0
    safe = np.where(nz, mag, 1.0)
    powered = np.where(nz, safe ** alpha, 0.0)
    out = np.sign(y.data) * powered

    def backward_fn(g):
        dy = np.where(nz, alpha * safe ** (alpha - 1.0), 0.0) * g
        dalpha = (g * out * np.log(safe)).sum()
        return dy, np.full((1, 1, 1, 1), dalpha)

    return emit("power", (y, a.alpha), out, backward_fn)


def relu_power(y: Tensor, a: PowerActParams) -> Tensor:
    """Rectified power activation max(y, 0) ** alpha."""
    alpha = a.alpha.item()
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}")
    pos = y.data > 0
    safe = np.where(pos, y.data, 1.0)
    out = np.where(pos, safe ** alpha, 0.0)

    def backward_fn(g):
        dy = np.where(pos, alpha * safe ** (alpha - 1.0), 0.0) * g
        dalpha = (g * out * np.log(safe)).sum()
        return dy, np.full((1, 1, 1, 1), dalpha)

    return emit("relu_power", (y, a.alpha), out, backward_fn)


def adder_block(x: Tensor, p: AdderLayerParams, a: PowerActParams | None, training: bool,
                shortcut: bool = True) -> Tensor:
    """adder -> BN -> rectified activation, optionally added back onto the input.

    ``a=None`` uses plain ReLU.
    """
    if shortcut:
        if p.c_in != p.c_out:
            raise ConfigurationError(f"self-shortcut needs c_in == c_out, got {p.c_in} -> {p.c_out}")
        if p.stride != 1 or 2 * p.padding != p.k - 1:
            raise ConfigurationError("self-shortcut needs stride 1 and 'same' padding")
    h = batch_norm(adder_correlate(x, p), p, training)
    h = relu_power(h, a) if a is not None else relu(h)
    return add(x, h) if shortcut else h


def self_shortcut_block(x: Tensor, p: AdderLayerParams, a: PowerActParams | None,
                        training: bool) -> Tensor:
    return adder_block(x, p, a, training, shortcut=True)

