"""Minimal CNN compute engine on NHWC numpy arrays.

Layers are described by frozen dataclasses collected in a ``NetworkSpec``;
weights live separately in a ``WeightSet`` so one spec can be trained from
several initializations. Convolution and pooling use strided window views
and a short loop over kernel offsets for the backward pass, which keeps the
math readable and fast enough for desk-scale images.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

if TYPE_CHECKING:
    from core.config import TrainConfig

Shape = Tuple[int, int, int]


class ShapeError(ValueError):
    """Raised when tensor shapes do not chain."""


class ShapeUnderflow(ShapeError):
    """Raised when a layer would shrink a spatial dimension below 1."""


class NonFiniteLoss(RuntimeError):
    """Raised when the training loss becomes NaN or infinite."""


class Padding(str, Enum):
    SAME = "SAME"
    VALID = "VALID"


class PoolType(str, Enum):
    MAX = "MAX"
    AVG = "AVG"


class Initializer(str, Enum):
    GAUSSIAN = "GAUSSIAN"
    XAVIER = "XAVIER"


def conv_output_dim(size: int, filter_size: int, stride: int, padding: Padding) -> int:
    if padding is Padding.SAME:
        return -(-size // stride)
    return (size - filter_size) // stride + 1


def pool_output_dim(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


@dataclass(frozen=True)
class ConvLayer:
    in_shape: Shape
    out_shape: Shape
    filter_size: int
    num_feature_maps: int
    stride: int
    padding: Padding
    weight_mean: float
    weight_std: float

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.filter_size, self.filter_size, self.in_shape[2], self.num_feature_maps)

    @property
    def fan_in(self) -> int:
        return self.filter_size * self.filter_size * self.in_shape[2]

    @property
    def fan_out(self) -> int:
        return self.filter_size * self.filter_size * self.num_feature_maps

    @property
    def param_count(self) -> int:
        return int(np.prod(self.weight_shape)) + self.num_feature_maps


@dataclass(frozen=True)
class PoolLayer:
    in_shape: Shape
    out_shape: Shape
    kernel_size: int
    stride: int
    pool_type: PoolType
    param_count: int = 0


@dataclass(frozen=True)
class FlattenLayer:
    in_shape: Shape
    out_dim: int
    param_count: int = 0


@dataclass(frozen=True)
class DenseLayer:
    in_dim: int
    out_dim: int
    weight_mean: float
    weight_std: float
    relu: bool = True

    @property
    def weight_shape(self) -> Tuple[int, int]:
        return (self.in_dim, self.out_dim)

    @property
    def fan_in(self) -> int:
        return self.in_dim

    @property
    def fan_out(self) -> int:
        return self.out_dim

    @property
    def param_count(self) -> int:
        return self.in_dim * self.out_dim + self.out_dim


Layer = Union[ConvLayer, PoolLayer, FlattenLayer, DenseLayer]


def build_conv(
    in_shape: Shape,
    filter_size: int,
    num_feature_maps: int,
    stride: int = 1,
    padding: Padding = Padding.SAME,
    weight_mean: float = 0.0,
    weight_std: float = 0.1,
) -> ConvLayer:
    height, width, _ = in_shape
    out_h = conv_output_dim(height, filter_size, stride, padding)
    out_w = conv_output_dim(width, filter_size, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeUnderflow(f"{filter_size}x{filter_size} {padding.value} conv on {height}x{width} leaves {out_h}x{out_w}")
    return ConvLayer(
        in_shape=tuple(in_shape),
        out_shape=(out_h, out_w, num_feature_maps),
        filter_size=filter_size,
        num_feature_maps=num_feature_maps,
        stride=stride,
        padding=padding,
        weight_mean=float(weight_mean),
        weight_std=float(weight_std),
    )


def build_pool(in_shape: Shape, kernel_size: int, stride: int, pool_type: PoolType) -> PoolLayer:
    height, width, channels = in_shape
    out_h = pool_output_dim(height, kernel_size, stride)
    out_w = pool_output_dim(width, kernel_size, stride)
    if out_h < 1 or out_w < 1:
        raise ShapeUnderflow(f"{kernel_size}x{kernel_size} pool on {height}x{width} leaves {out_h}x{out_w}")
    return PoolLayer(
        in_shape=tuple(in_shape),
        out_shape=(out_h, out_w, channels),
        kernel_size=kernel_size,
        stride=stride,
        pool_type=pool_type,
    )


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: Shape
    num_classes: int
    layers: Tuple[Layer, ...]

    def __post_init__(self) -> None:
        current: Shape | int = tuple(self.input_shape)
        for layer in self.layers:
            expected = layer.in_dim if isinstance(layer, DenseLayer) else layer.in_shape
            if expected != current:
                raise ShapeError(f"{type(layer).__name__} expects {expected}, previous layer gives {current}")
            current = layer.out_dim if isinstance(layer, (DenseLayer, FlattenLayer)) else layer.out_shape
        if current != self.num_classes:
            raise ShapeError(f"network emits {current} logits, expected {self.num_classes}")

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)


@dataclass
class LayerWeights:
    weights: np.ndarray
    bias: np.ndarray

    @property
    def size(self) -> int:
        return int(self.weights.size + self.bias.size)


WeightSet = List[Optional[LayerWeights]]


# --- layer math -----------------------------------------------------------


def _as_batch(inputs: np.ndarray) -> Tuple[np.ndarray, bool]:
    if inputs.ndim == 3:
        return inputs[np.newaxis], True
    if inputs.ndim == 4:
        return inputs, False
    raise ShapeError(f"expected HxWxC or NxHxWxC input, got shape {inputs.shape}")


def _padding(size: int, filter_size: int, stride: int, padding: Padding) -> Tuple[int, int]:
    if padding is Padding.VALID:
        return 0, 0
    out = -(-size // stride)
    total = max((out - 1) * stride + filter_size - size, 0)
    # the odd pixel goes to the bottom/right
    return total // 2, total - total // 2


def _pad(x: np.ndarray, filter_size: int, stride: int, padding: Padding) -> Tuple[np.ndarray, int, int]:
    top, bottom = _padding(x.shape[1], filter_size, stride, padding)
    left, right = _padding(x.shape[2], filter_size, stride, padding)
    if top or bottom or left or right:
        x = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    return x, top, left


def _windows(x: np.ndarray, size: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    return sliding_window_view(x, (size, size), axis=(1, 2))[:, ::stride, ::stride][:, :out_h, :out_w]


def conv_forward(
    inputs: np.ndarray,
    filters: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: Padding = Padding.SAME,
) -> np.ndarray:
    x, single = _as_batch(inputs)
    size, size_w, channels, maps = filters.shape
    if size != size_w:
        raise ShapeError(f"filters must be square, got {size}x{size_w}")
    if x.shape[3] != channels:
        raise ShapeError(f"input has {x.shape[3]} channels, filters expect {channels}")
    if bias.shape != (maps,):
        raise ShapeError(f"bias shape {bias.shape} does not match {maps} feature maps")
    if stride < 1:
        raise ShapeError("stride must be >= 1")
    padding = Padding(padding)
    out_h = conv_output_dim(x.shape[1], size, stride, padding)
    out_w = conv_output_dim(x.shape[2], size, stride, padding)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"{size}x{size} filter does not fit a {x.shape[1]}x{x.shape[2]} input")
    xp, _, _ = _pad(x, size, stride, padding)
    windows = _windows(xp, size, stride, out_h, out_w)
    out = np.einsum("nhwcij,ijcm->nhwm", windows, filters, optimize=True) + bias
    return out[0] if single else out


def conv_backward(
    grad_out: np.ndarray,
    inputs: np.ndarray,
    filters: np.ndarray,
    stride: int,
    padding: Padding,
    need_input_grad: bool = True,
) -> Tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    size = filters.shape[0]
    out_h, out_w = grad_out.shape[1:3]
    xp, top, left = _pad(inputs, size, stride, padding)
    windows = _windows(xp, size, stride, out_h, out_w)
    grad_w = np.einsum("nhwcij,nhwm->ijcm", windows, grad_out, optimize=True)
    grad_b = grad_out.sum(axis=(0, 1, 2))
    if not need_input_grad:
        return None, grad_w, grad_b
    grad_xp = np.zeros_like(xp)
    rows = stride * (out_h - 1) + 1
    cols = stride * (out_w - 1) + 1
    for i in range(size):
        for j in range(size):
            grad_xp[:, i:i + rows:stride, j:j + cols:stride, :] += grad_out @ filters[i, j].T
    height, width = inputs.shape[1:3]
    return grad_xp[:, top:top + height, left:left + width, :], grad_w, grad_b


def pool_forward(inputs: np.ndarray, kernel: int, stride: int, pool_type: PoolType) -> np.ndarray:
    x, single = _as_batch(inputs)
    if kernel > x.shape[1] or kernel > x.shape[2]:
        raise ShapeError(f"{kernel}x{kernel} kernel exceeds {x.shape[1]}x{x.shape[2]} input")
    out_h = pool_output_dim(x.shape[1], kernel, stride)
    out_w = pool_output_dim(x.shape[2], kernel, stride)
    windows = _windows(x, kernel, stride, out_h, out_w)
    if PoolType(pool_type) is PoolType.MAX:
        out = windows.max(axis=(4, 5))
    else:
        out = windows.mean(axis=(4, 5))
    return out[0] if single else out


def pool_backward(
    grad_out: np.ndarray,
    inputs: np.ndarray,
    kernel: int,
    stride: int,
    pool_type: PoolType,
) -> np.ndarray:
    out_h, out_w = grad_out.shape[1:3]
    rows = stride * (out_h - 1) + 1
    cols = stride * (out_w - 1) + 1
    grad_x = np.zeros_like(inputs)
    if PoolType(pool_type) is PoolType.MAX:
        windows = _windows(inputs, kernel, stride, out_h, out_w)
        winner = windows.reshape(*windows.shape[:4], kernel * kernel).argmax(axis=-1)
        for i in range(kernel):
            for j in range(kernel):
                routed = np.where(winner == i * kernel + j, grad_out, 0)
                grad_x[:, i:i + rows:stride, j:j + cols:stride, :] += routed
    else:
        share = grad_out / (kernel * kernel)
        for i in range(kernel):
            for j in range(kernel):
                grad_x[:, i:i + rows:stride, j:j + cols:stride, :] += share
    return grad_x


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    n = logits.shape[0]
    rows = np.arange(n)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float((log_norm - shifted[rows, labels]).mean())
    grad = softmax(logits)
    grad[rows, labels] -= 1
    return loss, grad / n


# --- whole network ---------------------------------------------------------


def forward(spec: NetworkSpec, batch: np.ndarray, weights: WeightSet) -> Tuple[np.ndarray, list]:
    if batch.ndim != 4 or tuple(batch.shape[1:]) != tuple(spec.input_shape):
        raise ShapeError(f"batch shape {batch.shape} does not match network input {spec.input_shape}")
    if len(weights) != len(spec.layers):
        raise ShapeError(f"{len(weights)} weight entries for {len(spec.layers)} layers")
    cache = []
    activation = batch
    for layer, params in zip(spec.layers, weights):
        inputs = activation
        if isinstance(layer, ConvLayer):
            activation = relu(conv_forward(inputs, params.weights, params.bias, layer.stride, layer.padding))
        elif isinstance(layer, PoolLayer):
            activation = pool_forward(inputs, layer.kernel_size, layer.stride, layer.pool_type)
        elif isinstance(layer, FlattenLayer):
            activation = inputs.reshape(inputs.shape[0], -1)
        else:
            activation = inputs @ params.weights + params.bias
            if layer.relu:
                activation = relu(activation)
        cache.append((inputs, activation))
    return activation, cache


def loss_and_gradients(
    spec: NetworkSpec,
    batch: np.ndarray,
    labels: np.ndarray,
    weights: WeightSet,
) -> Tuple[float, WeightSet]:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= spec.num_classes:
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")
    logits, cache = forward(spec, batch, weights)
    loss, grad = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    grads: WeightSet = [None] * len(spec.layers)
    for index in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[index]
        inputs, outputs = cache[index]
        params = weights[index]
        if isinstance(layer, DenseLayer):
            if layer.relu:
                grad = grad * (outputs > 0)
            grads[index] = LayerWeights(inputs.T @ grad, grad.sum(axis=0))
            grad = grad @ params.weights.T
        elif isinstance(layer, FlattenLayer):
            grad = grad.reshape(inputs.shape)
        elif isinstance(layer, PoolLayer):
            grad = pool_backward(grad, inputs, layer.kernel_size, layer.stride, layer.pool_type)
        else:
            grad = grad * (outputs > 0)
            grad_x, grad_w, grad_b = conv_backward(
                grad, inputs, params.weights, layer.stride, layer.padding, need_input_grad=index > 0
            )
            grads[index] = LayerWeights(grad_w, grad_b)
            grad = grad_x
    return loss, grads


def backward_and_step(
    spec: NetworkSpec,
    batch: np.ndarray,
    labels: np.ndarray,
    weights: WeightSet,
    cfg: TrainConfig,
) -> Tuple[WeightSet, float]:
    """One SGD step; returns the new weights and the loss measured before the step."""
    learning_rate = cfg.learning_rate
    loss, grads = loss_and_gradients(spec, batch, labels, weights)
    updated: WeightSet = []
    for params, grad in zip(weights, grads):
        if params is None:
            updated.append(None)
            continue
        updated.append(
            LayerWeights(
                (params.weights - learning_rate * grad.weights).astype(params.weights.dtype, copy=False),
                (params.bias - learning_rate * grad.bias).astype(params.bias.dtype, copy=False),
            )
        )
    return updated, loss


def predict(spec: NetworkSpec, batch: np.ndarray, weights: WeightSet) -> np.ndarray:
    logits, _ = forward(spec, batch, weights)
    # argmax takes the first maximum, so ties go to the lowest class index
    return logits.argmax(axis=1)


# --- initializers ------------------------------------------------------------


def gaussian_init(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> WeightSet:
    weights: WeightSet = []
    for layer in spec.layers:
        if isinstance(layer, (ConvLayer, DenseLayer)):
            weights.append(
                LayerWeights(
                    rng.normal(layer.weight_mean, layer.weight_std, layer.weight_shape).astype(dtype),
                    np.full(layer.weight_shape[-1], layer.weight_mean, dtype=dtype),
                )
            )
        else:
            weights.append(None)
    return weights


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def xavier_init(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> WeightSet:
    weights: WeightSet = []
    for layer in spec.layers:
        if isinstance(layer, (ConvLayer, DenseLayer)):
            bound = xavier_bound(layer.fan_in, layer.fan_out)
            weights.append(
                LayerWeights(
                    rng.uniform(-bound, bound, layer.weight_shape).astype(dtype),
                    np.zeros(layer.weight_shape[-1], dtype=dtype),
                )
            )
        else:
            weights.append(None)
    return weights


def initialize(spec: NetworkSpec, rng: np.random.Generator, initializer: Initializer, dtype=np.float32) -> WeightSet:
    if Initializer(initializer) is Initializer.XAVIER:
        return xavier_init(spec, rng, dtype)
    return gaussian_init(spec, rng, dtype)


def count_weights(weights: Sequence[Optional[LayerWeights]]) -> int:
    return sum(params.size for params in weights if params is not None)


__all__ = [
    "ConvLayer",
    "DenseLayer",
    "FlattenLayer",
    "Initializer",
    "LayerWeights",
    "NetworkSpec",
    "NonFiniteLoss",
    "Padding",
    "PoolLayer",
    "PoolType",
    "ShapeError",
    "ShapeUnderflow",
    "WeightSet",
    "backward_and_step",
    "build_conv",
    "build_pool",
    "conv_forward",
    "count_weights",
    "forward",
    "gaussian_init",
    "initialize",
    "loss_and_gradients",
    "pool_forward",
    "predict",
    "relu",
    "softmax",
    "softmax_cross_entropy",
    "xavier_bound",
    "xavier_init",
]
