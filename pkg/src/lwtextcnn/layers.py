"""Layer functions for convolutional text classifiers.

Activations are laid out ``[batch, positions, features]``. All convolutions
use valid padding and stride 1. A filter spans ``height`` consecutive token
positions (spaced ``dilation`` apart) and the whole feature axis of its
input, so a "full-width" filter over a ``D``-dimensional embedding and a
"width-1" stacked filter over ``C`` channels are the same primitive with
``D`` or ``C`` input features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, EmptyFeatureMapError, OutOfVocabularyError
from .tensor import Rng, Tensor, as_tensor, make_node, matmul
from . import tensor as T


@dataclass(frozen=True)
class ConvFilterSpec:
    """Shape of one convolution stage.

    ``depthwise`` filters act on each input channel separately, so each of
    the ``out_channels`` (== ``in_channels``) filters sees one channel.
    """

    height: int
    width: int
    in_channels: int = 1
    out_channels: int = 1
    dilation: int = 1
    depthwise: bool = False

    def __post_init__(self):
        for key in ("height", "width", "in_channels", "out_channels", "dilation"):
            if getattr(self, key) < 1:
                raise ContractError(f"ConvFilterSpec.{key} must be positive, got {getattr(self, key)}")
        if self.depthwise and self.in_channels != self.out_channels:
            raise DimensionError(
                f"depthwise filter needs in_channels == out_channels, got {self.in_channels} -> {self.out_channels}")

    @property
    def effective_height(self) -> int:
        return self.height + (self.height - 1) * (self.dilation - 1)

    @property
    def features_in(self) -> int:
        """Size of the feature axis this filter consumes."""
        return self.width * self.in_channels

    @property
    def weight_shape(self) -> tuple:
        if self.depthwise:
            return (self.height, self.width, self.out_channels)
        return (self.height, self.features_in, self.out_channels)

    @property
    def param_count(self) -> int:
        per_filter_in = 1 if self.depthwise else self.in_channels
        return self.out_channels * (self.height * self.width * per_filter_in) + self.out_channels


def _check_len(length: int, eff_height: int, what: str) -> int:
    out_len = length - eff_height + 1
    if out_len < 1:
        raise EmptyFeatureMapError(
            f"{what}: sequence length {length} shorter than effective filter height {eff_height}")
    return out_len


# --------------------------------------------------------------------------
# embedding


def embed(tokens, table: Tensor) -> Tensor:
    """Row lookup ``table[tokens]``; gradients scatter back into the used rows only."""
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise ContractError(f"token indices must be integers, got dtype {tokens.dtype}")
    vocab = table.shape[0]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= vocab):
        bad = tokens[(tokens < 0) | (tokens >= vocab)].flat[0]
        raise OutOfVocabularyError(f"token index {bad} outside embedding table of {vocab} rows")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, tokens, g)
        return (gt,)

    return make_node(table.data[tokens], (table,), back)


# --------------------------------------------------------------------------
# convolutions


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Valid convolution of ``x [B, L, F]`` with ``weight [h, F, C]`` -> ``[B, L', C]``.

    ``y[b, t, c] = bias[c] + sum_{k, f} weight[k, f, c] * x[b, t + k*dilation, f]``.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"conv1d input must be [batch, positions, features], got {x.shape}")
    h, f_in, c_out = weight.shape
    if x.shape[2] != f_in:
        raise DimensionError(f"conv1d: input features {x.shape[2]} != filter width {f_in} (weight {weight.shape})")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d: bias shape {bias.shape} != ({c_out},)")
    n_out = _check_len(x.shape[1], h + (h - 1) * (dilation - 1), "conv1d")
    xd, wd = x.data, weight.data
    offsets = [k * dilation for k in range(h)]
    windows = np.stack([xd[:, o:o + n_out, :] for o in offsets], axis=2)  # [B, L', h, F]
    y = np.tensordot(windows, wd, axes=([2, 3], [0, 1])) + bias.data

    def back(g):
        gw = np.tensordot(windows, g, axes=([0, 1], [0, 1]))
        gx = np.zeros_like(xd)
        for k, o in enumerate(offsets):
            gx[:, o:o + n_out, :] += g @ wd[k].T
        return gx, gw, g.sum(axis=(0, 1))

    return make_node(y, (x, weight, bias), back)


def channel_conv1d(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel valid convolution: ``x [B, L, C]``, ``weight [h, 1, C]`` -> ``[B, L', C]``.

    No mixing across channels.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"channel_conv1d input must be [batch, positions, channels], got {x.shape}")
    h, w, c = weight.shape
    if w != 1 or x.shape[2] != c:
        raise DimensionError(f"channel_conv1d: weight {weight.shape} incompatible with input {x.shape}")
    if bias.shape != (c,):
        raise DimensionError(f"channel_conv1d: bias shape {bias.shape} != ({c},)")
    n_out = _check_len(x.shape[1], h + (h - 1) * (dilation - 1), "channel_conv1d")
    xd, wd = x.data, weight.data[:, 0, :]
    offsets = [k * dilation for k in range(h)]
    y = bias.data + np.zeros((x.shape[0], n_out, c))
    for k, o in enumerate(offsets):
        y = y + xd[:, o:o + n_out, :] * wd[k]

    def back(g):
        gx = np.zeros_like(xd)
        gw = np.empty((h, 1, c))
        for k, o in enumerate(offsets):
            gx[:, o:o + n_out, :] += g * wd[k]
            gw[k, 0] = (g * xd[:, o:o + n_out, :]).sum(axis=(0, 1))
        return gx, gw, g.sum(axis=(0, 1))

    return make_node(y, (x, weight, bias), back)


def conv_full_width(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return conv1d(x, weight, bias, dilation=1)


def depthwise_conv(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Spatial filtering with one filter per input channel.

    On a single-channel embedding this is a full-width convolution with one
    output map; on ``C`` channels each channel gets its own height-``h`` filter.
    """
    if weight.shape[1] == x.shape[2] and weight.shape[2] == 1:
        return conv1d(x, weight, bias, dilation)
    if weight.shape[1] == 1 and weight.shape[2] == x.shape[2]:
        return channel_conv1d(x, weight, bias, dilation)
    raise DimensionError(f"depthwise_conv: weight {weight.shape} does not match input channels {x.shape}")


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """1x1 convolution: per-position projection ``[B, L, Cin] -> [B, L, Cout]``."""
    if weight.shape[0] != 1:
        raise DimensionError(f"pointwise kernel must have height 1, got {weight.shape}")
    return conv1d(x, weight, bias, dilation=1)


def dilated_conv(x: Tensor, weight: Tensor, bias: Tensor, dilation: int = 2) -> Tensor:
    return conv1d(x, weight, bias, dilation=dilation)


# --------------------------------------------------------------------------
# normalization and activations


@dataclass
class BatchNormState:
    """Learnable scale/shift plus running statistics for inference.

    Statistics are taken per feature (last axis) over every other axis.
    Running values update as ``momentum * running + (1 - momentum) * batch``.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        n = self.gamma.shape
        if self.beta.shape != n or len(n) != 1:
            raise DimensionError(f"gamma {self.gamma.shape} and beta {self.beta.shape} must be matching vectors")
        if self.running_mean is None:
            self.running_mean = np.zeros(n)
        if self.running_var is None:
            self.running_var = np.ones(n)
        if not 0.0 < self.momentum < 1.0:
            raise ContractError(f"batch-norm momentum must lie in (0, 1), got {self.momentum}")

    @classmethod
    def create(cls, features: int, momentum: float = 0.9, eps: float = 1e-5, name: str = "bn"):
        return cls(T.init("ones", (features,), name=f"{name}.gamma"),
                   T.init("zeros", (features,), name=f"{name}.beta"),
                   momentum=momentum, eps=eps)


def batch_norm(x: Tensor, state: BatchNormState, train: bool) -> Tensor:
    feats = x.shape[-1]
    if state.gamma.shape != (feats,):
        raise DimensionError(f"batch_norm: {feats} input features, state has {state.gamma.shape[0]}")
    axes = tuple(range(x.data.ndim - 1))
    gamma, beta = state.gamma, state.beta
    if not train:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std
        return make_node(gamma.data * xhat + beta.data, (x, gamma, beta),
                         lambda g: (g * gamma.data * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)))

    n = x.size // feats
    if n < 2:
        raise ContractError("batch_norm in train mode needs at least 2 samples per feature")
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv_std
    state.running_mean = state.momentum * state.running_mean + (1.0 - state.momentum) * mu
    state.running_var = state.momentum * state.running_var + (1.0 - state.momentum) * var

    def back(g):
        dxhat = g * gamma.data
        gx = inv_std / n * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return make_node(gamma.data * xhat + beta.data, (x, gamma, beta), back)


def leaky_relu(x: Tensor, alpha: float = 0.1) -> Tensor:
    # slope at exactly zero is alpha
    pos = x.data > 0
    slope = np.where(pos, 1.0, alpha)
    return make_node(x.data * slope, (x,), lambda g: (g * slope,))


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def max_over_time(x: Tensor) -> Tensor:
    """``[B, L, C] -> [B, C]``; gradient goes to the first maximal position."""
    if x.data.ndim != 3:
        raise DimensionError(f"max_over_time input must be [batch, positions, channels], got {x.shape}")
    if x.shape[1] == 0:
        raise EmptyFeatureMapError("max_over_time over zero positions")
    idx = np.argmax(x.data, axis=1)  # first occurrence on ties
    b_idx, c_idx = np.meshgrid(np.arange(x.shape[0]), np.arange(x.shape[2]), indexing="ij")
    y = x.data[b_idx, idx, c_idx]

    def back(g):
        gx = np.zeros_like(x.data)
        gx[b_idx, idx, c_idx] = g
        return (gx,)

    return make_node(y, (x,), back)


def dropout(x: Tensor, rate: float, train: bool, rng: Rng | None = None) -> Tensor:
    """Inverted dropout; identity at inference or when ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    scale = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_node(x.data * scale, (x,), lambda g: (g * scale,))


# --------------------------------------------------------------------------
# output layer and loss


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` with the bias added to every row."""
    if bias.shape != (weight.shape[1],):
        raise DimensionError(f"affine: bias {bias.shape} does not match weight {weight.shape}")
    xw = matmul(x, weight)
    return make_node(xw.data + bias.data, (xw, bias), lambda g: (g, g.sum(axis=0)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, labels) -> tuple[Tensor, np.ndarray]:
    """Batch-mean cross-entropy of softmax(logits); returns ``(loss, probs)``."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} != ({b},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_z
    probs = np.exp(log_p)
    rows = np.arange(b)
    loss = -log_p[rows, labels].mean()

    def back(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (float(g) / b),)

    return make_node(np.asarray(loss), (logits,), back), probs


def l2_penalty(params) -> Tensor:
    """Sum of squared entries over ``params``."""
    total = None
    for p in params:
        sq = T.sum(T.mul(p, p))
        total = sq if total is None else T.add(total, sq)
    return total if total is not None else as_tensor(0.0)


def dense_softmax_xent(x: Tensor, weight: Tensor, bias: Tensor, labels, l2_coeff: float = 0.0,
                       params_for_l2=None) -> tuple[Tensor, np.ndarray]:
    """Dense output layer, softmax cross-entropy, and an optional L2 term.

    ``params_for_l2`` defaults to ``[weight]``.
    """
    if l2_coeff < 0:
        raise ContractError(f"l2_coeff must be non-negative, got {l2_coeff}")
    loss, probs = softmax_xent(affine(x, weight, bias), labels)
    if l2_coeff > 0:
        reg = l2_penalty([weight] if params_for_l2 is None else params_for_l2)
        loss = T.add(loss, T.mul(reg, l2_coeff))
    return loss, probs
