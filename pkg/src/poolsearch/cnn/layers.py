"""Dense NCHW layers with hand-written backward passes.

Everything runs on plain numpy arrays; convolutions are stride-1 (spatial
reduction happens only through the pooling layers), which keeps the shift-
and-accumulate formulation simple and fast at desk scale.
"""

from __future__ import annotations

import numpy as np


class Param:
    """One learnable array with its gradient and momentum buffers."""

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)
        self.momentum = np.zeros_like(value)

    @property
    def size(self) -> int:
        return self.value.size


class Conv2d:
    """Stride-1 square convolution with zero padding and no bias."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        padding: int,
        rng: np.random.Generator,
        dtype=np.float64,
        name: str = "conv",
    ):
        fan_in = in_channels * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        w = rng.standard_normal((out_channels, in_channels, kernel, kernel)) * std
        self.weight = Param(f"{name}.weight", w.astype(dtype))
        self.kernel = kernel
        self.padding = padding
        self._x_padded = None

    def parameters(self) -> list[Param]:
        return [self.weight]

    def forward(self, x: np.ndarray) -> np.ndarray:
        k, pad = self.kernel, self.padding
        if pad:
            x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        self._x_padded = x
        b, _, hp, wp = x.shape
        h_out, w_out = hp - k + 1, wp - k + 1
        w_ = self.weight.value
        out = np.zeros((b, w_.shape[0], h_out, w_out), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                out += np.einsum(
                    "oi,bihw->bohw", w_[:, :, di, dj], x[:, :, di : di + h_out, dj : dj + w_out]
                )
        return out

    def backward(self, gy: np.ndarray) -> np.ndarray:
        k, pad = self.kernel, self.padding
        x = self._x_padded
        h_out, w_out = gy.shape[2], gy.shape[3]
        w_ = self.weight.value
        gx = np.zeros_like(x)
        for di in range(k):
            for dj in range(k):
                xs = x[:, :, di : di + h_out, dj : dj + w_out]
                self.weight.grad[:, :, di, dj] += np.einsum("bohw,bihw->oi", gy, xs)
                gx[:, :, di : di + h_out, dj : dj + w_out] += np.einsum(
                    "oi,bohw->bihw", w_[:, :, di, dj], gy
                )
        if pad:
            gx = gx[:, :, pad:-pad, pad:-pad]
        return gx


class BatchNorm2d:
    """Per-channel batch normalization with running statistics."""

    def __init__(
        self,
        channels: int,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
        momentum: float = 0.1,
        eps: float = 1e-5,
        zero_scale: bool = False,
        name: str = "bn",
    ):
        init_gamma = 0.0 if zero_scale else 1.0
        self.gamma = Param(f"{name}.gamma", np.full(channels, init_gamma, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def parameters(self) -> list[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, train: bool, update_stats: bool = True) -> np.ndarray:
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            if update_stats:
                self.running_mean += self.momentum * (mean - self.running_mean)
                self.running_var += self.momentum * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.eps)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (x_hat, inv_std, train, x.shape)
        return self.gamma.value[None, :, None, None] * x_hat + self.beta.value[None, :, None, None]

    def backward(self, gy: np.ndarray) -> np.ndarray:
        x_hat, inv_std, train, shape = self._cache
        self.gamma.grad += np.sum(gy * x_hat, axis=(0, 2, 3))
        self.beta.grad += np.sum(gy, axis=(0, 2, 3))
        g_xhat = gy * self.gamma.value[None, :, None, None]
        if not train:
            return g_xhat * inv_std[None, :, None, None]
        # Batch statistics took part in the forward, so their gradient flows back.
        n = shape[0] * shape[2] * shape[3]
        sum_g = np.sum(g_xhat, axis=(0, 2, 3))[None, :, None, None]
        sum_gx = np.sum(g_xhat * x_hat, axis=(0, 2, 3))[None, :, None, None]
        return (inv_std[None, :, None, None] / n) * (n * g_xhat - sum_g - x_hat * sum_gx)


class ReLU:
    def __init__(self):
        self._mask = None

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return np.where(self._mask, gy, 0.0)

    def pattern(self) -> bytes:
        return self._mask.tobytes()


class MaxPool2x2:
    """2x2 stride-2 max pooling; requires even spatial dimensions."""

    def __init__(self):
        self._argmax = None
        self._shape = None

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        b, c, h, w = x.shape
        if h < 2 or w < 2 or h % 2 or w % 2:
            raise ValueError(f"max pooling needs even spatial dims >= 2, got {h}x{w}")
        windows = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        flat = windows.reshape(b, c, h // 2, w // 2, 4)
        self._argmax = flat.argmax(axis=-1)
        self._shape = x.shape
        return flat.max(axis=-1)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        b, c, h, w = self._shape
        flat = np.zeros((b, c, h // 2, w // 2, 4), dtype=gy.dtype)
        np.put_along_axis(flat, self._argmax[..., None], gy[..., None], axis=-1)
        windows = flat.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return windows.reshape(b, c, h, w)

    def pattern(self) -> bytes:
        return self._argmax.tobytes()


class GlobalAvgPool:
    def __init__(self):
        self._shape = None

    def parameters(self) -> list[Param]:
        return []

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, gy: np.ndarray) -> np.ndarray:
        b, c, h, w = self._shape
        return np.broadcast_to(gy[:, :, None, None], self._shape).copy() / (h * w)


class Linear:
    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        dtype=np.float64,
        name: str = "linear",
    ):
        std = np.sqrt(1.0 / in_features)
        w = rng.standard_normal((out_features, in_features)) * std
        self.weight = Param(f"{name}.weight", w.astype(dtype))
        self.bias = Param(f"{name}.bias", np.zeros(out_features, dtype=dtype))
        self._x = None

    def parameters(self) -> list[Param]:
        return [self.weight, self.bias]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, gy: np.ndarray) -> np.ndarray:
        self.weight.grad += gy.T @ self._x
        self.bias.grad += gy.sum(axis=0)
        return gy @ self.weight.value


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise ValueError("label out of range for the logit width")
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
