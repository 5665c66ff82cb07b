"""Residual network with movable pooling positions and swappable weight sets.

One weight set holds parameters for every block index plus the classifier
head; a plan only decides where the 2x2 max-pool layers sit between blocks.
Channels follow the block index, never the resolution, so every plan of a
space has exactly the same parameter count and any weight set can execute
any plan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..space import PoolingConfig, SearchSpace, validate_config
from .layers import (
    BatchNorm2d,
    Conv2d,
    GlobalAvgPool,
    Linear,
    MaxPool2x2,
    Param,
    ReLU,
)

TRAIN_BATCH_FLOOR = 8  # minimum batch for trustworthy batch-norm statistics


@dataclass(frozen=True)
class NetworkPlan:
    config: PoolingConfig
    pool_positions: tuple[int, ...]
    channel_schedule: tuple[int, ...]
    in_channels: int
    input_size: int
    num_classes: int

    @property
    def num_blocks(self) -> int:
        return len(self.channel_schedule)


def build_network(
    space: SearchSpace,
    config: PoolingConfig,
    channel_schedule: tuple[int, ...] | list[int],
    in_channels: int = 3,
    input_size: int | None = None,
    num_classes: int = 10,
) -> NetworkPlan:
    """Validate and lay out one plan: blocks plus pool placements."""
    violations = validate_config(config, space)
    if violations:
        raise ValueError(f"config {config} invalid for space: {violations}")
    schedule = tuple(int(c) for c in channel_schedule)
    if len(schedule) != space.total_blocks:
        raise ValueError(
            f"channel schedule covers {len(schedule)} blocks, space has {space.total_blocks}"
        )
    if any(c < 1 for c in schedule):
        raise ValueError("channel counts must be positive")
    size = space.resolutions[0] if input_size is None else int(input_size)
    # Each pool halves the map; every stage must keep an even size >= 2 to pool
    # again and at least 1 px at the end.
    s = size
    for _ in range(space.num_poolings):
        if s < 2 or s % 2:
            raise ValueError(
                f"input size {size} cannot be pooled {space.num_poolings}x without "
                "dropping below 1 px"
            )
        s //= 2
    return NetworkPlan(
        config=config,
        pool_positions=config.positions(),
        channel_schedule=schedule,
        in_channels=in_channels,
        input_size=size,
        num_classes=num_classes,
    )


class BasicBlock:
    """conv3x3 -> bn -> relu -> conv3x3 -> bn, plus identity or 1x1-projection skip."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        rng: np.random.Generator,
        dtype,
        name: str,
        zero_init_residual: bool = True,
    ):
        self.conv1 = Conv2d(in_ch, out_ch, 3, 1, rng, dtype, f"{name}.conv1")
        self.bn1 = BatchNorm2d(out_ch, dtype=dtype, name=f"{name}.bn1")
        self.relu1 = ReLU()
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, rng, dtype, f"{name}.conv2")
        self.bn2 = BatchNorm2d(out_ch, dtype=dtype, zero_scale=zero_init_residual, name=f"{name}.bn2")
        self.proj = (
            Conv2d(in_ch, out_ch, 1, 0, rng, dtype, f"{name}.proj") if in_ch != out_ch else None
        )
        self.relu_out = ReLU()
        self._x = None

    def parameters(self) -> list[Param]:
        params = self.conv1.parameters() + self.bn1.parameters()
        params += self.conv2.parameters() + self.bn2.parameters()
        if self.proj is not None:
            params += self.proj.parameters()
        return params

    def forward(self, x: np.ndarray, train: bool, update_stats: bool = True) -> np.ndarray:
        self._x = x
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), train, update_stats))
        h = self.bn2.forward(self.conv2.forward(h), train, update_stats)
        skip = x if self.proj is None else self.proj.forward(x)
        return self.relu_out.forward(h + skip)

    def backward(self, gy: np.ndarray) -> np.ndarray:
        g = self.relu_out.backward(gy)
        g_skip = g if self.proj is None else self.proj.backward(g)
        g = self.bn2.backward(g)
        g = self.conv2.backward(g)
        g = self.relu1.backward(g)
        g = self.bn1.backward(g)
        g = self.conv1.backward(g)
        return g + g_skip

    def pattern(self) -> bytes:
        return self.relu1.pattern() + self.relu_out.pattern()


class WeightSet:
    """One independent set of network parameters (plus optimizer state).

    Structure depends only on the channel schedule, so a weight set executes
    every plan of its space; nothing is shared with any other weight set.
    """

    def __init__(
        self,
        model_index: int,
        channel_schedule: tuple[int, ...],
        in_channels: int,
        num_classes: int,
        rng: np.random.Generator,
        dtype=np.float64,
        zero_init_residual: bool = True,
    ):
        self.model_index = model_index
        self.dtype = np.dtype(dtype)
        self.blocks = []
        prev = in_channels
        for i, ch in enumerate(channel_schedule):
            self.blocks.append(
                BasicBlock(
                    prev, ch, rng, dtype,
                    name=f"m{model_index}.b{i}",
                    zero_init_residual=zero_init_residual,
                )
            )
            prev = ch
        self.head = Linear(prev, num_classes, rng, dtype, name=f"m{model_index}.head")

    def parameters(self) -> list[Param]:
        params = []
        for block in self.blocks:
            params += block.parameters()
        return params + self.head.parameters()

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def state_arrays(self) -> list[np.ndarray]:
        """Every mutable array: params, grads, momenta, running statistics."""
        arrays = []
        for p in self.parameters():
            arrays += [p.value, p.grad, p.momentum]
        for block in self.blocks:
            for bn in (block.bn1, block.bn2):
                arrays += [bn.running_mean, bn.running_var]
        return arrays

    def state_bytes(self) -> bytes:
        return b"".join(a.tobytes() for a in self.state_arrays())


def count_parameters(plan: NetworkPlan, weights: WeightSet | None = None) -> int:
    """Exact learnable-parameter count of a plan (pools are parameter-free)."""
    if weights is not None:
        return weights.parameter_count()
    total = 0
    prev = plan.in_channels
    for ch in plan.channel_schedule:
        total += ch * prev * 9 + ch * ch * 9   # two 3x3 convs
        total += 4 * ch                        # two bn (gamma, beta)
        if prev != ch:
            total += ch * prev                 # 1x1 projection
        prev = ch
    total += plan.num_classes * prev + plan.num_classes
    return total


def forward(
    plan: NetworkPlan,
    weights: WeightSet,
    batch: np.ndarray,
    train: bool,
    update_stats: bool = True,
):
    """Run the plan; returns (logits, tape) where the tape drives backward().

    Raises if any layer output stops being finite, naming the layer.
    """
    if batch.ndim != 4 or batch.shape[1] != plan.in_channels:
        raise ValueError(
            f"batch shape {batch.shape} does not match {plan.in_channels} input channels"
        )
    if batch.shape[2] != plan.input_size or batch.shape[3] != plan.input_size:
        raise ValueError(
            f"batch spatial size {batch.shape[2]}x{batch.shape[3]} does not match "
            f"plan input size {plan.input_size}"
        )
    if train and batch.shape[0] < TRAIN_BATCH_FLOOR:
        raise ValueError(
            f"train-mode batches need at least {TRAIN_BATCH_FLOOR} samples for stable "
            f"normalization statistics, got {batch.shape[0]}"
        )
    x = batch.astype(weights.dtype, copy=False)
    tape = []
    pool_after = set(plan.pool_positions)
    for i, block in enumerate(weights.blocks, start=1):
        x = block.forward(x, train, update_stats)
        _check_finite(x, f"block {i}")
        tape.append(block)
        if i in pool_after:
            pool = MaxPool2x2()
            x = pool.forward(x)
            tape.append(pool)
    gap = GlobalAvgPool()
    x = gap.forward(x)
    tape.append(gap)
    logits = weights.head.forward(x)
    _check_finite(logits, "head")
    tape.append(weights.head)
    return logits, tape


def backward(tape: list, grad_logits: np.ndarray) -> np.ndarray:
    g = grad_logits
    for layer in reversed(tape):
        g = layer.backward(g)
    return g


def activation_pattern(tape: list) -> bytes:
    """Concatenated relu masks and pool argmax indices of the last forward."""
    chunks = []
    for layer in tape:
        if hasattr(layer, "pattern"):
            chunks.append(layer.pattern())
    return b"".join(chunks)


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activation after {where}")
