"""Training loop primitives: SGD step, evaluation, schedules, gradient check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import softmax_cross_entropy
from .network import NetworkPlan, WeightSet, activation_pattern, backward, forward

GRADCHECK_PARAM_LIMIT = 10_000


def lr_at(step: int, total_steps: int, lr_init: float) -> float:
    """Cosine annealing from lr_init down to zero."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return lr_init * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def train_step(
    plan: NetworkPlan,
    weights: WeightSet,
    batch: np.ndarray,
    labels: np.ndarray,
    lr: float,
    weight_decay: float = 0.0,
    momentum: float = 0.9,
) -> float:
    """One SGD-with-momentum step on cross-entropy plus L2 decay; returns the loss.

    Decay is coupled: lambda * w is added to the gradient before the momentum
    update, so with a zero loss gradient and fresh momentum a single step
    shrinks weights by exactly (1 - lr * lambda).
    """
    weights.zero_grads()
    logits, tape = forward(plan, weights, batch, train=True)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise FloatingPointError(f"non-finite training loss {loss}")
    backward(tape, grad_logits)
    for p in weights.parameters():
        if not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(f"non-finite gradient in {p.name}")
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.value
        p.momentum[...] = momentum * p.momentum + g
        p.value -= lr * p.momentum
    return loss


def evaluate(plan: NetworkPlan, weights: WeightSet, batches) -> float:
    """Accuracy fraction over (images, labels) batches, normalization frozen."""
    correct = 0
    total = 0
    for batch, labels in batches:
        logits, _ = forward(plan, weights, batch, train=False)
        correct += int((logits.argmax(axis=1) == labels).sum())
        total += int(labels.size)
    if total == 0:
        raise ValueError("evaluate needs at least one non-empty batch")
    return correct / total


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    num_checked: int
    num_excluded: int


def gradient_check(
    plan: NetworkPlan,
    weights: WeightSet,
    batch: np.ndarray,
    labels: np.ndarray,
    epsilon: float = 1e-5,
    num_coords: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Central finite differences against the analytic gradient.

    Samples parameter coordinates, evaluates (f(t+e) - f(t-e)) / 2e with the
    normalization statistics frozen, and reports the worst relative error
    with denominator max(|analytic|, |numeric|, 1e-8).  Coordinates whose
    perturbation flips any relu mask or pool argmax (a kink between the two
    evaluation points, e.g. an exactly-zero pre-activation) are excluded
    rather than reported as failures.
    """
    if weights.dtype != np.float64:
        raise ValueError("gradient checks require 64-bit weights")
    total_params = weights.parameter_count()
    if total_params > GRADCHECK_PARAM_LIMIT:
        raise ValueError(
            f"gradient check is meant for tiny networks (<= {GRADCHECK_PARAM_LIMIT} "
            f"parameters), got {total_params}"
        )
    rng = rng if rng is not None else np.random.default_rng(0)

    def loss_and_pattern() -> tuple[float, bytes]:
        logits, tape = forward(plan, weights, batch, train=True, update_stats=False)
        loss, _ = softmax_cross_entropy(logits, labels)
        return loss, activation_pattern(tape)

    weights.zero_grads()
    logits, tape = forward(plan, weights, batch, train=True, update_stats=False)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    backward(tape, grad_logits)
    base_pattern = activation_pattern(tape)

    params = weights.parameters()
    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    n_sample = min(num_coords, total_params)
    flat_indices = rng.choice(total_params, size=n_sample, replace=False)

    max_rel = 0.0
    checked = 0
    excluded = 0
    for flat in sorted(int(i) for i in flat_indices):
        pi = int(np.searchsorted(offsets, flat, side="right")) - 1
        local = flat - offsets[pi]
        p = params[pi]
        idx = np.unravel_index(local, p.value.shape)
        orig = p.value[idx]
        analytic = p.grad[idx]

        p.value[idx] = orig + epsilon
        loss_plus, pattern_plus = loss_and_pattern()
        p.value[idx] = orig - epsilon
        loss_minus, pattern_minus = loss_and_pattern()
        p.value[idx] = orig

        if pattern_plus != base_pattern or pattern_minus != base_pattern:
            excluded += 1
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
        checked += 1

    if checked == 0:
        raise ValueError("every sampled coordinate sat on a kink; nothing was checked")
    return GradCheckResult(max_rel_error=max_rel, num_checked=checked, num_excluded=excluded)
