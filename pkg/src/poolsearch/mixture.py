"""Balanced mixture of SuperNets: the accuracy-driven config-to-model coupler.

M independent weight sets train side by side.  A running accuracy estimate
``ema_acc[c, m]`` is kept for every (config, model) pair; a temperature
softmax turns it into a joint distribution over pairs, which is then forced
to uniform marginals by iterative proportional fitting so that no model
starves.  Sampling stays uniform over configs while each config routes
itself to the model that serves it best, with the temperature schedule
moving the routing from uniform to concentrated over the course of a run.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1

DEFAULT_KL_THRESHOLD = 1e-4
DEFAULT_IPF_MAX_ITERS = 10_000


class IpfConvergenceError(RuntimeError):
    """Marginal balancing ran out of iterations; carries the last KL value."""

    def __init__(self, kl: float, iterations: int):
        super().__init__(
            f"IPF did not reach the KL threshold within {iterations} iterations "
            f"(last KL {kl:.3e})"
        )
        self.kl = kl
        self.iterations = iterations


@dataclass(frozen=True)
class JointDistribution:
    """Immutable C x M probability table over (config, model) pairs."""

    probs: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"joint must be a 2-d table, got shape {p.shape}")
        if not np.all(p > 0):
            raise ValueError("joint entries must all be positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"joint must sum to 1, got {p.sum()!r}")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def num_configs(self) -> int:
        return self.probs.shape[0]

    @property
    def num_models(self) -> int:
        return self.probs.shape[1]

    def config_marginal(self) -> np.ndarray:
        return self.probs.sum(axis=1)

    def model_marginal(self) -> np.ndarray:
        return self.probs.sum(axis=0)


class MixtureState:
    """Mutable controller state: accuracy estimates, visits, schedule position.

    Single-writer by contract; snapshots handed out (joints, checkpoints) are
    immutable.
    """

    def __init__(
        self,
        num_configs: int,
        num_models: int,
        total_steps: int,
        beta: float = 0.9,
        tau_init: float = 1.0,
        tau_min: float | None = None,
        initial_acc: float = 0.5,
        space_fingerprint: str = "",
    ):
        if num_configs < 1 or num_models < 1:
            raise ValueError("need at least one config and one model")
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {beta}")
        if total_steps < 1:
            raise ValueError("total_steps must be positive")
        if tau_init <= 0:
            raise ValueError("tau_init must be positive")
        self.num_configs = num_configs
        self.num_models = num_models
        self.total_steps = total_steps
        self.beta = float(beta)
        self.tau_init = float(tau_init)
        # Schedule floor defaults to 1/(100 M).
        self.tau_min = float(tau_min) if tau_min is not None else 1.0 / (100.0 * num_models)
        if self.tau_min <= 0 or self.tau_min > self.tau_init:
            raise ValueError(f"tau_min must lie in (0, tau_init], got {self.tau_min}")
        self.ema_acc = np.full((num_configs, num_models), float(initial_acc), dtype=np.float64)
        self.visit_counts = np.zeros((num_configs, num_models), dtype=np.int64)
        self.step = 0
        self.space_fingerprint = space_fingerprint

    def update_accuracy(self, c: int, m: int, acc: float) -> None:
        """Fold one observed validation accuracy into the (c, m) estimate."""
        if not 0 <= c < self.num_configs:
            raise IndexError(f"config index {c} out of range")
        if not 0 <= m < self.num_models:
            raise IndexError(f"model index {m} out of range")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {acc}")
        self.ema_acc[c, m] = self.beta * self.ema_acc[c, m] + (1.0 - self.beta) * acc
        self.visit_counts[c, m] += 1
        self.step += 1

    def temperature_at(self, step: int | None = None) -> float:
        """Linear decay from tau_init at step 0 to tau_min at total_steps, clamped."""
        s = self.step if step is None else step
        if s < 0:
            raise ValueError("step must be non-negative")
        frac = min(s, self.total_steps) / self.total_steps
        return self.tau_init + (self.tau_min - self.tau_init) * frac

    def current_joint(
        self,
        delta: float = DEFAULT_KL_THRESHOLD,
        max_iters: int = DEFAULT_IPF_MAX_ITERS,
    ) -> JointDistribution:
        """Balanced joint at the current step's temperature."""
        raw = joint_from_accuracies(self.ema_acc, self.temperature_at())
        return balance_ipf(raw, delta=delta, max_iters=max_iters)

    # -- checkpointing ----------------------------------------------------

    def to_document(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "num_configs": self.num_configs,
            "num_models": self.num_models,
            "total_steps": self.total_steps,
            "beta": self.beta,
            "tau_init": self.tau_init,
            "tau_min": self.tau_min,
            "step": self.step,
            "space_fingerprint": self.space_fingerprint,
            "ema_acc": self.ema_acc.tolist(),
            "visit_counts": self.visit_counts.tolist(),
        }

    @classmethod
    def from_document(cls, doc: dict) -> MixtureState:
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        state = cls(
            num_configs=doc["num_configs"],
            num_models=doc["num_models"],
            total_steps=doc["total_steps"],
            beta=doc["beta"],
            tau_init=doc["tau_init"],
            tau_min=doc["tau_min"],
            space_fingerprint=doc.get("space_fingerprint", ""),
        )
        ema = np.asarray(doc["ema_acc"], dtype=np.float64)
        visits = np.asarray(doc["visit_counts"], dtype=np.int64)
        if ema.shape != state.ema_acc.shape or visits.shape != state.visit_counts.shape:
            raise ValueError("checkpoint matrices do not match the declared shape")
        state.ema_acc = ema
        state.visit_counts = visits
        state.step = int(doc["step"])
        return state

    def save_checkpoint(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_document(), sort_keys=True))

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> MixtureState:
        return cls.from_document(json.loads(Path(path).read_text()))


def joint_from_accuracies(ema_acc: np.ndarray, tau: float) -> JointDistribution:
    """Temperature softmax of the accuracy table over all (config, model) pairs.

    Stabilized by subtracting the table maximum before exponentiation, so the
    argmax of the output always matches the argmax of the input.  Exponents
    are floored at -700 (just above where doubles underflow) so every entry
    stays strictly positive even at the sharpest temperatures.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    a = np.asarray(ema_acc, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError("accuracy table contains non-finite entries")
    z = np.maximum((a - a.max()) / tau, -700.0)
    e = np.exp(z)
    return JointDistribution(e / e.sum())


def kl_from_uniform(marginal: np.ndarray) -> float:
    """KL(q || uniform) in nats for a non-negative vector q (normalized first)."""
    q = np.asarray(marginal, dtype=np.float64)
    q = q / q.sum()
    n = q.size
    nz = q > 0
    return float(np.sum(q[nz] * np.log(q[nz] * n)))


def balance_ipf(
    joint: JointDistribution,
    delta: float = DEFAULT_KL_THRESHOLD,
    max_iters: int = DEFAULT_IPF_MAX_ITERS,
) -> JointDistribution:
    """Force uniform marginals by alternating proportional fitting.

    Each pass rescales the model axis to marginal 1/M, then the config axis
    to marginal 1/C; the stopping metric is KL(model marginal || uniform)
    measured after the pass, so the config marginal is left exactly uniform
    and the model marginal is within ``delta``.  Rescaling preserves all
    cross-ratios of the input table.
    """
    p = np.array(joint.probs, dtype=np.float64)
    num_configs, num_models = p.shape
    kl = np.inf
    for _ in range(max_iters):
        p *= (1.0 / num_models) / p.sum(axis=0, keepdims=True)
        p *= (1.0 / num_configs) / p.sum(axis=1, keepdims=True)
        kl = kl_from_uniform(p.sum(axis=0))
        if kl < delta:
            return JointDistribution(p / p.sum())
    raise IpfConvergenceError(kl=kl, iterations=max_iters)


def conditional_model_dist(joint: JointDistribution, c: int) -> np.ndarray:
    """p(m | c): the joint's row c, normalized over models."""
    if not 0 <= c < joint.num_configs:
        raise IndexError(f"config index {c} out of range")
    row = joint.probs[c]
    return row / row.sum()


def multinomial_draw(probs: np.ndarray, rng: np.random.Generator) -> int:
    """One index drawn from a probability vector using a single uniform variate."""
    cum = np.cumsum(probs)
    u = rng.random() * cum[-1]
    return int(min(np.searchsorted(cum, u, side="right"), probs.size - 1))


def sample_pair(
    joint: JointDistribution,
    config_rng: np.random.Generator,
    model_rng: np.random.Generator | None = None,
) -> tuple[int, int]:
    """Draw a config uniformly, then a model from p(m | c).

    The config draw and the model draw consume separate streams so the
    config sequence is independent of M (and matches plain uniform
    single-path sampling when the same config stream is used).
    """
    c = int(config_rng.integers(joint.num_configs))
    m = multinomial_draw(conditional_model_dist(joint, c), model_rng if model_rng is not None else config_rng)
    return c, m


@dataclass(frozen=True)
class Candidate:
    config_index: int
    model_index: int
    score: float


def select_candidates(
    state: MixtureState,
    joint: JointDistribution,
    k: int,
    mode: str = "full",
    evaluate: Callable[[int, int], float] | None = None,
) -> list[Candidate]:
    """Rank configurations and return the top k with their preferred model.

    ``full`` re-evaluates each config with its highest-probability model via
    the ``evaluate`` callback; ``proxy`` skips re-evaluation and scores each
    config by its running accuracy estimate at that model.  Ties in the
    model argmax go to the lowest index; ties in score to the lower config.
    """
    if k > state.num_configs:
        raise ValueError(f"k={k} exceeds the {state.num_configs} available configs")
    if mode not in ("full", "proxy"):
        raise ValueError(f"mode must be 'full' or 'proxy', got {mode!r}")
    if mode == "full" and evaluate is None:
        raise ValueError("full mode needs an evaluate callback")
    scored = []
    for c in range(state.num_configs):
        m = int(np.argmax(joint.probs[c]))
        if mode == "full":
            score = float(evaluate(c, m))
        else:
            score = float(state.ema_acc[c, m])
        scored.append(Candidate(c, m, score))
    scored.sort(key=lambda cand: (-cand.score, cand.config_index))
    return scored[:k]


def conditional_entropies(joint: JointDistribution) -> np.ndarray:
    """Shannon entropy (nats) of p(m | c) for every config row."""
    rows = joint.probs / joint.probs.sum(axis=1, keepdims=True)
    return -np.sum(rows * np.log(rows), axis=1)


def mean_conditional_entropy(joint: JointDistribution) -> float:
    return float(conditional_entropies(joint).mean())
