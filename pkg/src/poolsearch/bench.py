"""Surrogate evaluation backend and ranking-quality metrics.

The backend plays back a ground-truth accuracy table for a small space and
perturbs it with a weight-sharing interference model: a weight set that has
recently trained on placements far from the queried one returns a degraded
accuracy.  Distance is the L1 gap between pooling-position vectors, the
simplest monotone stand-in for how differently two placements shape the
intermediate feature maps.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .space import PoolingConfig, SearchSpace, enumerate_configs

DEFAULT_INTERFERENCE = 0.05   # accuracy penalty at maximal position distance
DEFAULT_EVAL_NOISE = 0.01
DEFAULT_HISTORY_CAPACITY = 64

BUNDLED_TABLE = "cifar10_resnet20.bench"


class BenchmarkFormatError(ValueError):
    """Malformed or inconsistent benchmark table document."""


@dataclass(frozen=True)
class BenchmarkEntry:
    mean: float   # accuracy fraction in [0, 1]
    std: float


class BenchmarkTable:
    """Ground-truth (mean, std) accuracy per configuration of one space."""

    def __init__(self, space: SearchSpace, entries: dict[PoolingConfig, BenchmarkEntry]):
        expected = set(enumerate_configs(space))
        got = set(entries)
        if got != expected:
            missing = sorted(str(c) for c in expected - got)
            extra = sorted(str(c) for c in got - expected)
            raise BenchmarkFormatError(
                f"table does not cover the space exactly; missing={missing}, extra={extra}"
            )
        for config, entry in entries.items():
            if not (0.0 <= entry.mean - 3 * entry.std and entry.mean + 3 * entry.std <= 1.0):
                raise BenchmarkFormatError(
                    f"{config}: mean {entry.mean} +/- 3*{entry.std} leaves [0, 1]"
                )
        self.space = space
        self.entries = dict(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def mean(self, config: PoolingConfig) -> float:
        return self.entries[config].mean

    def std(self, config: PoolingConfig) -> float:
        return self.entries[config].std

    def best_config(self) -> PoolingConfig:
        return max(self.entries, key=lambda c: (self.entries[c].mean, str(c)))

    def top_configs(self, k: int) -> list[PoolingConfig]:
        ranked = sorted(self.entries, key=lambda c: (-self.entries[c].mean, str(c)))
        return ranked[:k]


def parse_benchmark(text: str, space: SearchSpace) -> BenchmarkTable:
    """Parse the one-record-per-line table format: config, mean %, std %."""
    entries: dict[PoolingConfig, BenchmarkEntry] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise BenchmarkFormatError(
                f"line {lineno}: expected 'config mean std', got {raw!r}"
            )
        try:
            config = PoolingConfig.parse(parts[0])
            mean_pct = float(parts[1])
            std_pct = float(parts[2])
        except ValueError as exc:
            raise BenchmarkFormatError(f"line {lineno}: {exc}") from exc
        if config in entries:
            raise BenchmarkFormatError(f"line {lineno}: duplicate config {config}")
        entries[config] = BenchmarkEntry(mean=mean_pct / 100.0, std=std_pct / 100.0)
    return BenchmarkTable(space, entries)


def format_benchmark(table: BenchmarkTable) -> str:
    """Serialize in the same one-record-per-line format (percent, 2 decimals)."""
    lines = []
    for config in enumerate_configs(table.space):
        entry = table.entries[config]
        lines.append(f"{config} {entry.mean * 100.0:.2f} {entry.std * 100.0:.2f}")
    return "\n".join(lines) + "\n"


def load_benchmark(path: str | Path, space: SearchSpace) -> BenchmarkTable:
    return parse_benchmark(Path(path).read_text(), space)


def load_bundled_benchmark() -> BenchmarkTable:
    """The packaged 36-configuration table (10 blocks, 2 poolings, 32 px)."""
    space = SearchSpace.for_input(total_blocks=10, num_poolings=2, input_size=32)
    text = resources.files("poolsearch.data").joinpath(BUNDLED_TABLE).read_text()
    return parse_benchmark(text, space)


class InterferenceState:
    """Per-model ring buffers of recently trained configurations.

    The penalty charged against evaluating config c with model m grows with
    the mean normalized position distance between c and m's buffer, so a
    model that has specialized to one neighbourhood of the space stays
    accurate there and a model spread over everything is degraded
    everywhere.
    """

    def __init__(
        self,
        space: SearchSpace,
        num_models: int,
        strength: float = DEFAULT_INTERFERENCE,
        noise: float = DEFAULT_EVAL_NOISE,
        capacity: int = DEFAULT_HISTORY_CAPACITY,
    ):
        if strength < 0 or noise < 0:
            raise ValueError("interference strength and noise must be non-negative")
        if capacity < 1:
            raise ValueError("history capacity must be positive")
        if num_models < 1:
            raise ValueError("need at least one model")
        self.space = space
        self.strength = float(strength)
        self.noise = float(noise)
        self.capacity = int(capacity)
        self.histories: list[deque[tuple[int, ...]]] = [
            deque(maxlen=capacity) for _ in range(num_models)
        ]
        # Worst-case L1 gap: each of the p position coordinates can span
        # the full [fixed_prefix, L-1] range.
        span = (space.total_blocks - 1) - space.fixed_prefix
        self.max_distance = space.num_poolings * span

    def register_training(self, m: int, config: PoolingConfig) -> None:
        self.histories[m].append(config.positions())

    def mean_distance(self, m: int, config: PoolingConfig) -> float:
        """Mean normalized L1 position distance from config to model m's history."""
        history = self.histories[m]
        if not history or self.max_distance == 0:
            return 0.0
        pos = np.asarray(config.positions(), dtype=np.int64)
        past = np.asarray(list(history), dtype=np.int64)
        return float(np.abs(past - pos).sum(axis=1).mean() / self.max_distance)

    def history_diversity(self, m: int) -> float:
        """Mean pairwise normalized distance within model m's buffer."""
        history = self.histories[m]
        if len(history) < 2 or self.max_distance == 0:
            return 0.0
        past = np.asarray(list(history), dtype=np.int64)
        diffs = np.abs(past[:, None, :] - past[None, :, :]).sum(axis=2)
        n = len(history)
        return float(diffs.sum() / (n * (n - 1)) / self.max_distance)


def simulate_eval(
    table: BenchmarkTable,
    config: PoolingConfig,
    m: int,
    interference: InterferenceState,
    rng: np.random.Generator,
) -> float:
    """One validation-minibatch accuracy for (config, model) under the surrogate.

    Ground-truth mean, minus the interference penalty, plus Gaussian
    minibatch noise, clamped to [0, 1].  With zero strength and zero noise
    this returns the table mean exactly.
    """
    acc = table.mean(config) - interference.strength * interference.mean_distance(m, config)
    if interference.noise > 0:
        acc += interference.noise * rng.standard_normal()
    return float(min(max(acc, 0.0), 1.0))


def register_training(interference: InterferenceState, m: int, config: PoolingConfig) -> None:
    interference.register_training(m, config)


def kendall_tau(scores_a, scores_b) -> float:
    """Tie-corrected rank correlation by exact pair counting.

    (concordant - discordant) / sqrt((P - T_a)(P - T_b)) over all n(n-1)/2
    pairs, where T_a and T_b count pairs tied on either side.  Errors out
    when one side is entirely tied (correlation undefined).
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.size != b.size:
        raise ValueError("need two equal-length 1-d score vectors")
    n = a.size
    if n < 2:
        raise ValueError("need at least two items to correlate")
    da = np.sign(a[:, None] - a[None, :])
    db = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(n, k=1)
    da, db = da[iu], db[iu]
    num_pairs = n * (n - 1) // 2
    ties_a = int(np.count_nonzero(da == 0))
    ties_b = int(np.count_nonzero(db == 0))
    if ties_a == num_pairs or ties_b == num_pairs:
        raise ValueError("correlation undefined: one input is entirely tied")
    concordant_minus_discordant = float(np.sum(da * db))
    denom = np.sqrt(float(num_pairs - ties_a) * float(num_pairs - ties_b))
    return concordant_minus_discordant / denom
