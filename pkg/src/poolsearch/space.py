"""Constrained search space of pooling placements in a fixed-depth network.

A network of ``L`` movable basic blocks receives ``p`` factor-two
downsampling operations, each placed between two blocks.  The first block is
pinned to the input resolution, and upsampling is never allowed, so a
placement is equivalent to choosing ``p`` strictly increasing block indices
in ``[1, L-1]`` -- or, dually, to the number of blocks spent at each of the
``p+1`` resolution stages.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from itertools import combinations

import numpy as np

DEFAULT_ENUMERATION_CAP = 100_000

_CONFIG_RE = re.compile(r"^\[(\d+(?:,\d+)*)\]$")


class EnumerationCapError(ValueError):
    """Raised when a space is too large to enumerate exhaustively."""


@dataclass(frozen=True)
class PoolingConfig:
    """One point in the search space: blocks spent at each resolution stage.

    ``blocks_per_stage[i]`` is the number of consecutive blocks running at
    stage ``i`` (stage 0 is the input resolution); a downsampling operation
    sits between consecutive stages.
    """

    blocks_per_stage: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(n) for n in self.blocks_per_stage)
        if counts != tuple(self.blocks_per_stage):
            raise ValueError(
                f"stage block counts must be integers, got {self.blocks_per_stage}"
            )
        object.__setattr__(self, "blocks_per_stage", counts)
        if len(counts) < 1:
            raise ValueError("config needs at least one stage")
        if any(n < 1 for n in counts):
            raise ValueError(f"stage block counts must be positive, got {counts}")

    @property
    def total_blocks(self) -> int:
        return sum(self.blocks_per_stage)

    @property
    def num_poolings(self) -> int:
        return len(self.blocks_per_stage) - 1

    def positions(self) -> tuple[int, ...]:
        """Block indices after which a downsampling operation is applied.

        ``positions[k]`` is the prefix sum of the first ``k+1`` stage counts;
        the list is strictly increasing and lies in ``[1, total_blocks - 1]``.
        """
        acc = 0
        out = []
        for n in self.blocks_per_stage[:-1]:
            acc += n
            out.append(acc)
        return tuple(out)

    @classmethod
    def from_positions(cls, positions: tuple[int, ...] | list[int], total_blocks: int) -> PoolingConfig:
        """Inverse of :meth:`positions` for a network of ``total_blocks`` blocks."""
        pos = tuple(int(q) for q in positions)
        for q in pos:
            if not 1 <= q <= total_blocks - 1:
                raise ValueError(f"pooling position {q} outside [1, {total_blocks - 1}]")
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValueError(f"pooling positions must be strictly increasing, got {list(pos)}")
        bounds = (0,) + pos + (total_blocks,)
        return cls(tuple(b - a for a, b in zip(bounds, bounds[1:])))

    @classmethod
    def parse(cls, text: str) -> PoolingConfig:
        """Parse the bracketed textual form, e.g. ``"[4,3,3]"``."""
        m = _CONFIG_RE.match(text.strip())
        if m is None:
            raise ValueError(f"not a pooling config: {text!r} (expected e.g. '[4,3,3]')")
        return cls(tuple(int(n) for n in m.group(1).split(",")))

    def __str__(self) -> str:
        return "[" + ",".join(str(n) for n in self.blocks_per_stage) + "]"


@dataclass(frozen=True)
class SearchSpace:
    """All valid pooling placements for a fixed-depth network.

    Attributes:
        total_blocks: number of movable basic blocks, including the pinned
            first unit at the input resolution.
        num_poolings: number of factor-two downsampling operations to place.
        resolutions: spatial size (pixels) at each of the ``num_poolings + 1``
            stages, strictly halving.
        fixed_prefix: leading blocks pinned to the highest resolution.
    """

    total_blocks: int
    num_poolings: int
    resolutions: tuple[int, ...]
    fixed_prefix: int = 1

    def __post_init__(self) -> None:
        if self.total_blocks < 1:
            raise ValueError("total_blocks must be positive")
        if self.num_poolings < 1:
            raise ValueError("num_poolings must be positive")
        if self.num_poolings >= self.total_blocks:
            raise ValueError(
                f"num_poolings ({self.num_poolings}) must be < total_blocks ({self.total_blocks})"
            )
        if len(self.resolutions) != self.num_poolings + 1:
            raise ValueError(
                f"need {self.num_poolings + 1} stage resolutions, got {len(self.resolutions)}"
            )
        for r, r_next in zip(self.resolutions, self.resolutions[1:]):
            if r_next * 2 != r:
                raise ValueError(f"resolutions must halve exactly, got {self.resolutions}")
        if self.resolutions[-1] < 1:
            raise ValueError("smallest resolution must be at least 1 pixel")
        if self.fixed_prefix < 1:
            raise ValueError("fixed_prefix must be at least 1")
        if self.fixed_prefix + self.num_poolings > self.total_blocks:
            raise ValueError("fixed_prefix leaves no room for the remaining stages")

    @classmethod
    def for_input(
        cls,
        total_blocks: int,
        num_poolings: int,
        input_size: int = 32,
        fixed_prefix: int = 1,
    ) -> SearchSpace:
        """Build a space whose stage resolutions halve down from ``input_size``."""
        if num_poolings < 1:
            raise ValueError("num_poolings must be positive")
        if input_size % (1 << num_poolings) != 0:
            raise ValueError(
                f"input size {input_size} is not divisible by 2^{num_poolings}"
            )
        res = tuple(input_size >> i for i in range(num_poolings + 1))
        return cls(total_blocks, num_poolings, res, fixed_prefix)

    def size(self) -> int:
        """Number of valid placements, by exact integer arithmetic."""
        return math.comb(self.total_blocks - self.fixed_prefix, self.num_poolings)

    def fingerprint(self) -> str:
        return (
            f"L={self.total_blocks},p={self.num_poolings},"
            f"r={'/'.join(str(r) for r in self.resolutions)},f={self.fixed_prefix}"
        )


def space_size(space: SearchSpace) -> int:
    return space.size()


def enumerate_configs(
    space: SearchSpace, cap: int = DEFAULT_ENUMERATION_CAP
) -> list[PoolingConfig]:
    """All placements, in lexicographic-descending order of stage counts.

    The ordering (first ``[L-p,1,...,1]``, last ``[f,1,...,L-p-f+1]``-style
    tail-heavy configs) is the stable identity used for distribution-matrix
    rows and result files.
    """
    n = space.size()
    if n > cap:
        raise EnumerationCapError(
            f"space has {n} configs, above the enumeration cap of {cap}; "
            "use sampled access (sample_config) instead"
        )
    out = []
    for pos in combinations(range(space.fixed_prefix, space.total_blocks), space.num_poolings):
        out.append(PoolingConfig.from_positions(pos, space.total_blocks))
    out.reverse()
    return out


def sample_config(space: SearchSpace, rng: np.random.Generator) -> PoolingConfig:
    """Draw one placement uniformly without enumerating the space."""
    slots = np.arange(space.fixed_prefix, space.total_blocks)
    pos = np.sort(rng.choice(slots, size=space.num_poolings, replace=False))
    return PoolingConfig.from_positions(tuple(int(q) for q in pos), space.total_blocks)


def config_to_positions(config: PoolingConfig) -> tuple[int, ...]:
    return config.positions()


def positions_to_config(positions: tuple[int, ...] | list[int], total_blocks: int) -> PoolingConfig:
    return PoolingConfig.from_positions(positions, total_blocks)


def validate_config(config: PoolingConfig, space: SearchSpace) -> list[str]:
    """Check a config against a space; returns violations (empty list = ok)."""
    violations = []
    stages = space.num_poolings + 1
    if len(config.blocks_per_stage) != stages:
        violations.append(
            f"expected {stages} stages, got {len(config.blocks_per_stage)}"
        )
    if config.total_blocks != space.total_blocks:
        violations.append(
            f"stage counts sum to {config.total_blocks}, expected {space.total_blocks}"
        )
    if any(n < 1 for n in config.blocks_per_stage):
        violations.append("every stage must keep at least one block")
    if config.blocks_per_stage[0] < space.fixed_prefix:
        violations.append(
            f"first stage has {config.blocks_per_stage[0]} blocks, "
            f"below the pinned prefix of {space.fixed_prefix}"
        )
    return violations
