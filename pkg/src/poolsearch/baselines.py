"""Comparison searchers: uniform single-path, Boltzmann exploration, and
UCB tree search over the downsampling decisions.

All three consume the same evaluator interface as the mixture controller
(train on the sampled config, observe a validation-minibatch accuracy), so
runs differ only in how the next configuration is chosen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .space import PoolingConfig, SearchSpace, enumerate_configs


def spos_sample(num_configs: int, rng: np.random.Generator) -> int:
    """Uniform single-path draw; identical to the mixture's config stream."""
    return int(rng.integers(num_configs))


class BseState:
    """Boltzmann softmax exploration: p(c) proportional to exp(inv_temp * reward).

    Rewards are smoothed validation-minibatch accuracies; the inverse
    temperature rises linearly so sampling moves from near-uniform to greedy.
    """

    def __init__(
        self,
        num_configs: int,
        total_steps: int,
        inv_temp_init: float = 1.0,
        inv_temp_max: float = 100.0,
        beta: float = 0.9,
        initial_reward: float = 0.5,
    ):
        if inv_temp_init < 0 or inv_temp_max < inv_temp_init:
            raise ValueError("need 0 <= inv_temp_init <= inv_temp_max")
        if total_steps < 1:
            raise ValueError("total_steps must be positive")
        self.rewards = np.full(num_configs, float(initial_reward), dtype=np.float64)
        self.total_steps = total_steps
        self.inv_temp_init = float(inv_temp_init)
        self.inv_temp_max = float(inv_temp_max)
        self.beta = float(beta)
        self.step = 0

    def inv_temp_at(self, step: int | None = None) -> float:
        s = self.step if step is None else step
        frac = min(s, self.total_steps) / self.total_steps
        return self.inv_temp_init + (self.inv_temp_max - self.inv_temp_init) * frac

    def update(self, c: int, acc: float) -> None:
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy must lie in [0, 1], got {acc}")
        self.rewards[c] = self.beta * self.rewards[c] + (1.0 - self.beta) * acc
        self.step += 1


def bse_probs(rewards: np.ndarray, inv_temp: float) -> np.ndarray:
    """Max-stabilized softmax of inv_temp * rewards."""
    if inv_temp < 0:
        raise ValueError(f"inverse temperature must be non-negative, got {inv_temp}")
    z = inv_temp * np.asarray(rewards, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def ucb_score(
    cumulative_reward: float,
    visits: int,
    parent_visits: int,
    explore_c: float,
) -> float:
    """Mean reward plus the visit-count exploration bonus.

    Unvisited nodes get an infinite score so every child is tried once
    before the bonus formula applies.
    """
    if visits < 0 or parent_visits < 0:
        raise ValueError("visit counts must be non-negative")
    if visits == 0:
        return math.inf
    if parent_visits < 1:
        raise ValueError("parent must have been visited at least once")
    return cumulative_reward / visits + explore_c * math.sqrt(math.log(parent_visits) / visits)


@dataclass
class TreeNode:
    """One downsampling decision point; leaves correspond to full configs."""

    layer: int                      # decisions made so far (block boundary index)
    resolution: int                 # spatial size of the current stage
    pools_placed: int
    stay: TreeNode | None = None    # next block keeps the current resolution
    down: TreeNode | None = None    # downsample before the next block
    cumulative_reward: float = 0.0
    visits: int = 0
    leaf_count: int = 1
    config: PoolingConfig | None = field(default=None, compare=False)

    @property
    def is_leaf(self) -> bool:
        return self.stay is None and self.down is None

    def children(self) -> list[TreeNode]:
        return [child for child in (self.stay, self.down) if child is not None]

    def mean_reward(self) -> float:
        return self.cumulative_reward / self.visits if self.visits else 0.0


def build_tree(space: SearchSpace) -> TreeNode:
    """Asymmetric binary decision tree whose leaves are exactly the space.

    Walking from the root, decision ``d`` chooses whether a pooling follows
    block ``fixed_prefix + d``; branches that could no longer place all
    poolings (or would exceed them) are simply absent, which is what makes
    the tree asymmetric.
    """
    num_decisions = space.total_blocks - space.fixed_prefix

    def grow(depth: int, pools: int) -> TreeNode:
        node = TreeNode(layer=depth, resolution=space.resolutions[pools], pools_placed=pools)
        if depth == num_decisions:
            if pools != space.num_poolings:
                raise ValueError("tree reached a leaf before placing every pooling")
            node.leaf_count = 1
            return node
        remaining = num_decisions - depth - 1
        if remaining >= space.num_poolings - pools:
            node.stay = grow(depth + 1, pools)
        if pools < space.num_poolings:
            node.down = grow(depth + 1, pools + 1)
        if node.stay is None and node.down is None:
            raise ValueError("tree node has no feasible continuation")
        node.leaf_count = sum(child.leaf_count for child in node.children())
        return node

    root = grow(0, 0)
    _attach_configs(root, space, [])
    return root


def _attach_configs(node: TreeNode, space: SearchSpace, pools_at: list[int]) -> None:
    if node.is_leaf:
        node.config = PoolingConfig.from_positions(tuple(pools_at), space.total_blocks)
        return
    if node.stay is not None:
        _attach_configs(node.stay, space, pools_at)
    if node.down is not None:
        # Decision d places a pooling after block fixed_prefix + d.
        pools_at.append(space.fixed_prefix + node.layer)
        _attach_configs(node.down, space, pools_at)
        pools_at.pop()


def collect_leaves(root: TreeNode) -> list[TreeNode]:
    leaves: list[TreeNode] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            leaves.append(node)
        else:
            if node.down is not None:
                stack.append(node.down)
            if node.stay is not None:
                stack.append(node.stay)
    return leaves


def mcts_select_path(
    root: TreeNode,
    explore_c: float,
    warmup: bool,
    rng: np.random.Generator,
) -> list[TreeNode]:
    """Root-to-leaf path, either uniform over leaves (warm-up) or greedy UCB.

    Warm-up consumes a single integer variate and walks it down by leaf
    counts, so every leaf is equally likely regardless of tree asymmetry.
    UCB ties (including the all-unvisited state) prefer the downsample
    child, which keeps selection deterministic.
    """
    path = [root]
    node = root
    if warmup:
        u = int(rng.integers(root.leaf_count))
        while not node.is_leaf:
            first, second = node.stay, node.down
            if first is not None and u < first.leaf_count:
                node = first
            else:
                if first is not None:
                    u -= first.leaf_count
                node = second
            path.append(node)
        return path
    while not node.is_leaf:
        if not node.children():
            raise ValueError("malformed tree: dead end before all poolings placed")
        best = None
        best_score = -math.inf
        # Evaluate downsample last so it wins ties via >=.
        for child in (node.stay, node.down):
            if child is None:
                continue
            score = (
                math.inf
                if child.visits == 0
                else ucb_score(child.cumulative_reward, child.visits, max(node.visits, 1), explore_c)
            )
            if score >= best_score:
                best, best_score = child, score
        node = best
        path.append(node)
    return path


def mcts_backpropagate(path: list[TreeNode], reward: float) -> None:
    """Add one observed reward along the selected path, root included."""
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward must lie in [0, 1], got {reward}")
    for node in path:
        node.visits += 1
        node.cumulative_reward += reward


def mcts_best_leaf(root: TreeNode) -> TreeNode:
    """Final selection: most-visited leaf, ties broken by higher mean reward."""
    leaves = collect_leaves(root)
    return max(leaves, key=lambda leaf: (leaf.visits, leaf.mean_reward()))


def tree_config_set(root: TreeNode) -> set[PoolingConfig]:
    return {leaf.config for leaf in collect_leaves(root)}


def verify_tree(space: SearchSpace, root: TreeNode) -> None:
    """Cross-check the path-config bijection against plain enumeration."""
    expected = set(enumerate_configs(space))
    got = tree_config_set(root)
    if expected != got:
        raise AssertionError(
            f"tree leaves disagree with enumeration: missing {expected - got}, "
            f"extra {got - expected}"
        )
