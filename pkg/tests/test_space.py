import numpy as np
import pytest

from poolsearch.space import (
    EnumerationCapError,
    PoolingConfig,
    SearchSpace,
    config_to_positions,
    enumerate_configs,
    positions_to_config,
    sample_config,
    space_size,
    validate_config,
)


@pytest.mark.parametrize(
    "blocks,poolings,expected",
    [(10, 2, 36), (9, 3, 56), (17, 3, 560), (16, 3, 455), (8, 3, 35), (2, 1, 1)],
)
def test_space_sizes_match_reference(blocks, poolings, expected):
    space = SearchSpace.for_input(blocks, poolings, input_size=32)
    assert space_size(space) == expected


def test_enumerate_tiny_space():
    space = SearchSpace.for_input(4, 2, input_size=32)
    configs = enumerate_configs(space)
    assert [c.blocks_per_stage for c in configs] == [(2, 1, 1), (1, 2, 1), (1, 1, 2)]


def test_enumerate_forced_space():
    space = SearchSpace.for_input(3, 2, input_size=32)
    assert [c.blocks_per_stage for c in enumerate_configs(space)] == [(1, 1, 1)]


def test_enumerate_order_and_against_bruteforce():
    space = SearchSpace.for_input(10, 2, input_size=32)
    configs = enumerate_configs(space)
    assert len(configs) == 36
    assert configs[0].blocks_per_stage == (8, 1, 1)
    assert configs[-1].blocks_per_stage == (1, 1, 8)
    # Brute-force: all positive compositions of 10 into 3 parts.
    brute = {
        (a, b, 10 - a - b)
        for a in range(1, 9)
        for b in range(1, 9)
        if 10 - a - b >= 1
    }
    assert {c.blocks_per_stage for c in configs} == brute
    # Lexicographic-descending ordering.
    assert all(
        configs[i].blocks_per_stage > configs[i + 1].blocks_per_stage
        for i in range(len(configs) - 1)
    )


def test_enumeration_cap():
    space = SearchSpace.for_input(64, 4, input_size=32)
    assert space.size() > 100_000
    with pytest.raises(EnumerationCapError, match="sample"):
        enumerate_configs(space)


def test_enumeration_matches_size_on_random_small_spaces():
    rng = np.random.default_rng(11)
    for _ in range(40):
        blocks = int(rng.integers(2, 13))
        poolings = int(rng.integers(1, min(blocks, 5)))
        space = SearchSpace.for_input(blocks, poolings, input_size=32)
        configs = enumerate_configs(space)
        assert len(configs) == space.size()
        assert len(set(configs)) == len(configs)
        for config in configs:
            assert validate_config(config, space) == []
            assert config.num_poolings == poolings


@pytest.mark.parametrize(
    "stages,positions",
    [((4, 3, 3), (4, 7)), ((7, 1, 2), (7, 8)), ((1, 1, 8), (1, 2))],
)
def test_config_to_positions(stages, positions):
    assert config_to_positions(PoolingConfig(stages)) == positions


def test_positions_roundtrip():
    assert positions_to_config((4, 7), 10).blocks_per_stage == (4, 3, 3)
    assert positions_to_config((1, 2), 10).blocks_per_stage == (1, 1, 8)
    space = SearchSpace.for_input(9, 3, input_size=32)
    for config in enumerate_configs(space):
        assert positions_to_config(config.positions(), 9) == config


def test_positions_validation():
    with pytest.raises(ValueError):
        positions_to_config((9, 9), 10)
    with pytest.raises(ValueError):
        positions_to_config((0, 4), 10)
    with pytest.raises(ValueError):
        positions_to_config((4, 10), 10)


def test_validate_config_violations():
    space = SearchSpace.for_input(10, 2, input_size=32)
    assert validate_config(PoolingConfig((4, 3, 3)), space) == []
    assert any("sum" in v for v in validate_config(PoolingConfig((4, 3, 2)), space))
    with pytest.raises(ValueError):
        PoolingConfig((5, 0, 5))  # empty stage rejected at construction
    assert any("stages" in v for v in validate_config(PoolingConfig((5, 5)), space))


def test_config_parse_and_print():
    config = PoolingConfig.parse("[4,3,3]")
    assert config.blocks_per_stage == (4, 3, 3)
    assert str(config) == "[4,3,3]"
    with pytest.raises(ValueError):
        PoolingConfig.parse("4,3,3")
    with pytest.raises(ValueError):
        PoolingConfig.parse("[4, 3, 3 extra]")


def test_resolutions_halve_and_reject_bad_input():
    space = SearchSpace.for_input(10, 2, input_size=32)
    assert space.resolutions == (32, 16, 8)
    with pytest.raises(ValueError):
        SearchSpace.for_input(10, 2, input_size=30)
    with pytest.raises(ValueError):
        SearchSpace(10, 2, (32, 16, 9))
    with pytest.raises(ValueError):
        SearchSpace.for_input(3, 3, input_size=32)


def test_sample_config_uniform_and_valid():
    space = SearchSpace.for_input(10, 2, input_size=32)
    rng = np.random.default_rng(3)
    seen = set()
    for _ in range(2000):
        config = sample_config(space, rng)
        assert validate_config(config, space) == []
        seen.add(config)
    assert len(seen) == 36
