import numpy as np
import pytest
from scipy import stats

from poolsearch.bench import (
    BenchmarkFormatError,
    InterferenceState,
    format_benchmark,
    kendall_tau,
    load_bundled_benchmark,
    parse_benchmark,
    register_training,
    simulate_eval,
)
from poolsearch.space import PoolingConfig, SearchSpace, enumerate_configs


@pytest.fixture(scope="module")
def table():
    return load_bundled_benchmark()


def cfg(text):
    return PoolingConfig.parse(text)


# -- table ingestion -----------------------------------------------------------


def test_bundled_table_reference_rows(table):
    assert len(table) == 36
    assert table.mean(cfg("[4,3,3]")) == 90.52 / 100.0
    assert table.std(cfg("[4,3,3]")) == 0.15 / 100.0
    assert table.mean(cfg("[7,1,2]")) == 92.01 / 100.0
    assert table.std(cfg("[7,1,2]")) == 0.18 / 100.0
    assert table.mean(cfg("[1,1,8]")) == 87.45 / 100.0
    assert table.std(cfg("[1,1,8]")) == 0.06 / 100.0


def test_bundled_table_best_and_top3(table):
    assert table.best_config() == cfg("[7,1,2]")
    assert table.top_configs(3) == [cfg("[7,1,2]"), cfg("[6,2,2]"), cfg("[6,1,3]")]


def test_bundled_table_covers_space_exactly(table):
    assert set(table.entries) == set(enumerate_configs(table.space))
    for entry in table.entries.values():
        assert 0.0 <= entry.mean - 3 * entry.std
        assert entry.mean + 3 * entry.std <= 1.0


def test_table_roundtrip(table):
    text = format_benchmark(table)
    again = parse_benchmark(text, table.space)
    assert again.entries == table.entries
    assert format_benchmark(again) == text


def test_table_rejects_missing_extra_duplicate(table):
    space = table.space
    text = format_benchmark(table)
    lines = [l for l in text.splitlines() if l.strip()]
    with pytest.raises(BenchmarkFormatError, match="missing"):
        parse_benchmark("\n".join(lines[:-1]), space)
    with pytest.raises(BenchmarkFormatError, match="duplicate"):
        parse_benchmark("\n".join(lines + [lines[0]]), space)
    extra = "\n".join(lines).replace("[8,1,1] 89.99 0.12", "[9,1,1] 89.99 0.12", 1)
    with pytest.raises(BenchmarkFormatError):
        parse_benchmark(extra, space)
    with pytest.raises(BenchmarkFormatError, match="line 1"):
        parse_benchmark("[4,3,3] 90.52\n", space)


# -- interference model ----------------------------------------------------------


def make_interference(num_models=1, **kw):
    space = SearchSpace.for_input(10, 2, input_size=32)
    defaults = dict(strength=0.05, noise=0.0, capacity=64)
    defaults.update(kw)
    return InterferenceState(space, num_models, **defaults)


def test_simulate_eval_noise_free_returns_mean(table):
    inter = make_interference(strength=0.0, noise=0.0)
    rng = np.random.default_rng(0)
    for config in list(table.entries)[:8]:
        assert simulate_eval(table, config, 0, inter, rng) == table.mean(config)


def test_self_history_zero_penalty(table):
    inter = make_interference(strength=0.05)
    config = cfg("[4,3,3]")
    register_training(inter, 0, config)
    rng = np.random.default_rng(0)
    assert simulate_eval(table, config, 0, inter, rng) == table.mean(config)


def test_documented_distance_example(table):
    # positions [1,2] vs [8,9]: L1 distance 14, maximum possible 16.
    inter = make_interference(strength=0.05)
    register_training(inter, 0, cfg("[8,1,1]"))
    rng = np.random.default_rng(0)
    got = simulate_eval(table, cfg("[1,1,8]"), 0, inter, rng)
    assert got == pytest.approx(table.mean(cfg("[1,1,8]")) - 0.05 * (14.0 / 16.0), abs=1e-12)


def test_interference_monotone_in_strength(table):
    config = cfg("[1,1,8]")
    history = [cfg("[8,1,1]"), cfg("[5,4,1]"), cfg("[4,3,3]")]
    accs = []
    for strength in (0.0, 0.02, 0.05, 0.1):
        inter = make_interference(strength=strength, noise=0.0)
        for h in history:
            register_training(inter, 0, h)
        accs.append(simulate_eval(table, config, 0, inter, np.random.default_rng(0)))
    assert all(a >= b for a, b in zip(accs, accs[1:]))


def test_ring_buffer_eviction_and_isolation():
    inter = make_interference(num_models=2, capacity=2)
    a, b, c = cfg("[8,1,1]"), cfg("[7,2,1]"), cfg("[7,1,2]")
    register_training(inter, 0, a)
    register_training(inter, 0, b)
    register_training(inter, 0, c)
    assert list(inter.histories[0]) == [b.positions(), c.positions()]
    assert list(inter.histories[1]) == []
    register_training(inter, 1, a)
    assert list(inter.histories[0]) == [b.positions(), c.positions()]
    assert list(inter.histories[1]) == [a.positions()]


def test_noise_is_seeded_and_clamped(table):
    inter = make_interference(noise=0.5)
    config = cfg("[7,1,2]")
    a = simulate_eval(table, config, 0, inter, np.random.default_rng(9))
    b = simulate_eval(table, config, 0, inter, np.random.default_rng(9))
    assert a == b
    rng = np.random.default_rng(1)
    values = [simulate_eval(table, config, 0, inter, rng) for _ in range(200)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert len(set(values)) > 100


# -- Kendall tau -------------------------------------------------------------------


def brute_force_tau(a, b):
    n = len(a)
    concordant = discordant = ties_a = ties_b = 0
    for i in range(n):
        for j in range(i + 1, n):
            da = int(a[i] > a[j]) - int(a[i] < a[j])
            db = int(b[i] > b[j]) - int(b[i] < b[j])
            if da == 0:
                ties_a += 1
            if db == 0:
                ties_b += 1
            if da * db > 0:
                concordant += 1
            elif da * db < 0:
                discordant += 1
    pairs = n * (n - 1) // 2
    return (concordant - discordant) / np.sqrt((pairs - ties_a) * (pairs - ties_b))


def test_tau_perfect_and_reversed():
    x = [3.0, 1.0, 4.0, 1.5, 9.0]
    assert kendall_tau(x, x) == 1.0
    assert kendall_tau(x, x[::-1] if False else [-v for v in x]) == -1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0


def test_tau_documented_example():
    assert kendall_tau([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(4.0 / 6.0)


def test_tau_matches_bruteforce_with_ties():
    rng = np.random.default_rng(14)
    for _ in range(500):
        n = int(rng.integers(2, 51))
        # integer-valued scores so ties actually occur
        a = rng.integers(0, max(2, n // 2), size=n).astype(float)
        b = rng.integers(0, max(2, n // 2), size=n).astype(float)
        if np.all(a == a[0]) or np.all(b == b[0]):
            continue
        assert kendall_tau(a, b) == pytest.approx(brute_force_tau(a, b), abs=1e-12)


def test_tau_matches_scipy_on_continuous_data():
    rng = np.random.default_rng(15)
    for _ in range(25):
        n = int(rng.integers(3, 200))
        a, b = rng.random(n), rng.random(n)
        expected = stats.kendalltau(a, b).statistic
        assert kendall_tau(a, b) == pytest.approx(expected, abs=1e-12)


def test_tau_symmetry_and_monotone_invariance():
    rng = np.random.default_rng(16)
    a, b = rng.random(40), rng.random(40)
    assert kendall_tau(a, b) == pytest.approx(kendall_tau(b, a), abs=1e-15)
    assert kendall_tau(np.exp(3 * a), b) == pytest.approx(kendall_tau(a, b), abs=1e-15)


def test_tau_errors():
    with pytest.raises(ValueError):
        kendall_tau([1.0], [2.0])
    with pytest.raises(ValueError, match="tied"):
        kendall_tau([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        kendall_tau([1.0, 2.0], [1.0, 2.0, 3.0])
