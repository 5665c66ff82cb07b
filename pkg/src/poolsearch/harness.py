"""Experiment orchestration: seeded runs of every searcher against a backend.

One run is one sequential pipeline: resolve the space, build the backend,
drive the chosen search method for its budget while appending run records,
then rank configurations (full re-evaluation and, where the method keeps
estimates, a proxy ranking) and emit a deterministic report.  Reports never
contain wall-clock values, so a repeated run reproduces its report byte for
byte.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import baselines, mixture
from .bench import (
    BenchmarkTable,
    InterferenceState,
    kendall_tau,
    load_benchmark,
    load_bundled_benchmark,
    simulate_eval,
)
from .cnn import WeightSet, build_network, evaluate, lr_at, train_step
from .config import ExperimentConfig
from .datasets import Dataset, load_cifar_binary, split_half, synth_dataset
from .records import RunRecord, persist_results
from .rng import substream
from .space import PoolingConfig, SearchSpace, enumerate_configs

REPORT_VERSION = 1


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[RunRecord]
    report: dict
    outdir: Optional[Path]


def build_space(cfg: ExperimentConfig) -> SearchSpace:
    return SearchSpace.for_input(
        total_blocks=cfg.total_blocks,
        num_poolings=cfg.num_poolings,
        input_size=cfg.input_size,
        fixed_prefix=cfg.fixed_prefix,
    )


def default_channel_schedule(space: SearchSpace, base_channels: int) -> tuple[int, ...]:
    """Widths per block index: double at the stage steps of the even placement."""
    stages = space.num_poolings + 1
    per_stage, remainder = divmod(space.total_blocks, stages)
    counts = [per_stage + (1 if i < remainder else 0) for i in range(stages)]
    schedule: list[int] = []
    for stage, count in enumerate(counts):
        schedule += [base_channels << stage] * count
    return tuple(schedule)


# ---------------------------------------------------------------------------
# Backends


class SurrogateBackend:
    """Table playback with weight-sharing interference and minibatch noise."""

    name = "surrogate"

    def __init__(self, cfg: ExperimentConfig, space: SearchSpace, configs: list[PoolingConfig]):
        if cfg.benchmark_path is not None:
            self.table = load_benchmark(cfg.benchmark_path, space)
        else:
            self.table = load_bundled_benchmark()
            if self.table.space != space:
                raise ValueError(
                    "the bundled benchmark covers the 10-block/2-pooling/32px space; "
                    "pass benchmark_path for other spaces"
                )
        self.configs = configs
        self.interference = InterferenceState(
            space,
            cfg.num_models,
            strength=cfg.interference,
            noise=cfg.eval_noise,
            capacity=cfg.history_capacity,
        )
        self.noise_rng = substream(cfg.seed, "noise")
        self.final_draws = cfg.final_eval_draws

    def train_and_eval(self, c: int, m: int, step: int) -> tuple[float, Optional[float]]:
        config = self.configs[c]
        self.interference.register_training(m, config)
        acc = simulate_eval(self.table, config, m, self.interference, self.noise_rng)
        return acc, None

    def evaluate_final(self, c: int, m: int) -> float:
        # Full-validation evaluation: averaging minibatch draws models scoring
        # the whole validation split, where the per-minibatch sampling noise
        # averages out but the interference penalty does not.
        if self.final_draws == 0:
            config = self.configs[c]
            base = self.table.mean(config)
            penalty = self.interference.strength * self.interference.mean_distance(m, config)
            return float(min(max(base - penalty, 0.0), 1.0))
        draws = [
            simulate_eval(self.table, self.configs[c], m, self.interference, self.noise_rng)
            for _ in range(self.final_draws)
        ]
        return float(np.mean(draws))

    def truth_means(self) -> list[float]:
        return [self.table.mean(config) for config in self.configs]


class CnnBackend:
    """Actually trains M independent weight sets on a 50/50 split."""

    name = "cnn"

    def __init__(self, cfg: ExperimentConfig, space: SearchSpace, configs: list[PoolingConfig]):
        if cfg.cifar_path is not None:
            data = load_cifar_binary(cfg.cifar_path)
            if cfg.input_size != 32 or cfg.in_channels != 3:
                raise ValueError("CIFAR binary data is 3-channel 32px")
        else:
            data = synth_dataset(cfg.seed, cfg.synth_per_class, cfg.input_size)
            if cfg.in_channels != 3:
                raise ValueError("the synthetic generator emits 3-channel images")
        self.train_set, self.val_set = split_half(data, cfg.seed)
        schedule = (
            tuple(cfg.channel_schedule)
            if cfg.channel_schedule is not None
            else default_channel_schedule(space, cfg.base_channels)
        )
        self.plans = [
            build_network(
                space,
                config,
                schedule,
                in_channels=cfg.in_channels,
                input_size=cfg.input_size,
                num_classes=cfg.num_classes,
            )
            for config in configs
        ]
        init_rng = substream(cfg.seed, "init")
        self.weights = [
            WeightSet(m, schedule, cfg.in_channels, cfg.num_classes, init_rng)
            for m in range(cfg.num_models)
        ]
        self.batch_rng = substream(cfg.seed, "batch")
        self.total_steps = cfg.resolved_iterations()
        self.cfg = cfg

    def _minibatch(self, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
        idx = self.batch_rng.integers(0, len(dataset), size=self.cfg.batch_size)
        return dataset.images[idx], dataset.labels[idx]

    def train_and_eval(self, c: int, m: int, step: int) -> tuple[float, Optional[float]]:
        lr = lr_at(min(step, self.total_steps), self.total_steps, self.cfg.lr)
        images, labels = self._minibatch(self.train_set)
        loss = train_step(
            self.plans[c],
            self.weights[m],
            images,
            labels,
            lr,
            weight_decay=self.cfg.weight_decay,
            momentum=self.cfg.momentum,
        )
        val_images, val_labels = self._minibatch(self.val_set)
        acc = evaluate(self.plans[c], self.weights[m], [(val_images, val_labels)])
        return acc, loss

    def evaluate_final(self, c: int, m: int) -> float:
        batches = []
        images, labels = self.val_set.images, self.val_set.labels
        for start in range(0, len(labels), 256):
            batches.append((images[start : start + 256], labels[start : start + 256]))
        return evaluate(self.plans[c], self.weights[m], batches)

    def truth_means(self) -> None:
        return None


def make_backend(cfg: ExperimentConfig, space: SearchSpace, configs: list[PoolingConfig]):
    if cfg.backend == "surrogate":
        return SurrogateBackend(cfg, space, configs)
    return CnnBackend(cfg, space, configs)


# ---------------------------------------------------------------------------
# Method loops


@dataclass
class MethodArtifacts:
    """What a finished search hands to the report builder."""

    best_model_for: Callable[[int], int]
    proxy_scores: Optional[list[float]]
    entropy_trajectory: list[dict]


def _run_balanced(cfg, configs, backend, records, t0) -> MethodArtifacts:
    num_configs = len(configs)
    steps = cfg.resolved_iterations()
    state = mixture.MixtureState(
        num_configs=num_configs,
        num_models=cfg.num_models,
        total_steps=cfg.resolved_tau_horizon(),
        beta=cfg.beta,
        tau_init=cfg.tau_init,
        tau_min=cfg.resolved_tau_min(),
        space_fingerprint=build_space(cfg).fingerprint(),
    )
    config_rng = substream(cfg.seed, "config")
    model_rng = substream(cfg.seed, "model")
    stride = cfg.resolved_entropy_stride()
    entropy = []
    joint = None
    for step in range(steps):
        joint = state.current_joint(cfg.kl_threshold, cfg.ipf_max_iters)
        if step % stride == 0:
            entropy.append({"step": step, "entropy": mixture.mean_conditional_entropy(joint)})
        tau = state.temperature_at()
        c, m = mixture.sample_pair(joint, config_rng, model_rng)
        acc, loss = backend.train_and_eval(c, m, step)
        state.update_accuracy(c, m, acc)
        records.append(
            RunRecord(step=step, config=str(configs[c]), model=m, accuracy=acc,
                      tau=tau, loss=loss, elapsed=time.monotonic() - t0)
        )
    final_joint = state.current_joint(cfg.kl_threshold, cfg.ipf_max_iters)
    entropy.append({"step": steps, "entropy": mixture.mean_conditional_entropy(final_joint)})
    proxy = [
        float(state.ema_acc[c, int(np.argmax(final_joint.probs[c]))]) for c in range(num_configs)
    ]
    return MethodArtifacts(
        best_model_for=lambda c: int(np.argmax(final_joint.probs[c])),
        proxy_scores=proxy,
        entropy_trajectory=entropy,
    )


def _run_spos(cfg, configs, backend, records, t0) -> MethodArtifacts:
    config_rng = substream(cfg.seed, "config")
    for step in range(cfg.resolved_iterations()):
        c = baselines.spos_sample(len(configs), config_rng)
        acc, loss = backend.train_and_eval(c, 0, step)
        records.append(
            RunRecord(step=step, config=str(configs[c]), model=0, accuracy=acc,
                      tau=None, loss=loss, elapsed=time.monotonic() - t0)
        )
    return MethodArtifacts(best_model_for=lambda c: 0, proxy_scores=None, entropy_trajectory=[])


def _run_bse(cfg, configs, backend, records, t0) -> MethodArtifacts:
    steps = cfg.resolved_iterations()
    state = baselines.BseState(
        num_configs=len(configs),
        total_steps=steps,
        inv_temp_init=cfg.bse_inv_temp_init,
        inv_temp_max=cfg.bse_inv_temp_max,
        beta=cfg.beta,
    )
    config_rng = substream(cfg.seed, "config")
    for step in range(steps):
        probs = baselines.bse_probs(state.rewards, state.inv_temp_at())
        c = mixture.multinomial_draw(probs, config_rng)
        acc, loss = backend.train_and_eval(c, 0, step)
        state.update(c, acc)
        records.append(
            RunRecord(step=step, config=str(configs[c]), model=0, accuracy=acc,
                      tau=None, loss=loss, elapsed=time.monotonic() - t0)
        )
    return MethodArtifacts(
        best_model_for=lambda c: 0,
        proxy_scores=[float(r) for r in state.rewards],
        entropy_trajectory=[],
    )


def _run_mcts(cfg, configs, backend, records, t0) -> MethodArtifacts:
    space = build_space(cfg)
    root = baselines.build_tree(space)
    index_of = {config: i for i, config in enumerate(configs)}
    warmup_steps = cfg.resolved_warmup(len(configs))
    config_rng = substream(cfg.seed, "config")
    for step in range(cfg.resolved_iterations()):
        path = baselines.mcts_select_path(
            root, cfg.explore_c, warmup=step < warmup_steps, rng=config_rng
        )
        leaf = path[-1]
        c = index_of[leaf.config]
        acc, loss = backend.train_and_eval(c, 0, step)
        baselines.mcts_backpropagate(path, acc)
        records.append(
            RunRecord(step=step, config=str(configs[c]), model=0, accuracy=acc,
                      tau=None, loss=loss, elapsed=time.monotonic() - t0)
        )
    by_config = {index_of[leaf.config]: leaf for leaf in baselines.collect_leaves(root)}
    proxy = [by_config[c].mean_reward() for c in range(len(configs))]
    return MethodArtifacts(best_model_for=lambda c: 0, proxy_scores=proxy, entropy_trajectory=[])


def _run_bruteforce(cfg, configs, backend, records, t0) -> MethodArtifacts:
    for c in range(len(configs)):
        acc = backend.evaluate_final(c, 0)
        records.append(
            RunRecord(step=c, config=str(configs[c]), model=0, accuracy=acc,
                      tau=None, loss=None, elapsed=time.monotonic() - t0)
        )
    return MethodArtifacts(best_model_for=lambda c: 0, proxy_scores=None, entropy_trajectory=[])


_METHOD_LOOPS = {
    "balanced": _run_balanced,
    "spos": _run_spos,
    "bse": _run_bse,
    "mcts": _run_mcts,
    "mcts-warmup": _run_mcts,
    "bruteforce": _run_bruteforce,
}


# ---------------------------------------------------------------------------
# Reports


def _ranking(scores: list[float], models: list[int], configs, visited, top_k) -> list[dict]:
    order = sorted(
        range(len(configs)),
        key=lambda c: (not visited[c], -scores[c], c),
    )
    out = []
    for rank, c in enumerate(order[:top_k], start=1):
        out.append(
            {
                "rank": rank,
                "config": str(configs[c]),
                "model": models[c],
                "score": scores[c],
                "unvisited": not visited[c],
            }
        )
    return out


def build_report(
    cfg: ExperimentConfig,
    space: SearchSpace,
    configs: list[PoolingConfig],
    records: list[RunRecord],
    artifacts: MethodArtifacts,
    backend=None,
    truth_means: Optional[list[float]] = None,
) -> dict:
    num_configs = len(configs)
    visit_counts = {str(config): 0 for config in configs}
    for record in records:
        visit_counts[record.config] += 1
    visited = [visit_counts[str(config)] > 0 for config in configs]
    best_models = [artifacts.best_model_for(c) for c in range(num_configs)]

    report: dict = {
        "version": REPORT_VERSION,
        "method": cfg.method,
        "backend": cfg.backend,
        "num_models": cfg.num_models,
        "seed": cfg.seed,
        "iterations": cfg.resolved_iterations(),
        "top_k": cfg.top_k,
        "space": {
            "total_blocks": space.total_blocks,
            "num_poolings": space.num_poolings,
            "resolutions": list(space.resolutions),
            "fixed_prefix": space.fixed_prefix,
        },
        "visit_counts": visit_counts,
        "unvisited": sorted(
            str(config) for config, seen in zip(configs, visited) if not seen
        ),
        "entropy_trajectory": artifacts.entropy_trajectory,
    }

    if cfg.top_k > num_configs:
        raise ValueError(f"top_k={cfg.top_k} exceeds the {num_configs} configs in the space")

    report["ranking_full"] = None
    report["best"] = None
    full_scores = None
    if backend is not None:
        full_scores = [backend.evaluate_final(c, best_models[c]) for c in range(num_configs)]
        report["ranking_full"] = _ranking(full_scores, best_models, configs, visited, cfg.top_k)
        report["best"] = report["ranking_full"][0]

    report["ranking_proxy"] = None
    if artifacts.proxy_scores is not None:
        report["ranking_proxy"] = _ranking(
            artifacts.proxy_scores, best_models, configs, visited, cfg.top_k
        )
        if report["best"] is None:
            report["best"] = report["ranking_proxy"][0]

    if truth_means is not None:
        if full_scores is not None:
            report["kendall_tau_full"] = kendall_tau(full_scores, truth_means)
            report["scatter"] = [
                {"config": str(configs[c]), "estimated": full_scores[c], "truth": truth_means[c]}
                for c in range(num_configs)
            ]
        if artifacts.proxy_scores is not None:
            report["kendall_tau_proxy"] = kendall_tau(artifacts.proxy_scores, truth_means)
    return report


def run_search(cfg: ExperimentConfig) -> RunResult:
    """Execute one configured search end to end; persists when output_dir is set."""
    space = build_space(cfg)
    configs = enumerate_configs(space)
    if cfg.top_k > len(configs):
        raise ValueError(f"top_k={cfg.top_k} exceeds the {len(configs)} configs in the space")
    backend = make_backend(cfg, space, configs)
    records: list[RunRecord] = []
    t0 = time.monotonic()
    loop = _METHOD_LOOPS[cfg.method]
    artifacts = loop(cfg, configs, backend, records, t0)
    report = build_report(
        cfg, space, configs, records, artifacts,
        backend=backend, truth_means=backend.truth_means(),
    )
    outdir = None
    if cfg.output_dir is not None:
        outdir = persist_results(cfg.model_dump(), records, report, cfg.output_dir)
    return RunResult(config=cfg, records=records, report=report, outdir=outdir)


# ---------------------------------------------------------------------------
# Offline re-ranking from a record stream


def rank_and_report(
    cfg: ExperimentConfig,
    records: list[RunRecord],
    table: Optional[BenchmarkTable] = None,
) -> dict:
    """Rebuild the estimate-based parts of a report from persisted records.

    Replays the method's estimate updates (they are fully determined by the
    recorded (config, model, accuracy) stream), so the proxy ranking and the
    entropy trajectory match the live run exactly.  Full re-evaluation needs
    the live backend and is only present in run-time reports.
    """
    space = build_space(cfg)
    configs = enumerate_configs(space)
    index_of = {str(config): i for i, config in enumerate(configs)}
    for i, record in enumerate(records):
        if record.config not in index_of:
            raise ValueError(f"record {i} names config {record.config} outside the space")

    artifacts = _replay_artifacts(cfg, configs, index_of, records)
    truth = None
    if table is not None:
        truth = [table.mean(config) for config in configs]
    return build_report(cfg, space, configs, records, artifacts, backend=None, truth_means=truth)


def _replay_artifacts(cfg, configs, index_of, records) -> MethodArtifacts:
    num_configs = len(configs)
    if cfg.method == "balanced":
        state = mixture.MixtureState(
            num_configs=num_configs,
            num_models=cfg.num_models,
            total_steps=cfg.resolved_tau_horizon(),
            beta=cfg.beta,
            tau_init=cfg.tau_init,
            tau_min=cfg.resolved_tau_min(),
        )
        stride = cfg.resolved_entropy_stride()
        entropy = []
        for record in records:
            if state.step % stride == 0:
                joint = state.current_joint(cfg.kl_threshold, cfg.ipf_max_iters)
                entropy.append(
                    {"step": state.step, "entropy": mixture.mean_conditional_entropy(joint)}
                )
            state.update_accuracy(index_of[record.config], record.model, record.accuracy)
        final_joint = state.current_joint(cfg.kl_threshold, cfg.ipf_max_iters)
        entropy.append({"step": state.step, "entropy": mixture.mean_conditional_entropy(final_joint)})
        proxy = [
            float(state.ema_acc[c, int(np.argmax(final_joint.probs[c]))])
            for c in range(num_configs)
        ]
        return MethodArtifacts(
            best_model_for=lambda c: int(np.argmax(final_joint.probs[c])),
            proxy_scores=proxy,
            entropy_trajectory=entropy,
        )
    if cfg.method == "bse":
        state = baselines.BseState(
            num_configs=num_configs,
            total_steps=cfg.resolved_iterations(),
            inv_temp_init=cfg.bse_inv_temp_init,
            inv_temp_max=cfg.bse_inv_temp_max,
            beta=cfg.beta,
        )
        for record in records:
            state.update(index_of[record.config], record.accuracy)
        return MethodArtifacts(
            best_model_for=lambda c: 0,
            proxy_scores=[float(r) for r in state.rewards],
            entropy_trajectory=[],
        )
    if cfg.method in ("mcts", "mcts-warmup"):
        sums = np.zeros(num_configs)
        counts = np.zeros(num_configs, dtype=np.int64)
        for record in records:
            c = index_of[record.config]
            sums[c] += record.accuracy
            counts[c] += 1
        proxy = [float(sums[c] / counts[c]) if counts[c] else 0.0 for c in range(num_configs)]
        return MethodArtifacts(
            best_model_for=lambda c: 0, proxy_scores=proxy, entropy_trajectory=[]
        )
    return MethodArtifacts(best_model_for=lambda c: 0, proxy_scores=None, entropy_trajectory=[])
