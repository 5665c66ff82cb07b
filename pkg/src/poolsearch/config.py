"""Experiment configuration: one validated document drives one run."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

Method = Literal["balanced", "spos", "bse", "mcts", "mcts-warmup", "bruteforce"]
Backend = Literal["surrogate", "cnn"]

SURROGATE_ITERS_PER_MODEL = 5000
CNN_ITERS_PER_MODEL = 200


class ExperimentConfig(BaseModel):
    """Everything a search run needs; unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    method: Method = "balanced"
    backend: Backend = "surrogate"

    # Search space.
    total_blocks: int = Field(default=10, ge=2)
    num_poolings: int = Field(default=2, ge=1)
    input_size: int = Field(default=32, ge=4)
    fixed_prefix: int = Field(default=1, ge=1)

    # Mixture controller.
    num_models: int = Field(default=1, ge=1)
    iterations: Optional[int] = Field(default=None, ge=1)
    beta: float = Field(default=0.9, ge=0.0, le=1.0)
    tau_init: float = Field(default=1.0, gt=0.0)
    tau_min: Optional[float] = Field(default=None, gt=0.0)
    tau_horizon: Optional[int] = Field(default=None, ge=1)
    kl_threshold: float = Field(default=1e-4, gt=0.0)
    ipf_max_iters: int = Field(default=10_000, ge=1)

    # Surrogate backend.
    benchmark_path: Optional[str] = None
    interference: float = Field(default=0.05, ge=0.0)
    eval_noise: float = Field(default=0.01, ge=0.0)
    history_capacity: int = Field(default=64, ge=1)
    final_eval_draws: int = Field(default=0, ge=0)  # 0 = noise-free full-set evaluation

    # Baselines.
    explore_c: float = Field(default=1.0, ge=0.0)
    warmup: Optional[int] = Field(default=None, ge=0)
    bse_inv_temp_init: float = Field(default=1.0, ge=0.0)
    bse_inv_temp_max: float = Field(default=100.0, ge=0.0)

    # CNN backend.
    channel_schedule: Optional[list[int]] = None
    base_channels: int = Field(default=8, ge=1)
    num_classes: int = Field(default=10, ge=2)
    in_channels: int = Field(default=3, ge=1)
    batch_size: int = Field(default=16, ge=8)
    lr: float = Field(default=0.1, gt=0.0)
    weight_decay: float = Field(default=1e-3, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    synth_per_class: int = Field(default=24, ge=1)
    cifar_path: Optional[str] = None

    # Run plumbing.
    seed: int = Field(default=0, ge=0)
    top_k: int = Field(default=5, ge=1)
    output_dir: Optional[str] = None
    entropy_stride: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        if self.num_poolings >= self.total_blocks:
            raise ValueError("num_poolings must be smaller than total_blocks")
        if self.fixed_prefix + self.num_poolings > self.total_blocks:
            raise ValueError("fixed_prefix leaves no room for the remaining stages")
        if self.tau_min is not None and self.tau_min > self.tau_init:
            raise ValueError("tau_min cannot exceed tau_init")
        if self.bse_inv_temp_max < self.bse_inv_temp_init:
            raise ValueError("bse_inv_temp_max cannot be below bse_inv_temp_init")
        if self.channel_schedule is not None:
            if len(self.channel_schedule) != self.total_blocks:
                raise ValueError("channel_schedule must list one width per block")
            if any(c < 1 for c in self.channel_schedule):
                raise ValueError("channel widths must be positive")
        return self

    def resolved_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        per_model = SURROGATE_ITERS_PER_MODEL if self.backend == "surrogate" else CNN_ITERS_PER_MODEL
        return per_model * self.num_models

    def resolved_tau_min(self) -> float:
        return self.tau_min if self.tau_min is not None else 1.0 / (100.0 * self.num_models)

    def resolved_tau_horizon(self) -> int:
        """Schedule horizon: the step at which the temperature reaches its floor.

        Defaults to half the run so the controller spends the second half in
        the committed (floor-temperature) regime, where the routing actually
        shapes per-model training histories.
        """
        if self.tau_horizon is not None:
            return self.tau_horizon
        return max(1, self.resolved_iterations() // 2)

    def resolved_entropy_stride(self) -> int:
        if self.entropy_stride is not None:
            return self.entropy_stride
        return max(1, self.resolved_iterations() // 200)

    def resolved_warmup(self, num_configs: int) -> int:
        if self.warmup is not None:
            return self.warmup
        return num_configs if self.method == "mcts-warmup" else 0
