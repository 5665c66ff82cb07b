"""HTTP service exposing the search library.

Request and response bodies are pydantic models; the search endpoint takes
the full experiment configuration document, runs it synchronously (these are
desk-scale budgets) and returns the report.  State never outlives a request,
so identical requests produce identical responses.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .bench import kendall_tau, load_benchmark, load_bundled_benchmark
from .cnn import WeightSet, build_network, gradient_check
from .config import ExperimentConfig
from .harness import build_space, default_channel_schedule, rank_and_report, run_search
from .records import RunRecord
from .rng import substream
from .space import SearchSpace, enumerate_configs

app = FastAPI(title="poolsearch", version=__version__)


class EnumerateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    total_blocks: int = Field(ge=2)
    num_poolings: int = Field(ge=1)
    input_size: int = Field(default=32, ge=4)
    fixed_prefix: int = Field(default=1, ge=1)
    limit: Optional[int] = Field(default=None, ge=0)


class EnumerateResponse(BaseModel):
    size: int
    configs: list[str]


class SearchResponse(BaseModel):
    report: dict
    num_records: int
    output_dir: Optional[str]


class RankRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    config: ExperimentConfig
    records: list[dict]
    use_bundled_table: bool = False
    benchmark_path: Optional[str] = None


class RankResponse(BaseModel):
    report: dict


class GradcheckRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    total_blocks: int = Field(default=3, ge=1)
    num_poolings: int = Field(default=1, ge=1)
    input_size: int = Field(default=8, ge=4)
    base_channels: int = Field(default=2, ge=1)
    num_classes: int = Field(default=4, ge=2)
    batch_size: int = Field(default=8, ge=8)
    epsilon: float = Field(default=1e-5, gt=0.0)
    num_coords: int = Field(default=200, ge=1)
    seed: int = Field(default=0, ge=0)


class GradcheckResponse(BaseModel):
    max_rel_error: float
    num_checked: int
    num_excluded: int


class CorrelateRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    scores_a: list[float]
    scores_b: list[float]


class CorrelateResponse(BaseModel):
    kendall_tau: float


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/space/enumerate", response_model=EnumerateResponse)
def enumerate_space(request: EnumerateRequest) -> EnumerateResponse:
    try:
        space = SearchSpace.for_input(
            total_blocks=request.total_blocks,
            num_poolings=request.num_poolings,
            input_size=request.input_size,
            fixed_prefix=request.fixed_prefix,
        )
        configs = enumerate_configs(space)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    listed = configs if request.limit is None else configs[: request.limit]
    return EnumerateResponse(size=space.size(), configs=[str(c) for c in listed])


@app.post("/search", response_model=SearchResponse)
def search(config: ExperimentConfig) -> SearchResponse:
    try:
        result = run_search(config)
    except (ValueError, FloatingPointError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return SearchResponse(
        report=result.report,
        num_records=len(result.records),
        output_dir=str(result.outdir) if result.outdir is not None else None,
    )


@app.post("/rank", response_model=RankResponse)
def rank(request: RankRequest) -> RankResponse:
    try:
        records = [RunRecord.from_json_dict(doc) for doc in request.records]
        table = None
        if request.benchmark_path is not None:
            table = load_benchmark(request.benchmark_path, build_space(request.config))
        elif request.use_bundled_table:
            table = load_bundled_benchmark()
        report = rank_and_report(request.config, records, table)
    except (KeyError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return RankResponse(report=report)


@app.post("/gradcheck", response_model=GradcheckResponse)
def gradcheck(request: GradcheckRequest) -> GradcheckResponse:
    try:
        space = SearchSpace.for_input(
            total_blocks=request.total_blocks,
            num_poolings=request.num_poolings,
            input_size=request.input_size,
        )
        schedule = default_channel_schedule(space, request.base_channels)
        config = enumerate_configs(space)[0]
        plan = build_network(
            space, config, schedule, in_channels=1,
            input_size=request.input_size, num_classes=request.num_classes,
        )
        init_rng = substream(request.seed, "init")
        weights = WeightSet(
            0, schedule, 1, request.num_classes, init_rng, zero_init_residual=False
        )
        data_rng = substream(request.seed, "data")
        batch = data_rng.random((request.batch_size, 1, request.input_size, request.input_size))
        labels = data_rng.integers(0, request.num_classes, size=request.batch_size)
        result = gradient_check(
            plan, weights, batch, labels,
            epsilon=request.epsilon, num_coords=request.num_coords,
            rng=substream(request.seed, "batch"),
        )
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return GradcheckResponse(
        max_rel_error=result.max_rel_error,
        num_checked=result.num_checked,
        num_excluded=result.num_excluded,
    )


@app.post("/correlate", response_model=CorrelateResponse)
def correlate(request: CorrelateRequest) -> CorrelateResponse:
    try:
        tau = kendall_tau(request.scores_a, request.scores_b)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc
    return CorrelateResponse(kendall_tau=tau)
