"""Pydantic request/response models for the simulation service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class Overrides(BaseModel):
    preset: str | None = None          # memory preset: hmc1 | hmc2 | hbm
    slices: int | None = None
    compute_scale: float | None = None
    mem_bandwidth: float | None = None
    batch: int | None = None
    seed: int | None = None

    def as_kwargs(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class ExperimentRequest(BaseModel):
    config_yaml: str | None = None
    workload: dict | None = None       # workload block, overrides the file's
    overrides: Overrides | None = None


class RunRequest(ExperimentRequest):
    trace: bool = False


class SweepRequest(ExperimentRequest):
    axis: str = Field(description="num_slices | compute_scale | memory")
    values: list[float | int | str]


class RooflineRequest(ExperimentRequest):
    samples: int = 25
    run_workload: bool = True


class PlanResponse(BaseModel):
    plan_text: str


class RunResponse(BaseModel):
    csv: str
    trace_text: str | None = None
    stats: dict
    fingerprint: str


class SweepRow(BaseModel):
    value: float | int | str
    speedup: float
    total_cycles: int
    load_iterations_total: int
    load_iterations_max: int


class SweepResponse(BaseModel):
    csv: str
    rows: list[SweepRow]


class RooflineResponse(BaseModel):
    csv: str


class PresetsResponse(BaseModel):
    memory: dict
    workloads: list[str]
