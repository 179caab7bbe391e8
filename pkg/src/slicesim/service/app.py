"""FastAPI service wrapping the simulator.

Config/usage problems map to 400, simulation failures to 500. CSV and trace
payloads travel as opaque strings so byte-level determinism survives the
JSON hop.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import experiments as ex
from ..config import ConfigError, MEMORY_PRESETS
from ..plan import PlanError
from ..sim import SimError
from ..workloads import PRESETS, WorkloadError
from .models import (ExperimentRequest, PlanResponse, PresetsResponse,
                     RooflineRequest, RooflineResponse, RunRequest,
                     RunResponse, SweepRequest, SweepResponse, SweepRow)

_USAGE_ERRORS = (ConfigError, WorkloadError, PlanError, ValueError, KeyError)


def _experiment(req: ExperimentRequest) -> ex.Experiment:
    overrides = req.overrides.as_kwargs() if req.overrides else None
    return ex.Experiment.from_yaml(req.config_yaml,
                                   workload_block=req.workload,
                                   overrides=overrides)


def create_app() -> FastAPI:
    app = FastAPI(title="slicesim", version="0.1.0",
                  description="Near-data-processing memory-slice simulator")

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/presets", response_model=PresetsResponse)
    def presets():
        return PresetsResponse(
            memory={k: {"bandwidth_gbs": v.per_slice_bandwidth,
                        "energy_pj_per_bit": v.access_energy}
                    for k, v in MEMORY_PRESETS.items()},
            workloads=sorted(PRESETS))

    @app.post("/v1/plan", response_model=PlanResponse)
    def plan(req: ExperimentRequest):
        exp = _wrap_usage(lambda: _experiment(req))
        text = _wrap_usage(lambda: ex.cmd_plan(exp))
        return PlanResponse(plan_text=text)

    @app.post("/v1/run", response_model=RunResponse)
    def run(req: RunRequest):
        exp = _wrap_usage(lambda: _experiment(req))
        try:
            csv, result = ex.cmd_run(exp, trace=req.trace)
        except _USAGE_ERRORS as err:
            raise HTTPException(status_code=400, detail=str(err))
        except SimError as err:
            raise HTTPException(status_code=500, detail=str(err))
        return RunResponse(
            csv=csv,
            trace_text=result.trace_text() if req.trace else None,
            stats=result.stats.as_dict(),
            fingerprint=result.stats.fingerprint)

    @app.post("/v1/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        exp = _wrap_usage(lambda: _experiment(req))
        try:
            csv, table = ex.cmd_sweep(exp, req.axis, req.values)
        except _USAGE_ERRORS as err:
            raise HTTPException(status_code=400, detail=str(err))
        except SimError as err:
            raise HTTPException(status_code=500, detail=str(err))
        rows = [SweepRow(value=v, speedup=sp,
                         total_cycles=st.total_cycles,
                         load_iterations_total=st.load_iterations_total,
                         load_iterations_max=st.load_iterations_max)
                for v, sp, st in table]
        return SweepResponse(csv=csv, rows=rows)

    @app.post("/v1/roofline", response_model=RooflineResponse)
    def roofline(req: RooflineRequest):
        exp = _wrap_usage(lambda: _experiment(req))
        try:
            csv = ex.cmd_roofline(exp, samples=req.samples,
                                  run_workload=req.run_workload)
        except _USAGE_ERRORS as err:
            raise HTTPException(status_code=400, detail=str(err))
        except SimError as err:
            raise HTTPException(status_code=500, detail=str(err))
        return RooflineResponse(csv=csv)

    return app


def _wrap_usage(fn):
    try:
        return fn()
    except _USAGE_ERRORS as err:
        raise HTTPException(status_code=400, detail=str(err))


app = create_app()
