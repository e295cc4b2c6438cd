"""Loopback JSON API backing the Bootlier inspector UI.

The browser never computes statistics: it fetches the activity
population, posts candidate limits for server-side recomputation, and
records the final decision here. Recomputation is serialized per metric
so concurrent slider moves queue instead of racing.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .events import EventLog
from .outliers import (
    ActivityPopulation,
    BootlierParams,
    InsufficientPopulation,
    Metric,
    OutlierDecision,
    bootlier_histogram,
    decision_for_limit,
    modality,
)


class ServerState:
    def __init__(self, log: EventLog, state_dir: str | None = None):
        self.populations: dict[str, ActivityPopulation] = {}
        for metric in Metric:
            pop = ActivityPopulation.from_log(log, metric)
            if len(pop):
                self.populations[metric.value] = pop
        self.decisions: dict[str, OutlierDecision] = {}
        self.locks = {metric.value: threading.Lock() for metric in Metric}
        self.state_dir = Path(state_dir) if state_dir else None
        if self.state_dir:
            self.state_dir.mkdir(parents=True, exist_ok=True)

    def population(self, metric: str) -> ActivityPopulation:
        if metric not in self.populations:
            raise HTTPException(
                status_code=422,
                detail={"error": "NoPopulationLoaded", "metric": metric},
            )
        return self.populations[metric]

    def persist(self, decision: OutlierDecision) -> None:
        self.decisions[decision.metric.value] = decision
        if self.state_dir:
            path = self.state_dir / f"decision_{decision.metric.value}.json"
            path.write_text(
                json.dumps(decision.to_dict(), indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )


class BootlierRequest(BaseModel):
    metric: str = "views"
    limit: int | None = None  # restrict population to values <= limit
    N: int = Field(..., ge=2, description="bootstrap sample size")
    k: int = Field(..., ge=1, description="per-tail trim depth")
    iters: int = Field(1000, ge=1000)
    seed: int = 0
    prominence: float = 0.05
    noise_prominence: float = 0.01


class DecisionRequest(BaseModel):
    metric: str
    limit: int
    N: int | None = None
    k: int | None = None
    iters: int = 1000
    seed: int = 0
    overwrite: bool = False


def create_app(state: ServerState, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="clickprep inspector API", docs_url=None, redoc_url=None)

    @app.get("/api/population")
    def get_population(metric: str = Query("views")):
        pop = state.population(metric)
        values = pop.values
        return {
            "metric": metric,
            "size": int(values.size),
            "min": int(values.min()),
            "median": float(np.median(values)),
            "max": int(values.max()),
            "distinct": [int(v) for v in np.unique(values)],
            "values": [int(v) for v in values],
        }

    @app.post("/api/bootlier")
    def post_bootlier(req: BootlierRequest):
        pop = state.population(req.metric)
        values = pop.values
        if req.limit is not None:
            values = values[values <= req.limit]
        try:
            params = BootlierParams(
                sample_size=req.N,
                trim_depth=req.k,
                iterations=req.iters,
                seed=req.seed,
                prominence=req.prominence,
                noise_prominence=req.noise_prominence,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail={"error": str(exc)}) from exc
        subset = ActivityPopulation(metric=pop.metric, values=values)
        with state.locks[req.metric]:
            try:
                hist = bootlier_histogram(subset, params)
            except InsufficientPopulation as exc:
                raise HTTPException(
                    status_code=422,
                    detail={"error": "InsufficientPopulation", "message": str(exc)},
                ) from exc
            result = modality(hist, req.prominence, req.noise_prominence)
        return {
            "metric": req.metric,
            "limit": req.limit,
            "population_size": int(values.size),
            "histogram": hist.to_dict(),
            "modality": result.to_dict(),
        }

    @app.post("/api/decision")
    def post_decision(req: DecisionRequest):
        pop = state.population(req.metric)
        if req.metric in state.decisions and not req.overwrite:
            raise HTTPException(
                status_code=409,
                detail={
                    "error": "DecisionExists",
                    "existing_limit": state.decisions[req.metric].final_limit,
                },
            )
        trim = req.k if req.k is not None else (7 if req.metric == "views" else 3)
        sample = req.N if req.N is not None else max(
            2 * trim + 2, int(np.ceil(0.01 * len(pop)))
        )
        params = BootlierParams(
            sample_size=sample, trim_depth=trim, iterations=req.iters, seed=req.seed
        )
        with state.locks[req.metric]:
            decision = decision_for_limit(pop, req.limit, params)
            state.persist(decision)
        return {"stored": decision.to_dict()}

    @app.get("/api/decision")
    def get_decision(metric: str = Query(...)):
        if metric not in state.decisions:
            raise HTTPException(status_code=404, detail={"error": "NoDecision"})
        return {"stored": state.decisions[metric].to_dict()}

    if static_dir and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def serve(
    log: EventLog,
    port: int = 8787,
    state_dir: str | None = None,
    static_dir: str | None = None,
) -> None:
    """Run the inspector API on loopback; blocks until interrupted."""
    import uvicorn

    state = ServerState(log, state_dir=state_dir)
    app = create_app(state, static_dir=static_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")


__all__ = ["ServerState", "create_app", "serve", "BootlierRequest", "DecisionRequest"]
