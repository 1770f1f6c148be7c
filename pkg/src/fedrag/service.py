"""HTTP front end: health, routing, and search over an immutable index.

Requests are served concurrently against the shared runtime; each search
gets an isolated random generator derived from (base seed, request
counter) unless the request pins its own seed.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from pydantic import BaseModel, Field

from .errors import DataError, RemoteBackendError
from .runtime import MODES, SearchRuntime


class RouteRequest(BaseModel):
    query: str = Field(..., min_length=1)
    seed: int | None = None
    deterministic: bool | None = None


class SearchRequest(BaseModel):
    query: str = Field(..., min_length=1)
    k: int | None = Field(default=None, ge=1)
    mode: str = "mkpqa"
    seed: int | None = None
    deterministic: bool | None = None


def make_app(runtime: SearchRuntime, base_seed: int = 0) -> FastAPI:
    app = FastAPI(title="fedrag", version="0.1.0")
    counter = itertools.count()
    lock = threading.Lock()

    def request_rng(seed: int | None) -> np.random.Generator:
        if seed is not None:
            return np.random.default_rng(seed)
        with lock:
            n = next(counter)
        return np.random.default_rng((base_seed, n))

    @app.get("/healthz")
    def healthz() -> PlainTextResponse:
        return PlainTextResponse("ok")

    @app.post("/v1/route")
    def route(req: RouteRequest) -> dict:
        try:
            probs, gate = runtime.route(req.query, request_rng(req.seed), req.deterministic)
        except (DataError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return {"probs": [float(p) for p in probs], **gate.to_dict()}

    @app.post("/v1/search")
    def search(req: SearchRequest) -> dict:
        if req.mode not in MODES:
            raise HTTPException(status_code=400, detail=f"unknown mode {req.mode!r}")
        try:
            result = runtime.search(
                req.query, req.mode, req.k, request_rng(req.seed), req.deterministic
            )
        except (DataError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except RemoteBackendError as exc:
            raise HTTPException(status_code=502, detail=str(exc)) from exc
        payload = result.to_dict()
        return {
            "results": payload["results"],
            "gate": payload["gate"],
            "probs": payload["probs"],
            "timing_ms": payload["timing_ms"],
        }

    return app
