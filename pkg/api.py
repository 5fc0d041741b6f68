#!/usr/bin/env python3
"""
Peer Method Report Service - FastAPI Implementation
Order, stability and synthesis reports for the builtin methods as JSON
"""

import json
import logging
from datetime import datetime
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.encoders import jsonable_encoder
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from cache_manager import get_cache_manager, get_cache_status, invalidate_cache
from errors import PeerError, UnknownMethod
from method_catalog import BUILTIN_NAMES, builtin_suite
from order_analysis import achieved_orders, synthesize_standard
from settings import get_settings
from stability_analysis import stability_report

logger = logging.getLogger(__name__)

VERSION = "1.0.0"

# the start step has no B, so there is no stability matrix to analyse
STABILITY_ROLES = ("standard", "end")

app = FastAPI(
    title="Peer Method Report Service",
    description="Order conditions, stability and synthesis of implicit Peer two-step methods",
    version=VERSION,
    docs_url=None,
    redoc_url=None,
)


class PrettyJSONResponse(JSONResponse):
    def render(self, content) -> bytes:
        return json.dumps(
            jsonable_encoder(content),
            ensure_ascii=False,
            allow_nan=False,
            indent=2,
            separators=(',', ': ')
        ).encode('utf-8')


app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)


def _error_body(error: str, message: str) -> dict:
    return {"error": error, "message": message, "timestamp": datetime.utcnow().isoformat()}


@app.exception_handler(PeerError)
async def peer_error_handler(request: Request, exc: PeerError):
    logger.warning(f"⚠️ {type(exc).__name__} on {request.url}: {exc}")
    status = 404 if isinstance(exc, UnknownMethod) else 422
    return PrettyJSONResponse(status_code=status, content=_error_body(type(exc).__name__, str(exc)))


@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    logger.error(f"❌ Global exception on {request.url}: {str(exc)}")
    return PrettyJSONResponse(
        status_code=500,
        content=_error_body("Internal server error", "An unexpected error occurred"),
    )


@app.get("/health", response_class=PrettyJSONResponse)
async def health_and_cache_status():
    """Server status, cache information and the endpoint list"""
    return {
        "status": "healthy",
        "version": VERSION,
        "cache_status": get_cache_status(),
        "endpoints": [
            "/methods",
            "/methods/{name}/orders",
            "/methods/{name}/stability",
            "/synthesize",
            "/cache_clear",
        ],
        "timestamp": datetime.utcnow().isoformat(),
    }


@app.get("/methods", response_class=PrettyJSONResponse)
async def list_methods():
    methods = []
    for name in BUILTIN_NAMES:
        suite = builtin_suite(name)
        methods.append({"name": name, "stages": suite.s, "c": suite.c.tolist()})
    return {"methods": methods}


@app.get("/methods/{name}/orders", response_class=PrettyJSONResponse)
async def method_orders(name: str):
    suite = builtin_suite(name)
    report = get_cache_manager().get_or_compute(("orders", name), lambda: achieved_orders(suite))
    return {**report.model_dump(), "all_met": report.all_met}


@app.get("/methods/{name}/stability", response_class=PrettyJSONResponse)
async def method_stability(name: str, ntheta: Optional[int] = Query(None, ge=8, le=200000)):
    suite = builtin_suite(name)
    n_theta = ntheta or get_settings().ntheta

    def compute():
        return [stability_report(getattr(suite, role), suite.name, n_theta) for role in STABILITY_ROLES]

    reports = get_cache_manager().get_or_compute(("stability", name, n_theta), compute)
    return {"method": suite.name, "ntheta": n_theta, "sets": [r.model_dump() for r in reports]}


@app.get("/synthesize", response_class=PrettyJSONResponse)
async def synthesize(d1: float = Query(...), d3: float = Query(...)):
    result = synthesize_standard(d1, d3)
    return result.to_dict()


@app.post("/cache_clear", response_class=PrettyJSONResponse)
async def clear_cache_endpoint():
    removed = invalidate_cache()
    return {"cleared": removed, "timestamp": datetime.utcnow().isoformat()}
