"""HTTP service wrapping an engine, plus the reference broker's HTTP face.

The statement endpoint accepts the same text the CLI executes from files.
Feeds accept newline-delimited JSON bodies. Lazy channel results are pulled
by (executionTime, subscriptionId); omitting executionTime returns every
pending result for the subscription.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .brokers import BrokerService
from .engine import Engine
from .errors import EngineError
from .values import DateTime, encode_value


class StatementRequest(BaseModel):
    statements: str


class StatementOutcome(BaseModel):
    kind: str
    message: str = ""
    rows: Optional[List[Any]] = None
    text: Optional[str] = None
    subscription_id: Optional[str] = None


class StatementResponse(BaseModel):
    results: List[StatementOutcome]


class FeedIngestResponse(BaseModel):
    accepted: int
    rejected: int


class ResultsResponse(BaseModel):
    channel: str
    subscriptionId: str
    executionTime: Optional[str] = None
    results: List[Any]


class HealthResponse(BaseModel):
    status: str
    virtual_clock: bool


def _error_response(exc: EngineError) -> JSONResponse:
    body: Dict[str, Any] = {"error": exc.kind.value, "message": exc.message}
    if exc.location is not None:
        body["line"], body["column"] = exc.location
    return JSONResponse(status_code=400, content=body)


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="badlite", description="active data engine service")

    @app.exception_handler(EngineError)
    async def handle_engine_error(_request: Request, exc: EngineError):
        return _error_response(exc)

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", virtual_clock=engine.cluster.virtual)

    @app.get("/catalog")
    def catalog() -> dict:
        return engine.describe_catalog()

    @app.post("/statements", response_model=StatementResponse)
    def statements(request: StatementRequest) -> StatementResponse:
        results = engine.execute_text(request.statements)
        outcomes = []
        for r in results:
            rows = [encode_value(v) for v in r.rows] if r.rows is not None else None
            outcomes.append(StatementOutcome(
                kind=r.kind, message=r.message, rows=rows, text=r.text,
                subscription_id=r.subscription_id))
        return StatementResponse(results=outcomes)

    @app.post("/feeds/{name}", response_model=FeedIngestResponse)
    async def ingest(name: str, request: Request) -> FeedIngestResponse:
        feed = engine.catalog.feeds.get(name)
        if feed is None:
            raise HTTPException(status_code=404, detail=f"unknown feed {name!r}")
        body = (await request.body()).decode("utf-8")
        before_accepted = feed.counters.accepted
        before_rejected = feed.counters.rejected
        for line in body.splitlines():
            if line.strip():
                engine.feed_ingest_line(name, line)
        return FeedIngestResponse(
            accepted=feed.counters.accepted - before_accepted,
            rejected=feed.counters.rejected - before_rejected)

    @app.get("/channels/{channel}/results", response_model=ResultsResponse)
    def channel_results(channel: str, subscriptionId: str,
                        executionTime: Optional[str] = None) -> ResultsResponse:
        when = None
        if executionTime is not None:
            try:
                when = DateTime.parse(executionTime)
            except ValueError:
                raise HTTPException(status_code=422,
                                    detail="executionTime must be an ISO datetime")
        results = engine.pull_channel_results(channel, subscriptionId, when)
        return ResultsResponse(channel=channel, subscriptionId=subscriptionId,
                               executionTime=executionTime,
                               results=[encode_value(r) for r in results])

    return app


def create_broker_app(service: BrokerService) -> FastAPI:
    """The reference broker's wire surface (receives pushes and pings)."""
    app = FastAPI(title=f"badlite-broker-{service.name}")

    @app.post("/results")
    def results(payload: dict) -> dict:
        service.receive_results(payload)
        return {"status": "ok"}

    @app.post("/notify")
    def notify(payload: dict) -> dict:
        service.receive_notify(payload)
        return {"status": "ok"}

    @app.get("/subscriptions/{subscription_id}/log")
    def subscription_log(subscription_id: str) -> dict:
        return {"subscriptionId": subscription_id,
                "log": service.log_of(subscription_id)}

    @app.post("/subscriptions/{subscription_id}/sink")
    def attach(subscription_id: str) -> dict:
        service.attach_sink(subscription_id)
        return {"status": "attached"}

    @app.delete("/subscriptions/{subscription_id}/sink")
    def detach(subscription_id: str) -> dict:
        service.detach_sink(subscription_id)
        return {"status": "detached"}

    return app
