"""Desk-scale channel benchmarking.

Measures per-execution cost by stage (subscription load, new-data scan,
join/customize, result persistence, delivery) and searches for the maximum
number of subscribers a channel sustains within its period: double until an
execution exceeds the budget, then binary-search the boundary.

Executions run under virtual clocks; the reported execution time is the
simulated parallel makespan (the slowest partition's scan+join fragment
plus the coordinator stages), with wall time alongside. In one process the
partitions cannot literally run in parallel, so the makespan is what a
distributed execution's elapsed time would be.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from typing import Dict, List, Optional

from ..engine import Engine, EngineConfig
from ..cluster import NodeConfig
from ..values import Duration, Point

log = logging.getLogger(__name__)

LOCAL_CHANNEL = """
CREATE TYPE Tweet AS OPEN {{ tid: bigint, area_code: string }};
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE BROKER BENCH_A AT "http://bench-a.test/api";
CREATE CONTINUOUS CHANNEL {name}(area_code) PERIOD duration("{period}") {{
  SELECT t FROM Tweets t WHERE t.area_code = area_code AND is_new(t)
}};
"""

NEARBY_CHANNEL = """
CREATE TYPE Tweet AS OPEN {{ tid: bigint, area_code: string, location: point }};
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE TYPE OfficerLocation AS OPEN {{ oid: int, location: point }};
CREATE ACTIVE DATASET OfficerLocations(OfficerLocation) PRIMARY KEY oid;
CREATE BROKER BENCH_A AT "http://bench-a.test/api";
CREATE CONTINUOUS CHANNEL {name}(oid) PERIOD duration("{period}") {{
  SELECT t FROM OfficerLocations o, Tweets t
  WHERE spatial_distance(t.location, o.location) < 5 AND o.oid = oid AND is_new(t)
}};
"""


@dataclass
class BenchParams:
    channel: str = "LocalTweetAlerts"
    rate_per_s: int = 50
    period: Duration = Duration(10_000_000)
    budget_s: Optional[float] = None  # default: the period itself
    partitions: int = 1
    areas: int = 32
    executions: int = 3
    seed: int = 0
    start_subscribers: int = 64
    max_doubling: int = 16


class _NullTransport:
    def post(self, url: str, payload: dict) -> bool:
        return False  # delivery attempts are timed, then dropped


def _build_local_engine(params: BenchParams, subscribers: int) -> Engine:
    nodes = [NodeConfig(i) for i in range(params.partitions)]
    engine = Engine(EngineConfig(nodes=nodes, seed=params.seed),
                    transport=_NullTransport())
    engine.execute_text(LOCAL_CHANNEL.format(name=params.channel,
                                             period=params.period.iso()))
    for i in range(subscribers):
        engine.subscribe(params.channel, [f"a{i % params.areas}"], "BENCH_A")
    return engine


def _measure(engine: Engine, params: BenchParams, tweets_per_exec: int,
             next_tid: List[int], make_doc) -> Dict[str, float]:
    runtime = engine.channel(params.channel)
    makespans, walls = [], []
    stages: Dict[str, float] = {}
    for _ in range(params.executions):
        for _ in range(tweets_per_exec):
            engine.insert_root("Tweets", make_doc(next_tid[0]))
            next_tid[0] += 1
        engine.cluster.master.micros += params.period.micros
        engine.execute_channel_once(params.channel)
        makespans.append(runtime.last_makespan_seconds)
        walls.append(runtime.last_wall_seconds)
        for key, value in runtime.last_stage_seconds.items():
            stages[key] = stages.get(key, 0.0) + value
    n = max(1, params.executions)
    out = {k: v / n for k, v in stages.items()}
    out["execution_makespan"] = sum(makespans) / n
    out["execution_wall"] = sum(walls) / n
    return out


def _probe(params: BenchParams, subscribers: int) -> Dict[str, float]:
    rng = random.Random(params.seed)
    engine = _build_local_engine(params, subscribers)
    try:
        tweets_per_exec = max(1, int(params.rate_per_s * params.period.micros / 1e6))
        make_doc = lambda tid: {"tid": tid,
                                "area_code": f"a{rng.randrange(params.areas)}"}
        return _measure(engine, params, tweets_per_exec, [0], make_doc)
    finally:
        engine.shutdown()


def max_supportable_subscribers(params: BenchParams) -> dict:
    """Doubling search then binary refinement on the subscriber count."""
    budget = params.budget_s if params.budget_s is not None \
        else params.period.micros / 1e6
    probes: List[dict] = []

    def sustains(subscribers: int) -> bool:
        timing = _probe(params, subscribers)
        probes.append({"subscribers": subscribers,
                       "execution_makespan": timing["execution_makespan"]})
        return timing["execution_makespan"] <= budget

    lo = 0
    subscribers = params.start_subscribers
    doubled = 0
    while sustains(subscribers):
        lo = subscribers
        subscribers *= 2
        doubled += 1
        if doubled >= params.max_doubling:
            break
    hi = subscribers
    while hi - lo > max(1, lo // 8):
        mid = (lo + hi) // 2
        if sustains(mid):
            lo = mid
        else:
            hi = mid
    stages = _probe(params, lo) if lo else {}
    return {
        "channel": params.channel,
        "rate_per_s": params.rate_per_s,
        "period": params.period.iso(),
        "budget_s": budget,
        "partitions": params.partitions,
        "max_subscribers": lo,
        "stages": {k: round(v, 6) for k, v in stages.items()},
        "probes": probes,
    }


def subscriber_trend_over_rates(base: BenchParams, rates: List[int]) -> List[dict]:
    out = []
    for rate in rates:
        params = BenchParams(**{**base.__dict__, "rate_per_s": rate})
        out.append(max_supportable_subscribers(params))
    return out


def speedup_comparison(*, officers: int = 3000, tweets_per_exec: int = 80,
                       subscribers: int = 40, executions: int = 3,
                       period: Duration = Duration(10_000_000), seed: int = 0,
                       partition_counts: List[int] = (1, 4)) -> dict:
    """Fixed join workload measured across partition counts."""
    results = {}
    for partitions in partition_counts:
        rng = random.Random(seed)
        nodes = [NodeConfig(i) for i in range(partitions)]
        engine = Engine(EngineConfig(nodes=nodes, seed=seed),
                        transport=_NullTransport())
        params = BenchParams(channel="NearbyBench", period=period,
                             partitions=partitions, executions=executions,
                             seed=seed)
        engine.execute_text(NEARBY_CHANNEL.format(name="NearbyBench",
                                                  period=period.iso()))
        try:
            for oid in range(officers):
                engine.insert_root("OfficerLocations", {
                    "oid": oid,
                    "location": Point(rng.uniform(0, 100), rng.uniform(0, 100))},
                    mode="upsert")
            for i in range(subscribers):
                engine.subscribe("NearbyBench", [rng.randrange(officers)], "BENCH_A")
            make_doc = lambda tid: {
                "tid": tid, "area_code": "x",
                "location": Point(rng.uniform(0, 100), rng.uniform(0, 100))}
            timing = _measure(engine, params, tweets_per_exec, [0], make_doc)
            results[partitions] = {k: round(v, 6) for k, v in timing.items()}
        finally:
            engine.shutdown()
    report = {"officers": officers, "tweets_per_execution": tweets_per_exec,
              "subscribers": subscribers, "partitions": results}
    if 1 in results and len(results) > 1:
        base = results[1]["execution_makespan"]
        report["speedup_ratios"] = {
            str(p): round(results[p]["execution_makespan"] / base, 4)
            for p in results if p != 1 and base > 0}
    return report
