"""Randomized real-clock runs validated against the offline oracles.

Each run boots a real-clock engine with seeded per-node clock offsets, pumps
seeded tweet and location-update workloads through queued feeds from
generator threads, runs channels on jittered schedulers, then quiesces and
recomputes every expected notification from the retained ingest log. A
continuous run must come back with zero missed and zero duplicated records
no matter how the threads interleave; a repetitive approximation under
scheduling jitter is expected to leak.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

from ..brokers import BrokerService, DirectEngineClient, LoopbackBrokerTransport
from ..cluster import NodeConfig
from ..engine import Engine, EngineConfig
from ..values import Duration, Point
from . import oracle as oracle_mod

AREA_SETUP = """
CREATE TYPE Tweet AS OPEN { tid: bigint, area_code: string };
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE TYPE OfficerLocation AS OPEN { oid: int, location: point };
CREATE ACTIVE DATASET OfficerLocations(OfficerLocation) PRIMARY KEY oid;
CREATE FEED TweetFeed WITH { "format": "JSON", "insert-feed": true };
CONNECT FEED TweetFeed TO DATASET Tweets APPLY FUNCTION AddIngestionTime;
START FEED TweetFeed;
CREATE FEED LocationFeed WITH { "format": "JSON", "insert-feed": false };
CONNECT FEED LocationFeed TO DATASET OfficerLocations;
START FEED LocationFeed;
CREATE BROKER STREAM_A AT "http://stream-a.test/api";
CREATE BROKER STREAM_B AT "http://stream-b.test/api";
"""

CONTINUOUS_CHANNELS = """
CREATE CONTINUOUS CHANNEL LocalTweetAlerts(area_code) PERIOD duration("{period}") {{
  SELECT t FROM Tweets t
  WHERE t.area_code = area_code AND t.hateful_flag = true AND is_new(t)
}};
CREATE CONTINUOUS CHANNEL NearbyTweetAlerts(oid) PERIOD duration("{period}") {{
  SELECT t FROM OfficerLocations o, Tweets t
  WHERE spatial_distance(t.location, o.location) < 5
    AND o.oid = oid AND t.hateful_flag = true AND is_new(t)
}};
"""

REPETITIVE_CHANNELS = """
CREATE REPETITIVE CHANNEL LocalTweetAlerts(area_code) PERIOD duration("{period}") {{
  SELECT t FROM Tweets t
  WHERE t.area_code = area_code AND t.hateful_flag = true
    AND t.ingested_timestamp > current_datetime() - duration("{period}")
}};
"""


@dataclass
class RandomRunParams:
    seed: int = 0
    nodes: int = 4
    skew_ms: int = 5000
    period_ms: int = 2000
    jitter_fraction: float = 0.5
    duration_s: float = 8.0
    tweet_rate: int = 900
    location_rate: int = 350
    areas: int = 5
    officers: int = 10
    subscriptions: int = 12
    mode: str = "continuous"  # or "repetitive"


def _pump(engine: Engine, feed: str, docs: List[dict], rate: float) -> None:
    start = time.monotonic()
    for i, doc in enumerate(docs):
        target = start + i / rate
        delay = target - time.monotonic()
        if delay > 0.002:
            time.sleep(delay)
        engine.feed_ingest_root(feed, doc)


def run_random(params: RandomRunParams) -> dict:
    """One seeded randomized run; returns the oracle report as JSON."""
    rng = random.Random(params.seed)
    timing_rng = random.Random(params.seed ^ 0x5A5A5A)
    offsets = [rng.randint(-params.skew_ms, params.skew_ms)
               for _ in range(params.nodes)]
    nodes = [NodeConfig(i, clock_offset=Duration(offsets[i] * 1000),
                        clock_mode="real") for i in range(params.nodes)]
    transport = LoopbackBrokerTransport()
    engine = Engine(EngineConfig(nodes=nodes, seed=params.seed,
                                 record_ingest_log=True), transport=transport)
    try:
        period_iso = Duration(params.period_ms * 1000).iso()
        engine.execute_text(AREA_SETUP)
        if params.mode == "continuous":
            engine.execute_text(CONTINUOUS_CHANNELS.format(period=period_iso))
            channel_names = ["LocalTweetAlerts", "NearbyTweetAlerts"]
        else:
            engine.execute_text(REPETITIVE_CHANNELS.format(period=period_iso))
            channel_names = ["LocalTweetAlerts"]
        for name, service in (("STREAM_A", "http://stream-a.test/api"),
                              ("STREAM_B", "http://stream-b.test/api")):
            transport.register(service, BrokerService(name, DirectEngineClient(engine)))

        subs: Dict[str, List] = {name: [] for name in channel_names}
        for i in range(params.subscriptions):
            broker = "STREAM_A" if i % 2 == 0 else "STREAM_B"
            if params.mode == "continuous" and i % 2 == 1:
                arg = rng.randrange(params.officers)
                sub_id = engine.subscribe("NearbyTweetAlerts", [arg], broker)
                subs["NearbyTweetAlerts"].append((sub_id, [arg]))
            else:
                arg = f"a{rng.randrange(params.areas)}"
                sub_id = engine.subscribe("LocalTweetAlerts", [arg], broker)
                subs["LocalTweetAlerts"].append((sub_id, [arg]))

        n_tweets = int(params.tweet_rate * params.duration_s)
        n_locations = int(params.location_rate * params.duration_s)
        tweets = [{"tid": i, "area_code": f"a{rng.randrange(params.areas)}",
                   "hateful_flag": rng.random() < 0.5,
                   "location": Point(rng.uniform(0, 12), rng.uniform(0, 12))}
                  for i in range(n_tweets)]
        locations = [{"oid": rng.randrange(params.officers),
                      "location": Point(rng.uniform(0, 12), rng.uniform(0, 12))}
                     for i in range(n_locations)]

        jitter_cap = params.jitter_fraction * params.period_ms / 1000.0
        engine.start_schedulers(
            jitter_fn=lambda: timing_rng.uniform(0, jitter_cap))
        threads = [
            threading.Thread(target=_pump, daemon=True,
                             args=(engine, "TweetFeed", tweets, params.tweet_rate)),
            threading.Thread(target=_pump, daemon=True,
                             args=(engine, "LocationFeed", locations,
                                   params.location_rate)),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        engine.drain_feeds()
        for scheduler in engine._schedulers:
            scheduler.stop()
        engine._schedulers = []
        # one final execution per channel so every persisted record is covered
        for name in channel_names:
            engine.execute_channel_once(name)

        report: dict = {
            "params": asdict(params),
            "records": sum(1 for e in engine.ingest_log
                           if e.dataset in ("Tweets", "OfficerLocations")),
            "channels": {},
        }
        total = oracle_mod.OracleReport()
        chain_problems: List[str] = []
        for name in channel_names:
            runtime = engine.channel(name)
            if name == "LocalTweetAlerts":
                result = oracle_mod.area_channel_oracle(
                    engine.ingest_log, runtime.executions, subs[name],
                    dataset="Tweets")
            else:
                result = oracle_mod.nearby_channel_oracle(
                    engine.ingest_log, runtime.executions, subs[name])
            if runtime.compiled.kind == "continuous":
                chain_problems.extend(oracle_mod.window_chain_gaps(runtime.executions))
            report["channels"][name] = result.to_json()
            total.merge(result)
        report["oracle"] = total.to_json()
        report["window_chain_problems"] = chain_problems
        report["cross_node_time_comparisons"] = \
            engine.cluster.cross_node_time_comparisons
        report["missed"] = len(total.missed)
        report["duplicated"] = len(total.duplicated)
        report["matched"] = total.matched
        if params.mode == "continuous":
            report["ok"] = total.clean() and not chain_problems
        else:
            report["ok"] = True  # repetitive runs are informational
        return report
    finally:
        engine.shutdown()
