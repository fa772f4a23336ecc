"""Shared test rigs: engines pre-loaded with the tweet/officer schema."""

from badlite.brokers import BrokerService, DirectEngineClient, LoopbackBrokerTransport
from badlite.engine import Engine
from badlite.values import Duration

BASE_SETUP = """
CREATE TYPE Tweet AS OPEN { tid: bigint, area_code: string, location: point };
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE TYPE OfficerLocation AS OPEN { oid: int, location: point };
CREATE ACTIVE DATASET OfficerLocations(OfficerLocation) PRIMARY KEY oid;
CREATE FEED TweetFeed WITH { "format": "JSON", "insert-feed": true };
CONNECT FEED TweetFeed TO DATASET Tweets;
START FEED TweetFeed;
CREATE FEED LocationFeed WITH { "format": "JSON", "insert-feed": false };
CONNECT FEED LocationFeed TO DATASET OfficerLocations;
START FEED LocationFeed;
"""


def engine_with_schema(n_nodes=2, offsets_ms=(-200, 350), seed=0,
                       flush_threshold=1000, record_ingest_log=False):
    transport = LoopbackBrokerTransport()
    engine = Engine.virtual(n_nodes, offsets_ms=list(offsets_ms)[:n_nodes],
                            seed=seed, flush_threshold=flush_threshold,
                            transport=transport,
                            record_ingest_log=record_ingest_log)
    engine.execute_text(BASE_SETUP)
    return engine, transport


def add_broker(engine, transport, name, endpoint):
    engine.register_broker(name, endpoint)
    service = BrokerService(name, DirectEngineClient(engine))
    transport.register(endpoint, service)
    return service


def advance_s(engine, seconds):
    engine.advance_virtual(Duration(int(seconds * 1_000_000)))


def pairs_of(execution, alias_map=None, key=("t", "tid")):
    out = []
    for n in execution.notifications:
        value = n.result
        for part in key:
            value = value.get(part) if isinstance(value, dict) else None
        sub = alias_map.get(n.subscription_id, n.subscription_id) if alias_map \
            else n.subscription_id
        out.append((sub, value))
    return sorted(out, key=str)
