import json
import socket
import threading
import time

import pytest

from badlite.cluster import NodeConfig
from badlite.engine import Engine, EngineConfig
from badlite.ingestion import add_ingestion_time, send_records
from badlite.values import DateTime, Duration, Point

from helpers import advance_s, engine_with_schema

SOCKET_SETUP = """
CREATE TYPE Tweet AS OPEN {{ tid: bigint, area_code: string }};
CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;
CREATE FEED TweetFeed WITH {{
  "type-name": "Tweet", "adapter-name": "socket_adapter", "format": "JSON",
  "sockets": "127.0.0.1:{port}", "address-type": "IP", "insert-feed": true
}};
CONNECT FEED TweetFeed TO DATASET Tweets;
START FEED TweetFeed;
"""


def real_engine(port=0, buffer_records=10_000):
    engine = Engine(EngineConfig(nodes=[NodeConfig(0, clock_mode="real"),
                                        NodeConfig(1, clock_mode="real")],
                                 feed_buffer_records=buffer_records))
    engine.execute_text(SOCKET_SETUP.format(port=port))
    return engine


def wait_until(check, timeout=5.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if check():
            return True
        time.sleep(0.01)
    return False


def test_socket_feed_ingests_records():
    engine = real_engine()
    try:
        feed = engine.catalog.feeds["TweetFeed"]
        port = feed.server.port
        lines = [json.dumps({"tid": i, "area_code": "a"}) for i in range(3)]
        send_records("127.0.0.1", port, lines)
        assert wait_until(lambda: feed.counters.persisted == 3)
        engine.drain_feeds()
        assert engine.cluster.visible_count("Tweets") == 3
        for store in engine.cluster.stores_of("Tweets"):
            for rec in store.scan():
                assert rec.active_ts is not None
    finally:
        engine.shutdown()


def test_malformed_lines_rejected_feed_continues():
    engine = real_engine()
    try:
        feed = engine.catalog.feeds["TweetFeed"]
        port = feed.server.port
        lines = [json.dumps({"tid": 1, "area_code": "a"}),
                 "{not json at all",
                 json.dumps({"area_code": "missing pk"}),
                 json.dumps({"tid": 2, "area_code": "a"})]
        send_records("127.0.0.1", port, lines)
        assert wait_until(lambda: feed.counters.persisted == 2)
        assert feed.counters.rejected == 2
        assert feed.counters.accepted == 2
    finally:
        engine.shutdown()


def test_ingest_completeness_after_quiescence():
    engine = real_engine()
    try:
        feed = engine.catalog.feeds["TweetFeed"]
        port = feed.server.port
        n = 500
        lines = [json.dumps({"tid": i, "area_code": f"a{i % 5}"}) for i in range(n)]
        send_records("127.0.0.1", port, lines)
        assert wait_until(lambda: feed.counters.accepted == n)
        engine.drain_feeds()
        assert feed.counters.persisted == feed.counters.accepted == n
        assert engine.cluster.visible_count("Tweets") == n
    finally:
        engine.shutdown()


def test_backpressure_buffer_stays_bounded():
    # tiny buffer: the reader must pause rather than grow the queue
    engine = real_engine(buffer_records=20)
    try:
        feed = engine.catalog.feeds["TweetFeed"]
        port = feed.server.port
        n = 400
        lines = [json.dumps({"tid": i, "area_code": "a"}) for i in range(n)]
        send_records("127.0.0.1", port, lines)
        assert wait_until(lambda: feed.counters.persisted == n, timeout=10)
        for q in (feed.queues or {}).values():
            assert q.maxsize <= 10  # 20 split across 2 partitions
        assert engine.cluster.visible_count("Tweets") == n
    finally:
        engine.shutdown()


def test_upsert_feed_keeps_latest_only():
    engine, _ = engine_with_schema()
    engine.feed_ingest_root("LocationFeed", {"oid": 20, "location": Point(0, 10)})
    advance_s(engine, 13)
    engine.feed_ingest_root("LocationFeed", {"oid": 20, "location": Point(0, 7)})
    from badlite.dsl import parse_one
    rows = engine.query(parse_one("SELECT o FROM OfficerLocations o;").query)
    assert len(rows) == 1
    assert rows[0]["o"]["location"] == Point(0, 7)
    engine.shutdown()


def test_insert_feed_rejects_duplicate_pk():
    engine, _ = engine_with_schema()
    feed = engine.catalog.feeds["TweetFeed"]
    assert engine.feed_ingest_root("TweetFeed", {"tid": 1, "area_code": "a"})
    engine.feed_ingest_root("TweetFeed", {"tid": 1, "area_code": "b"})
    assert feed.counters.rejected == 1
    assert engine.cluster.visible_count("Tweets") == 1
    engine.shutdown()


def test_add_ingestion_time_merge_semantics():
    now = DateTime(123_000_000)
    out = add_ingestion_time({"tid": 1, "x": "kept"}, now)
    assert out == {"tid": 1, "x": "kept", "ingested_timestamp": now}
    # a pre-existing value is overwritten by the pipeline's stamp
    out = add_ingestion_time({"tid": 1, "ingested_timestamp": DateTime(5)}, now)
    assert out["ingested_timestamp"] == now
    assert set(out) == {"tid", "ingested_timestamp"}


def test_transform_applied_through_feed():
    engine, _ = engine_with_schema()
    engine.execute_text(
        'CREATE FEED StampedFeed WITH { "format": "JSON", "insert-feed": true };'
        "CONNECT FEED StampedFeed TO DATASET Tweets APPLY FUNCTION AddIngestionTime;"
        "START FEED StampedFeed;")
    advance_s(engine, 7)
    engine.feed_ingest_root("StampedFeed", {"tid": 1, "area_code": "a"})
    from badlite.dsl import parse_one
    rows = engine.query(parse_one("SELECT t FROM Tweets t;").query)
    assert rows[0]["t"]["ingested_timestamp"] == DateTime(7_000_000)
    engine.shutdown()


def test_unknown_transform_rejected_at_connect():
    engine, _ = engine_with_schema()
    from badlite.errors import EngineError

    with pytest.raises(EngineError):
        engine.execute_text(
            'CREATE FEED F2 WITH { "format": "JSON", "insert-feed": true };'
            "CONNECT FEED F2 TO DATASET Tweets APPLY FUNCTION NoSuchTransform;")
    engine.shutdown()


def test_routing_order_independent_for_insert_feeds():
    docs = [{"tid": i, "area_code": f"a{i % 3}"} for i in range(60)]
    contents = []
    for ordering in (docs, list(reversed(docs))):
        engine, _ = engine_with_schema(n_nodes=4, offsets_ms=(0, 0, 0, 0))
        for doc in ordering:
            engine.feed_ingest_root("TweetFeed", doc)
        snapshot = set()
        for store in engine.cluster.stores_of("Tweets"):
            snapshot.update((store.desc.name, rec.doc.pk_value,
                             rec.doc.root["area_code"]) for rec in store.scan())
        contents.append(snapshot)
        engine.shutdown()
    assert contents[0] == contents[1]


def test_feed_requires_connected_dataset():
    engine, _ = engine_with_schema()
    from badlite.errors import EngineError

    engine.execute_text('CREATE FEED Orphan WITH { "format": "JSON" };')
    with pytest.raises(EngineError):
        engine.execute_text("START FEED Orphan;")
    engine.shutdown()


def test_start_feed_unknown_port_conflict():
    engine = real_engine()
    try:
        feed = engine.catalog.feeds["TweetFeed"]
        port = feed.server.port
        engine.execute_text(
            'CREATE TYPE T2 AS OPEN { pk: int };'
            "CREATE DATASET Plain2(T2) PRIMARY KEY pk;"
            f'CREATE FEED Clash WITH {{ "format": "JSON", "sockets": "127.0.0.1:{port}" }};'
            "CONNECT FEED Clash TO DATASET Plain2;")
        with pytest.raises(OSError):
            engine.execute_text("START FEED Clash;")
    finally:
        engine.shutdown()
