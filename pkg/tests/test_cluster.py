import random

import pytest

from badlite.cluster import Cluster, NodeConfig
from badlite.engine import Engine
from badlite.errors import EngineError, ErrorKind
from badlite.values import Duration, Point

from helpers import add_broker, advance_s, engine_with_schema, pairs_of


def test_single_node_boot():
    cluster = Cluster([NodeConfig(0)])
    assert len(cluster.nodes) == 1
    a = cluster.local_now(0)
    b = cluster.local_now(0)
    assert a < b


def test_boot_with_skewed_clocks():
    cluster = Cluster([NodeConfig(0, clock_offset=Duration(-200_000)),
                       NodeConfig(1, clock_offset=Duration(350_000))])
    cluster.master.micros = 1_000_000
    t0 = cluster.local_now(0)
    t1 = cluster.local_now(1)
    # node 0 runs logically behind the coordinator, node 1 ahead
    assert t0.micros == 800_000
    assert t1.micros == 1_350_000


def test_duplicate_node_id_rejected():
    with pytest.raises(EngineError) as err:
        Cluster([NodeConfig(0), NodeConfig(0)])
    assert err.value.kind is ErrorKind.DUPLICATE_NAME


def test_virtual_advance_exact():
    cluster = Cluster([NodeConfig(0, clock_offset=Duration(5_000))])
    before = cluster.local_now(0)
    cluster.advance(Duration(10_000_000))
    after = cluster.local_now(0)
    assert after.micros - before.micros == 10_000_000


def test_per_node_offsets_are_self_consistent():
    cluster = Cluster([NodeConfig(0, clock_offset=Duration(-2_000_000)),
                       NodeConfig(1, clock_offset=Duration(3_000_000))])
    for node_id in (0, 1):
        a = cluster.local_now(node_id)
        cluster.advance(Duration(1_000_000))
        b = cluster.local_now(node_id)
        assert a < b


def _run_workload(n_nodes, seed=11):
    engine, transport = engine_with_schema(
        n_nodes=n_nodes, offsets_ms=[-2000, 1500, 300, -700][:n_nodes], seed=seed)
    add_broker(engine, transport, "B", "http://b.test/api")
    engine.execute_text(
        'CREATE CONTINUOUS CHANNEL Nearby(oid) PERIOD duration("PT5S") {'
        " SELECT t FROM OfficerLocations o, Tweets t"
        " WHERE spatial_distance(t.location, o.location) < 5"
        "   AND o.oid = oid AND t.hateful_flag = true AND is_new(t) };")
    subs = {engine.subscribe("Nearby", [oid], "B"): f"s{oid}" for oid in range(6)}
    rng = random.Random(seed)
    for step in range(120):
        advance_s(engine, 0.25)
        if rng.random() < 0.6:
            engine.feed_ingest_root("TweetFeed", {
                "tid": step, "area_code": "x", "hateful_flag": rng.random() < 0.8,
                "location": Point(rng.uniform(0, 10), rng.uniform(0, 10))})
        else:
            engine.feed_ingest_root("LocationFeed", {
                "oid": rng.randrange(6),
                "location": Point(rng.uniform(0, 10), rng.uniform(0, 10))})
    advance_s(engine, 6)
    runtime = engine.channel("Nearby")
    outputs = [pairs_of(rec, subs) for rec in runtime.executions]
    audit = engine.cluster.cross_node_time_comparisons
    engine.shutdown()
    return outputs, audit


def test_partition_transparency_across_node_counts():
    # identical seeded workload: 2-node and 4-node runs match the 1-node run
    base, audit1 = _run_workload(1)
    for k in (2, 4):
        got, audit_k = _run_workload(k)
        assert got == base, f"{k}-node run diverged"
        assert audit_k == 0
    assert audit1 == 0


def test_broadcast_join_independent_of_partitioning():
    results = {}
    for k in (1, 4):
        engine, _ = engine_with_schema(n_nodes=k, offsets_ms=[0, 100, -100, 50][:k])
        for tid in range(40):
            engine.insert_root("Tweets", {"tid": tid, "area_code": f"a{tid % 4}",
                                          "location": Point(tid % 7, tid % 5)})
        for oid in range(12):
            engine.insert_root("OfficerLocations",
                               {"oid": oid, "location": Point(oid % 7, oid % 5)},
                               mode="upsert")
        from badlite.dsl import parse_one
        rows = engine.query(parse_one(
            "SELECT t.tid AS tid, o.oid AS oid FROM Tweets t, OfficerLocations o "
            "WHERE spatial_distance(t.location, o.location) < 2;").query)
        results[k] = sorted((r["tid"], r["oid"]) for r in rows)
        engine.shutdown()
    assert results[1] == results[4]
    assert results[1]  # non-empty, so the check is meaningful


def test_empty_datasets_give_empty_stream():
    engine, _ = engine_with_schema()
    from badlite.dsl import parse_one
    rows = engine.query(parse_one(
        "SELECT t FROM Tweets t, OfficerLocations o "
        "WHERE spatial_distance(t.location, o.location) < 5;").query)
    assert rows == []
    engine.shutdown()


def test_hash_partitioning_is_stable():
    cluster_a = Cluster([NodeConfig(0), NodeConfig(1), NodeConfig(2)])
    cluster_b = Cluster([NodeConfig(0), NodeConfig(1), NodeConfig(2)])
    for pk in [1, 2, "x", "yy", 3.5, 10**12]:
        assert (cluster_a.partition_node(pk).node_id
                == cluster_b.partition_node(pk).node_id)
