import pytest

from badlite import channels, executor
from badlite.dsl import parse_one
from badlite.errors import EngineError, ErrorKind
from badlite.values import DateTime, Duration, Point

from helpers import add_broker, advance_s, engine_with_schema, pairs_of

LOCAL_CHANNEL = ('CREATE CONTINUOUS CHANNEL LocalAlerts(area_code) '
                 'PERIOD duration("PT10S") '
                 "{ SELECT t FROM Tweets t WHERE t.area_code = area_code "
                 "AND is_new(t) };")


def local_engine(**kwargs):
    engine, transport = engine_with_schema(**kwargs)
    broker = add_broker(engine, transport, "B", "http://b.test/api")
    engine.execute_text(LOCAL_CHANNEL)
    return engine, transport, broker


def test_create_channel_creates_lifecycle_datasets():
    engine, _, _ = local_engine()
    assert "LocalAlertsSubscriptions" in engine.catalog.datasets
    assert "LocalAlertsResults" in engine.catalog.datasets
    assert engine.catalog.datasets["LocalAlertsResults"].is_active
    engine.shutdown()


def test_drop_channel_removes_datasets():
    engine, _, _ = local_engine()
    engine.execute_text("DROP CHANNEL LocalAlerts;")
    assert "LocalAlerts" not in engine.catalog.channels
    assert "LocalAlertsSubscriptions" not in engine.catalog.datasets
    assert "LocalAlertsResults" not in engine.catalog.datasets
    engine.shutdown()


def test_create_channel_with_unknown_dataset_is_atomic():
    engine, _ = engine_with_schema()
    with pytest.raises(EngineError) as err:
        engine.execute_text(
            'CREATE CONTINUOUS CHANNEL Broken(x) PERIOD duration("PT10S") '
            "{ SELECT m FROM Missing m WHERE is_new(m) };")
    assert err.value.kind is ErrorKind.DATASET_NOT_FOUND
    assert "Broken" not in engine.catalog.channels
    assert "BrokenSubscriptions" not in engine.catalog.datasets
    engine.shutdown()


def test_duplicate_channel_name_rejected():
    engine, _, _ = local_engine()
    with pytest.raises(EngineError) as err:
        engine.execute_text(LOCAL_CHANNEL)
    assert err.value.kind is ErrorKind.DUPLICATE_NAME
    engine.shutdown()


def test_eager_channel_has_no_result_dataset():
    engine, transport = engine_with_schema()
    add_broker(engine, transport, "B", "http://b.test/api")
    engine.execute_text(
        'CREATE CONTINUOUS CHANNEL Pushy(area_code) PERIOD duration("PT10S") '
        "DELIVERY EAGER { SELECT t FROM Tweets t WHERE t.area_code = area_code "
        "AND is_new(t) };")
    assert "PushySubscriptions" in engine.catalog.datasets
    assert "PushyResults" not in engine.catalog.datasets
    engine.shutdown()


def test_scheduled_executions_at_fixed_rate():
    engine, _, _ = local_engine()
    engine.subscribe("LocalAlerts", ["a"], "B")
    advance_s(engine, 35)
    runtime = engine.channel("LocalAlerts")
    assert len(runtime.executions) == 3
    times = [rec.coordinator_time.micros for rec in runtime.executions]
    assert times == [10_000_000, 20_000_000, 30_000_000]
    engine.shutdown()


def test_stalled_execution_terminates_channel():
    engine, _, _ = local_engine()
    runtime = engine.channel("LocalAlerts")
    runtime.pending_delay_micros = 10_500_000  # past the next tick
    advance_s(engine, 40)
    assert runtime.state == "terminated"
    assert runtime.termination_error.kind is ErrorKind.CHANNEL_OVERRUN
    n = len(runtime.executions)
    advance_s(engine, 20)
    assert len(runtime.executions) == n  # terminated channels stop ticking
    engine.shutdown()


def test_delay_below_period_executes_late_then_recovers():
    engine, _, _ = local_engine()
    runtime = engine.channel("LocalAlerts")
    runtime.pending_delay_micros = 500_000
    advance_s(engine, 21)
    times = [rec.coordinator_time.micros for rec in runtime.executions]
    assert times == [10_500_000, 20_000_000]
    assert runtime.state == "running"
    engine.shutdown()


def test_window_chain_is_contiguous_per_node():
    engine, _, _ = local_engine()
    engine.subscribe("LocalAlerts", ["a"], "B")
    for step in range(8):
        engine.feed_ingest_root("TweetFeed",
                                {"tid": step, "area_code": "a"})
        advance_s(engine, 5)
    runtime = engine.channel("LocalAlerts")
    last = {}
    for rec in runtime.executions:
        for node_id, (prev, curr) in rec.node_windows.items():
            if node_id in last:
                assert prev == last[node_id]
            assert prev < curr
            last[node_id] = curr
    engine.shutdown()


def test_failed_execution_widens_next_window():
    engine, _, broker = local_engine()
    engine.subscribe("LocalAlerts", ["a"], "B")
    engine.feed_ingest_root("TweetFeed", {"tid": 1, "area_code": "a"})
    runtime = engine.channel("LocalAlerts")

    original = executor.execute_pipeline
    state = {"boom": True}

    def flaky(plan, ctx):
        if state.pop("boom", False):
            raise EngineError.compile("injected operator failure")
        return original(plan, ctx)

    executor.execute_pipeline = flaky
    try:
        advance_s(engine, 10.5)  # first execution fails
    finally:
        executor.execute_pipeline = original
    assert runtime.executions[0].failed
    assert runtime.executions[0].notifications == []
    engine.feed_ingest_root("TweetFeed", {"tid": 2, "area_code": "a"})
    advance_s(engine, 10)  # retry covers the widened window
    assert not runtime.executions[1].failed
    got = {t for _, t in pairs_of(runtime.executions[1])}
    assert got == {1, 2}
    engine.shutdown()


def test_lazy_delivery_persists_and_pings():
    engine, _, broker = local_engine()
    sub = engine.subscribe("LocalAlerts", ["a"], "B")
    broker.attach_sink(sub)
    engine.feed_ingest_root("TweetFeed", {"tid": 7, "area_code": "a"})
    advance_s(engine, 11)
    runtime = engine.channel("LocalAlerts")
    exec_time = runtime.executions[0].coordinator_time
    stored = engine.pull_channel_results("LocalAlerts", sub, exec_time)
    assert [r["t"]["tid"] for r in stored] == [7]
    log = broker.log_of(sub)
    assert len(log) == 1
    assert log[0]["result"]["t"]["tid"] == 7
    assert log[0]["executionTime"] == exec_time.iso()
    engine.shutdown()


def test_eager_delivery_pushes_payloads_directly():
    engine, transport = engine_with_schema()
    broker = add_broker(engine, transport, "B", "http://b.test/api")
    engine.execute_text(
        'CREATE CONTINUOUS CHANNEL Pushy(area_code) PERIOD duration("PT10S") '
        "DELIVERY EAGER { SELECT t FROM Tweets t WHERE t.area_code = area_code "
        "AND is_new(t) };")
    sub = engine.subscribe("Pushy", ["a"], "B")
    broker.attach_sink(sub)
    engine.feed_ingest_root("TweetFeed", {"tid": 9, "area_code": "a"})
    advance_s(engine, 11)
    log = broker.log_of(sub)
    assert len(log) == 1
    assert log[0]["result"]["t"]["tid"] == 9
    engine.shutdown()


def test_no_notifications_contacts_no_broker():
    calls = []

    class SpyTransport:
        def post(self, url, payload):
            calls.append(url)
            return True

    from badlite.engine import Engine

    engine = Engine.virtual(1, transport=SpyTransport())
    engine.execute_text(
        "CREATE TYPE Tweet AS OPEN { tid: bigint, area_code: string };"
        "CREATE ACTIVE DATASET Tweets(Tweet) PRIMARY KEY tid;"
        'CREATE BROKER B AT "http://b.test/api";' + LOCAL_CHANNEL.replace(
            "LocalAlerts", "Quiet"))
    engine.subscribe("Quiet", ["a"], "B")
    advance_s(engine, 11)
    assert calls == []
    engine.shutdown()


def test_eager_broker_failure_drops_batch():
    engine, transport = engine_with_schema()
    broker = add_broker(engine, transport, "B", "http://b.test/api")
    engine.execute_text(
        'CREATE CONTINUOUS CHANNEL Pushy(area_code) PERIOD duration("PT10S") '
        "DELIVERY EAGER { SELECT t FROM Tweets t WHERE t.area_code = area_code "
        "AND is_new(t) };")
    sub = engine.subscribe("Pushy", ["a"], "B")
    broker.attach_sink(sub)
    transport.set_down("http://b.test/api")
    engine.feed_ingest_root("TweetFeed", {"tid": 1, "area_code": "a"})
    advance_s(engine, 11)
    transport.set_down("http://b.test/api", down=False)
    engine.feed_ingest_root("TweetFeed", {"tid": 2, "area_code": "a"})
    advance_s(engine, 10)
    # tid 1's batch was dropped (nothing persisted in eager mode); tid 2 arrives
    assert [d["result"]["t"]["tid"] for d in broker.log_of(sub)] == [2]
    engine.shutdown()


def test_lazy_broker_failure_keeps_results_pullable():
    engine, transport, broker = local_engine()
    sub = engine.subscribe("LocalAlerts", ["a"], "B")
    broker.attach_sink(sub)
    transport.set_down("http://b.test/api")
    engine.feed_ingest_root("TweetFeed", {"tid": 5, "area_code": "a"})
    advance_s(engine, 11)
    assert broker.log_of(sub) == []  # the ping was lost
    stored = engine.pull_channel_results("LocalAlerts", sub)
    assert [r["t"]["tid"] for r in stored] == [5]
    engine.shutdown()


def test_subscription_effective_next_execution():
    engine, _, broker = local_engine()
    engine.feed_ingest_root("TweetFeed", {"tid": 1, "area_code": "a"})
    advance_s(engine, 11)  # first execution: no subscribers yet
    runtime = engine.channel("LocalAlerts")
    assert runtime.executions[0].notifications == []
    sub = engine.subscribe("LocalAlerts", ["a"], "B")
    broker.attach_sink(sub)
    engine.feed_ingest_root("TweetFeed", {"tid": 2, "area_code": "a"})
    advance_s(engine, 10)
    assert pairs_of(runtime.executions[1]) == [(sub, 2)]
    engine.shutdown()


def test_notification_times_are_coordinator_times():
    # node clocks are skewed; subscribers still see coordinator execution times
    engine, _, broker = local_engine(offsets_ms=(-2000, 3000))
    sub = engine.subscribe("LocalAlerts", ["a"], "B")
    broker.attach_sink(sub)
    engine.feed_ingest_root("TweetFeed", {"tid": 1, "area_code": "a"})
    advance_s(engine, 11)
    runtime = engine.channel("LocalAlerts")
    assert runtime.executions[0].coordinator_time == DateTime(10_000_000)
    for n in runtime.executions[0].notifications:
        assert n.channel_execution_time == DateTime(10_000_000)
    engine.shutdown()


def test_repetitive_channel_through_stored_function():
    import corpus

    engine, transport = engine_with_schema()
    add_broker(engine, transport, "B1", "http://b1.test/api")
    add_broker(engine, transport, "B2", "http://b2.test/api")
    engine.execute_text(corpus.RECENT_COUNT_FUNCTION)
    engine.execute_text(corpus.RECENT_COUNT_CHANNEL)
    sub1 = engine.subscribe("RecentNearbyHatefulTweetCountChannel", [20], "B1")
    sub4 = engine.subscribe("RecentNearbyHatefulTweetCountChannel", [20], "B2")
    engine.feed_ingest_root("LocationFeed", {"oid": 10, "location": Point(0, 0)})
    engine.feed_ingest_root("LocationFeed", {"oid": 20, "location": Point(15, 15)})
    for tid, loc in ((100, Point(0, 1)), (200, Point(15, 15)), (300, Point(18, 18))):
        engine.feed_ingest_root("TweetFeed", {
            "tid": tid, "area_code": "0907", "hateful_flag": True,
            "location": loc, "timestamp": DateTime(0)})
    advance_s(engine, 601)
    runtime = engine.channel("RecentNearbyHatefulTweetCountChannel")
    got = pairs_of(runtime.executions[0], key=("HatefulTweetsNum",))
    assert sorted(got) == sorted([(sub1, 2), (sub4, 2)])
    engine.shutdown()


def test_channel_times_marked_at_creation():
    engine, _ = engine_with_schema()
    engine.register_broker("B", "http://b.test/api")
    engine.execute_text(LOCAL_CHANNEL)
    for node in engine.cluster.nodes:
        assert "LocalAlerts" in node.channel_times
        assert node.channel_times["LocalAlerts"].previous is not None
    engine.shutdown()
