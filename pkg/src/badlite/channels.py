"""Channel lifecycle, periodic execution, per-node time management, delivery.

Creating a channel also creates its subscription dataset (and, in lazy
delivery mode, its result dataset); both disappear when the channel is
dropped. Each node marks the channel start under its own clock. An
execution samples each node's current time at its first active-dataset
access, evaluates the body over the (previous, current) window, and only
advances the per-node previous time after the execution succeeds, so a
failed execution is retried next tick over the widened window.

Delivery is eager (push full payloads to brokers, nothing persisted) or
lazy (persist into the result dataset keyed by execution time and
subscription, then ping brokers with the affected subscription ids).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from . import executor, planner
from .cluster import ChannelNodeTimes
from .dsl import ast
from .errors import EngineError
from .storage import DatasetDescriptor
from .timestamps import ActiveTimestamp
from .values import DateTime, Document, Value, encode_json, encode_value

log = logging.getLogger(__name__)

SUBSCRIPTION_PK = "subscription_id"
RESULT_PK = "result_key"


@dataclass(frozen=True)
class Notification:
    channel: str
    channel_execution_time: DateTime
    subscription_id: str
    broker_endpoint: str
    result: Value


@dataclass
class ExecutionRecord:
    index: int
    coordinator_time: DateTime
    node_windows: Dict[int, Tuple[ActiveTimestamp, ActiveTimestamp]]
    notifications: List[Notification]
    failed: bool = False
    error: Optional[str] = None


@dataclass
class ChannelRuntime:
    compiled: planner.CompiledChannel
    state: str = "running"  # "running" | "terminated"
    executions: List[ExecutionRecord] = field(default_factory=list)
    next_due_micros: int = 0
    pending_delay_micros: int = 0
    termination_error: Optional[EngineError] = None
    last_stage_seconds: Dict[str, float] = field(default_factory=dict)
    last_makespan_seconds: float = 0.0
    last_wall_seconds: float = 0.0
    _exec_lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def name(self) -> str:
        return self.compiled.name

    @property
    def period(self):
        return self.compiled.period

    @property
    def delivery(self) -> str:
        return self.compiled.delivery


def create_channel(engine, clause: ast.CreateChannel) -> ChannelRuntime:
    """Compile, create lifecycle datasets, and arm the channel; atomic."""
    catalog = engine.catalog
    if clause.name in catalog.channels:
        raise EngineError.duplicate_name("channel", clause.name)
    compiled = planner.compile_channel(clause, catalog)
    for ds_name in filter(None, (compiled.subscription_dataset, compiled.result_dataset)):
        if ds_name in catalog.datasets:
            raise EngineError.duplicate_name("dataset", ds_name)

    engine.create_dataset(DatasetDescriptor(
        name=compiled.subscription_dataset, primary_key_field=SUBSCRIPTION_PK,
        is_active=False))
    if compiled.result_dataset is not None:
        engine.create_dataset(DatasetDescriptor(
            name=compiled.result_dataset, primary_key_field=RESULT_PK,
            is_active=True))

    for node in engine.cluster.nodes:
        node.channel_times[compiled.name] = ChannelNodeTimes(
            previous=node.monotonic_now())

    runtime = ChannelRuntime(compiled=compiled)
    runtime.next_due_micros = (engine.cluster.coordinator_now().micros
                               + compiled.period.micros)
    catalog.channels[compiled.name] = runtime
    if getattr(engine, "auto_schedule", False) and not engine.cluster.virtual:
        engine._schedulers.append(RealScheduler(engine, runtime).start())
    return runtime


def drop_channel(engine, name: str) -> None:
    runtime = engine.catalog.channels.get(name)
    if runtime is None:
        raise EngineError.dataset_not_found(name)
    runtime.state = "terminated"
    for ds_name in filter(None, (runtime.compiled.subscription_dataset,
                                 runtime.compiled.result_dataset)):
        desc = engine.catalog.datasets.pop(ds_name, None)
        if desc is not None:
            engine.cluster.drop_dataset_stores(desc)
    for node in engine.cluster.nodes:
        node.channel_times.pop(name, None)
    del engine.catalog.channels[name]


def _gather_subscriptions(engine, runtime: ChannelRuntime):
    rows = []
    for store in engine.cluster.stores_of(runtime.compiled.subscription_dataset):
        rows.extend(rec.doc.root for rec in store.scan())
    return rows


def _bindings_of(subscriptions, param_names):
    """Group subscriptions by their parameter tuple for shared evaluation."""
    bindings: Dict[str, Tuple[Dict[str, Value], List[Tuple[str, str]]]] = {}
    for root in subscriptions:
        params = {name: root.get(f"param{i}") for i, name in enumerate(param_names)}
        key = encode_json([params[n] for n in param_names])
        entry = bindings.setdefault(key, (params, []))
        entry[1].append((root[SUBSCRIPTION_PK], root.get("broker_name")))
    return bindings


def execute_once(engine, runtime: ChannelRuntime) -> List[Notification]:
    """Run one channel execution; returns the notifications it produced."""
    if runtime.state != "running":
        return []
    with runtime._exec_lock:
        return _execute_locked(engine, runtime)


def _execute_locked(engine, runtime: ChannelRuntime) -> List[Notification]:
    compiled = runtime.compiled
    coord_time = engine.cluster.coordinator_now()
    index = len(runtime.executions)
    stages: Dict[str, float] = {}
    wall_started = time.perf_counter()

    ctx = executor.ExecContext(engine.cluster, engine.catalog,
                               channel=compiled.name, widen=True,
                               param_names=compiled.param_names, now=coord_time)
    try:
        started = time.perf_counter()
        subscriptions = _gather_subscriptions(engine, runtime)
        bindings = _bindings_of(subscriptions, compiled.param_names)
        stages["load_subscriptions"] = time.perf_counter() - started

        final, pipeline = executor.split_final(compiled.plan.child)
        rows = executor.flatten(executor.execute_pipeline(pipeline, ctx))
        recheck = executor.binding_predicates(compiled.plan, compiled.param_names)

        started = time.perf_counter()
        notifications: List[Notification] = []
        for key in sorted(bindings):
            params, subs = bindings[key]
            bctx = ctx.with_params(params)
            bound_rows = [r for r in rows
                          if all(executor.eval_pred(p, r, bctx) for p in recheck)]
            for result in executor.apply_final(final, bound_rows, bctx):
                for sub_id, broker_name in subs:
                    broker = engine.catalog.brokers.get(broker_name)
                    if broker is None:
                        log.warning("subscription %s references unknown broker %s",
                                    sub_id, broker_name)
                        continue
                    notifications.append(Notification(
                        channel=compiled.name, channel_execution_time=coord_time,
                        subscription_id=sub_id,
                        broker_endpoint=broker.broker_end_point, result=result))
        stages["customize"] = time.perf_counter() - started
    except Exception as exc:
        for node in engine.cluster.nodes:
            times = node.channel_times.get(compiled.name)
            if times is not None and node.node_id in ctx.curr_samples:
                times.current = None  # failed execution: the window stays open
        runtime.executions.append(ExecutionRecord(
            index=index, coordinator_time=coord_time, node_windows={},
            notifications=[], failed=True, error=str(exc)))
        log.warning("channel %s execution %d failed: %s", compiled.name, index, exc)
        return []

    # success: move each sampled node's window forward
    node_windows: Dict[int, Tuple[ActiveTimestamp, ActiveTimestamp]] = {}
    for node in engine.cluster.nodes:
        sampled = ctx.curr_samples.get(node.node_id)
        if sampled is None:
            continue
        times = node.channel_times[compiled.name]
        node_windows[node.node_id] = (times.previous, sampled)
        times.previous = sampled
        times.current = None

    started = time.perf_counter()
    deliver(engine, runtime, notifications, stages)
    stages["deliver"] = (time.perf_counter() - started
                         - stages.get("persist_results", 0.0))

    customize = stages.pop("customize")
    stages["load_new_data"] = sum(ctx.scan_seconds.values())
    stages["join"] = sum(ctx.join_seconds.values()) + customize
    # makespan: the slowest partition's scan+join fragment runs in parallel
    # with the others; coordinator work (customize/persist/deliver) does not
    per_node = [ctx.scan_seconds.get(k, 0.0) + ctx.join_seconds.get(k, 0.0)
                for k in set(ctx.scan_seconds) | set(ctx.join_seconds)]
    runtime.last_makespan_seconds = (max(per_node) if per_node else 0.0) + \
        stages["load_subscriptions"] + customize + \
        stages.get("persist_results", 0.0) + stages["deliver"]
    runtime.last_wall_seconds = time.perf_counter() - wall_started
    runtime.last_stage_seconds = stages

    runtime.executions.append(ExecutionRecord(
        index=index, coordinator_time=coord_time, node_windows=node_windows,
        notifications=notifications))
    return notifications


def deliver(engine, runtime: ChannelRuntime, notifications: List[Notification],
            stages: Optional[Dict[str, float]] = None) -> None:
    """Hand results to brokers, eagerly or lazily; no brokers contacted when empty."""
    if stages is None:
        stages = {}
    stages.setdefault("persist_results", 0.0)
    if not notifications:
        return
    exec_iso = notifications[0].channel_execution_time.iso()
    by_endpoint: Dict[str, List[Notification]] = {}
    for n in notifications:
        by_endpoint.setdefault(n.broker_endpoint, []).append(n)

    if runtime.delivery == "eager":
        for endpoint, batch in sorted(by_endpoint.items()):
            payload = {
                "channel": runtime.name,
                "executionTime": exec_iso,
                "notifications": [
                    {"subscriptionId": n.subscription_id,
                     "result": encode_value(n.result)}
                    for n in batch
                ],
            }
            if not engine.transport.post(endpoint.rstrip("/") + "/results", payload):
                # eager mode does not buffer: the batch is logged and dropped
                log.warning("%s", EngineError.broker_unreachable(endpoint))
        return

    started = time.perf_counter()
    ordinals: Dict[Tuple[int, str], int] = {}
    for n in notifications:
        # rows are addressed by (execution time, subscription); the ordinal
        # only disambiguates multiple results for one subscription
        slot = (n.channel_execution_time.micros, n.subscription_id)
        ordinal = ordinals.get(slot, 0)
        ordinals[slot] = ordinal + 1
        root = {
            RESULT_PK: f"{slot[0]}:{n.subscription_id}:{ordinal}",
            "channel": n.channel,
            "channel_execution_time": n.channel_execution_time,
            "subscription_id": n.subscription_id,
            "customized_data": n.result,
        }
        engine.cluster.insert(runtime.compiled.result_dataset,
                              Document.from_root(root, RESULT_PK))
    stages["persist_results"] = time.perf_counter() - started

    for endpoint, batch in sorted(by_endpoint.items()):
        payload = {
            "channel": runtime.name,
            "executionTime": exec_iso,
            "subscriptionIds": sorted({n.subscription_id for n in batch}),
        }
        if not engine.transport.post(endpoint.rstrip("/") + "/notify", payload):
            log.warning("%s", EngineError.broker_unreachable(endpoint))


def pull_results(engine, channel: str, subscription_id: str,
                 execution_time: Optional[DateTime] = None) -> List[Value]:
    """Lazy-mode results for one subscription, oldest execution first."""
    runtime = engine.catalog.channels.get(channel)
    if runtime is None:
        raise EngineError.dataset_not_found(channel)
    if runtime.compiled.result_dataset is None:
        return []
    out = []
    for store in engine.cluster.stores_of(runtime.compiled.result_dataset):
        for rec in store.scan():
            root = rec.doc.root
            if root.get("subscription_id") != subscription_id:
                continue
            when = root.get("channel_execution_time")
            if execution_time is not None and when != execution_time:
                continue
            out.append((when.micros if isinstance(when, DateTime) else 0, root))
    out.sort(key=lambda pair: pair[0])
    return [root["customized_data"] for _, root in out]


# -- scheduling ---------------------------------------------------------------


def next_tick_micros(engine) -> Optional[int]:
    """Earliest pending channel tick (including any injected delay)."""
    times = [rt.next_due_micros + rt.pending_delay_micros
             for rt in engine.catalog.channels.values() if rt.state == "running"]
    return min(times) if times else None


def advance_virtual(engine, delta_micros: int) -> None:
    """Move virtual time forward, firing due channel executions in order."""
    master = engine.cluster.master
    if master is None:
        raise ValueError("virtual advance on a real-clock cluster")
    end = master.micros + delta_micros
    while True:
        candidate = None
        for runtime in engine.catalog.channels.values():
            if runtime.state != "running":
                continue
            effective = runtime.next_due_micros + runtime.pending_delay_micros
            if effective <= end and (candidate is None or effective < candidate[1]):
                candidate = (runtime, effective)
        if candidate is None:
            break
        runtime, effective = candidate
        if effective > master.micros:
            master.micros = effective
        _fire_tick(engine, runtime)
    if end > master.micros:
        master.micros = end


def _fire_tick(engine, runtime: ChannelRuntime) -> None:
    due = runtime.next_due_micros
    delay = runtime.pending_delay_micros
    runtime.pending_delay_micros = 0
    if delay and due + delay >= due + runtime.period.micros:
        runtime.state = "terminated"
        runtime.termination_error = EngineError.channel_overrun(runtime.name)
        log.warning("%s", runtime.termination_error)
        return
    execute_once(engine, runtime)
    runtime.next_due_micros = due + runtime.period.micros


class RealScheduler:
    """Fixed-rate wall-clock ticker for one channel (service / load modes)."""

    def __init__(self, engine, runtime: ChannelRuntime, jitter_fn=None) -> None:
        self.engine = engine
        self.runtime = runtime
        self.jitter_fn = jitter_fn
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True,
                                        name=f"channel-{runtime.name}")

    def start(self) -> "RealScheduler":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        self._thread.join(timeout=5)

    def _run(self) -> None:
        period_s = self.runtime.period.micros / 1e6
        next_due = time.monotonic() + period_s
        while not self._stop.is_set() and self.runtime.state == "running":
            delay = self.jitter_fn() if self.jitter_fn else 0.0
            target = next_due + delay
            while not self._stop.is_set():
                remaining = target - time.monotonic()
                if remaining <= 0:
                    break
                self._stop.wait(min(remaining, 0.05))
            if self._stop.is_set():
                break
            execute_once(self.engine, self.runtime)
            next_due += period_s
            if time.monotonic() >= next_due + period_s:
                self.runtime.state = "terminated"
                self.runtime.termination_error = EngineError.channel_overrun(
                    self.runtime.name)
                log.warning("%s", self.runtime.termination_error)
                break
