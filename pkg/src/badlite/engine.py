"""Engine façade: catalog plus cluster plus statement execution.

One Engine owns the node partitions, executes statement text against the
catalog, runs feeds and channels, and talks to brokers through a pluggable
transport. Virtual-clock engines are driven by ``advance_virtual``;
real-clock engines run feed sockets and per-channel schedulers on threads.
"""

from __future__ import annotations

import json
import random
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union
from urllib.parse import urlparse

from . import channels, executor, ingestion, planner
from .brokers import HttpBrokerTransport
from .catalog import BROKER_DATASET, Broker, Catalog
from .cluster import Cluster, NodeConfig
from .dsl import ast, parse
from .errors import EngineError, ErrorKind
from .storage import DatasetDescriptor
from .timestamps import ActiveTimestamp
from .values import DateTime, Document, Duration, Value


@dataclass
class EngineConfig:
    nodes: List[NodeConfig] = field(default_factory=lambda: [NodeConfig(0)])
    data_dir: Optional[Path] = None
    seed: int = 0
    flush_threshold: int = 1000
    feed_buffer_records: int = ingestion.DEFAULT_BUFFER_RECORDS
    record_ingest_log: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "EngineConfig":
        nodes = [NodeConfig(node_id=n["id"],
                            clock_offset=Duration(int(n.get("clock_offset_ms", 0)) * 1000),
                            clock_mode=n.get("clock_mode", "virtual"))
                 for n in raw.get("nodes", [{"id": 0}])]
        data_dir = Path(raw["data_dir"]) if raw.get("data_dir") else None
        return cls(nodes=nodes, data_dir=data_dir, seed=int(raw.get("seed", 0)),
                   flush_threshold=int(raw.get("flush_threshold", 1000)),
                   feed_buffer_records=int(raw.get("feed_buffer_records",
                                                   ingestion.DEFAULT_BUFFER_RECORDS)),
                   record_ingest_log=bool(raw.get("record_ingest_log", False)))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "EngineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class IngestEntry:
    dataset: str
    node_id: int
    mode: str
    ts: Optional[ActiveTimestamp]
    root: dict


@dataclass
class StatementResult:
    kind: str  # "ack" | "rows" | "explain" | "subscription"
    message: str = ""
    rows: Optional[List[Value]] = None
    text: Optional[str] = None
    subscription_id: Optional[str] = None


class Engine:
    def __init__(self, config: Optional[EngineConfig] = None, *,
                 transport=None) -> None:
        self.config = config or EngineConfig()
        self._tempdir = None
        data_dir = self.config.data_dir
        if data_dir is None:
            self._tempdir = tempfile.TemporaryDirectory(prefix="badlite-")
            data_dir = Path(self._tempdir.name)
        self.cluster = Cluster(self.config.nodes, data_dir=data_dir,
                               flush_threshold=self.config.flush_threshold)
        self.catalog = Catalog(self.cluster)
        self.transport = transport if transport is not None else HttpBrokerTransport()
        self.rng = random.Random(self.config.seed)
        self.router = ingestion.FeedRouter(self)
        self.ingest_log: List[IngestEntry] = []
        self._log_lock = threading.Lock()
        self._schedulers: List[channels.RealScheduler] = []
        self.auto_schedule = False  # service mode: schedule channels at creation
        self.create_dataset(DatasetDescriptor(
            name=BROKER_DATASET, primary_key_field="broker_name",
            is_active=False, broadcast=True))

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def virtual(cls, n_nodes: int = 1, *, offsets_ms: Sequence[int] = (),
                seed: int = 0, flush_threshold: int = 1000,
                transport=None, record_ingest_log: bool = False) -> "Engine":
        nodes = [NodeConfig(i, clock_offset=Duration(
            (offsets_ms[i] if i < len(offsets_ms) else 0) * 1000))
            for i in range(n_nodes)]
        return cls(EngineConfig(nodes=nodes, seed=seed,
                                flush_threshold=flush_threshold,
                                record_ingest_log=record_ingest_log),
                   transport=transport)

    def shutdown(self) -> None:
        for scheduler in self._schedulers:
            scheduler.stop()
        self._schedulers = []
        for feed in list(self.catalog.feeds.values()):
            self.router.stop(feed)
        if self._tempdir is not None:
            self._tempdir.cleanup()
            self._tempdir = None

    # -- datasets and documents -----------------------------------------------

    def create_dataset(self, desc: DatasetDescriptor) -> None:
        if desc.name in self.catalog.datasets:
            raise EngineError.duplicate_name("dataset", desc.name)
        self.catalog.datasets[desc.name] = desc
        self.cluster.create_dataset_stores(desc)

    def _require_dataset(self, name: str) -> DatasetDescriptor:
        desc = self.catalog.datasets.get(name)
        if desc is None:
            raise EngineError.dataset_not_found(name)
        return desc

    def insert_document(self, dataset: str, doc: Document):
        return self._write(dataset, doc, "insert")

    def upsert_document(self, dataset: str, doc: Document):
        return self._write(dataset, doc, "upsert")

    def _write(self, dataset: str, doc: Document, mode: str):
        desc = self._require_dataset(dataset)
        if desc.broadcast:
            store = self.cluster.broadcast_stores[dataset]
            node_id = -1
        else:
            node = self.cluster.partition_node(doc.pk_value)
            store = node.stores[dataset]
            node_id = node.node_id
        ts = store.insert(doc) if mode == "insert" else store.upsert(doc)
        if self.config.record_ingest_log and not desc.broadcast:
            with self._log_lock:
                self.ingest_log.append(IngestEntry(
                    dataset=dataset, node_id=node_id, mode=mode, ts=ts, root=doc.root))
        return ts

    def insert_root(self, dataset: str, root: dict, mode: str = "insert"):
        desc = self._require_dataset(dataset)
        doc = Document.from_root(root, desc.primary_key_field)
        return self._write(dataset, doc, mode)

    def flush_all(self) -> None:
        for name in list(self.catalog.datasets):
            self.cluster.flush_dataset(name)

    # -- statements -------------------------------------------------------------

    def execute_text(self, text: str) -> List[StatementResult]:
        return [self.execute_statement(stmt) for stmt in parse(text)]

    def execute_statement(self, stmt: ast.Statement) -> StatementResult:
        if isinstance(stmt, ast.CreateType):
            if stmt.name in self.catalog.types:
                raise EngineError.duplicate_name("type", stmt.name)
            self.catalog.types[stmt.name] = stmt
            return StatementResult("ack", f"type {stmt.name} created")
        if isinstance(stmt, ast.CreateDataset):
            if stmt.type_name not in self.catalog.types:
                raise EngineError.compile(f"unknown type {stmt.type_name!r}", stmt.loc)
            self.create_dataset(DatasetDescriptor(
                name=stmt.name, primary_key_field=stmt.primary_key_field,
                is_active=stmt.is_active))
            flavor = "active dataset" if stmt.is_active else "dataset"
            return StatementResult("ack", f"{flavor} {stmt.name} created")
        if isinstance(stmt, ast.CreateIndex):
            self._require_dataset(stmt.dataset)
            return StatementResult(
                "ack", f"index {stmt.name} accepted (secondary indexes are not built)")
        if isinstance(stmt, ast.CreateFeed):
            if stmt.name in self.catalog.feeds:
                raise EngineError.duplicate_name("feed", stmt.name)
            self.catalog.feeds[stmt.name] = ingestion.feed_from_config(
                stmt.name, stmt.config_dict())
            return StatementResult("ack", f"feed {stmt.name} created")
        if isinstance(stmt, ast.ConnectFeed):
            feed = self._require_feed(stmt.feed)
            self._require_dataset(stmt.dataset)
            for name in stmt.transforms:
                if name not in ingestion.TRANSFORM_REGISTRY:
                    raise EngineError.compile(f"unknown ingest transform {name!r}")
            feed.dataset = stmt.dataset
            feed.transforms = stmt.transforms
            return StatementResult("ack", f"feed {stmt.feed} connected to {stmt.dataset}")
        if isinstance(stmt, ast.StartFeed):
            return self.start_feed(stmt.feed)
        if isinstance(stmt, ast.CreateBroker):
            self.register_broker(stmt.name, stmt.endpoint)
            return StatementResult("ack", f"broker {stmt.name} registered")
        if isinstance(stmt, ast.CreateFunction):
            if stmt.name in self.catalog.functions:
                raise EngineError.duplicate_name("function", stmt.name)
            self.catalog.functions[stmt.name] = stmt
            return StatementResult("ack", f"function {stmt.name} created")
        if isinstance(stmt, ast.CreateChannel):
            channels.create_channel(self, stmt)
            return StatementResult("ack", f"{stmt.kind} channel {stmt.name} created")
        if isinstance(stmt, ast.DropChannel):
            channels.drop_channel(self, stmt.name)
            return StatementResult("ack", f"channel {stmt.name} dropped")
        if isinstance(stmt, ast.Subscribe):
            sub_id = self.subscribe(stmt.channel, list(stmt.args), stmt.broker)
            return StatementResult("subscription",
                                   f"subscribed to {stmt.channel}",
                                   subscription_id=sub_id)
        if isinstance(stmt, ast.AdHocQuery):
            return StatementResult("rows", rows=self.query(stmt.query))
        if isinstance(stmt, ast.Explain):
            return StatementResult("explain", text=self.explain_statement(stmt.target))
        raise EngineError.compile(f"unsupported statement {type(stmt).__name__}")

    # -- queries ----------------------------------------------------------------

    def query(self, query_ast: ast.QueryAst) -> List[Value]:
        now = self.cluster.coordinator_now()
        plan = planner.compile_adhoc(query_ast, self.catalog, now.micros)
        ctx = executor.ExecContext(self.cluster, self.catalog, now=now)
        return executor.run_adhoc(plan, ctx)

    def explain_statement(self, target: ast.Statement) -> str:
        if isinstance(target, ast.CreateChannel):
            compiled = planner.compile_channel(target, self.catalog)
            return planner.explain(compiled.plan)
        if isinstance(target, ast.AdHocQuery):
            now = self.cluster.coordinator_now()
            plan = planner.compile_adhoc(target.query, self.catalog, now.micros)
            return planner.explain(plan)
        raise EngineError.compile(
            f"EXPLAIN supports channels and queries, not {type(target).__name__}")

    # -- brokers and subscriptions ------------------------------------------------

    def register_broker(self, name: str, endpoint: str) -> None:
        self._validate_endpoint(endpoint)
        if name in self.catalog.brokers:
            raise EngineError.duplicate_name("broker", name)
        broker = Broker(dataverse_name="Default", broker_name=name,
                        broker_end_point=endpoint)
        self.catalog.brokers[name] = broker
        self.insert_root(BROKER_DATASET, {
            "broker_name": name, "dataverse_name": "Default",
            "broker_end_point": endpoint})

    def update_broker_endpoint(self, name: str, endpoint: str) -> None:
        """Endpoint changes touch only the broker record, never subscriptions."""
        self._validate_endpoint(endpoint)
        if name not in self.catalog.brokers:
            raise EngineError.compile(f"unknown broker {name!r}")
        broker = Broker(dataverse_name="Default", broker_name=name,
                        broker_end_point=endpoint)
        self.catalog.brokers[name] = broker
        self.insert_root(BROKER_DATASET, {
            "broker_name": name, "dataverse_name": "Default",
            "broker_end_point": endpoint}, mode="upsert")

    @staticmethod
    def _validate_endpoint(endpoint: str) -> None:
        parsed = urlparse(endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise EngineError(ErrorKind.PARSE, f"invalid broker endpoint {endpoint!r}")

    def subscribe(self, channel: str, args: Sequence[Value], broker: str) -> str:
        runtime = self.catalog.channels.get(channel)
        if runtime is None:
            raise EngineError.dataset_not_found(channel)
        if broker not in self.catalog.brokers:
            raise EngineError.compile(f"unknown broker {broker!r}")
        expected = len(runtime.compiled.param_names)
        if len(args) != expected:
            raise EngineError.compile(
                f"channel {channel!r} takes {expected} arguments, got {len(args)}")
        sub_id = str(uuid.UUID(int=self.rng.getrandbits(128), version=4))
        root = {channels.SUBSCRIPTION_PK: sub_id, "broker_name": broker,
                "dataverse_name": "Default"}
        for i, arg in enumerate(args):
            root[f"param{i}"] = arg
        self.insert_root(runtime.compiled.subscription_dataset, root)
        return sub_id

    # -- feeds ---------------------------------------------------------------------

    def _require_feed(self, name: str) -> ingestion.FeedState:
        feed = self.catalog.feeds.get(name)
        if feed is None:
            raise EngineError.compile(f"unknown feed {name!r}")
        return feed

    def start_feed(self, name: str) -> StatementResult:
        feed = self._require_feed(name)
        self._require_dataset(feed.require_connected())
        if feed.started:
            return StatementResult("ack", f"feed {name} already started")
        if not self.cluster.virtual:
            self.router.start_queued_writers(feed, self.config.feed_buffer_records)
            if feed.sockets:
                host, port = ingestion.parse_socket_endpoint(feed.sockets)
                feed.server = ingestion.SocketFeedServer(
                    self.router, feed, host, port).start()
        feed.started = True
        where = f" on {feed.sockets}" if feed.sockets and feed.server else ""
        return StatementResult("ack", f"feed {name} started{where}")

    def feed_ingest_line(self, name: str, line: str) -> bool:
        return self.router.ingest_line(self._require_feed(name), line)

    def feed_ingest_root(self, name: str, root: dict) -> bool:
        return self.router.ingest_root(self._require_feed(name), root)

    def drain_feeds(self) -> None:
        for feed in self.catalog.feeds.values():
            self.router.drain(feed)

    # -- channels ---------------------------------------------------------------

    def channel(self, name: str) -> channels.ChannelRuntime:
        runtime = self.catalog.channels.get(name)
        if runtime is None:
            raise EngineError.dataset_not_found(name)
        return runtime

    def execute_channel_once(self, name: str) -> List[channels.Notification]:
        return channels.execute_once(self, self.channel(name))

    def pull_channel_results(self, channel: str, subscription_id: str,
                             execution_time: Optional[DateTime] = None) -> List[Value]:
        return channels.pull_results(self, channel, subscription_id, execution_time)

    def advance_virtual(self, delta: Duration) -> None:
        channels.advance_virtual(self, delta.micros)

    def advance_node_clock(self, node_id: int, delta: Duration) -> None:
        self.cluster.advance_node(node_id, delta)

    def start_schedulers(self, jitter_fn=None) -> None:
        for runtime in self.catalog.channels.values():
            scheduler = channels.RealScheduler(self, runtime, jitter_fn=jitter_fn)
            self._schedulers.append(scheduler.start())

    # -- misc -----------------------------------------------------------------------

    def describe_catalog(self) -> dict:
        return {
            "datasets": {name: {"active": d.is_active, "primary_key": d.primary_key_field,
                                "records": self.cluster.visible_count(name)}
                         for name, d in sorted(self.catalog.datasets.items())},
            "channels": {name: {"kind": rt.compiled.kind, "state": rt.state,
                                "period": rt.compiled.period.iso(),
                                "delivery": rt.compiled.delivery}
                         for name, rt in sorted(self.catalog.channels.items())},
            "brokers": {name: b.broker_end_point
                        for name, b in sorted(self.catalog.brokers.items())},
            "feeds": {name: {"started": f.started, "dataset": f.dataset,
                             "accepted": f.counters.accepted,
                             "rejected": f.counters.rejected,
                             "persisted": f.counters.persisted}
                      for name, f in sorted(self.catalog.feeds.items())},
        }
