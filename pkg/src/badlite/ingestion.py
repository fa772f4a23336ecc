"""Feed endpoints: accept record streams, apply transforms, route to partitions.

A feed parses newline-delimited JSON, applies its transform chain in order,
and routes each document by primary-key hash in insert or upsert mode.
Malformed records are counted and dropped; the feed keeps running. In
real-clock mode each feed routes through bounded per-partition queues with
one writer per partition, so a full buffer pauses socket reads
(backpressure); in virtual mode documents apply synchronously so scenario
replays stay deterministic.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import socketserver
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .errors import EngineError
from .values import DateTime, Document, decode_value

log = logging.getLogger(__name__)

DEFAULT_BUFFER_RECORDS = 10_000

Transform = Callable[[dict, DateTime], dict]


def add_ingestion_time(root: dict, now: DateTime) -> dict:
    """Merge an ingestion-time field over the incoming record (it wins)."""
    out = dict(root)
    out["ingested_timestamp"] = now
    return out


TRANSFORM_REGISTRY: Dict[str, Transform] = {
    "AddIngestionTime": add_ingestion_time,
}


@dataclass
class FeedCounters:
    accepted: int = 0
    rejected: int = 0
    persisted: int = 0


@dataclass
class FeedState:
    name: str
    mode: str  # "insert" | "upsert"
    sockets: Optional[str] = None
    type_name: Optional[str] = None
    dataset: Optional[str] = None
    transforms: Tuple[str, ...] = ()
    started: bool = False
    counters: FeedCounters = field(default_factory=FeedCounters)
    server: Optional["SocketFeedServer"] = None
    queues: Optional[Dict[int, "queue.Queue"]] = None
    writers: List[threading.Thread] = field(default_factory=list)
    visibility_lag_micros: int = 0  # harness fault injection

    def require_connected(self) -> str:
        if self.dataset is None:
            raise EngineError.compile(f"feed {self.name!r} is not connected to a dataset")
        return self.dataset


def feed_from_config(name: str, config: dict) -> FeedState:
    insert_flag = config.get("insert-feed", True)
    fmt = str(config.get("format", "JSON")).upper()
    if fmt != "JSON":
        raise EngineError.compile(f"unsupported feed format {fmt!r}")
    return FeedState(name=name, mode="insert" if insert_flag else "upsert",
                     sockets=config.get("sockets"),
                     type_name=config.get("type-name"))


def parse_feed_line(line: str) -> dict:
    try:
        decoded = decode_value(json.loads(line))
    except (ValueError, TypeError) as exc:
        raise EngineError.malformed_record(f"invalid JSON record: {exc}")
    if not isinstance(decoded, dict):
        raise EngineError.malformed_record("feed records must be JSON objects")
    return decoded


def apply_transforms(feed: FeedState, root: dict, now: DateTime) -> dict:
    for name in feed.transforms:
        fn = TRANSFORM_REGISTRY.get(name)
        if fn is None:
            raise EngineError.compile(f"unknown ingest transform {name!r}")
        root = fn(root, now)
    return root


class FeedRouter:
    """Engine-side intake shared by socket feeds, HTTP feeds, and the harness."""

    def __init__(self, engine) -> None:
        self.engine = engine

    def ingest_line(self, feed: FeedState, line: str) -> bool:
        line = line.strip()
        if not line:
            return False
        try:
            root = parse_feed_line(line)
        except EngineError as exc:
            feed.counters.rejected += 1
            log.debug("feed %s rejected record: %s", feed.name, exc)
            return False
        return self.ingest_root(feed, root)

    def ingest_root(self, feed: FeedState, root: dict) -> bool:
        prepared = self.prepare(feed, root)
        if prepared is None:
            return False
        self.dispatch(feed, prepared)
        return True

    def prepare(self, feed: FeedState, root: dict) -> Optional[dict]:
        """Transform and validate one record; None (plus a count) on rejection."""
        dataset = feed.require_connected()
        desc = self.engine.catalog.datasets[dataset]
        now = self.engine.cluster.coordinator_now()
        try:
            root = apply_transforms(feed, root, now)
            Document.from_root(root, desc.primary_key_field)
        except EngineError as exc:
            feed.counters.rejected += 1
            log.debug("feed %s rejected record: %s", feed.name, exc)
            return None
        feed.counters.accepted += 1
        return root

    def dispatch(self, feed: FeedState, root: dict) -> None:
        """Route a prepared record to its partition (queued in real mode)."""
        dataset = feed.require_connected()
        desc = self.engine.catalog.datasets[dataset]
        doc = Document.from_root(root, desc.primary_key_field)
        if feed.queues is not None:
            node = self.engine.cluster.partition_node(doc.pk_value)
            feed.queues[node.node_id].put(doc)  # blocks when full: backpressure
        else:
            self._apply(feed, dataset, doc)

    def _apply(self, feed: FeedState, dataset: str, doc: Document) -> None:
        try:
            if feed.mode == "insert":
                self.engine.insert_document(dataset, doc)
            else:
                self.engine.upsert_document(dataset, doc)
        except EngineError as exc:
            feed.counters.rejected += 1
            log.debug("feed %s dropped record: %s", feed.name, exc)
            return
        feed.counters.persisted += 1

    def start_queued_writers(self, feed: FeedState, buffer_records: int) -> None:
        dataset = feed.require_connected()
        per_node = max(1, buffer_records // max(1, len(self.engine.cluster.nodes)))
        feed.queues = {}
        for node in self.engine.cluster.nodes:
            q: "queue.Queue" = queue.Queue(maxsize=per_node)
            feed.queues[node.node_id] = q
            t = threading.Thread(target=self._writer_loop, daemon=True,
                                 args=(feed, dataset, q),
                                 name=f"feed-{feed.name}-n{node.node_id}")
            feed.writers.append(t)
            t.start()

    def _writer_loop(self, feed: FeedState, dataset: str, q: "queue.Queue") -> None:
        while True:
            doc = q.get()
            if doc is None:
                q.task_done()
                return
            self._apply(feed, dataset, doc)
            q.task_done()

    def drain(self, feed: FeedState) -> None:
        if feed.queues is None:
            return
        for q in feed.queues.values():
            q.join()

    def stop(self, feed: FeedState) -> None:
        if feed.server is not None:
            feed.server.stop()
            feed.server = None
        if feed.queues is not None:
            for q in feed.queues.values():
                q.put(None)
            for t in feed.writers:
                t.join(timeout=5)
            feed.queues = None
            feed.writers = []
        feed.started = False


class SocketFeedServer:
    """Line-oriented TCP listener; one reader task per connection."""

    def __init__(self, router: FeedRouter, feed: FeedState, host: str, port: int) -> None:
        self.router = router
        self.feed = feed

        class Handler(socketserver.StreamRequestHandler):
            def handle(inner) -> None:  # noqa: N805 - handler idiom
                for raw in inner.rfile:
                    try:
                        line = raw.decode("utf-8")
                    except UnicodeDecodeError:
                        self.feed.counters.rejected += 1
                        continue
                    self.router.ingest_line(self.feed, line)

        class Server(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._server = Server((host, port), Handler)
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True, name=f"feed-{feed.name}-listener")

    def start(self) -> "SocketFeedServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()


def parse_socket_endpoint(sockets: str) -> Tuple[str, int]:
    host, _, port_text = sockets.partition(":")
    try:
        return host or "127.0.0.1", int(port_text)
    except ValueError:
        raise EngineError.compile(f"invalid feed socket endpoint {sockets!r}")


def send_records(host: str, port: int, lines: List[str]) -> None:
    """Client helper: push JSON lines into a socket feed."""
    with socket.create_connection((host, port)) as conn:
        payload = "".join(line.rstrip("\n") + "\n" for line in lines)
        conn.sendall(payload.encode("utf-8"))
