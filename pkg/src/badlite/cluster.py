"""Simulated multi-node runtime: nodes with independent clocks, hash
partitioning, and per-node partition stores.

Nodes are in-process partitions. Each owns a lock guarding its monotonic
timestamp source and buffer appends, so assigning a record timestamp and
sampling a channel time are serialized through one critical section per
node. Virtual clocks are advanced by the harness; real clocks follow wall
time plus a configurable per-node offset.
"""

from __future__ import annotations

import hashlib
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from .errors import EngineError
from .storage import DatasetDescriptor, PartitionStore
from .timestamps import ActiveTimestamp, MonotonicSource
from .values import DateTime, Document, Duration, canonical_key_bytes


@dataclass(frozen=True)
class NodeConfig:
    node_id: int
    clock_offset: Duration = Duration(0)
    clock_mode: str = "virtual"  # "virtual" | "real"


class _VirtualMaster:
    """Cluster-wide virtual time, advanced explicitly by the harness."""

    def __init__(self) -> None:
        self.micros = 0

    def advance(self, delta_micros: int) -> None:
        self.micros += delta_micros


@dataclass
class ChannelNodeTimes:
    previous: ActiveTimestamp
    current: Optional[ActiveTimestamp] = None


class Node:
    def __init__(self, config: NodeConfig, master: Optional[_VirtualMaster],
                 epoch_micros: int) -> None:
        self.node_id = config.node_id
        self.config = config
        self.offset_micros = config.clock_offset.micros
        self._master = master
        self.lock = threading.RLock()
        self._source = MonotonicSource(self.clock_micros)
        self.epoch_micros = epoch_micros
        self.stores: Dict[str, PartitionStore] = {}
        self.channel_times: Dict[str, ChannelNodeTimes] = {}

    def clock_micros(self) -> int:
        if self._master is not None:
            return self._master.micros + self.offset_micros
        return time.time_ns() // 1000 + self.offset_micros

    def monotonic_now(self) -> ActiveTimestamp:
        """Strictly monotonic node-local time; the storage sequence barrier."""
        with self.lock:
            return self._source.next()

    def stamp_unlocked(self) -> ActiveTimestamp:
        # for PartitionStore, which already holds this node's lock
        return self._source.next()


class Cluster:
    """Nodes plus a coordinator clock; datasets partition across all nodes
    by a stable hash of the primary key unless declared broadcast."""

    def __init__(self, configs: List[NodeConfig], *,
                 data_dir: Optional[Path] = None,
                 flush_threshold: int = 1000) -> None:
        if not configs:
            raise ValueError("a cluster needs at least one node")
        ids = [c.node_id for c in configs]
        if len(set(ids)) != len(ids):
            raise EngineError.duplicate_name("node", str(sorted(ids)))
        self.virtual = all(c.clock_mode == "virtual" for c in configs)
        if not self.virtual and any(c.clock_mode == "virtual" for c in configs):
            raise ValueError("nodes must share one clock mode")
        self.master = _VirtualMaster() if self.virtual else None
        # encoding epoch sits one day early so negative clock offsets still
        # land in the 48-bit range
        base = 0 if self.virtual else time.time_ns() // 1000
        self.epoch_micros = base - 86_400_000_000
        self.nodes = [Node(c, self.master, self.epoch_micros)
                      for c in sorted(configs, key=lambda c: c.node_id)]
        self._by_id = {n.node_id: n for n in self.nodes}
        self.data_dir = data_dir
        self.flush_threshold = flush_threshold
        self.broadcast_stores: Dict[str, PartitionStore] = {}
        self._coordinator_lock = threading.RLock()
        self._coordinator_source = MonotonicSource(self._coordinator_micros)
        self.cross_node_time_comparisons = 0

    def _coordinator_micros(self) -> int:
        if self.master is not None:
            return self.master.micros
        return time.time_ns() // 1000

    # -- clocks --------------------------------------------------------------

    def node(self, node_id: int) -> Node:
        return self._by_id[node_id]

    def local_now(self, node_id: int) -> ActiveTimestamp:
        return self._by_id[node_id].monotonic_now()

    def coordinator_now(self) -> DateTime:
        return DateTime(self._coordinator_micros())

    def advance(self, delta: Duration) -> None:
        if self.master is None:
            raise ValueError("advance applies to virtual clusters only")
        self.master.advance(delta.micros)

    def advance_node(self, node_id: int, delta: Duration) -> None:
        if self.master is None:
            raise ValueError("advance_node applies to virtual clusters only")
        self._by_id[node_id].offset_micros += delta.micros

    # -- datasets --------------------------------------------------------------

    def _store_dir(self, node_label: str, desc: DatasetDescriptor) -> Optional[Path]:
        if self.data_dir is None:
            return None
        return self.data_dir / node_label / desc.dataverse / desc.name

    def create_dataset_stores(self, desc: DatasetDescriptor) -> None:
        if desc.broadcast:
            node = self.nodes[0]
            self.broadcast_stores[desc.name] = PartitionStore(
                desc, node_lock=node.lock, stamp=node.stamp_unlocked,
                directory=self._store_dir("coordinator", desc),
                flush_threshold=self.flush_threshold, epoch_micros=self.epoch_micros)
            return
        for node in self.nodes:
            node.stores[desc.name] = PartitionStore(
                desc, node_lock=node.lock, stamp=node.stamp_unlocked,
                directory=self._store_dir(f"node{node.node_id}", desc),
                flush_threshold=self.flush_threshold, epoch_micros=self.epoch_micros)

    def drop_dataset_stores(self, desc: DatasetDescriptor) -> None:
        self.broadcast_stores.pop(desc.name, None)
        for node in self.nodes:
            node.stores.pop(desc.name, None)

    def partition_node(self, pk_value) -> Node:
        digest = hashlib.blake2b(canonical_key_bytes(pk_value), digest_size=8).digest()
        idx = int.from_bytes(digest, "big") % len(self.nodes)
        return self.nodes[idx]

    def store_for(self, dataset: str, pk_value) -> PartitionStore:
        if dataset in self.broadcast_stores:
            return self.broadcast_stores[dataset]
        return self.partition_node(pk_value).stores[dataset]

    def stores_of(self, dataset: str) -> List[PartitionStore]:
        if dataset in self.broadcast_stores:
            return [self.broadcast_stores[dataset]]
        return [node.stores[dataset] for node in self.nodes
                if dataset in node.stores]

    def insert(self, dataset: str, doc: Document):
        return self.store_for(dataset, doc.pk_value).insert(doc)

    def upsert(self, dataset: str, doc: Document):
        return self.store_for(dataset, doc.pk_value).upsert(doc)

    def visible_count(self, dataset: str) -> int:
        return sum(s.visible_count() for s in self.stores_of(dataset))

    def flush_dataset(self, dataset: str) -> None:
        for store in self.stores_of(dataset):
            store.flush()
