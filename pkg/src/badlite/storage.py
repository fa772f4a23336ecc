"""Per-node component-based persistent store for plain and active datasets.

Records accumulate in an in-memory buffer and are sealed into immutable
components (every ``flush_threshold`` records or on explicit flush). Active
datasets stamp each record with a hidden active timestamp drawn from the
node's monotonic source at the instant the record becomes visible; sealed
components carry min/max timestamp filters so scans can skip components
disjoint from their window.

On disk a component is one append-only file: per record a 9-byte active
timestamp prefix (active datasets only) followed by the compact JSON line
of the user document. A sidecar ``manifest.json`` lists
{id, min_ts, max_ts, count, file} per component.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .errors import EngineError
from .timestamps import ENCODED_SIZE, ActiveTimestamp
from .values import Document, decode_json, encode_json


@dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    primary_key_field: str
    is_active: bool
    dataverse: str = "Default"
    broadcast: bool = False  # replicate instead of hash-partitioning (broker registry)


@dataclass(frozen=True)
class ActiveRecord:
    doc: Document
    active_ts: Optional[ActiveTimestamp]
    seqno: int  # partition-local arrival order; shadow order for plain datasets


@dataclass(frozen=True)
class Component:
    id: int
    records: Tuple[ActiveRecord, ...]
    filter_min: Optional[ActiveTimestamp]
    filter_max: Optional[ActiveTimestamp]
    record_count: int
    data_bytes: int


@dataclass(frozen=True)
class ScanWindow:
    """Half-open-on-both-sides window: lower < ts < upper, bounds optional."""

    lower: Optional[ActiveTimestamp] = None
    upper: Optional[ActiveTimestamp] = None

    def __post_init__(self) -> None:
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"window lower {self.lower} must be < upper {self.upper}")

    def admits(self, ts: ActiveTimestamp) -> bool:
        if self.lower is not None and not self.lower < ts:
            return False
        if self.upper is not None and not ts < self.upper:
            return False
        return True


@dataclass
class ScanStats:
    components_opened: int = 0
    components_skipped: int = 0


def _encode_record(rec: ActiveRecord, epoch_micros: int) -> bytes:
    line = encode_json(rec.doc.root).encode("utf-8") + b"\n"
    if rec.active_ts is not None:
        return rec.active_ts.encode(epoch_micros) + line
    return line


class PartitionStore:
    """One dataset partition on one node; single writer, snapshot readers."""

    def __init__(self, desc: DatasetDescriptor, *,
                 node_lock: threading.RLock,
                 stamp: Callable[[], ActiveTimestamp],
                 directory: Optional[Path] = None,
                 flush_threshold: int = 1000,
                 epoch_micros: int = 0) -> None:
        self.desc = desc
        self._lock = node_lock
        self._stamp = stamp
        self._dir = directory
        self._flush_threshold = flush_threshold
        self._epoch_micros = epoch_micros
        self._buffer: List[ActiveRecord] = []
        self._components: List[Component] = []
        self._next_component_id = 1
        self._next_seqno = 1
        self._pk_index: Dict[object, int] = {}  # pk -> latest seqno
        self.last_scan_stats = ScanStats()
        self.total_components_opened = 0
        if self._dir is not None:
            self._dir.mkdir(parents=True, exist_ok=True)

    # -- writes ------------------------------------------------------------

    def insert(self, doc: Document) -> Optional[ActiveTimestamp]:
        """Append a new record; duplicate primary keys are rejected."""
        with self._lock:
            if doc.pk_value in self._pk_index:
                raise EngineError.primary_key_violation(self.desc.name, doc.pk_value)
            return self._append(doc)

    def upsert(self, doc: Document) -> Optional[ActiveTimestamp]:
        """Append a new version; scans will expose only the latest per key."""
        with self._lock:
            return self._append(doc)

    def _append(self, doc: Document) -> Optional[ActiveTimestamp]:
        # caller holds the node lock: timestamping and visibility are one step
        ts = self._stamp() if self.desc.is_active else None
        rec = ActiveRecord(doc=doc, active_ts=ts, seqno=self._next_seqno)
        self._next_seqno += 1
        self._buffer.append(rec)
        self._pk_index[doc.pk_value] = rec.seqno
        if len(self._buffer) >= self._flush_threshold:
            self._seal()
        return ts

    def flush(self) -> Optional[Component]:
        with self._lock:
            return self._seal()

    def _seal(self) -> Optional[Component]:
        if not self._buffer:
            return None
        records = tuple(sorted(self._buffer, key=lambda r: encode_json(r.doc.pk_value)))
        if self.desc.is_active:
            stamps = [r.active_ts for r in records]
            fmin, fmax = min(stamps), max(stamps)
        else:
            fmin = fmax = None
        payload = b"".join(_encode_record(r, self._epoch_micros) for r in records)
        comp = Component(id=self._next_component_id, records=records,
                         filter_min=fmin, filter_max=fmax,
                         record_count=len(records), data_bytes=len(payload))
        if self._dir is not None:
            (self._dir / self._component_filename(comp.id)).write_bytes(payload)
        self._components.append(comp)
        self._next_component_id += 1
        self._buffer = []
        if self._dir is not None:
            self._write_manifest()
        return comp

    def _component_filename(self, comp_id: int) -> str:
        return f"component-{comp_id:06d}.comp"

    def _write_manifest(self) -> None:
        def ts_json(ts: Optional[ActiveTimestamp]):
            return None if ts is None else {"micros": ts.micros, "seq": ts.seq}

        manifest = {
            "dataset": self.desc.name,
            "dataverse": self.desc.dataverse,
            "primary_key_field": self.desc.primary_key_field,
            "is_active": self.desc.is_active,
            "epoch_micros": self._epoch_micros,
            "components": [
                {"id": c.id, "min_ts": ts_json(c.filter_min), "max_ts": ts_json(c.filter_max),
                 "count": c.record_count, "file": self._component_filename(c.id)}
                for c in self._components
            ],
        }
        (self._dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

    # -- reads -------------------------------------------------------------

    def _snapshot(self) -> Tuple[List[Component], List[ActiveRecord]]:
        with self._lock:
            return list(self._components), list(self._buffer)

    def scan(self, window: Optional[ScanWindow] = None) -> List[ActiveRecord]:
        """Visible records in the window, latest version per primary key.

        Version resolution considers every version below the window's upper
        bound, so a scan bounded by a channel time behaves as a snapshot
        taken at that time no matter when it physically runs. Components
        whose filter range is disjoint from the window are not read; the
        opened/skipped counts land in ``last_scan_stats``.
        """
        if window is not None and not self.desc.is_active:
            raise ValueError("windowed scans only apply to active datasets")
        components, buffer = self._snapshot()
        stats = ScanStats()
        upper = window.upper if window is not None else None
        lower = window.lower if window is not None else None

        best: Dict[object, ActiveRecord] = {}

        def consider(rec: ActiveRecord) -> None:
            if upper is not None and not rec.active_ts < upper:
                return
            cur = best.get(rec.doc.pk_value)
            if cur is None or self._newer(rec, cur):
                best[rec.doc.pk_value] = rec

        for comp in components:
            if window is not None and self._skippable(comp, lower, upper):
                stats.components_skipped += 1
                continue
            stats.components_opened += 1
            for rec in comp.records:
                consider(rec)
        for rec in buffer:
            consider(rec)

        self.last_scan_stats = stats
        self.total_components_opened += stats.components_opened

        out = [rec for rec in best.values()
               if lower is None or (rec.active_ts is not None and lower < rec.active_ts)]
        out.sort(key=lambda r: encode_json(r.doc.pk_value))
        return out

    @staticmethod
    def _newer(a: ActiveRecord, b: ActiveRecord) -> bool:
        if a.active_ts is not None and b.active_ts is not None:
            return a.active_ts > b.active_ts
        return a.seqno > b.seqno

    @staticmethod
    def _skippable(comp: Component,
                   lower: Optional[ActiveTimestamp],
                   upper: Optional[ActiveTimestamp]) -> bool:
        if comp.filter_min is None or comp.filter_max is None:
            return False
        if upper is not None and not comp.filter_min < upper:
            return True
        if lower is not None and not lower < comp.filter_max:
            return True
        return False

    # -- accounting ----------------------------------------------------------

    def visible_count(self) -> int:
        with self._lock:
            return len(self._pk_index)

    def stored_count(self) -> int:
        with self._lock:
            return sum(c.record_count for c in self._components) + len(self._buffer)

    def sealed_data_bytes(self) -> int:
        with self._lock:
            return sum(c.data_bytes for c in self._components)

    def components_snapshot(self) -> List[Component]:
        with self._lock:
            return list(self._components)


def load_component_file(path: Path, is_active: bool, pk_field: str,
                        epoch_micros: int = 0) -> List[Tuple[Optional[ActiveTimestamp], Document]]:
    """Decode a component file back into (timestamp, document) pairs."""
    data = path.read_bytes()
    out: List[Tuple[Optional[ActiveTimestamp], Document]] = []
    pos = 0
    while pos < len(data):
        ts = None
        if is_active:
            ts = ActiveTimestamp.decode(data[pos:pos + ENCODED_SIZE], epoch_micros)
            pos += ENCODED_SIZE
        end = data.index(b"\n", pos)
        root = decode_json(data[pos:end].decode("utf-8"))
        out.append((ts, Document.from_root(root, pk_field)))
        pos = end + 1
    return out
