"""Cluster-wide metadata: datasets, stored functions, brokers, channels, feeds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, TYPE_CHECKING

from .dsl import ast
from .storage import DatasetDescriptor

if TYPE_CHECKING:  # pragma: no cover
    from .cluster import Cluster

BROKER_DATASET = "Brokers"


@dataclass(frozen=True)
class Broker:
    dataverse_name: str
    broker_name: str
    broker_end_point: str


class Catalog:
    def __init__(self, cluster: "Cluster") -> None:
        self._cluster = cluster
        self.datasets: Dict[str, DatasetDescriptor] = {}
        self.types: Dict[str, ast.CreateType] = {}
        self.functions: Dict[str, ast.CreateFunction] = {}
        self.brokers: Dict[str, Broker] = {}
        self.channels: Dict[str, object] = {}
        self.feeds: Dict[str, object] = {}

    def count(self, dataset: str) -> int:
        if dataset not in self.datasets:
            return 0
        return self._cluster.visible_count(dataset)

    def is_broadcast(self, dataset: str) -> bool:
        desc = self.datasets.get(dataset)
        return bool(desc and desc.broadcast)

    def dataset(self, name: str) -> Optional[DatasetDescriptor]:
        return self.datasets.get(name)
