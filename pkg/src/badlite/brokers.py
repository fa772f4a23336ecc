"""Reference broker service and the transports between engine and brokers.

The broker receives eager result pushes or lazy availability pings,
pulls lazy results from the engine (with capped retry; failed pings are
parked for replay), and forwards each subscription's results to its sink.
Sinks are in-memory logs; a disconnected sink's deliveries are parked and
flushed when it reattaches. Delivery per subscription is serialized in
execution-time order.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import httpx

log = logging.getLogger(__name__)

PULL_ATTEMPTS = 3
BACKOFF_BASE_SECONDS = 0.05


# -- engine -> broker transport ------------------------------------------------


class HttpBrokerTransport:
    """POSTs JSON payloads to broker endpoints over HTTP."""

    def __init__(self, timeout: float = 5.0) -> None:
        self._client = httpx.Client(timeout=timeout)

    def post(self, url: str, payload: dict) -> bool:
        try:
            response = self._client.post(url, json=payload)
            return response.status_code < 400
        except httpx.HTTPError as exc:
            log.debug("broker post to %s failed: %s", url, exc)
            return False


class LoopbackBrokerTransport:
    """Routes endpoint URLs to in-process broker services (tests, scenarios)."""

    def __init__(self) -> None:
        self.services: Dict[str, "BrokerService"] = {}
        self.down: set = set()

    def register(self, endpoint: str, service: "BrokerService") -> None:
        self.services[endpoint.rstrip("/")] = service

    def set_down(self, endpoint: str, down: bool = True) -> None:
        key = endpoint.rstrip("/")
        if down:
            self.down.add(key)
        else:
            self.down.discard(key)

    def post(self, url: str, payload: dict) -> bool:
        for endpoint, service in self.services.items():
            if not url.startswith(endpoint):
                continue
            if endpoint in self.down:
                return False
            path = url[len(endpoint):]
            if path == "/results":
                service.receive_results(payload)
                return True
            if path == "/notify":
                service.receive_notify(payload)
                return True
        return False


# -- broker -> engine result pulling -------------------------------------------


class DirectEngineClient:
    """Pulls results straight from an in-process engine."""

    def __init__(self, engine) -> None:
        self.engine = engine

    def fetch_results(self, channel: str, execution_time_iso: Optional[str],
                      subscription_id: str) -> List[dict]:
        from .values import DateTime, encode_value

        when = DateTime.parse(execution_time_iso) if execution_time_iso else None
        results = self.engine.pull_channel_results(channel, subscription_id, when)
        return [encode_value(r) for r in results]


class HttpEngineClient:
    def __init__(self, base_url: str, timeout: float = 5.0) -> None:
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(timeout=timeout)

    def fetch_results(self, channel: str, execution_time_iso: Optional[str],
                      subscription_id: str) -> List[dict]:
        params = {"subscriptionId": subscription_id}
        if execution_time_iso:
            params["executionTime"] = execution_time_iso
        response = self._client.get(
            f"{self.base_url}/channels/{channel}/results", params=params)
        response.raise_for_status()
        return response.json()["results"]


# -- the broker service ----------------------------------------------------------


@dataclass
class SubscriberSink:
    subscription_id: str
    connected: bool = True
    log: List[dict] = field(default_factory=list)

    def receive(self, delivery: dict) -> bool:
        if not self.connected:
            return False
        self.log.append(delivery)
        return True


@dataclass
class ParkedPing:
    channel: str
    execution_time: str
    subscription_id: str
    reason: str


class BrokerService:
    """A single-process broker: sink registry, ack cursors, parked work."""

    def __init__(self, name: str, engine_client) -> None:
        self.name = name
        self.engine_client = engine_client
        self.sinks: Dict[str, SubscriberSink] = {}
        self.parked_pings: List[ParkedPing] = []
        self.parked_deliveries: Dict[str, List[dict]] = {}
        self.last_ack: Dict[str, str] = {}  # subscription -> execution time iso
        self._locks: Dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        self.sleep = time.sleep  # patchable in tests

    def _sub_lock(self, subscription_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(subscription_id, threading.Lock())

    def attach_sink(self, subscription_id: str) -> SubscriberSink:
        """Connect (or reconnect) a subscriber; parked deliveries flush now."""
        with self._sub_lock(subscription_id):
            sink = self.sinks.get(subscription_id)
            if sink is None:
                sink = SubscriberSink(subscription_id=subscription_id)
                self.sinks[subscription_id] = sink
            sink.connected = True
            for delivery in self.parked_deliveries.pop(subscription_id, []):
                sink.receive(delivery)
                self.last_ack[subscription_id] = delivery["executionTime"]
        self.replay_parked_pings(subscription_id)
        return sink

    def detach_sink(self, subscription_id: str) -> None:
        sink = self.sinks.get(subscription_id)
        if sink is not None:
            sink.connected = False

    def log_of(self, subscription_id: str) -> List[dict]:
        sink = self.sinks.get(subscription_id)
        return list(sink.log) if sink else []

    # -- wire handlers ------------------------------------------------------

    def receive_results(self, payload: dict) -> None:
        """Eager push: full payloads arrive and fan out to sinks."""
        channel = payload["channel"]
        execution_time = payload["executionTime"]
        for item in payload["notifications"]:
            self._deliver(channel, execution_time, item["subscriptionId"],
                          item["result"])

    def receive_notify(self, payload: dict) -> None:
        """Lazy ping: pull each affected subscription's results, then forward."""
        channel = payload["channel"]
        execution_time = payload["executionTime"]
        for subscription_id in payload["subscriptionIds"]:
            if subscription_id not in self.sinks:
                log.info("broker %s: ping for unknown subscription %s skipped",
                         self.name, subscription_id)
                continue
            self._pull_and_deliver(channel, execution_time, subscription_id)

    def _pull_and_deliver(self, channel: str, execution_time: str,
                          subscription_id: str) -> None:
        for attempt in range(PULL_ATTEMPTS):
            try:
                results = self.engine_client.fetch_results(
                    channel, execution_time, subscription_id)
                break
            except Exception as exc:  # engine unreachable
                if attempt == PULL_ATTEMPTS - 1:
                    self.parked_pings.append(ParkedPing(
                        channel=channel, execution_time=execution_time,
                        subscription_id=subscription_id, reason=str(exc)))
                    log.warning("broker %s: parked ping for %s after %d attempts",
                                self.name, subscription_id, PULL_ATTEMPTS)
                    return
                self.sleep(BACKOFF_BASE_SECONDS * (2 ** attempt))
        for result in results:
            self._deliver(channel, execution_time, subscription_id, result)

    def _deliver(self, channel: str, execution_time: str, subscription_id: str,
                 result: dict) -> None:
        delivery = {"channel": channel, "executionTime": execution_time,
                    "subscriptionId": subscription_id, "result": result}
        with self._sub_lock(subscription_id):
            sink = self.sinks.get(subscription_id)
            if sink is None or not sink.connected:
                self.parked_deliveries.setdefault(subscription_id, []).append(delivery)
                return
            sink.receive(delivery)
            self.last_ack[subscription_id] = execution_time

    def replay_parked_pings(self, subscription_id: Optional[str] = None) -> int:
        """Re-run parked pings (all, or one subscription's); returns replayed count."""
        todo = [p for p in self.parked_pings
                if subscription_id is None or p.subscription_id == subscription_id]
        self.parked_pings = [p for p in self.parked_pings if p not in todo]
        for ping in todo:
            self._pull_and_deliver(ping.channel, ping.execution_time,
                                   ping.subscription_id)
        return len(todo)
