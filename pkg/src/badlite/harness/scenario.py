"""Deterministic scenario replay under virtual clocks.

A scenario file is JSON: a cluster layout, a setup script in the statement
language, aliased subscriptions, a timeline of events at absolute
millisecond offsets, expected notification sets per channel execution, and
optional oracle checks. Channel ticks and delayed record visibility are
interleaved with timeline events in exact virtual-time order, so a given
scenario always replays byte-identically.
"""

from __future__ import annotations

import heapq
import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from ..brokers import BrokerService, DirectEngineClient, LoopbackBrokerTransport
from ..engine import Engine, EngineConfig
from ..cluster import NodeConfig
from ..errors import EngineError
from ..values import Duration, decode_value
from . import oracle as oracle_mod

MS = 1000  # micros per millisecond


def load_scenario(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class ScenarioRunner:
    def __init__(self, spec: dict) -> None:
        self.spec = spec
        cluster_spec = spec.get("cluster", {})
        nodes = [NodeConfig(node_id=n["id"],
                            clock_offset=Duration(int(n.get("clock_offset_ms", 0)) * MS))
                 for n in cluster_spec.get("nodes", [{"id": 0}])]
        self.transport = LoopbackBrokerTransport()
        self.engine = Engine(EngineConfig(
            nodes=nodes, seed=int(cluster_spec.get("seed", 0)),
            flush_threshold=int(cluster_spec.get("flush_threshold", 1000)),
            record_ingest_log=True), transport=self.transport)
        self.broker_services: Dict[str, BrokerService] = {}
        self.sub_alias: Dict[str, str] = {}  # subscription id -> alias
        self.sub_params: Dict[str, list] = {}
        self.sub_broker: Dict[str, str] = {}
        self.visibility_lag: Dict[str, int] = {}
        self._pending: List[Tuple[int, int, str, dict]] = []
        self._pending_seq = 0

    # -- plumbing ----------------------------------------------------------

    def _register_broker_services(self) -> None:
        for name, broker in self.engine.catalog.brokers.items():
            service = BrokerService(name, DirectEngineClient(self.engine))
            self.transport.register(broker.broker_end_point, service)
            self.broker_services[name] = service

    def _service_of_subscription(self, sub_id: str) -> Optional[BrokerService]:
        return self.broker_services.get(self.sub_broker.get(sub_id))

    def _subscribe(self, alias: str, channel: str, args: list, broker: str) -> None:
        args = [decode_value(a) for a in args]
        sub_id = self.engine.subscribe(channel, args, broker)
        self.sub_alias[sub_id] = alias
        self.sub_params[sub_id] = args
        self.sub_broker[sub_id] = broker
        self.broker_services[broker].attach_sink(sub_id)

    def _alias_for(self, sub_id: str) -> str:
        return self.sub_alias.get(sub_id, sub_id)

    def _sub_by_alias(self, alias: str) -> str:
        for sub_id, known in self.sub_alias.items():
            if known == alias:
                return sub_id
        raise KeyError(f"unknown subscription alias {alias!r}")

    # -- time stepping -----------------------------------------------------

    def _now(self) -> int:
        return self.engine.cluster.master.micros

    def _advance_to(self, target_micros: int) -> None:
        """Advance virtual time, applying delayed records before same-instant
        channel ticks."""
        from .. import channels as channels_mod

        while True:
            next_apply = self._pending[0][0] if self._pending else None
            next_tick = channels_mod.next_tick_micros(self.engine)
            candidates = [t for t in (next_apply, next_tick)
                          if t is not None and t <= target_micros]
            if not candidates:
                break
            step = min(candidates)
            if step > self._now() + 1:
                self.engine.advance_virtual(Duration(step - self._now() - 1))
            if step > self._now():
                self.engine.cluster.master.micros = step
            while self._pending and self._pending[0][0] <= step:
                _, _, feed_name, root = heapq.heappop(self._pending)
                feed = self.engine.catalog.feeds[feed_name]
                self.engine.router.dispatch(feed, root)
            self.engine.advance_virtual(Duration(0))
        if target_micros > self._now():
            self.engine.advance_virtual(Duration(target_micros - self._now()))

    # -- events -------------------------------------------------------------

    def _ingest(self, feed_name: str, doc: dict) -> None:
        feed = self.engine.catalog.feeds.get(feed_name)
        if feed is None:
            raise EngineError.compile(f"unknown feed {feed_name!r} in scenario")
        root = decode_value(doc)
        prepared = self.engine.router.prepare(feed, root)
        if prepared is None:
            return
        lag = self.visibility_lag.get(feed.dataset, 0)
        if lag > 0:
            self._pending_seq += 1
            heapq.heappush(self._pending,
                           (self._now() + lag, self._pending_seq, feed_name, prepared))
        else:
            self.engine.router.dispatch(feed, prepared)

    def _apply_event(self, event: dict) -> None:
        if "ingest" in event:
            self._ingest(event["ingest"]["feed"], event["ingest"]["doc"])
        elif "advance_clock" in event:
            spec = event["advance_clock"]
            delta = Duration(int(spec["ms"]) * MS)
            if spec.get("node", "all") == "all":
                self.engine.advance_virtual(delta)
            else:
                self.engine.advance_node_clock(int(spec["node"]), delta)
        elif "delay_next_execution" in event:
            spec = event["delay_next_execution"]
            runtime = self.engine.channel(spec["channel"])
            runtime.pending_delay_micros = int(spec["ms"]) * MS
        elif "inject_visibility_lag" in event:
            spec = event["inject_visibility_lag"]
            self.visibility_lag[spec["dataset"]] = int(spec["ms"]) * MS
        elif "flush" in event:
            self.engine.cluster.flush_dataset(event["flush"]["dataset"])
        elif "subscribe" in event:
            spec = event["subscribe"]
            self._subscribe(spec["alias"], spec["channel"], spec["args"], spec["broker"])
        elif "detach_sink" in event:
            sub_id = self._sub_by_alias(event["detach_sink"]["alias"])
            self._service_of_subscription(sub_id).detach_sink(sub_id)
        elif "attach_sink" in event:
            sub_id = self._sub_by_alias(event["attach_sink"]["alias"])
            self._service_of_subscription(sub_id).attach_sink(sub_id)
        else:
            raise EngineError.compile(f"unknown scenario event {sorted(event)!r}")

    # -- checks -------------------------------------------------------------

    def _key_path(self, channel: str) -> List[str]:
        keys = self.spec.get("result_keys", {})
        return keys.get(channel, "t.tid").split(".")

    def _execution_pairs(self, channel: str, index: int):
        runtime = self.engine.catalog.channels.get(channel)
        if runtime is None or index >= len(runtime.executions):
            return None
        rec = runtime.executions[index]
        path = self._key_path(channel)
        pairs = []
        for n in rec.notifications:
            value = n.result
            for part in path:
                value = value.get(part) if isinstance(value, dict) else None
            pairs.append([self._alias_for(n.subscription_id), value])
        return sorted(pairs, key=json.dumps)

    def _check_expectations(self) -> Tuple[List[dict], bool]:
        results = []
        all_ok = True
        for expect in self.spec.get("expect", []):
            channel = expect["channel"]
            index = int(expect["execution"])
            want = sorted([list(pair) for pair in expect["set"]], key=json.dumps)
            got = self._execution_pairs(channel, index)
            ok = got == want
            all_ok &= ok
            results.append({"channel": channel, "index": index,
                            "expected": want, "actual": got, "pass": ok})
        return results, all_ok

    def _run_oracles(self) -> Tuple[dict, oracle_mod.OracleReport, bool]:
        per_channel: Dict[str, dict] = {}
        total = oracle_mod.OracleReport()
        ok = True
        for spec in self.spec.get("oracles", []):
            channel = spec["channel"]
            runtime = self.engine.catalog.channels.get(channel)
            if runtime is None:
                ok = False
                continue
            members = {rec.doc.root.get("subscription_id")
                       for store in self.engine.cluster.stores_of(
                           runtime.compiled.subscription_dataset)
                       for rec in store.scan()}
            subs = [(sub_id, self.sub_params[sub_id])
                    for sub_id in self.sub_params if sub_id in members]
            kind = spec["kind"]
            kwargs = {k: v for k, v in spec.items()
                      if k not in ("channel", "kind", "expect")}
            if "key_path" in kwargs:
                kwargs["key_path"] = tuple(kwargs["key_path"])
            if kind == "tweets_by_area":
                report = oracle_mod.area_channel_oracle(
                    self.engine.ingest_log, runtime.executions, subs, **kwargs)
            elif kind == "nearby_tweets":
                report = oracle_mod.nearby_channel_oracle(
                    self.engine.ingest_log, runtime.executions, subs, **kwargs)
            elif kind == "upsert_versions":
                report = oracle_mod.upsert_channel_oracle(
                    self.engine.ingest_log, runtime.executions, subs, **kwargs)
            else:
                raise EngineError.compile(f"unknown oracle kind {kind!r}")
            report.missed = [(self._alias_for(s), k) for s, k in report.missed]
            report.duplicated = [(self._alias_for(s), k) for s, k in report.duplicated]
            detail = report.to_json()
            expect = spec.get("expect", {})
            if expect.get("clean"):
                ok &= report.clean()
                detail["expected_clean"] = True
            if "min_missed" in expect:
                ok &= len(report.missed) >= int(expect["min_missed"])
                detail["expected_min_missed"] = int(expect["min_missed"])
            per_channel[channel] = detail
            total.merge(report)
        return per_channel, total, ok

    # -- entry point ----------------------------------------------------------

    def run(self) -> dict:
        try:
            self.engine.execute_text(self.spec.get("setup", ""))
            self._register_broker_services()
            for sub in self.spec.get("subscriptions", []):
                self._subscribe(sub["alias"], sub["channel"], sub["args"], sub["broker"])
            events = sorted(self.spec.get("timeline", []),
                            key=lambda e: int(e["at_ms"]))
            for event in events:
                self._advance_to(int(event["at_ms"]) * MS)
                self._apply_event(event)
            self._advance_to(int(self.spec.get("end_ms", 0)) * MS)

            executions, expect_ok = self._check_expectations()
            oracle_detail, total, oracle_ok = self._run_oracles()
            chain_problems: List[str] = []
            for runtime in self.engine.catalog.channels.values():
                if runtime.compiled.kind == "continuous":
                    chain_problems.extend(oracle_mod.window_chain_gaps(
                        runtime.executions))
            channels_summary = {
                name: {"state": rt.state,
                       "executions": len(rt.executions),
                       "notifications": sum(len(r.notifications)
                                            for r in rt.executions),
                       "oracle": oracle_detail.get(name)}
                for name, rt in sorted(self.engine.catalog.channels.items())
            }
            ok = expect_ok and oracle_ok and not chain_problems
            return {
                "scenario": self.spec.get("name", "unnamed"),
                "ok": ok,
                "executions": executions,
                "channels": channels_summary,
                "oracle": total.to_json(),
                "window_chain_problems": chain_problems,
                "cross_node_time_comparisons":
                    self.engine.cluster.cross_node_time_comparisons,
            }
        finally:
            self.engine.shutdown()


def run_scenario(path) -> dict:
    """Replay a scenario file; the report's ``ok`` carries the verdict."""
    return ScenarioRunner(load_scenario(path)).run()


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)
