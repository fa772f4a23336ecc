"""Plan execution over cluster partitions.

Scans run per node; one join side is broadcast and joined against the other
side's local rows, so joined rows stay keyed by the node that produced the
non-broadcast side. Records leave their scan wrapped with their hidden
timestamp and their origin node's previous/current channel times; every
channel-time comparison uses those attached values, and an audit counter
counts (and must never see) comparisons that mix a record with another
node's clock.

Channel bodies run once with parameter predicates widened to true; the
per-subscription binding step re-applies the parameter-referencing
predicates exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

from . import planner
from .catalog import Catalog
from .cluster import Cluster, Node
from .dsl import ast
from .errors import EngineError
from .storage import ScanWindow
from .timestamps import ActiveTimestamp
from .values import (
    DateTime,
    Duration,
    Point,
    Value,
    compare_values,
    encode_json,
    spatial_distance,
)

COORDINATOR_KEY = -1


@dataclass(frozen=True)
class ScanRecord:
    root: dict
    ats: Optional[ActiveTimestamp]
    prev: Optional[Tuple[ActiveTimestamp, int]]  # (value, source node)
    curr: Optional[Tuple[ActiveTimestamp, int]]
    origin: int


Row = Dict[str, object]


class _Unresolved(Exception):
    def __init__(self, name: str) -> None:
        self.name = name


class ExecContext:
    def __init__(self, cluster: Cluster, catalog: Catalog, *,
                 channel: Optional[str] = None,
                 params: Optional[Dict[str, Value]] = None,
                 param_names: Sequence[str] = (),
                 widen: bool = False,
                 now: Optional[DateTime] = None) -> None:
        self.cluster = cluster
        self.catalog = catalog
        self.channel = channel
        self.params = params or {}
        self.param_names = set(param_names)
        self.widen = widen
        self.now = now if now is not None else cluster.coordinator_now()
        self.curr_samples: Dict[int, ActiveTimestamp] = {}
        self.scan_seconds: Dict[int, float] = {}
        self.join_seconds: Dict[int, float] = {}

    def with_params(self, params: Dict[str, Value]) -> "ExecContext":
        clone = ExecContext.__new__(ExecContext)
        clone.__dict__.update(self.__dict__)
        clone.params = params
        clone.widen = False
        return clone

    def curr_of(self, node: Node) -> ActiveTimestamp:
        """Node-local current channel time, sampled at first active access."""
        if node.node_id not in self.curr_samples:
            sampled = node.monotonic_now()
            self.curr_samples[node.node_id] = sampled
            times = node.channel_times.get(self.channel)
            if times is not None:
                times.current = sampled
        return self.curr_samples[node.node_id]

    def prev_of(self, node: Node) -> ActiveTimestamp:
        times = node.channel_times[self.channel]
        return times.previous

    def observe_time_use(self, record_origin: int, source_node: int) -> None:
        if record_origin != source_node:
            self.cluster.cross_node_time_comparisons += 1

    def add_time(self, bucket: Dict[int, float], node_key: int, seconds: float) -> None:
        bucket[node_key] = bucket.get(node_key, 0.0) + seconds


# -- expression evaluation -------------------------------------------------------


def _resolve_name(name: str, row: Row, ctx: ExecContext):
    if name in row:
        value = row[name]
        return value.root if isinstance(value, ScanRecord) else value
    if name in ctx.params:
        return ctx.params[name]
    if name in ctx.param_names:
        raise _Unresolved(name)
    raise EngineError.compile(f"unresolved name {name!r}")


def _record_of(alias: str, row: Row, fn: str) -> ScanRecord:
    rec = row.get(alias)
    if not isinstance(rec, ScanRecord):
        raise EngineError.compile(f"{fn} argument {alias!r} is not a scanned source")
    return rec


def eval_expr(expr: ast.Expr, row: Row, ctx: ExecContext):
    if isinstance(expr, ast.Literal):
        return expr.value
    if isinstance(expr, ast.Name):
        return _resolve_name(expr.name, row, ctx)
    if isinstance(expr, ast.Path):
        value = _resolve_name(expr.base, row, ctx)
        for part in expr.parts:
            if not isinstance(value, dict):
                return None
            value = value.get(part)
        return value
    if isinstance(expr, ast.Call):
        return _eval_call(expr, row, ctx)
    if isinstance(expr, ast.Arith):
        return _eval_arith(expr, row, ctx)
    if isinstance(expr, (ast.Cmp, ast.And, ast.Or)):
        return eval_pred(expr, row, ctx)
    raise EngineError.compile(f"cannot evaluate {type(expr).__name__} here")


def _eval_call(expr: ast.Call, row: Row, ctx: ExecContext):
    fn = expr.func
    if fn == "spatial_distance":
        a = eval_expr(expr.args[0], row, ctx)
        b = eval_expr(expr.args[1], row, ctx)
        if isinstance(a, Point) and isinstance(b, Point):
            return spatial_distance(a, b)
        return None
    if fn == "current_datetime":
        return ctx.now
    if fn in planner.ACTIVE_FUNCTIONS:
        if fn == "is_new":
            raise EngineError.compile("is_new must be expanded before execution")
        alias = expr.args[0].name
        rec = _record_of(alias, row, fn)
        if fn == planner.ATS:
            return rec.ats
        attached = rec.prev if fn == planner.PREV else rec.curr
        if attached is None:
            raise EngineError.compile(f"{fn} is only available in channel execution")
        value, source_node = attached
        ctx.observe_time_use(rec.origin, source_node)
        return value
    raise EngineError.compile(f"unknown function {expr.func!r}")


def _eval_arith(expr: ast.Arith, row: Row, ctx: ExecContext):
    left = eval_expr(expr.left, row, ctx)
    right = eval_expr(expr.right, row, ctx)
    sign = 1 if expr.op == "+" else -1
    if isinstance(left, ActiveTimestamp) and isinstance(right, Duration):
        return ActiveTimestamp(left.micros + sign * right.micros, left.seq)
    if isinstance(left, DateTime) and isinstance(right, Duration):
        return DateTime(left.micros + sign * right.micros)
    if isinstance(left, Duration) and isinstance(right, Duration):
        return Duration(left.micros + sign * right.micros)
    if isinstance(left, DateTime) and isinstance(right, DateTime) and expr.op == "-":
        return Duration(left.micros - right.micros)
    if isinstance(left, (int, float)) and isinstance(right, (int, float)) \
            and not isinstance(left, bool) and not isinstance(right, bool):
        return left + right if expr.op == "+" else left - right
    return None


def _order_pair(value):
    if isinstance(value, ActiveTimestamp):
        return (value.micros, value.seq)
    if isinstance(value, DateTime):
        # a datetime sorts before every stamp in its microsecond, so "after
        # datetime m" includes stamps sequenced within microsecond m
        return (value.micros, -1)
    return None


def runtime_compare(a, b) -> Optional[int]:
    pa, pb = _order_pair(a), _order_pair(b)
    if pa is not None and pb is not None:
        return (pa > pb) - (pa < pb)
    if pa is not None or pb is not None:
        return None
    return compare_values(a, b)


_CMP_CHECKS = {
    "=": lambda c: c == 0,
    "!=": lambda c: c != 0,
    "<": lambda c: c == -1,
    "<=": lambda c: c in (-1, 0),
    ">": lambda c: c == 1,
    ">=": lambda c: c in (0, 1),
}


def eval_pred(expr: ast.Expr, row: Row, ctx: ExecContext) -> bool:
    if isinstance(expr, ast.And):
        return all(eval_pred(t, row, ctx) for t in expr.terms)
    if isinstance(expr, ast.Or):
        return any(eval_pred(t, row, ctx) for t in expr.terms)
    try:
        if isinstance(expr, ast.Cmp):
            cmp = runtime_compare(eval_expr(expr.left, row, ctx),
                                  eval_expr(expr.right, row, ctx))
            if cmp is None:
                return False
            return _CMP_CHECKS[expr.op](cmp)
        value = eval_expr(expr, row, ctx)
        return value is True
    except _Unresolved:
        if ctx.widen:
            return True
        raise EngineError.compile("unbound channel parameter in predicate")


def to_value(obj) -> Value:
    """Convert an execution result into a document value."""
    if isinstance(obj, ActiveTimestamp):
        return DateTime(obj.micros)
    if isinstance(obj, ScanRecord):
        return obj.root
    if isinstance(obj, list):
        return [to_value(v) for v in obj]
    return obj


# -- pipeline execution ----------------------------------------------------------


PartitionedRows = Dict[int, List[Row]]


def _scan_stores(scan: planner.DataScan, ctx: ExecContext) -> PartitionedRows:
    desc = ctx.catalog.datasets.get(scan.dataset)
    if desc is None:
        raise EngineError.dataset_not_found(scan.dataset)
    out: PartitionedRows = {}
    broadcast = desc.broadcast
    targets = ([(COORDINATOR_KEY, ctx.cluster.broadcast_stores[scan.dataset],
                 ctx.cluster.nodes[0])] if broadcast else
               [(n.node_id, n.stores[scan.dataset], n) for n in ctx.cluster.nodes
                if scan.dataset in n.stores])
    for key, store, node in targets:
        started = time.perf_counter()
        window = None
        prev = curr = None
        if ctx.channel is not None:
            curr_ts = ctx.curr_of(node) if desc.is_active else None
            prev_ts = ctx.prev_of(node) if desc.is_active else None
            if curr_ts is not None:
                curr = (curr_ts, node.node_id)
            if prev_ts is not None:
                prev = (prev_ts, node.node_id)
        if desc.is_active and (scan.lower is not None or scan.upper is not None):
            lower = _resolve_bound(scan.lower, node, ctx)
            upper = _resolve_bound(scan.upper, node, ctx)
            window = ScanWindow(lower=lower, upper=upper)
        records = store.scan(window)
        rows = [{scan.alias: ScanRecord(root=r.doc.root, ats=r.active_ts,
                                        prev=prev, curr=curr,
                                        origin=node.node_id)}
                for r in records]
        out[key] = rows
        ctx.add_time(ctx.scan_seconds, key, time.perf_counter() - started)
    return out


def _resolve_bound(bound: Optional[planner.TimeBound], node: Node,
                   ctx: ExecContext) -> Optional[ActiveTimestamp]:
    if bound is None:
        return None
    if bound.kind == "const":
        return bound.const
    if ctx.channel is None:
        raise EngineError.compile("channel time bound outside channel execution")
    return ctx.curr_of(node) if bound.kind == "curr" else ctx.prev_of(node)


def execute_pipeline(plan: planner.PlanNode, ctx: ExecContext) -> PartitionedRows:
    if isinstance(plan, planner.DataScan):
        return _scan_stores(plan, ctx)
    if isinstance(plan, planner.Select):
        parts = execute_pipeline(plan.child, ctx)
        return {key: [r for r in rows if eval_pred(plan.predicate, r, ctx)]
                for key, rows in parts.items()}
    if isinstance(plan, planner.Join):
        return _execute_join(plan, ctx)
    if isinstance(plan, planner.LookupJoin):
        return _execute_lookup(plan, ctx)
    raise EngineError.compile(f"unexpected pipeline node {type(plan).__name__}")


def _execute_join(plan: planner.Join, ctx: ExecContext) -> PartitionedRows:
    left_parts = execute_pipeline(plan.left, ctx)
    right_parts = execute_pipeline(plan.right, ctx)
    if plan.broadcast == "left":
        bc_parts, local_parts = left_parts, right_parts
        bc_equi = plan.equi[0] if plan.equi else None
        local_equi = plan.equi[1] if plan.equi else None
    else:
        bc_parts, local_parts = right_parts, left_parts
        bc_equi = plan.equi[1] if plan.equi else None
        local_equi = plan.equi[0] if plan.equi else None
    bc_rows: List[Row] = []
    for key in sorted(bc_parts):
        bc_rows.extend(bc_parts[key])

    out: PartitionedRows = {}
    use_hash = plan.strategy == "hash" and bc_equi is not None
    index: Dict[str, List[Row]] = {}
    if use_hash:
        for brow in bc_rows:
            k = encode_json(to_value(eval_expr(bc_equi, brow, ctx)))
            index.setdefault(k, []).append(brow)
    for key in sorted(local_parts):
        started = time.perf_counter()
        joined: List[Row] = []
        for lrow in local_parts[key]:
            if use_hash:
                k = encode_json(to_value(eval_expr(local_equi, lrow, ctx)))
                candidates = index.get(k, ())
            else:
                candidates = bc_rows
            for brow in candidates:
                merged = {**lrow, **brow}
                if plan.predicate is None or eval_pred(plan.predicate, merged, ctx):
                    joined.append(merged)
        out[key] = joined
        ctx.add_time(ctx.join_seconds, key, time.perf_counter() - started)
    return out


def _execute_lookup(plan: planner.LookupJoin, ctx: ExecContext) -> PartitionedRows:
    desc = ctx.catalog.datasets.get(plan.dataset)
    if desc is None:
        raise EngineError.dataset_not_found(plan.dataset)
    if desc.broadcast:
        targets = [(ctx.cluster.broadcast_stores[plan.dataset], ctx.cluster.nodes[0])]
    else:
        targets = [(n.stores[plan.dataset], n) for n in ctx.cluster.nodes
                   if plan.dataset in n.stores]
    index: Dict[str, List[Value]] = {}
    for store, owner in targets:
        window = None
        if desc.is_active and ctx.channel is not None:
            # snapshot rule applies to lookups of active datasets too
            window = ScanWindow(upper=ctx.curr_of(owner))
        for rec in store.scan(window):
            inner_row: Row = {plan.alias: ScanRecord(root=rec.doc.root,
                                                     ats=rec.active_ts, prev=None,
                                                     curr=None, origin=COORDINATOR_KEY)}
            field_value = rec.doc.root.get(plan.inner_field)
            key = encode_json(to_value(field_value))
            value = to_value(eval_expr(plan.value_expr, inner_row, ctx))
            index.setdefault(key, []).append(value)
    parts = execute_pipeline(plan.child, ctx)
    out: PartitionedRows = {}
    for key in sorted(parts):
        rows = []
        for row in parts[key]:
            outer = encode_json(to_value(eval_expr(plan.outer_path, row, ctx)))
            rows.append({**row, plan.out_key: index.get(outer, [])})
        out[key] = rows
    return out


def flatten(parts: PartitionedRows) -> List[Row]:
    rows: List[Row] = []
    for key in sorted(parts):
        rows.extend(parts[key])
    return rows


# -- final operators ----------------------------------------------------------


def split_final(plan: planner.PlanNode):
    """Separate the terminal Project/CountAggregate from the row pipeline."""
    if isinstance(plan, (planner.Project, planner.CountAggregate)):
        return plan, plan.child
    return None, plan


def binding_predicates(plan: planner.PlanNode,
                       param_names: Sequence[str]) -> List[ast.Expr]:
    """Predicates that must be re-checked exactly once parameters are bound."""
    preds: List[ast.Expr] = []

    def collect(node: planner.PlanNode) -> None:
        if isinstance(node, planner.Select):
            preds.append(node.predicate)
            collect(node.child)
        elif isinstance(node, planner.Join):
            if node.predicate is not None:
                preds.append(node.predicate)
            collect(node.left)
            collect(node.right)
        elif isinstance(node, (planner.LookupJoin, planner.Project,
                               planner.CountAggregate, planner.ResultAssembly)):
            collect(node.child)

    collect(plan)
    needed: List[ast.Expr] = []
    for pred in preds:
        if not planner.references_params(pred, param_names):
            continue
        if isinstance(pred, ast.And):
            needed.extend(t for t in pred.terms
                          if planner.references_params(t, param_names))
        else:
            needed.append(pred)
    return needed


def apply_final(final: Optional[planner.PlanNode], rows: List[Row],
                ctx: ExecContext) -> List[Value]:
    if final is None:
        return [to_value(next(iter(r.values()))) for r in rows]
    if isinstance(final, planner.Project):
        out: List[Value] = []
        for row in rows:
            if final.bare_value:
                out.append(to_value(eval_expr(final.items[0][1], row, ctx)))
            else:
                out.append({k: to_value(eval_expr(e, row, ctx))
                            for k, e in final.items})
        return out
    if isinstance(final, planner.CountAggregate):
        return _apply_aggregate(final, rows, ctx)
    raise EngineError.compile(f"unexpected final node {type(final).__name__}")


def _apply_aggregate(agg: planner.CountAggregate, rows: List[Row],
                     ctx: ExecContext) -> List[Value]:
    def build(count: int, group_value=None) -> Value:
        out = {}
        for role, key, expr in agg.items:
            if role == "count":
                out[key] = count
            elif role == "group":
                out[key] = group_value
            else:
                out[key] = to_value(eval_expr(expr, {}, ctx))
        return out

    if agg.group_by is None:
        return [build(len(rows))]
    groups: Dict[str, Tuple[Value, int]] = {}
    for row in rows:
        value = to_value(eval_expr(agg.group_by, row, ctx))
        key = encode_json(value)
        current = groups.get(key)
        groups[key] = (value, (current[1] if current else 0) + 1)
    entries = list(groups.values())
    if agg.order_by_count_desc:
        entries.sort(key=lambda e: (-e[1], encode_json(e[0])))
    else:
        entries.sort(key=lambda e: encode_json(e[0]))
    if agg.limit is not None:
        entries = entries[:agg.limit]
    return [build(count, value) for value, count in entries]


def run_adhoc(plan: planner.PlanNode, ctx: ExecContext) -> List[Value]:
    final, pipeline = split_final(plan)
    rows = flatten(execute_pipeline(pipeline, ctx))
    return apply_final(final, rows, ctx)
