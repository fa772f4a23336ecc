"""Compilation of channel bodies and ad-hoc queries into operator plans.

Two rewrite rules shape every channel plan:

1. Every scan of an active dataset is capped by the node-local current
   channel execution time (records stamped after an execution starts belong
   to the next one), so the cap is pushed into the scan as its filter
   maximum.
2. A lower bound of the node-local previous channel execution time is pushed
   into a scan only when the corresponding comparison appears in every
   conjunct of the predicate's disjunctive normal form; otherwise the scan
   keeps no lower bound, the records carry their origin node's previous time
   with them (attach_prev), and the comparison is evaluated against that
   attached value wherever the row travels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .dsl import ast
from .dsl.printer import print_expr
from .errors import EngineError
from .timestamps import ActiveTimestamp
from .values import DateTime, Duration

ACTIVE_FUNCTIONS = ("is_new", "active_timestamp", "previous_channel_time",
                    "current_channel_time")

PREV = "previous_channel_time"
CURR = "current_channel_time"
ATS = "active_timestamp"

_DNF_LIMIT = 64


# -- plan operators ------------------------------------------------------------


@dataclass(frozen=True)
class TimeBound:
    """Symbolic or constant scan bound on hidden record timestamps."""

    kind: str  # "prev" | "curr" | "const"
    const: Optional[ActiveTimestamp] = None

    def describe(self) -> str:
        if self.kind == "const":
            return f"const({self.const.micros}:{self.const.seq})"
        return PREV if self.kind == "prev" else CURR


@dataclass(frozen=True)
class DataScan:
    dataset: str
    alias: str
    lower: Optional[TimeBound] = None
    upper: Optional[TimeBound] = None
    attach_prev: bool = False


@dataclass(frozen=True)
class Select:
    child: "PlanNode"
    predicate: ast.Expr


@dataclass(frozen=True)
class Join:
    left: "PlanNode"
    right: "PlanNode"
    predicate: Optional[ast.Expr]
    strategy: str = "broadcast-nested-loop"  # or "hash"
    broadcast: str = "left"  # which side ships to every node
    equi: Optional[Tuple[ast.Path, ast.Path]] = None  # (left side, right side)


@dataclass(frozen=True)
class LookupJoin:
    child: "PlanNode"
    dataset: str
    alias: str
    inner_field: str
    outer_path: ast.Path
    value_expr: ast.Expr
    inner_where: Optional[ast.Expr]
    out_key: str


@dataclass(frozen=True)
class Project:
    child: "PlanNode"
    items: Tuple[Tuple[str, ast.Expr], ...]
    bare_value: bool = False  # SELECT VALUE: emit the single item unwrapped


@dataclass(frozen=True)
class CountAggregate:
    child: "PlanNode"
    group_by: Optional[ast.Path]
    items: Tuple[Tuple[str, str, Optional[ast.Expr]], ...]  # (role, key, expr)
    order_by_count_desc: bool = False
    limit: Optional[int] = None


@dataclass(frozen=True)
class ResultAssembly:
    child: "PlanNode"
    channel: str
    subscription_dataset: str
    result_dataset: Optional[str]
    param_names: Tuple[str, ...]


PlanNode = Union[DataScan, Select, Join, LookupJoin, Project, CountAggregate,
                 ResultAssembly]


@dataclass(frozen=True)
class CompiledChannel:
    name: str
    kind: str
    period: Duration
    delivery: str
    plan: ResultAssembly
    param_names: Tuple[str, ...]
    subscription_dataset: str
    result_dataset: Optional[str]


# -- expression helpers ----------------------------------------------------------


def _walk(expr: ast.Expr):
    yield expr
    if isinstance(expr, (ast.And, ast.Or)):
        for t in expr.terms:
            yield from _walk(t)
    elif isinstance(expr, ast.Cmp):
        yield from _walk(expr.left)
        yield from _walk(expr.right)
    elif isinstance(expr, ast.Arith):
        yield from _walk(expr.left)
        yield from _walk(expr.right)
    elif isinstance(expr, ast.Call):
        for a in expr.args:
            yield from _walk(a)


def _active_fn_alias(expr: ast.Expr) -> Optional[Tuple[str, str]]:
    if isinstance(expr, ast.Call) and expr.func in ACTIVE_FUNCTIONS:
        if len(expr.args) != 1 or not isinstance(expr.args[0], ast.Name):
            raise EngineError.compile(
                f"{expr.func} takes exactly one source alias argument")
        return expr.func, expr.args[0].name
    return None


def referenced_aliases(expr: ast.Expr, aliases: Sequence[str]) -> set:
    found = set()
    for node in _walk(expr):
        if isinstance(node, ast.Path) and node.base in aliases:
            found.add(node.base)
        elif isinstance(node, ast.Name) and node.name in aliases:
            found.add(node.name)
        else:
            fn = _active_fn_alias(node) if isinstance(node, ast.Call) else None
            if fn:
                found.add(fn[1])
    return found


def references_params(expr: ast.Expr, params: Sequence[str]) -> bool:
    return any(isinstance(n, ast.Name) and n.name in params for n in _walk(expr))


def _dnf(expr: ast.Expr) -> Optional[List[List[ast.Expr]]]:
    if isinstance(expr, ast.Or):
        out: List[List[ast.Expr]] = []
        for term in expr.terms:
            sub = _dnf(term)
            if sub is None:
                return None
            out.extend(sub)
        return out if len(out) <= _DNF_LIMIT else None
    if isinstance(expr, ast.And):
        acc: List[List[ast.Expr]] = [[]]
        for term in expr.terms:
            sub = _dnf(term)
            if sub is None:
                return None
            acc = [c + d for c in acc for d in sub]
            if len(acc) > _DNF_LIMIT:
                return None
        return acc
    return [[expr]]


def _is_prev_atom(atom: ast.Expr, alias: str) -> bool:
    if not isinstance(atom, ast.Cmp):
        return False
    left, right, op = atom.left, atom.right, atom.op
    def is_call(e, fn):
        got = _active_fn_alias(e) if isinstance(e, ast.Call) else None
        return got == (fn, alias)
    if op == "<" and is_call(left, PREV) and is_call(right, ATS):
        return True
    if op == ">" and is_call(left, ATS) and is_call(right, PREV):
        return True
    return False


def _is_curr_atom(atom: ast.Expr, alias: str) -> bool:
    if not isinstance(atom, ast.Cmp):
        return False
    left, right, op = atom.left, atom.right, atom.op
    def is_call(e, fn):
        got = _active_fn_alias(e) if isinstance(e, ast.Call) else None
        return got == (fn, alias)
    if op == "<" and is_call(left, ATS) and is_call(right, CURR):
        return True
    if op == ">" and is_call(left, CURR) and is_call(right, ATS):
        return True
    return False


def _remove_atoms(expr: ast.Expr, should_remove) -> Optional[ast.Expr]:
    """Drop matching atoms from an AND/OR tree; None means vacuously true."""
    if isinstance(expr, ast.And):
        kept = [t for t in (_remove_atoms(t, should_remove) for t in expr.terms)
                if t is not None]
        return ast.make_and(kept) if kept else None
    if isinstance(expr, ast.Or):
        terms = [_remove_atoms(t, should_remove) for t in expr.terms]
        if any(t is None for t in terms):
            return None  # one disjunct became true, so the whole OR is true
        return ast.make_or(terms)
    return None if should_remove(expr) else expr


# -- active-function expansion -----------------------------------------------


def _expand_expr(expr: ast.Expr) -> ast.Expr:
    if isinstance(expr, ast.Call) and expr.func == "is_new":
        fn, alias = _active_fn_alias(expr)
        arg = (ast.Name(alias),)
        return ast.And((
            ast.Cmp("<", ast.Call(PREV, arg), ast.Call(ATS, arg)),
            ast.Cmp("<", ast.Call(ATS, arg), ast.Call(CURR, arg)),
        ))
    if isinstance(expr, ast.And):
        parts = []
        for term in expr.terms:
            expanded = _expand_expr(term)
            if isinstance(expanded, ast.And):
                parts.extend(expanded.terms)  # splice is_new pairs in place
            else:
                parts.append(expanded)
        return ast.make_and(tuple(parts))
    if isinstance(expr, ast.Or):
        return ast.make_or(tuple(_expand_expr(t) for t in expr.terms))
    if isinstance(expr, ast.Cmp):
        return replace(expr, left=_expand_expr(expr.left), right=_expand_expr(expr.right))
    if isinstance(expr, ast.Arith):
        return replace(expr, left=_expand_expr(expr.left), right=_expand_expr(expr.right))
    return expr


def _check_active_refs(query: ast.QueryAst, alias_map: Dict[str, str], catalog) -> None:
    exprs: List[ast.Expr] = []
    if query.where is not None:
        exprs.append(query.where)
    for item in query.projections:
        if isinstance(item, ast.SelectItem):
            exprs.append(item.expr)
    for expr in exprs:
        for node in _walk(expr):
            if isinstance(node, ast.Call) and node.func in ACTIVE_FUNCTIONS:
                fn, alias = _active_fn_alias(node)
                if alias not in alias_map:
                    raise EngineError.compile(
                        f"{fn} references unknown alias {alias!r}")
                desc = catalog.datasets.get(alias_map[alias])
                if desc is None:
                    raise EngineError.dataset_not_found(alias_map[alias])
                if not desc.is_active:
                    raise EngineError.active_function_on_plain(fn, desc.name)


def expand_active_functions(query: ast.QueryAst, catalog) -> ast.QueryAst:
    """Rewrite every is_new(x) into its channel-time comparison pair."""
    alias_map = {s.alias: s.dataset for s in query.sources}
    _check_active_refs(query, alias_map, catalog)
    where = _expand_expr(query.where) if query.where is not None else None
    return replace(query, where=where)


# -- compilation ----------------------------------------------------------------


def _alias_map(query: ast.QueryAst, catalog) -> Dict[str, str]:
    alias_map: Dict[str, str] = {}
    if not 1 <= len(query.sources) <= 2:
        raise EngineError.compile("queries take one or two sources")
    for src in query.sources:
        if src.dataset not in catalog.datasets:
            raise EngineError.dataset_not_found(src.dataset)
        if src.alias in alias_map:
            raise EngineError.compile(f"duplicate source alias {src.alias!r}")
        alias_map[src.alias] = src.dataset
    return alias_map


def _validate_names(query: ast.QueryAst, alias_map: Dict[str, str],
                    params: Sequence[str], outer_aliases: Sequence[str] = ()) -> None:
    known = set(alias_map) | set(params) | set(outer_aliases)

    def check(expr: ast.Expr) -> None:
        for node in _walk(expr):
            if isinstance(node, ast.Name) and node.name not in known:
                raise EngineError.compile(f"unknown name {node.name!r}")
            if isinstance(node, ast.Path) and node.base not in known:
                raise EngineError.compile(f"unknown alias {node.base!r} in path")

    if query.where is not None:
        check(query.where)
    for item in query.projections:
        if isinstance(item, ast.SelectItem):
            check(item.expr)


def _projection_key(item: ast.SelectItem) -> str:
    if item.alias:
        return item.alias
    if isinstance(item.expr, ast.Name):
        return item.expr.name
    if isinstance(item.expr, ast.Path):
        return item.expr.parts[-1]
    raise EngineError.compile(
        f"projection {print_expr(item.expr)!r} needs an AS alias")


def _compile_lookup(sub: ast.SelectSubquery, alias_map: Dict[str, str],
                    params: Sequence[str], catalog, child: PlanNode,
                    in_channel: bool) -> PlanNode:
    q = sub.query
    if not q.select_value or len(q.sources) != 1 or q.group_by is not None:
        raise EngineError.compile(
            "only the single-source SELECT VALUE lookup subquery form is supported")
    inner = q.sources[0]
    if inner.dataset not in catalog.datasets:
        raise EngineError.dataset_not_found(inner.dataset)
    if q.where is None or not isinstance(q.where, ast.Cmp) or q.where.op != "=":
        raise EngineError.compile("lookup subquery needs a single equality predicate")
    sides = [q.where.left, q.where.right]
    inner_path = next((s for s in sides if isinstance(s, ast.Path)
                       and s.base == inner.alias), None)
    outer_path = next((s for s in sides if isinstance(s, ast.Path)
                       and s.base in alias_map), None)
    if inner_path is None or outer_path is None or len(inner_path.parts) != 1:
        raise EngineError.compile(
            "lookup subquery equality must relate an inner field to an outer path")
    return LookupJoin(child=child, dataset=inner.dataset, alias=inner.alias,
                      inner_field=inner_path.parts[0], outer_path=outer_path,
                      value_expr=q.projections[0].expr, inner_where=None,
                      out_key=sub.alias)


def _compile_body(query: ast.QueryAst, catalog, params: Sequence[str],
                  in_channel: bool, optimize: bool = True) -> PlanNode:
    alias_map = _alias_map(query, catalog)
    _validate_names(query, alias_map, params)

    where = query.where
    if in_channel and not optimize:
        # reference mode: full scans, the whole expanded predicate post-filters
        scans = {alias: DataScan(dataset=dataset, alias=alias, attach_prev=True)
                 for alias, dataset in alias_map.items()}
        return _assemble(query, catalog, params, where, scans, in_channel)
    if in_channel:
        pushed_lower: Dict[str, bool] = {}
        attach: Dict[str, bool] = {}
        if where is not None:
            conjuncts = _dnf(where)
            for alias in alias_map:
                has_prev = any(_is_prev_atom(a, alias)
                               for c in (conjuncts or []) for a in c)
                if conjuncts is not None and has_prev and \
                        all(any(_is_prev_atom(a, alias) for a in c) for c in conjuncts):
                    pushed_lower[alias] = True
            where = _remove_atoms(
                where, lambda a: any(_is_curr_atom(a, al) for al in alias_map)
                or any(_is_prev_atom(a, al) for al in alias_map if pushed_lower.get(al)))
        for alias in alias_map:
            remains = False
            if where is not None:
                remains = any(
                    isinstance(n, ast.Call) and
                    _active_fn_alias(n) == (PREV, alias)
                    for n in _walk(where))
            attach[alias] = remains
    else:
        pushed_lower = {}
        attach = {alias: False for alias in alias_map}

    scans: Dict[str, DataScan] = {}
    for alias, dataset in alias_map.items():
        desc = catalog.datasets[dataset]
        lower = TimeBound("prev") if pushed_lower.get(alias) else None
        upper = TimeBound("curr") if (in_channel and desc.is_active) else None
        scans[alias] = DataScan(dataset=dataset, alias=alias, lower=lower,
                                upper=upper, attach_prev=attach.get(alias, False))
    return _assemble(query, catalog, params, where, scans, in_channel)


def _assemble(query: ast.QueryAst, catalog, params: Sequence[str],
              where: Optional[ast.Expr], scans: Dict[str, DataScan],
              in_channel: bool) -> PlanNode:
    alias_map = {s.alias: s.dataset for s in query.sources}
    aliases = [s.alias for s in query.sources]
    if len(aliases) == 2:
        node: PlanNode = Join(left=scans[aliases[0]], right=scans[aliases[1]],
                              predicate=where)
    else:
        node = scans[aliases[0]]
        if where is not None:
            node = Select(child=node, predicate=where)

    for item in query.projections:
        if isinstance(item, ast.SelectSubquery):
            _validate_names(item.query, {item.query.sources[0].alias:
                                         item.query.sources[0].dataset},
                            params, outer_aliases=aliases)
            node = _compile_lookup(item, alias_map, params, catalog, node, in_channel)

    plain_items = [it for it in query.projections if isinstance(it, ast.SelectItem)]
    has_count = any(isinstance(it.expr, ast.CountStar) for it in plain_items)

    if has_count or query.group_by is not None:
        items: List[Tuple[str, str, Optional[ast.Expr]]] = []
        for it in plain_items:
            key = _projection_key(it)
            if isinstance(it.expr, ast.CountStar):
                items.append(("count", key, None))
            elif query.group_by is not None and it.expr == query.group_by:
                items.append(("group", key, None))
            elif not referenced_aliases(it.expr, aliases):
                items.append(("expr", key, it.expr))
            else:
                raise EngineError.compile(
                    "aggregate projections must be count(*), the group key, "
                    "or row-independent expressions")
        if any(isinstance(it, ast.SelectSubquery) for it in query.projections):
            raise EngineError.compile("lookup subqueries cannot mix with aggregates")
        return CountAggregate(child=node, group_by=query.group_by, items=tuple(items),
                              order_by_count_desc=query.order_by_count_desc,
                              limit=query.limit)

    proj_items = tuple((_projection_key(it), it.expr) for it in plain_items)
    return Project(child=node, items=proj_items, bare_value=query.select_value)


def subscription_dataset_name(channel: str) -> str:
    return f"{channel}Subscriptions"


def result_dataset_name(channel: str) -> str:
    return f"{channel}Results"


def compile_channel(clause: ast.CreateChannel, catalog,
                    optimize: bool = True) -> CompiledChannel:
    """Compile a channel definition into an executable, parameterized plan."""
    params = clause.params
    body = clause.body
    if clause.using is not None:
        fn_name, arity = clause.using
        fn = catalog.functions.get(fn_name)
        if fn is None:
            raise EngineError.compile(f"unknown function {fn_name!r} in USING")
        if len(fn.params) != arity:
            raise EngineError.compile(
                f"function {fn_name!r} takes {len(fn.params)} parameters, "
                f"USING declares {arity}")
        params = fn.params
        body = fn.body

    if clause.kind == "repetitive":
        for node in _walk(body.where) if body.where is not None else ():
            if isinstance(node, ast.Call) and node.func == "is_new":
                raise EngineError.compile(
                    "is_new requires a continuous channel")
        expanded = body
        alias_map = {s.alias: s.dataset for s in body.sources}
        _check_active_refs(body, alias_map, catalog)
    else:
        expanded = expand_active_functions(body, catalog)

    plan_child = _compile_body(expanded, catalog, params, in_channel=True,
                               optimize=optimize)
    delivery = clause.delivery or "lazy"
    sub_ds = subscription_dataset_name(clause.name)
    res_ds = result_dataset_name(clause.name) if delivery == "lazy" else None
    assembly = ResultAssembly(child=plan_child, channel=clause.name,
                              subscription_dataset=sub_ds, result_dataset=res_ds,
                              param_names=tuple(params))
    if optimize:
        assembly = choose_join_strategy(assembly, catalog)
    return CompiledChannel(name=clause.name, kind=clause.kind, period=clause.period,
                           delivery=delivery, plan=assembly,
                           param_names=tuple(params),
                           subscription_dataset=sub_ds, result_dataset=res_ds)


def compile_adhoc(query: ast.QueryAst, catalog, now_micros: int) -> PlanNode:
    """Compile a non-channel query; channel times become constants.

    The previous time becomes the epoch origin and the current time the
    cluster time sampled at query start, so is_new admits every stored
    record. In predicate position the current-time constant sits at the top
    of its microsecond (records stamped within it still count as stored);
    in projection position it reads as a plain datetime.
    """
    from .timestamps import SEQ_MAX, ActiveTimestamp as _ATS

    expanded = expand_active_functions(query, catalog)

    def substitute(expr: ast.Expr, in_pred: bool) -> ast.Expr:
        if isinstance(expr, ast.Call) and expr.func in (PREV, CURR):
            _active_fn_alias(expr)  # validates shape
            if expr.func == PREV:
                return ast.Literal(DateTime(0))
            if in_pred:
                return ast.Literal(_ATS(now_micros, SEQ_MAX))
            return ast.Literal(DateTime(now_micros))
        if isinstance(expr, ast.And):
            return ast.make_and(tuple(substitute(t, in_pred) for t in expr.terms))
        if isinstance(expr, ast.Or):
            return ast.make_or(tuple(substitute(t, in_pred) for t in expr.terms))
        if isinstance(expr, (ast.Cmp, ast.Arith)):
            return replace(expr, left=substitute(expr.left, in_pred),
                           right=substitute(expr.right, in_pred))
        return expr

    where = substitute(expanded.where, True) if expanded.where is not None else None
    projections = tuple(
        ast.SelectItem(expr=substitute(it.expr, False), alias=it.alias)
        if isinstance(it, ast.SelectItem) else it
        for it in expanded.projections)
    rewritten = replace(expanded, where=where, projections=projections)
    plan = _compile_body(rewritten, catalog, params=(), in_channel=False)
    return choose_join_strategy(plan, catalog)


# -- join strategy ---------------------------------------------------------------


def _scan_of(node: PlanNode) -> Optional[DataScan]:
    if isinstance(node, DataScan):
        return node
    if isinstance(node, Select):
        return _scan_of(node.child)
    return None


def _estimate(node: PlanNode, catalog) -> int:
    scan = _scan_of(node)
    if scan is None:
        return 1_000_000
    count = catalog.count(scan.dataset)
    if scan.lower is not None:
        # incremental window: expect a small fraction of the stored data
        return max(1, count // 100)
    return count


def _find_equi(pred: Optional[ast.Expr], left_aliases, right_aliases):
    if pred is None:
        return None
    terms = pred.terms if isinstance(pred, ast.And) else (pred,)
    for t in terms:
        if isinstance(t, ast.Cmp) and t.op == "=" and \
                isinstance(t.left, ast.Path) and isinstance(t.right, ast.Path):
            if t.left.base in left_aliases and t.right.base in right_aliases:
                return (t.left, t.right)
            if t.right.base in left_aliases and t.left.base in right_aliases:
                return (t.right, t.left)
    return None


def choose_join_strategy(plan: PlanNode, catalog) -> PlanNode:
    """Pick broadcast sides bottom-up from catalog record counts."""
    if isinstance(plan, Join):
        left = choose_join_strategy(plan.left, catalog)
        right = choose_join_strategy(plan.right, catalog)
        l_scan, r_scan = _scan_of(left), _scan_of(right)
        l_bcast = l_scan is not None and catalog.is_broadcast(l_scan.dataset)
        r_bcast = r_scan is not None and catalog.is_broadcast(r_scan.dataset)
        if l_bcast or r_bcast:
            side = "left" if l_bcast else "right"
        else:
            side = "left" if _estimate(left, catalog) <= _estimate(right, catalog) \
                else "right"
        l_aliases = {l_scan.alias} if l_scan else set()
        r_aliases = {r_scan.alias} if r_scan else set()
        equi = _find_equi(plan.predicate, l_aliases, r_aliases)
        strategy = "hash" if equi is not None else "broadcast-nested-loop"
        return replace(plan, left=left, right=right, broadcast=side,
                       strategy=strategy, equi=equi)
    if isinstance(plan, (Select, Project, CountAggregate, LookupJoin, ResultAssembly)):
        return replace(plan, child=choose_join_strategy(plan.child, catalog))
    return plan


# -- explain ---------------------------------------------------------------------


def explain(plan: PlanNode) -> str:
    """Stable text rendering of an operator tree."""
    lines: List[str] = []

    def bound_text(scan: DataScan) -> str:
        lo = scan.lower.describe() if scan.lower else "-inf"
        hi = scan.upper.describe() if scan.upper else "+inf"
        return f"window=({lo}, {hi})"

    def emit(node: PlanNode, depth: int) -> None:
        pad = "  " * depth
        if isinstance(node, ResultAssembly):
            results = node.result_dataset or "none(eager)"
            lines.append(f"{pad}ResultAssembly channel={node.channel} "
                         f"subscriptions={node.subscription_dataset} "
                         f"results={results} brokers=broadcast "
                         f"params=({', '.join(node.param_names)})")
            emit(node.child, depth + 1)
        elif isinstance(node, Project):
            keys = ", ".join(k for k, _ in node.items)
            lines.append(f"{pad}Project {keys}")
            emit(node.child, depth + 1)
        elif isinstance(node, CountAggregate):
            group = print_expr(node.group_by) if node.group_by else "<all>"
            extras = ""
            if node.order_by_count_desc:
                extras += " order=count desc"
            if node.limit is not None:
                extras += f" limit={node.limit}"
            lines.append(f"{pad}CountAggregate group_by={group}{extras}")
            emit(node.child, depth + 1)
        elif isinstance(node, LookupJoin):
            lines.append(f"{pad}LookupJoin {node.dataset} {node.alias} "
                         f"on {node.alias}.{node.inner_field} = "
                         f"{print_expr(node.outer_path)} as {node.out_key}")
            emit(node.child, depth + 1)
        elif isinstance(node, Join):
            pred = print_expr(node.predicate) if node.predicate is not None else "true"
            lines.append(f"{pad}Join strategy={node.strategy} "
                         f"broadcast={node.broadcast} pred=({pred})")
            emit(node.left, depth + 1)
            emit(node.right, depth + 1)
        elif isinstance(node, Select):
            lines.append(f"{pad}Select pred=({print_expr(node.predicate)})")
            emit(node.child, depth + 1)
        elif isinstance(node, DataScan):
            lines.append(f"{pad}DataScan {node.dataset} {node.alias} "
                         f"{bound_text(node)} "
                         f"attach_prev={'true' if node.attach_prev else 'false'}")
        else:  # pragma: no cover - exhaustive
            raise TypeError(f"unknown plan node {node!r}")

    emit(plan, 0)
    return "\n".join(lines)
