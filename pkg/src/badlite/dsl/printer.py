"""Canonical pretty-printer; its output reparses to an equal AST."""

from __future__ import annotations

import json
from typing import List

from ..values import DateTime, Duration, Value
from . import ast


def _literal(value: Value) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, Duration):
        return f'duration("{value.iso()}")'
    if isinstance(value, DateTime):
        return f'datetime("{value.iso()}")'
    return repr(value)


def print_expr(expr: ast.Expr) -> str:
    if isinstance(expr, ast.Literal):
        return _literal(expr.value)
    if isinstance(expr, ast.Name):
        return expr.name
    if isinstance(expr, ast.Path):
        return ".".join((expr.base,) + expr.parts)
    if isinstance(expr, ast.CountStar):
        return "count(*)"
    if isinstance(expr, ast.Call):
        return f"{expr.func}({', '.join(print_expr(a) for a in expr.args)})"
    if isinstance(expr, ast.Arith):
        left = print_expr(expr.left)
        right = print_expr(expr.right)
        if isinstance(expr.right, ast.Arith):
            right = f"({right})"
        return f"{left} {expr.op} {right}"
    if isinstance(expr, ast.Cmp):
        return f"{print_expr(expr.left)} {expr.op} {print_expr(expr.right)}"
    if isinstance(expr, ast.And):
        parts = [f"({print_expr(t)})" if isinstance(t, (ast.Or, ast.And)) else print_expr(t)
                 for t in expr.terms]
        return " AND ".join(parts)
    if isinstance(expr, ast.Or):
        parts = [f"({print_expr(t)})" if isinstance(t, ast.Or) else print_expr(t)
                 for t in expr.terms]
        return " OR ".join(parts)
    raise TypeError(f"unprintable expression {expr!r}")


def print_query(q: ast.QueryAst, sep: str = " ") -> str:
    lines: List[str] = []
    if q.select_value:
        proj = "VALUE " + print_expr(q.projections[0].expr)
    else:
        parts = []
        for item in q.projections:
            if isinstance(item, ast.SelectSubquery):
                parts.append(f"({print_query(item.query)}) AS {item.alias}")
            else:
                text = print_expr(item.expr)
                parts.append(f"{text} AS {item.alias}" if item.alias else text)
        proj = ", ".join(parts)
    lines.append(f"SELECT {proj}")
    if q.sources:
        srcs = ", ".join(s.dataset if s.alias == s.dataset else f"{s.dataset} {s.alias}"
                         for s in q.sources)
        lines.append(f"FROM {srcs}")
    if q.where is not None:
        lines.append(f"WHERE {print_expr(q.where)}")
    if q.group_by is not None:
        lines.append(f"GROUP BY {print_expr(q.group_by)}")
    if q.order_by_count_desc:
        lines.append("ORDER BY count(*) DESC")
    if q.limit is not None:
        lines.append(f"LIMIT {q.limit}")
    return sep.join(lines)


def print_statement(stmt: ast.Statement) -> str:
    if isinstance(stmt, ast.CreateType):
        fields = ", ".join(f"{n}: {t}" for n, t in stmt.fields)
        openness = "OPEN " if stmt.is_open else ""
        return f"CREATE TYPE {stmt.name} AS {openness}{{ {fields} }};"
    if isinstance(stmt, ast.CreateDataset):
        active = "ACTIVE " if stmt.is_active else ""
        return (f"CREATE {active}DATASET {stmt.name}({stmt.type_name}) "
                f"PRIMARY KEY {stmt.primary_key_field};")
    if isinstance(stmt, ast.CreateIndex):
        return (f"CREATE INDEX {stmt.name} ON {stmt.dataset}({stmt.field_name}) "
                f"TYPE {stmt.method};")
    if isinstance(stmt, ast.CreateFeed):
        entries = ", ".join(f'"{k}" : {_literal(v)}' for k, v in stmt.config)
        return f"CREATE FEED {stmt.name} WITH {{ {entries} }};"
    if isinstance(stmt, ast.ConnectFeed):
        apply = f" APPLY FUNCTION {', '.join(stmt.transforms)}" if stmt.transforms else ""
        return f"CONNECT FEED {stmt.feed} TO DATASET {stmt.dataset}{apply};"
    if isinstance(stmt, ast.StartFeed):
        return f"START FEED {stmt.feed};"
    if isinstance(stmt, ast.CreateBroker):
        return f'CREATE BROKER {stmt.name} AT "{stmt.endpoint}";'
    if isinstance(stmt, ast.CreateFunction):
        body = print_query(stmt.body, sep="\n  ")
        return (f"CREATE FUNCTION {stmt.name}({', '.join(stmt.params)}) {{\n"
                f"  {body}\n}};")
    if isinstance(stmt, ast.CreateChannel):
        head = f"CREATE {stmt.kind.upper()} CHANNEL {stmt.name}"
        if stmt.using is None:
            head += f"({', '.join(stmt.params)})"
        else:
            head += f" USING {stmt.using[0]}@{stmt.using[1]}"
        head += f' PERIOD duration("{stmt.period.iso()}")'
        if stmt.delivery is not None:
            head += f" DELIVERY {stmt.delivery.upper()}"
        if stmt.body is not None:
            body = print_query(stmt.body, sep="\n  ")
            return f"{head} {{\n  {body}\n}};"
        return head + ";"
    if isinstance(stmt, ast.DropChannel):
        return f"DROP CHANNEL {stmt.name};"
    if isinstance(stmt, ast.Subscribe):
        args = ", ".join(_literal(a) for a in stmt.args)
        return f"SUBSCRIBE TO {stmt.channel}({args}) ON {stmt.broker};"
    if isinstance(stmt, ast.AdHocQuery):
        return print_query(stmt.query) + ";"
    if isinstance(stmt, ast.Explain):
        return "EXPLAIN " + print_statement(stmt.target)
    raise TypeError(f"unprintable statement {stmt!r}")


def pretty_print(statements) -> str:
    """Canonical text for one statement or a list of statements."""
    if not isinstance(statements, (list, tuple)):
        statements = [statements]
    return "\n".join(print_statement(s) for s in statements)
