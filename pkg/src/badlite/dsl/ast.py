"""AST node definitions for the statement language.

Nodes compare structurally; source locations are carried on statements but
excluded from equality so parse -> print -> parse fixpoints hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

from ..values import Duration, Value

Loc = Tuple[int, int]


def _loc_field():
    return field(default=None, compare=False, repr=False)


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    value: Value


@dataclass(frozen=True)
class Name:
    """A bare identifier: a source alias or a channel/function parameter."""

    name: str


@dataclass(frozen=True)
class Path:
    base: str
    parts: Tuple[str, ...]


@dataclass(frozen=True)
class Call:
    func: str
    args: Tuple["Expr", ...]


@dataclass(frozen=True)
class CountStar:
    pass


@dataclass(frozen=True)
class Arith:
    op: str  # "+" or "-"
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Cmp:
    op: str  # = != < <= > >=
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class And:
    terms: Tuple["Expr", ...]


@dataclass(frozen=True)
class Or:
    terms: Tuple["Expr", ...]


Expr = Union[Literal, Name, Path, Call, CountStar, Arith, Cmp, And, Or]


def make_and(terms) -> Expr:
    terms = tuple(terms)
    return terms[0] if len(terms) == 1 else And(terms)


def make_or(terms) -> Expr:
    terms = tuple(terms)
    return terms[0] if len(terms) == 1 else Or(terms)


# -- queries -----------------------------------------------------------------


@dataclass(frozen=True)
class SourceRef:
    dataset: str
    alias: str


@dataclass(frozen=True)
class SelectItem:
    expr: Expr
    alias: Optional[str] = None


@dataclass(frozen=True)
class SelectSubquery:
    """A single lookup subquery projection: (SELECT VALUE s FROM ...) AS x."""

    query: "QueryAst"
    alias: str


Projection = Union[SelectItem, SelectSubquery]


@dataclass(frozen=True)
class QueryAst:
    projections: Tuple[Projection, ...]
    sources: Tuple[SourceRef, ...]
    where: Optional[Expr] = None
    select_value: bool = False
    group_by: Optional[Path] = None
    order_by_count_desc: bool = False
    limit: Optional[int] = None


# -- statements ----------------------------------------------------------------


@dataclass(frozen=True)
class CreateType:
    name: str
    is_open: bool
    fields: Tuple[Tuple[str, str], ...]
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class CreateDataset:
    name: str
    type_name: str
    primary_key_field: str
    is_active: bool
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class CreateIndex:
    name: str
    dataset: str
    field_name: str
    method: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class CreateFeed:
    name: str
    config: Tuple[Tuple[str, Value], ...]
    loc: Optional[Loc] = _loc_field()

    def config_dict(self) -> dict:
        return dict(self.config)


@dataclass(frozen=True)
class ConnectFeed:
    feed: str
    dataset: str
    transforms: Tuple[str, ...] = ()
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class StartFeed:
    feed: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class CreateBroker:
    name: str
    endpoint: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class CreateFunction:
    name: str
    params: Tuple[str, ...]
    body: QueryAst
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class CreateChannel:
    kind: str  # "repetitive" | "continuous"
    name: str
    params: Tuple[str, ...]
    period: Duration
    body: Optional[QueryAst] = None
    using: Optional[Tuple[str, int]] = None  # (function name, arity)
    delivery: Optional[str] = None  # "eager" | "lazy" | None (default lazy)
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class DropChannel:
    name: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Subscribe:
    channel: str
    args: Tuple[Value, ...]
    broker: str
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class AdHocQuery:
    query: QueryAst
    loc: Optional[Loc] = _loc_field()


@dataclass(frozen=True)
class Explain:
    target: "Statement"
    loc: Optional[Loc] = _loc_field()


Statement = Union[CreateType, CreateDataset, CreateIndex, CreateFeed, ConnectFeed,
                  StartFeed, CreateBroker, CreateFunction, CreateChannel, DropChannel,
                  Subscribe, AdHocQuery, Explain]
