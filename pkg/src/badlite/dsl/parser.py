"""Recursive-descent parser for the statement language.

Keywords are case-insensitive and contextual (identifiers may reuse keyword
spellings where unambiguous); identifiers are case-sensitive. `--` starts a
line comment. All errors are ParseError with a (line, column) location.
"""

from __future__ import annotations

import re
from typing import List, Optional, Tuple

from ..errors import EngineError
from ..values import DateTime, Duration, Value
from . import ast

_TOKEN_RE = re.compile(r"""
    (?P<WS>\s+)
  | (?P<COMMENT>--[^\n]*)
  | (?P<NUMBER>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<IDENT>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<STRING>"(?:[^"\\\n]|\\.)*")
  | (?P<PUNCT><=|>=|!=|[(){},;@.:=<>+\-*])
""", re.VERBOSE)


class Token:
    __slots__ = ("kind", "text", "line", "col")

    def __init__(self, kind: str, text: str, line: int, col: int) -> None:
        self.kind = kind
        self.text = text
        self.line = line
        self.col = col

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Token({self.kind}, {self.text!r}, {self.line}:{self.col})"


def tokenize(text: str) -> List[Token]:
    tokens: List[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise EngineError.parse(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        chunk = m.group()
        if kind not in ("WS", "COMMENT"):
            tokens.append(Token(kind if kind != "PUNCT" else chunk, chunk, line, col))
        newlines = chunk.count("\n")
        if newlines:
            line += newlines
            col = len(chunk) - chunk.rfind("\n")
        else:
            col += len(chunk)
        pos = m.end()
    tokens.append(Token("EOF", "", line, col))
    return tokens


def _unquote(text: str) -> str:
    body = text[1:-1]
    return re.sub(r"\\(.)", lambda m: m.group(1), body)


class Parser:
    def __init__(self, text: str) -> None:
        self.tokens = tokenize(text)
        self.pos = 0

    # -- token plumbing ----------------------------------------------------

    def peek(self, offset: int = 0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.peek()
        self.pos += 1
        return tok

    def error(self, message: str, tok: Optional[Token] = None) -> EngineError:
        tok = tok or self.peek()
        return EngineError.parse(message, tok.line, tok.col)

    def at_kw(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text.upper() in words

    def take_kw(self, *words: str) -> bool:
        if self.at_kw(*words):
            self.next()
            return True
        return False

    def expect_kw(self, word: str) -> Token:
        if not self.at_kw(word):
            raise self.error(f"expected {word}, found {self.peek().text!r}")
        return self.next()

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            what = {"IDENT": "identifier", "STRING": "string literal",
                    "NUMBER": "number"}.get(kind, repr(kind))
            raise self.error(f"expected {what}, found {tok.text!r}")
        return self.next()

    def ident(self) -> str:
        return self.expect("IDENT").text

    def string(self) -> str:
        return _unquote(self.expect("STRING").text)

    # -- statements ----------------------------------------------------------

    def parse_statements(self) -> List[ast.Statement]:
        out: List[ast.Statement] = []
        while self.peek().kind != "EOF":
            out.append(self.parse_statement())
            if self.peek().kind == ";":
                self.next()
            elif self.peek().kind != "EOF":
                raise self.error(f"expected ';', found {self.peek().text!r}")
        return out

    def parse_statement(self) -> ast.Statement:
        tok = self.peek()
        loc = (tok.line, tok.col)
        if self.at_kw("EXPLAIN"):
            self.next()
            return ast.Explain(target=self.parse_statement(), loc=loc)
        if self.at_kw("CREATE"):
            return self.parse_create(loc)
        if self.at_kw("CONNECT"):
            self.next()
            self.expect_kw("FEED")
            feed = self.ident()
            self.expect_kw("TO")
            self.expect_kw("DATASET")
            dataset = self.ident()
            transforms: List[str] = []
            if self.take_kw("APPLY"):
                self.expect_kw("FUNCTION")
                transforms.append(self.ident())
                while self.peek().kind == ",":
                    self.next()
                    transforms.append(self.ident())
            return ast.ConnectFeed(feed=feed, dataset=dataset,
                                   transforms=tuple(transforms), loc=loc)
        if self.at_kw("START"):
            self.next()
            self.expect_kw("FEED")
            return ast.StartFeed(feed=self.ident(), loc=loc)
        if self.at_kw("DROP"):
            self.next()
            self.expect_kw("CHANNEL")
            return ast.DropChannel(name=self.ident(), loc=loc)
        if self.at_kw("SUBSCRIBE"):
            self.next()
            self.expect_kw("TO")
            channel = self.ident()
            self.expect("(")
            args: List[Value] = []
            if self.peek().kind != ")":
                args.append(self.scalar_literal())
                while self.peek().kind == ",":
                    self.next()
                    args.append(self.scalar_literal())
            self.expect(")")
            self.expect_kw("ON")
            return ast.Subscribe(channel=channel, args=tuple(args),
                                 broker=self.ident(), loc=loc)
        if self.at_kw("SELECT", "FROM"):
            return ast.AdHocQuery(query=self.parse_query(), loc=loc)
        raise self.error(f"expected a statement, found {tok.text!r}")

    def parse_create(self, loc) -> ast.Statement:
        self.expect_kw("CREATE")
        if self.at_kw("TYPE"):
            return self.parse_create_type(loc)
        if self.at_kw("INDEX"):
            return self.parse_create_index(loc)
        if self.at_kw("FEED"):
            return self.parse_create_feed(loc)
        if self.at_kw("BROKER"):
            self.next()
            name = self.ident()
            self.expect_kw("AT")
            return ast.CreateBroker(name=name, endpoint=self.string(), loc=loc)
        if self.at_kw("FUNCTION"):
            return self.parse_create_function(loc)
        if self.at_kw("REPETITIVE", "CONTINUOUS"):
            return self.parse_create_channel(loc)
        is_active = self.take_kw("ACTIVE")
        if self.at_kw("DATASET"):
            self.next()
            name = self.ident()
            self.expect("(")
            type_name = self.ident()
            self.expect(")")
            self.expect_kw("PRIMARY")
            self.expect_kw("KEY")
            return ast.CreateDataset(name=name, type_name=type_name,
                                     primary_key_field=self.ident(),
                                     is_active=is_active, loc=loc)
        raise self.error(f"cannot CREATE {self.peek().text!r}")

    def parse_create_type(self, loc) -> ast.CreateType:
        self.expect_kw("TYPE")
        name = self.ident()
        self.expect_kw("AS")
        is_open = self.take_kw("OPEN")
        self.expect("{")
        fields: List[Tuple[str, str]] = []
        while self.peek().kind != "}":
            fname = self.ident()
            self.expect(":")
            fields.append((fname, self.ident()))
            if self.peek().kind == ",":
                self.next()
            else:
                break
        self.expect("}")
        return ast.CreateType(name=name, is_open=is_open, fields=tuple(fields), loc=loc)

    def parse_create_index(self, loc) -> ast.CreateIndex:
        self.expect_kw("INDEX")
        name = self.ident()
        self.expect_kw("ON")
        dataset = self.ident()
        self.expect("(")
        field_name = self.ident()
        self.expect(")")
        self.expect_kw("TYPE")
        return ast.CreateIndex(name=name, dataset=dataset, field_name=field_name,
                               method=self.ident().upper(), loc=loc)

    def parse_create_feed(self, loc) -> ast.CreateFeed:
        self.expect_kw("FEED")
        name = self.ident()
        self.expect_kw("WITH")
        self.expect("{")
        config: List[Tuple[str, Value]] = []
        while self.peek().kind != "}":
            key = self.string()
            self.expect(":")
            config.append((key, self.scalar_literal()))
            if self.peek().kind == ",":
                self.next()
            else:
                break
        self.expect("}")
        return ast.CreateFeed(name=name, config=tuple(config), loc=loc)

    def parse_create_function(self, loc) -> ast.CreateFunction:
        self.expect_kw("FUNCTION")
        name = self.ident()
        self.expect("(")
        params: List[str] = []
        if self.peek().kind != ")":
            params.append(self.ident())
            while self.peek().kind == ",":
                self.next()
                params.append(self.ident())
        self.expect(")")
        self.expect("{")
        body = self.parse_query()
        self.expect("}")
        return ast.CreateFunction(name=name, params=tuple(params), body=body, loc=loc)

    def parse_create_channel(self, loc) -> ast.CreateChannel:
        kind = self.next().text.lower()
        self.expect_kw("CHANNEL")
        name = self.ident()
        params: List[str] = []
        if self.peek().kind == "(":
            self.next()
            if self.peek().kind != ")":
                params.append(self.ident())
                while self.peek().kind == ",":
                    self.next()
                    params.append(self.ident())
            self.expect(")")
        using = None
        if self.take_kw("USING"):
            fn = self.ident()
            self.expect("@")
            arity_tok = self.expect("NUMBER")
            if "." in arity_tok.text:
                raise self.error("arity must be an integer", arity_tok)
            using = (fn, int(arity_tok.text))
        self.expect_kw("PERIOD")
        period_tok = self.peek()
        period = self.duration_literal()
        if period.micros <= 0:
            raise EngineError.parse("channel period must be positive",
                                    period_tok.line, period_tok.col)
        delivery = None
        if self.take_kw("DELIVERY"):
            if self.take_kw("EAGER"):
                delivery = "eager"
            elif self.take_kw("LAZY"):
                delivery = "lazy"
            else:
                raise self.error("expected EAGER or LAZY")
        body = None
        if self.peek().kind == "{":
            self.next()
            body = self.parse_query()
            self.expect("}")
        if kind == "continuous":
            if using is not None or body is None:
                raise EngineError.parse(
                    "continuous channels take an inline body, not USING", loc[0], loc[1])
        else:
            if (using is None) == (body is None):
                raise EngineError.parse(
                    "repetitive channels take either USING or an inline body",
                    loc[0], loc[1])
        return ast.CreateChannel(kind=kind, name=name, params=tuple(params),
                                 period=period, body=body, using=using,
                                 delivery=delivery, loc=loc)

    # -- literals ------------------------------------------------------------

    def scalar_literal(self) -> Value:
        tok = self.peek()
        if tok.kind == "STRING":
            return self.string()
        if tok.kind == "NUMBER":
            return self.number()
        if tok.kind == "-" and self.peek(1).kind == "NUMBER":
            self.next()
            return -self.number()
        if self.take_kw("TRUE"):
            return True
        if self.take_kw("FALSE"):
            return False
        if self.take_kw("NULL"):
            return None
        raise self.error(f"expected a literal, found {tok.text!r}")

    def number(self) -> Value:
        tok = self.expect("NUMBER")
        if "." in tok.text or "e" in tok.text or "E" in tok.text:
            return float(tok.text)
        return int(tok.text)

    def duration_literal(self) -> Duration:
        tok = self.peek()
        if not self.take_kw("DURATION", "DAY_TIME_DURATION"):
            raise self.error("expected a duration(...) literal")
        self.expect("(")
        text_tok = self.peek()
        text = self.string()
        self.expect(")")
        try:
            return Duration.parse(text)
        except ValueError as e:
            raise EngineError.parse(str(e), text_tok.line, text_tok.col)

    # -- queries -------------------------------------------------------------

    def parse_query(self) -> ast.QueryAst:
        if self.at_kw("FROM"):
            sources = self.parse_sources()
            where = self.parse_expr() if self.take_kw("WHERE") else None
            group_by = self.parse_group_by()
            self.expect_kw("SELECT")
            select_value, projections = self.parse_projections()
        else:
            self.expect_kw("SELECT")
            select_value, projections = self.parse_projections()
            sources = self.parse_sources() if self.at_kw("FROM") else ()
            where = self.parse_expr() if self.take_kw("WHERE") else None
            group_by = self.parse_group_by()
        order_by_count_desc = False
        if self.take_kw("ORDER"):
            self.expect_kw("BY")
            expr = self.parse_expr()
            if not isinstance(expr, ast.CountStar):
                raise self.error("only ORDER BY count(*) DESC is supported")
            self.expect_kw("DESC")
            order_by_count_desc = True
        limit = None
        if self.take_kw("LIMIT"):
            limit_val = self.number()
            if not isinstance(limit_val, int) or limit_val < 0:
                raise self.error("LIMIT takes a non-negative integer")
            limit = limit_val
        return ast.QueryAst(projections=projections, sources=sources, where=where,
                            select_value=select_value, group_by=group_by,
                            order_by_count_desc=order_by_count_desc, limit=limit)

    def parse_group_by(self) -> Optional[ast.Path]:
        if not self.take_kw("GROUP"):
            return None
        self.expect_kw("BY")
        expr = self.parse_term()
        if not isinstance(expr, ast.Path):
            raise self.error("GROUP BY takes a field path")
        return expr

    def parse_sources(self) -> Tuple[ast.SourceRef, ...]:
        self.expect_kw("FROM")
        sources = [self.parse_source()]
        while self.peek().kind == ",":
            self.next()
            sources.append(self.parse_source())
        return tuple(sources)

    def parse_source(self) -> ast.SourceRef:
        dataset = self.ident()
        if self.take_kw("AS"):
            alias = self.ident()
        elif self.peek().kind == "IDENT" and not self.at_kw(
                "WHERE", "SELECT", "GROUP", "ORDER", "LIMIT", "FROM"):
            alias = self.ident()
        else:
            alias = dataset
        return ast.SourceRef(dataset=dataset, alias=alias)

    def parse_projections(self) -> Tuple[bool, Tuple[ast.Projection, ...]]:
        if self.take_kw("VALUE"):
            return True, (ast.SelectItem(expr=self.parse_additive(), alias=None),)
        items: List[ast.Projection] = [self.parse_projection()]
        while self.peek().kind == ",":
            self.next()
            items.append(self.parse_projection())
        return False, tuple(items)

    def parse_projection(self) -> ast.Projection:
        if self.peek().kind == "(" and self.peek(1).kind == "IDENT" \
                and self.peek(1).text.upper() == "SELECT":
            self.next()
            query = self.parse_query()
            self.expect(")")
            self.expect_kw("AS")
            return ast.SelectSubquery(query=query, alias=self.ident())
        expr = self.parse_additive()
        alias = None
        if self.take_kw("AS"):
            alias = self.ident()
        elif self.peek().kind == "IDENT" and not self.at_kw(
                "FROM", "WHERE", "GROUP", "ORDER", "LIMIT", "SELECT"):
            alias = self.ident()
        return ast.SelectItem(expr=expr, alias=alias)

    # -- expressions ---------------------------------------------------------

    _CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")

    def parse_expr(self) -> ast.Expr:
        terms = [self.parse_and()]
        while self.take_kw("OR"):
            terms.append(self.parse_and())
        return ast.make_or(terms)

    def parse_and(self) -> ast.Expr:
        terms = [self.parse_comparison()]
        while self.take_kw("AND"):
            terms.append(self.parse_comparison())
        return ast.make_and(terms)

    def parse_comparison(self) -> ast.Expr:
        left = self.parse_additive()
        if self.peek().kind in self._CMP_OPS:
            op = self.next().kind
            right = self.parse_additive()
            return ast.Cmp(op=op, left=left, right=right)
        return left

    def parse_additive(self) -> ast.Expr:
        expr = self.parse_term()
        while self.peek().kind in ("+", "-"):
            op = self.next().kind
            expr = ast.Arith(op=op, left=expr, right=self.parse_term())
        return expr

    def parse_term(self) -> ast.Expr:
        tok = self.peek()
        if tok.kind == "(":
            self.next()
            inner = self.parse_expr()
            self.expect(")")
            return inner
        if tok.kind in ("STRING", "NUMBER") or self.at_kw("TRUE", "FALSE", "NULL"):
            return ast.Literal(self.scalar_literal())
        if tok.kind == "-" and self.peek(1).kind == "NUMBER":
            return ast.Literal(self.scalar_literal())
        if self.at_kw("DURATION", "DAY_TIME_DURATION") and self.peek(1).kind == "(":
            return ast.Literal(self.duration_literal())
        if self.at_kw("DATETIME") and self.peek(1).kind == "(":
            self.next()
            self.expect("(")
            text_tok = self.peek()
            text = self.string()
            self.expect(")")
            try:
                return ast.Literal(DateTime.parse(text))
            except ValueError as e:
                raise EngineError.parse(str(e), text_tok.line, text_tok.col)
        if tok.kind == "IDENT":
            name = self.next().text
            if self.peek().kind == "(":
                return self.parse_call(name, tok)
            if self.peek().kind == ".":
                parts = []
                while self.peek().kind == ".":
                    self.next()
                    parts.append(self.ident())
                return ast.Path(base=name, parts=tuple(parts))
            return ast.Name(name=name)
        raise self.error(f"expected an expression, found {tok.text!r}")

    def parse_call(self, name: str, tok: Token) -> ast.Expr:
        self.expect("(")
        if name.lower() == "count":
            star = self.peek()
            if star.kind == "*" or (star.kind == "NUMBER" and star.text == "1"):
                self.next()
                self.expect(")")
                return ast.CountStar()
            raise self.error("count takes * or 1")
        args: List[ast.Expr] = []
        if self.peek().kind != ")":
            args.append(self.parse_additive())
            while self.peek().kind == ",":
                self.next()
                args.append(self.parse_additive())
        self.expect(")")
        return ast.Call(func=name, args=tuple(args))


def parse(text: str) -> List[ast.Statement]:
    """Parse statement text into a list of statement ASTs."""
    return Parser(text).parse_statements()


def parse_one(text: str) -> ast.Statement:
    statements = parse(text)
    if len(statements) != 1:
        raise EngineError.parse(f"expected exactly one statement, got {len(statements)}", 1, 1)
    return statements[0]
