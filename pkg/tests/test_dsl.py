import random

import pytest

from badlite.dsl import ast, parse, parse_one, pretty_print
from badlite.errors import EngineError, ErrorKind
from badlite.values import Duration

import corpus


@pytest.mark.parametrize("name", sorted(corpus.CORPUS))
def test_corpus_statement_parses(name):
    statements = parse(corpus.CORPUS[name])
    assert statements


@pytest.mark.parametrize("name", sorted(corpus.CORPUS))
def test_corpus_round_trips(name):
    statements = parse(corpus.CORPUS[name])
    printed = pretty_print(statements)
    assert parse(printed) == statements


def test_new_nearby_channel_shape():
    stmt = parse_one(corpus.NEW_NEARBY_CHANNEL)
    assert isinstance(stmt, ast.CreateChannel)
    assert stmt.kind == "continuous"
    assert stmt.name == "CQNewNearbyHatefulTweets"
    assert stmt.params == ("oid",)
    assert stmt.period == Duration.parse("PT10S")
    q = stmt.body
    assert [s.dataset for s in q.sources] == ["OfficerLocations", "Tweets"]
    assert [s.alias for s in q.sources] == ["o", "t"]
    assert isinstance(q.where, ast.And)
    assert ast.Call(func="is_new", args=(ast.Name("t"),)) in q.where.terms
    dist = q.where.terms[0]
    assert dist == ast.Cmp(op="<", left=ast.Call(
        func="spatial_distance",
        args=(ast.Path("t", ("location",)), ast.Path("o", ("location",)))),
        right=ast.Literal(5))


def test_subscribe_shape():
    stmt = parse_one(corpus.SUBSCRIBE_STMT)
    assert stmt == ast.Subscribe(channel="RecentNearbyHatefulTweetCountChannel",
                                 args=("0907",), broker="BROKER_A")


def test_using_channel_shape():
    stmt = parse_one(corpus.RECENT_COUNT_CHANNEL)
    assert stmt.using == ("RecentNearbyHatefulTweetsCount", 1)
    assert stmt.body is None
    assert stmt.period == Duration.parse("PT10M")


def test_from_first_query_accepted():
    stmt = parse_one(corpus.RECENT_COUNT_FUNCTION)
    assert isinstance(stmt, ast.CreateFunction)
    assert stmt.params == ("oid",)
    q = stmt.body
    assert q.projections[0].alias == "HatefulTweetsNum"
    assert isinstance(q.projections[0].expr, ast.CountStar)


def test_lookup_subquery_nesting_preserved():
    stmt = parse_one(corpus.WITH_SCHOOLS_CHANNEL)
    sub = stmt.body.projections[1]
    assert isinstance(sub, ast.SelectSubquery)
    assert sub.alias == "nearby_schools"
    assert sub.query.select_value
    assert sub.query.sources[0].dataset == "Schools"
    printed = pretty_print(stmt)
    assert parse(printed) == [stmt]


def test_non_positive_period_rejected():
    with pytest.raises(EngineError) as err:
        parse('CREATE CONTINUOUS CHANNEL X() PERIOD duration("PT0S") '
              "{ SELECT t FROM Tweets t };")
    assert err.value.kind is ErrorKind.PARSE
    assert "period" in err.value.message


def test_parse_error_carries_line_and_column():
    with pytest.raises(EngineError) as err:
        parse("CREATE DATASET Tweets(Tweet)\n  PRIMARY KY tid;")
    assert err.value.kind is ErrorKind.PARSE
    assert err.value.location == (2, 11)


def test_line_comments_ignored():
    text = """-- sample setup
CREATE DATASET Tweets(Tweet) PRIMARY KEY tid; -- trailing note
-- done
"""
    statements = parse(text)
    assert len(statements) == 1
    assert statements[0].name == "Tweets"


def test_keywords_case_insensitive_identifiers_not():
    a = parse("create dataset Tweets(Tweet) primary key tid;")
    b = parse("CREATE DATASET Tweets(Tweet) PRIMARY KEY tid;")
    assert a == b
    c = parse("CREATE DATASET tweets(Tweet) PRIMARY KEY tid;")
    assert c != b


def test_empty_statement_list_prints_empty():
    assert pretty_print([]) == ""
    assert parse("") == []


def test_explain_wraps_statement():
    stmt = parse_one("EXPLAIN SELECT t FROM Tweets t;")
    assert isinstance(stmt, ast.Explain)
    assert isinstance(stmt.target, ast.AdHocQuery)


def test_group_by_order_limit():
    stmt = parse_one("SELECT t.area_code AS area, count(*) AS n FROM Tweets t "
                     "GROUP BY t.area_code ORDER BY count(*) DESC LIMIT 10;")
    q = stmt.query
    assert q.group_by == ast.Path("t", ("area_code",))
    assert q.order_by_count_desc
    assert q.limit == 10


def test_delivery_clause():
    stmt = parse_one('CREATE CONTINUOUS CHANNEL C(x) PERIOD duration("PT5S") '
                     "DELIVERY EAGER { SELECT t FROM Tweets t WHERE is_new(t) };")
    assert stmt.delivery == "eager"


# -- grammar-driven round-trip property ---------------------------------------

_IDENTS = ["Tweets", "Officers", "Schools", "alpha", "beta", "gamma", "delta"]
_FIELDS = ["area_code", "location", "flag", "score", "name2"]


def _rand_literal(rng):
    choice = rng.randrange(6)
    if choice == 0:
        return ast.Literal(rng.randint(-1000, 1000))
    if choice == 1:
        return ast.Literal(round(rng.uniform(-100, 100), 3))
    if choice == 2:
        return ast.Literal(rng.choice(["x", 'quo"te', "back\\slash", "plain words"]))
    if choice == 3:
        return ast.Literal(rng.random() < 0.5)
    if choice == 4:
        return ast.Literal(None)
    return ast.Literal(Duration(rng.randint(1, 10 ** 9)))


def _rand_value_expr(rng, aliases, depth=0):
    choice = rng.randrange(5 if depth < 2 else 4)
    if choice == 0:
        return _rand_literal(rng)
    if choice == 1:
        return ast.Path(rng.choice(aliases), tuple(
            rng.choice(_FIELDS) for _ in range(rng.randint(1, 2))))
    if choice == 2:
        return ast.Name(rng.choice(["p0", "p1"]))
    if choice == 3:
        return ast.Call("current_datetime", ())
    return ast.Arith(rng.choice("+-"), _rand_value_expr(rng, aliases, depth + 1),
                     _rand_value_expr(rng, aliases, depth + 1))


def _rand_pred(rng, aliases, depth=0):
    choice = rng.randrange(6 if depth < 2 else 3)
    if choice == 0:
        return ast.Cmp(rng.choice(["=", "!=", "<", "<=", ">", ">="]),
                       _rand_value_expr(rng, aliases), _rand_value_expr(rng, aliases))
    if choice == 1:
        return ast.Call("is_new", (ast.Name(rng.choice(aliases)),))
    if choice == 2:
        return ast.Cmp("<", ast.Call("spatial_distance", (
            ast.Path(aliases[0], ("location",)), ast.Path(aliases[-1], ("location",)))),
            ast.Literal(5))
    if choice == 3:
        return ast.And(tuple(_rand_pred(rng, aliases, depth + 1)
                             for _ in range(rng.randint(2, 3))))
    if choice == 4:
        return ast.Or(tuple(_rand_pred(rng, aliases, depth + 1)
                            for _ in range(rng.randint(2, 3))))
    return _rand_pred(rng, aliases, depth + 1)


def _rand_query(rng):
    n_sources = rng.randint(1, 2)
    names = rng.sample(_IDENTS, n_sources)
    aliases = [n.lower()[0] + str(i) for i, n in enumerate(names)]
    sources = tuple(ast.SourceRef(n, a) for n, a in zip(names, aliases))
    projections = tuple(
        ast.SelectItem(ast.Name(a)) for a in aliases[:rng.randint(1, n_sources)])
    where = _rand_pred(rng, aliases) if rng.random() < 0.9 else None
    return ast.QueryAst(projections=projections, sources=sources, where=where)


def _rand_statement(rng):
    choice = rng.randrange(5)
    if choice == 0:
        return ast.CreateDataset(rng.choice(_IDENTS), "T", rng.choice(_FIELDS),
                                 is_active=rng.random() < 0.5)
    if choice == 1:
        return ast.CreateChannel(
            kind=rng.choice(["repetitive", "continuous"]) if False else "continuous",
            name=rng.choice(_IDENTS), params=("p0", "p1")[:rng.randint(0, 2)],
            period=Duration(rng.randint(1, 10 ** 9)), body=_rand_query(rng))
    if choice == 2:
        return ast.Subscribe(rng.choice(_IDENTS),
                             tuple(l.value for l in [_rand_literal(rng)]
                                   if not isinstance(l.value, Duration)) or ("x",),
                             broker="B1")
    if choice == 3:
        return ast.CreateBroker("B1", "http://localhost:9999/api")
    return ast.AdHocQuery(_rand_query(rng))


def test_parse_print_round_trip_property():
    rng = random.Random(123)
    for _ in range(250):
        stmt = _rand_statement(rng)
        printed = pretty_print(stmt)
        reparsed = parse(printed)
        assert reparsed == [stmt], printed
