import time

import numpy as np
import pytest

from k8ntext import query
from k8ntext.clustering import predictions_from_truth, reconstruct
from k8ntext.query import (
    And,
    Cmp,
    Exists,
    Not,
    Or,
    Regex,
    QuerySyntaxError,
    RegexError,
    UnknownField,
    eval_predicate,
    eval_query,
    node_count,
    parse_query,
)


def test_parse_and_of_comparisons():
    ast = parse_query('verb == "create" and objectRef.namespace == "default"')
    assert ast == And(
        Cmp("verb", "==", "create"),
        Cmp("objectRef.namespace", "==", "default"),
    )


def test_parse_chained_timestamp_range():
    ast = parse_query('"2025-01-01T00:00:00Z" <= stagetimestamp <= "2025-01-02T00:00:00Z"')
    assert ast == And(
        Cmp("stageTimestamp", ">=", "2025-01-01T00:00:00Z"),
        Cmp("stageTimestamp", "<=", "2025-01-02T00:00:00Z"),
    )


def test_parse_exists_alias():
    assert parse_query("exists(namespace)") == Exists("objectRef.namespace")


def test_parse_regexp_form():
    ast = parse_query('username == regexp(".*controller.*")')
    assert ast == Regex("user.username", ".*controller.*")


def test_parse_timing_experiment_shapes():
    q1 = parse_query('username == "u" or stagetimestamp >= "2025-01-01T00:00:00Z"')
    assert isinstance(q1, Or) and node_count(q1) == 2
    q2 = parse_query('(username == "u" and exists(namespace)) or '
                     '"2025-01-01T00:00:00Z" <= stagetimestamp <= "2025-01-02T00:00:00Z"')
    assert isinstance(q2, Or) and node_count(q2) == 4
    q3 = parse_query('(username == "u" and exists(namespace)) or '
                     '(username == regexp(".*controller.*") and '
                     '"2025-01-01T00:00:00Z" <= stagetimestamp <= "2025-01-02T00:00:00Z")')
    assert isinstance(q3, Or) and node_count(q3) == 5


def test_parse_not_precedence():
    ast = parse_query('not exists(namespace) and verb == "get"')
    assert ast == And(Not(Exists("objectRef.namespace")), Cmp("verb", "==", "get"))


def test_parse_or_precedence():
    ast = parse_query('verb == "a" and verb == "b" or verb == "c"')
    assert isinstance(ast, Or)
    assert isinstance(ast.items[0], And)


def test_parse_integer_literal():
    ast = parse_query("responseStatus.code >= 400")
    assert ast == Cmp("responseStatus.code", ">=", 400)


def test_syntax_error_has_position():
    with pytest.raises(QuerySyntaxError) as err:
        parse_query('verb ==')
    assert err.value.pos == 7
    with pytest.raises(QuerySyntaxError):
        parse_query('(verb == "a"')
    with pytest.raises(QuerySyntaxError):
        parse_query('verb == "a" extra')
    with pytest.raises(QuerySyntaxError):
        parse_query("")


def test_unknown_bare_field():
    with pytest.raises(UnknownField):
        parse_query('mystery == "x"')
    # dotted paths are open-world
    parse_query('objectRef.whatever == "x"')


def test_two_literals_rejected():
    with pytest.raises(QuerySyntaxError):
        parse_query('"a" == "b"')


# --- evaluation ---------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus(registry):
    from k8ntext.generate import generate_corpus

    store, truth, _ = generate_corpus("default", seed=13, registry=registry)
    contexts, _ = reconstruct(store, predictions_from_truth(store, truth), registry)
    return store, contexts


def test_tautology_matches_all(corpus):
    store, contexts = corpus
    assert len(eval_query(parse_query("exists(verb)"), contexts, store)) == len(contexts)


def test_contradiction_matches_none(corpus):
    store, contexts = corpus
    assert eval_query(parse_query("not exists(verb)"), contexts, store) == []


def test_regex_matches_against_full_scan(corpus):
    store, contexts = corpus
    ast = parse_query('username == regexp(".*controller.*")')
    got = eval_query(ast, contexts, store)
    want = [c for c in contexts if "controller" in store.get(c.trigger).user_username]
    assert got == want


def test_missing_field_is_false(corpus):
    store, contexts = corpus
    assert eval_query(parse_query('objectRef.nosuch == "x"'), contexts, store) == []
    # and notably NOT true under comparison negation semantics
    ast = parse_query('objectRef.nosuch != "x"')
    assert eval_query(ast, contexts, store) == []


def test_numeric_comparison(corpus):
    store, contexts = corpus
    created = eval_query(parse_query("responseStatus.code == 201"), contexts, store)
    for ctx in created:
        assert store.get(ctx.trigger).response_status_code == 201


def test_timestamp_comparison_chronological(corpus):
    store, contexts = corpus
    mid = sorted(store.get(c.trigger).stage_timestamp for c in contexts)[len(contexts) // 2]
    from k8ntext.events import format_rfc3339

    ast = parse_query(f'stagetimestamp < "{format_rfc3339(mid)}"')
    got = eval_query(ast, contexts, store)
    want = [c for c in contexts if store.get(c.trigger).stage_timestamp < mid]
    assert got == want


def test_de_morgan(corpus):
    store, contexts = corpus
    a = 'verb == "create"'
    b = "exists(namespace)"
    lhs = eval_query(parse_query(f"not ({a} and {b})"), contexts, store)
    rhs = eval_query(parse_query(f"not {a} or not {b}"), contexts, store)
    assert lhs == rhs


def test_eval_does_not_mutate(corpus):
    store, contexts = corpus
    before = [(c.context_id, frozenset(c.members)) for c in contexts]
    eval_query(parse_query('verb == "create"'), contexts, store)
    eval_query(parse_query('verb == "create"'), contexts, store)
    assert [(c.context_id, frozenset(c.members)) for c in contexts] == before


def test_bad_regex_raises_at_eval(corpus):
    store, contexts = corpus
    ast = parse_query('username == regexp("([unclosed")')
    with pytest.raises(RegexError):
        eval_query(ast, contexts, store)


# --- randomized oracle ------------------------------------------------------------


FIELDS = ["verb", "user.username", "objectRef.namespace", "objectRef.resource",
          "responseStatus.code", "stage"]
VALUES = ["create", "get", "alice", "system:kube-controller-manager", "default",
          "pods", "namespaces", "201", "200", "ResponseComplete"]


def random_ast(rng, depth=0):
    roll = rng.random()
    if depth >= 3 or roll < 0.45:
        field = str(rng.choice(FIELDS))
        kind = rng.random()
        if kind < 0.2:
            return Exists(field)
        if kind < 0.3:
            return Regex(field, ".*" + str(rng.choice(["a", "e", "ll", "sys"])) + ".*")
        op = str(rng.choice(["==", "!=", "<", "<=", ">", ">="]))
        return Cmp(field, op, str(rng.choice(VALUES)))
    if roll < 0.6:
        return Not(random_ast(rng, depth + 1))
    node = And if roll < 0.8 else Or
    return node(*(random_ast(rng, depth + 1) for _ in range(int(rng.integers(2, 4)))))


def naive_matches(ast, contexts, store):
    out = []
    for ctx in contexts:
        if eval_predicate(ast, store.get(ctx.trigger).flat):
            out.append(ctx)
    return out


def test_randomized_asts_match_oracle(corpus):
    store, contexts = corpus
    rng = np.random.default_rng(99)
    for _ in range(200):
        ast = random_ast(rng)
        assert eval_query(ast, contexts, store) == naive_matches(ast, contexts, store)


def test_latency_scales_at_most_linearly(corpus):
    store, contexts = corpus
    small = parse_query('username == "alice"')
    big = parse_query(
        'username == "alice" and verb == "create" and exists(namespace) '
        'and responseStatus.code >= 200 and stage == "ResponseComplete"'
    )

    def best_of(ast, repeats=7):
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for _ in range(50):
                eval_query(ast, contexts, store)
            times.append(time.perf_counter() - t0)
        return min(times)

    t_small, t_big = best_of(small), best_of(big)
    ratio = node_count(big) / node_count(small)
    assert t_big <= t_small * ratio * 3.0
