import random
from collections import Counter

import pytest

from cfvm import syntax as S
from cfvm.cfcomp import prepare_query
from cfvm.code import QueryInfo
from cfvm.exampledb import (
    Example, ExampleDb, LoadError, RunOptions, Strategy, StrategyMismatch, dump_examples,
    load_examples, run_strategy,
)
from cfvm.lazy import Granularity
from cfvm.machine import Machine
from cfvm.packs import build_pack
from cfvm.terms import Arena
from cfvm.workloads import planted_pack, random_db, random_query, random_query_set

SECTION2 = ["?- a, b, c, d.", "?- a, b, c, e.", "?- a, b, f, g."]


def clause_multiset(prog):
    return Counter(S.format_clause(c) for c in prog.all_clauses())


def test_directory_in_filename_order(tmp_path):
    for name, text in [("b.pl", "p(2)."), ("a.pl", "p(1)."), ("c.pl", "p(3). q."), ("x.txt", "")]:
        (tmp_path / name).write_text(text)
    db = load_examples(str(tmp_path))
    assert db.ids == ["a", "b", "c"]
    assert len(db.examples[2].program) == 2


def test_delimited_file(tmp_path):
    f = tmp_path / "ex.pl"
    f.write_text("begin(example,e1).\np(1).\nend(example,e1).\n"
                 "begin(example,e2).\np(2). p(3).\nend(example,e2).\n")
    db = load_examples(str(f))
    assert db.ids == ["e1", "e2"] and len(db.examples[1].program) == 2


@pytest.mark.parametrize("text", [
    "begin(example,e1). p(1).",
    "p(0). begin(example,e1). p(1). end(example,e1).",
    "begin(example,e1). end(example,e2).",
    "begin(example,e1). p(1 end(example,e1).",
])
def test_malformed_files(tmp_path, text):
    f = tmp_path / "bad.pl"
    f.write_text(text)
    with pytest.raises(LoadError):
        load_examples(str(f))


def test_duplicate_ids_rejected():
    with pytest.raises(LoadError):
        ExampleDb([Example("e", S.Program()), Example("e", S.Program())])


def test_background_clauses_come_after_example(tmp_path):
    (tmp_path / "e.pl").write_text("p(1).")
    bg = tmp_path / "bg.txt"
    bg.write_text("p(2). q(X) :- p(X).")
    db = load_examples(str(tmp_path), str(bg))
    view = db.view(0)
    assert [S.format_clause(c) for c in view.clauses(("p", 1))] == ["p(1).", "p(2)."]
    assert len(view.clauses(("q", 1))) == 1


def test_dump_load_roundtrip(tmp_path):
    rng = random.Random(4)
    db = random_db(rng, 8)
    f = tmp_path / "all.pl"
    f.write_text(dump_examples(db))
    back = load_examples(str(f))
    assert back.ids == db.ids
    for a, b in zip(db.examples, back.examples):
        assert clause_multiset(a.program) == clause_multiset(b.program)


def test_metacall_matrix_is_definitional():
    qs = [S.parse_query(q) for q in ("?- p(X), q(X).", "?- p(X), r(X).", "?- s.")]
    db = ExampleDb([Example("e1", S.parse_program("p(1). q(1).")),
                    Example("e2", S.parse_program("p(2). r(2). s."))])
    mat = run_strategy(qs, db, Strategy.META_CALL)
    want = []
    for q in qs:
        row = []
        for i in range(len(db)):
            ar = Arena()
            m = Machine(ar, db.view(i))
            h, c = prepare_query(ar, q)
            row.append(m.meta_call(h, QueryInfo.of_term(ar, h, c)).succeeded)
        want.append(row)
    assert mat.cells == want == [[True, False], [False, True], [False, True]]


def all_strategy_matrices(work, db, **kw):
    out = {}
    for st in Strategy:
        if st is Strategy.COMPILE_AND_RUN and not isinstance(work, list):
            continue
        grans = list(Granularity) if st is Strategy.LAZY_CONTROL_FLOW else [Granularity.PER_GOAL]
        for g in grans:
            out[(st, g)] = run_strategy(work, db, st, RunOptions(granularity=g, **kw))
    return out


def test_strategies_give_identical_matrices():
    rng = random.Random(9)
    qs = [random_query(rng) for _ in range(15)]
    db = random_db(rng, 6)
    mats = all_strategy_matrices(qs, db)
    cells = {k: m.cells for k, m in mats.items()}
    assert len({repr(c) for c in cells.values()}) == 1
    reached = {m.goals_reached for m in mats.values()}
    assert len(reached) == 1


def test_pack_matrices_agree_with_single_queries():
    rng = random.Random(12)
    qs = random_query_set(rng)
    db = random_db(rng, 10)
    single = run_strategy(qs, db, Strategy.META_CALL)
    for st in (Strategy.META_CALL, Strategy.CONTROL_FLOW, Strategy.LAZY_CONTROL_FLOW):
        assert run_strategy(build_pack(qs), db, st).cells == single.cells


def test_classical_rejects_packs():
    t = build_pack([S.parse_query(q) for q in SECTION2])
    with pytest.raises(StrategyMismatch):
        run_strategy(t, ExampleDb([Example("e", S.Program())]), Strategy.COMPILE_AND_RUN)


def test_dead_branch_heads_leave_code_uncompiled():
    tree, _, db = planted_pack(0.5)
    mat = run_strategy(tree, db, Strategy.LAZY_CONTROL_FLOW,
                       RunOptions(granularity=Granularity.PER_DISJUNCTION))
    assert mat.goals_compiled < mat.goals_total
    assert mat.comp_ms is None and mat.exec_ms is None


@pytest.mark.parametrize("workers", [2, 3])
def test_worker_count_does_not_change_results(workers):
    rng = random.Random(21)
    qs = [random_query(rng) for _ in range(10)]
    db = random_db(rng, 7)
    for st in (Strategy.CONTROL_FLOW, Strategy.LAZY_CONTROL_FLOW):
        one = run_strategy(qs, db, st)
        many = run_strategy(qs, db, st, RunOptions(workers=workers))
        assert one.cells == many.cells
        assert one.goals_reached == many.goals_reached


def test_copy_and_collect_do_not_change_results():
    rng = random.Random(33)
    qs = [random_query(rng) for _ in range(10)]
    db = random_db(rng, 5)
    for st in Strategy:
        base = run_strategy(qs, db, st)
        assert run_strategy(qs, db, st, RunOptions(copy=False)).cells == base.cells
        col = run_strategy(qs, db, st, RunOptions(collect=True, validate=True))
        assert col.cells == base.cells and col.validation_problems == []
        assert col.collections == len(db)


def test_invalid_options():
    with pytest.raises(ValueError):
        run_strategy([S.parse_query("?- a.")], ExampleDb([]), Strategy.CONTROL_FLOW,
                     RunOptions(repetitions=0))


def test_strategy_parse():
    assert Strategy.parse("meta-call") is Strategy.META_CALL
    assert Strategy.parse("lazy") is Strategy.LAZY_CONTROL_FLOW
    with pytest.raises(ValueError):
        Strategy.parse("jit")
