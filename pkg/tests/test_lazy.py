import random

import pytest
from hypothesis import given, settings

from cfvm import syntax as S
from cfvm.cfcomp import compile_cf, compile_cf_pack, prepare_query
from cfvm.code import disassemble, normalize
from cfvm.harness import GOLDEN_CF, GOLDEN_QUERY, LAZY_LISTINGS, _subsequence, lazy_listings
from cfvm.lazy import NESTED_DISJ, Granularity, compile_lazy_entry, compile_lazy_pack_entry
from cfvm.machine import Machine
from cfvm.packs import build_pack
from cfvm.querygen import GenParams, generate_query
from cfvm.terms import Arena
from cfvm.workloads import random_query_set

from conftest import bodies

ALL_SUCCEED = S.parse_program(
    " ".join(f"{p}{a}." for p in "pqr" for a in ("", "(_)", "(_,_)", "(_,_,_)")))


def entry(q, g=Granularity.PER_GOAL):
    ar = Arena()
    h, cells = prepare_query(ar, S.parse_query(q))
    return disassemble(compile_lazy_entry(ar, h, g, cells))


def test_entry_listings():
    assert entry("?- a(X,Y), b(Y,Z).") == ["allocate 2", "lazy_compile &(a(X,Y),b(Y,Z))"]
    assert entry(GOLDEN_QUERY) == [
        "allocate 2", "lazy_compile &(a(X,Y),(b(Y,Z);c(Y,Z),d(Z,U);e(a,Y)))"]
    assert entry("?- g.") == ["allocate 2", "lazy_compile &g"]


def test_golden_expansion_steps():
    snaps = lazy_listings(GOLDEN_QUERY)
    # every documented listing appears, in order; compiling d(Z,U) after
    # c(Y,Z) is one extra step the documented sequence folds together
    assert _subsequence(LAZY_LISTINGS[GOLDEN_QUERY], snaps)
    assert len(snaps) == len(LAZY_LISTINGS[GOLDEN_QUERY]) + 1
    assert snaps[-1] == GOLDEN_CF


def test_conjunction_expands_in_two_steps():
    assert lazy_listings("?- a(X,Y), b(Y,Z).") == LAZY_LISTINGS["?- a(X,Y), b(Y,Z)."]


@pytest.mark.parametrize("g", [Granularity.PER_CONJUNCTION, Granularity.PER_DISJUNCTION])
def test_coarse_granularity_on_conjunction(g):
    snaps = lazy_listings("?- a(X,Y), b(Y,Z), c(Z,U).", g)
    assert len(snaps) == 2
    assert snaps[1].splitlines() == [
        "allocate 2", "cf_call &a(X,Y)", "cf_call &b(Y,Z)", "cf_deallex &c(Z,U)"]


def test_per_disjunction_first_step_compiles_all_branches():
    snaps = lazy_listings(GOLDEN_QUERY, Granularity.PER_DISJUNCTION)
    assert snaps[1] == GOLDEN_CF


def test_granularity_parse():
    assert Granularity.parse("per-goal") is Granularity.PER_GOAL
    assert Granularity.parse("PER_DISJUNCTION") is Granularity.PER_DISJUNCTION
    with pytest.raises(ValueError):
        Granularity.parse("per-clause")


LAZY_NAMES = {"lazy_compile", "lazy_trymeorelse", "lazy_retrymeorelse"}

SECTION2 = ["?- a, b, c, d.", "?- a, b, c, e.", "?- a, b, f, g."]


def pack_steps(queries, program="a. b. c. d. e. f. g."):
    ar = Arena()
    t = build_pack([S.parse_query(q) for q in queries])
    b = compile_lazy_pack_entry(ar, t)
    m = Machine(ar, S.parse_program(program))
    snaps = []
    m.on_expand = lambda mm, bl, kind: snaps.append(disassemble(bl))
    hits = m.run_pack(b)
    return ar, t, b, snaps, hits


def test_pack_first_expansion():
    _, _, _, snaps, hits = pack_steps(SECTION2)
    assert hits == [True, True, True]
    first = snaps[0]
    assert first[:4] == ["allocate 2", "cf_call &a", "cf_call &b", "pack_try N0 L1"]
    # branch heads compiled, nested pack left as a stub
    assert "cf_call &c" in first and "cf_call &f" in first and "cf_call &g" in first
    assert sum(l.startswith("lazy_compile") for l in first) == 1
    assert "cf_call &d" not in first


def test_single_leaf_pack_one_expansion():
    _, _, b, snaps, hits = pack_steps(["?- a, b."])
    assert hits == [True] and len(snaps) == 1
    assert snaps[0] == ["allocate 2", "cf_call &a", "cf_call &b", "pack_report q0"]


def no_builtins(q):
    # a failing built-in would leave later code unreached
    return S.conj([S.Goal("a", (g.args[0], S.Int(0), g.args[0])) if g.name == "<" else g
                   for g in S.goals_of(q)])


def test_lazy_pack_converges_to_cf_pack():
    for seed in range(200):
        qs = [no_builtins(q) for q in random_query_set(random.Random(seed))]
        ar = Arena()
        t = build_pack(qs)
        m = Machine(ar, S.parse_program("a(_,_,_). b(_,_,_). c(_,_,_)."))
        lazy = compile_lazy_pack_entry(ar, t)
        assert all(m.run_pack(lazy))
        cf = compile_cf_pack(ar, t)
        assert normalize(lazy, render_terms=True) == normalize(cf, render_terms=True)


def full_run(q, g):
    ar = Arena()
    m = Machine(ar, ALL_SUCCEED)
    h, cells = prepare_query(ar, q)
    ref = compile_cf(ar, h, cells)
    b = compile_lazy_entry(ar, h, g, cells)
    m.run_code(b, all_solutions=True)
    return ref, b


def n_disj(n):
    if isinstance(n, S.Goal):
        return 0
    return isinstance(n, S.Disj) + sum(n_disj(c) for c in n.items)


def goals_in_disj(n, inside=False):
    if isinstance(n, S.Goal):
        return int(inside)
    return sum(goals_in_disj(c, inside or isinstance(n, S.Disj)) for c in n.items)


@given(bodies())
@settings(max_examples=300, deadline=None)
def test_convergence_and_jump_bounds(q):
    for g in Granularity:
        ref, b = full_run(q, g)
        assert normalize(b) == normalize(ref)
        assert not set(b.opcodes()) & LAZY_NAMES
        stitched = len(b.stitches)
        if g is Granularity.PER_GOAL:
            assert stitched <= goals_in_disj(q)
        elif g is Granularity.PER_CONJUNCTION:
            assert stitched <= n_disj(q)
        else:
            assert all(origin == NESTED_DISJ for _, origin in b.stitches)


@given(bodies())
@settings(max_examples=200, deadline=None)
def test_each_lazy_instruction_overwritten_once(q):
    for g in Granularity:
        _, b = full_run(q, g)
        assert len(set(b.overwrites)) == len(b.overwrites) == b.stubs_emitted


def test_untaken_branches_stay_uncompiled():
    ar = Arena()
    m = Machine(ar, S.parse_program("a(1,2). b(2,3)."))
    h, cells = prepare_query(ar, S.parse_query(GOLDEN_QUERY))
    b = compile_lazy_entry(ar, h, Granularity.PER_GOAL, cells)
    assert m.run_code(b).succeeded
    assert b.goals_compiled == 2 and b.goals_reached == 2
    assert set(b.opcodes()) & LAZY_NAMES


def test_generated_queries_converge():
    rng = random.Random(2)
    prog = S.parse_program("a(_,_,_).")
    for _ in range(100):
        q = generate_query(GenParams(rng.randint(1, 3), rng.randint(1, 3), rng.randint(0, 3)))
        ar = Arena()
        m = Machine(ar, prog)
        h, cells = prepare_query(ar, q)
        ref = normalize(compile_cf(ar, h, cells))
        for g in Granularity:
            b = compile_lazy_entry(ar, h, g, cells)
            m.run_code(b, all_solutions=True)
            assert normalize(b) == ref
            assert b.goals_compiled == b.query.goal_count
