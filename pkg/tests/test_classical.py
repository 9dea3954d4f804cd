import itertools
import random

import pytest
from hypothesis import given, settings

from cfvm import syntax as S
from cfvm.classical import UnsupportedArgument, classify_variables, compile_classical
from cfvm.code import QueryInfo, disassemble
from cfvm.cfcomp import prepare_query
from cfvm.harness import GOLDEN_CLASSICAL, GOLDEN_QUERY
from cfvm.machine import Machine
from cfvm.querygen import GenParams, generate_query
from cfvm.terms import Arena
from cfvm.workloads import random_program, random_query

from conftest import bodies


def test_golden_right_column():
    b = compile_classical(Arena(), S.parse_query(GOLDEN_QUERY))
    assert "\n".join(disassemble(b)) == GOLDEN_CLASSICAL


def test_golden_environment():
    vc = classify_variables(S.parse_query(GOLDEN_QUERY))
    assert vc.env_size == 4
    assert vc.permanent == {"Y", "Z"}
    # Y lives at the top level, Z only inside the second branch
    assert vc.scopes[()] == {"Y": 2}
    assert vc.slot_of((1, 1), "Z") == 3


def test_single_goal():
    assert disassemble(compile_classical(Arena(), S.parse_query("?- a."))) == [
        "allocate 0", "deallex a/0"]
    assert classify_variables(S.parse_query("?- a(X,Y).")).permanent == set()


def test_constants_after_variables():
    lines = disassemble(compile_classical(Arena(), S.parse_query("?- p(1,X,f(a)).")))
    assert lines == ["allocate 0", "bldtvar A2", "put_int A1 1", "put_term A3 f(a)", "deallex p/3"]


def test_builtins_use_registers():
    lines = disassemble(compile_classical(Arena(), S.parse_query("?- a(X,Y), X < Y.")))
    assert "b_smaller A1 A2" in lines
    assert lines[-2:] == ["deallocate", "proceed"]


def test_nonground_compound_argument_rejected():
    with pytest.raises(UnsupportedArgument):
        compile_classical(Arena(), S.parse_query("?- p(f(X))."))


def paths(node):
    """Every left-to-right sequence of goals one execution can visit."""
    if isinstance(node, S.Goal):
        return [[node]]
    if isinstance(node, S.Conj):
        out = [[]]
        for c in node.items:
            out = [a + b for a, b in itertools.product(out, paths(c))]
        return out
    return [p for b in node.items for p in paths(b)]


def brute_permanent(q):
    perm = set()
    for p in paths(q):
        counts = {}
        for g in p:
            for v in set(S.term_vars(g)):
                counts[v] = counts.get(v, 0) + 1
        perm |= {v for v, n in counts.items() if n >= 2}
    return perm


@given(bodies())
@settings(max_examples=300)
def test_permanent_variables_match_liveness(q):
    assert classify_variables(q).permanent == brute_permanent(q)


def test_generated_queries_liveness():
    rng = random.Random(11)
    for _ in range(100):
        q = generate_query(GenParams(rng.randint(1, 3), rng.randint(1, 3), rng.randint(0, 2)))
        vc = classify_variables(q)
        assert vc.permanent == brute_permanent(q)
        assert vc.env_size == 0 or vc.env_size == 2 + max(
            len(m) + min(m.values()) - 2 for m in vc.scopes.values())


def test_matches_meta_call():
    rng = random.Random(5)
    for _ in range(500):
        q, prog = random_query(rng), random_program(rng)
        ar = Arena()
        m = Machine(ar, prog)
        h, cells = prepare_query(ar, q)
        want = m.meta_call(h, QueryInfo.of_term(ar, h, cells)).outcome()
        assert m.run_code(compile_classical(ar, q)).outcome() == want
