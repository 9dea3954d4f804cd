"""Synthetic workloads: the artificial queries, random query/program pairs
and query sets, and packs with a planted share of unreachable goals."""

from __future__ import annotations

import random

from . import syntax as S
from .exampledb import Example, ExampleDb
from .packs import build_pack
from .querygen import GenParams, generate_query

PREDS = ("a", "b", "c")
DOMAIN = (1, 2, 3, 4)


def artificial(p: GenParams) -> tuple[list, ExampleDb]:
    """One generated query against a single example holding a(_,_,_)."""
    prog = S.parse_program("a(_,_,_).")
    return [generate_query(p)], ExampleDb([Example("e0", prog)])


def _const(rng: random.Random):
    return S.Int(rng.choice(DOMAIN)) if rng.random() < 0.8 else S.Atom(rng.choice(("x", "y")))


def _mutate(rng: random.Random, node):
    """Rename predicates, plant constants and built-ins in a generated query."""
    if isinstance(node, S.Goal):
        inp, b, c = node.args
        r = rng.random()
        if r < 0.08:
            return S.Goal(rng.choice(("<", ">")), (inp, S.Int(rng.choice(DOMAIN))))
        if r < 0.12:
            return S.Goal("=", (c, inp))
        if r < 0.15:
            return S.Goal("\\=", (inp, _const(rng)))
        args = [inp, b, c]
        if rng.random() < 0.2:
            args[1] = _const(rng)
        if rng.random() < 0.05:
            args[1] = S.Struct("f", (_const(rng),))
        return S.Goal(rng.choice(PREDS), tuple(args))
    if isinstance(node, S.Conj):
        return S.conj([_mutate(rng, c) for c in node.items])
    return S.Disj(tuple(_mutate(rng, c) for c in node.items))


def random_query(rng: random.Random, max_g: int = 3, max_b: int = 3, max_d: int = 2):
    p = GenParams(rng.randint(1, max_g), rng.randint(1, max_b), rng.randint(0, max_d))
    return _mutate(rng, generate_query(p))


def random_program(rng: random.Random, density: float = 0.25, rules: bool = True) -> S.Program:
    """Partial fact bases for a/3, b/3, c/3 over a small domain, sometimes
    with a rule so that resolution through clause bodies is exercised."""
    prog = S.Program()
    vals = [S.Int(v) for v in DOMAIN] + [S.Atom("x")]
    for p in PREDS:
        for x in vals:
            for y in vals:
                if rng.random() < density / 2:
                    z = rng.choice(vals)
                    prog.add(S.Clause(S.Goal(p, (x, y, z))))
        if rng.random() < 0.2:
            prog.add(S.Clause(S.Goal(p, (S.Var("X"), S.Struct("f", (S.Var("Y"),)), S.Var("X")))))
    if rules and rng.random() < 0.3:
        body = S.parse_query("?- a(X,Y,Z), X < 3.")
        prog.add(S.Clause(S.Goal("c", (S.Var("X"), S.Var("Y"), S.Var("Z"))), body))
    return prog


def random_db(rng: random.Random, n: int, density: float = 0.25) -> ExampleDb:
    return ExampleDb([Example(f"e{i}", random_program(rng, density)) for i in range(n)])


def random_query_set(rng: random.Random, max_queries: int = 20, max_goals: int = 8) -> list:
    """Conjunctive queries sharing prefixes, as a refinement loop produces them."""
    base = [_chain_goal(rng, i) for i in range(max_goals)]
    out = []
    for _ in range(rng.randint(1, max_queries)):
        k = rng.randint(0, max_goals - 1)
        goals = base[:k]
        for i in range(k, rng.randint(k + 1, max_goals)):
            goals.append(_chain_goal(rng, i))
        out.append(S.conj(goals))
    return out


def _chain_goal(rng: random.Random, i: int) -> S.Goal:
    from .querygen import var_name
    inp = S.Var(var_name(2 * i))
    out = S.Var(var_name(2 * i + 2))
    if rng.random() < 0.1:
        return S.Goal("<", (inp, S.Int(rng.choice(DOMAIN))))
    mid = S.Var(var_name(2 * i + 1)) if rng.random() < 0.7 else _const(rng)
    return S.Goal(rng.choice(PREDS), (inp, mid, out))


def planted_pack(fraction: float, branches: int = 16, n_examples: int = 4):
    """A pack whose top-level branches each start with a head goal h(X,i)
    followed by a two-leaf nested pack of four goals.  Heads of dead
    branches have no facts, so their four body goals are never reached.

    With 16 branches of 5 goals, killing d branches leaves 4d of 80 goals
    unreachable, so fractions 0.25, 0.5 and 0.75 are exact (d = 5, 10, 15).
    """
    per = 5
    total = branches * per
    dead = round(fraction * total / (per - 1))
    if abs(dead * (per - 1) - fraction * total) > 1e-9 or dead > branches:
        raise ValueError(f"fraction {fraction} cannot be planted exactly")
    X = S.Var("X")
    queries = []
    for i in range(branches):
        head = S.Goal("h", (X, S.Int(i)))
        queries.append(S.conj([head, S.Goal("s", (X, S.Int(1))), S.Goal("s", (X, S.Int(2)))]))
        queries.append(S.conj([head, S.Goal("s", (X, S.Int(3))), S.Goal("s", (X, S.Int(4)))]))
    live = range(dead, branches)
    text = "".join(f"h(1,{i}).\n" for i in live) + "".join(f"s(1,{k}).\n" for k in (1, 2, 3, 4))
    db = ExampleDb([Example(f"e{j}", S.parse_program(text)) for j in range(n_examples)])
    return build_pack(queries), queries, db
