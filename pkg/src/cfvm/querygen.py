"""Artificial benchmark queries: chains of a/3 goals with nested disjunctions."""

from __future__ import annotations

import gc
import itertools
import string
from dataclasses import dataclass

from . import syntax as S


@dataclass(frozen=True)
class GenParams:
    G: int  # goals per branch
    B: int  # branching factor
    D: int  # disjunction nesting depth

    def __post_init__(self):
        if self.G < 1 or self.B < 1 or self.D < 0:
            raise ValueError(f"invalid generator parameters {self}")

    @property
    def T(self) -> int:
        return total_goals(self)


def total_goals(p: GenParams) -> int:
    return p.G * sum(p.B ** n for n in range(p.D + 1))


def var_name(i: int) -> str:
    """0 -> A, 25 -> Z, 26 -> AA, 27 -> AB, ..."""
    letters = string.ascii_uppercase
    out = ""
    i += 1
    while i:
        i, r = divmod(i - 1, 26)
        out = letters[r] + out
    return out


def var_names():
    """A, B, ..., Z, AA, AB, ... without end."""
    for n in itertools.count(1):
        yield from map("".join, itertools.product(string.ascii_uppercase, repeat=n))


def generate_query(p: GenParams, pred: str = "a"):
    """Build the query AST.

    Each goal is pred(In, New1, New2) and the next goal takes New2 as its
    input; every disjunction branch starts from the output of the goals
    before it.  Variables are named in depth-first order.
    """
    new = map(S.Var, var_names()).__next__
    Goal = S.Goal
    steps = range(p.G)

    # iterative over an explicit stack would obscure the naming order;
    # depth is small (D <= ~8 in practice) so recursion is fine
    def level(inp: S.Var, depth: int):
        items = []
        cur = inp
        for _ in steps:
            b = new()
            c = new()
            items.append(Goal(pred, (cur, b, c)))
            cur = c
        if depth > 0:
            if p.B == 1:
                items.append(level(cur, depth - 1))
            else:
                items.append(S.disj([level(cur, depth - 1) for _ in range(p.B)]))
        return S.conj(items)

    # the AST is acyclic; pausing the cycle collector avoids repeated full
    # scans while hundreds of thousands of nodes are allocated
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        return level(new(), p.D)
    finally:
        if was_enabled:
            gc.enable()
