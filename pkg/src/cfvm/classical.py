"""Classical (put/call) compilation of queries, the baseline strategy.

Environment layout: slots 0 and 1 are control slots, permanent variables
take Y2, Y3, ...  The environment size printed by ``allocate`` counts the
control slots too, and is 0 when there are no permanent variables.

A variable is permanent in a conjunction when it occurs in two or more of
its children; each disjunction branch is analysed on its own (a variable
that only occurs inside branches is a separate variable in each branch),
and sibling branches reuse the same slot numbers.

Query variables are loaded from per-run answer cells, one per variable
name, which is how the machine reports bindings for compiled code.  The
answer index travels in the hidden second operand of bldtvar/putpvar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import syntax as S
from .code import (
    ALLOCATE, B_BUILTINS, BLDTVAR, CALL, DEALLEX, DEALLOCATE, INIT_PVAR, PROCEED, PUT_ATOM,
    PUT_INT, PUT_TERM, PUTPVAL, PUTPVAR, PUTTVAL, RETRYMEORELSE, TRUSTMEORELSEFAIL, TRYMEORELSE,
    CodeBlock, Emitter, Label, QueryInfo,
)
from .terms import HANDLE, IMM, LABEL, Arena, intern_term, sym

CONTROL_SLOTS = 2


class UnsupportedArgument(ValueError):
    pass


@dataclass
class VarClassification:
    """``scopes`` maps a conjunction's position (tuple path of child indices
    from the root) to {variable: slot} for the variables permanent there."""

    scopes: dict = field(default_factory=dict)
    env_size: int = 0

    @property
    def permanent(self) -> set:
        return {v for m in self.scopes.values() for v in m}

    def slot_of(self, path: tuple, name: str) -> int | None:
        """Slot of ``name`` as seen from the node at ``path``."""
        for i in range(len(path), -1, -1):
            m = self.scopes.get(path[:i])
            if m and name in m:
                return m[name]
        return None


def _vars(node) -> set:
    return set(S.term_vars(node))


def classify_variables(q) -> VarClassification:
    vc = VarClassification()
    top = [CONTROL_SLOTS - 1]

    def walk(node, path: tuple, base: int, outer: set) -> None:
        if isinstance(node, S.Conj):
            counts: dict[str, int] = {}
            for c in node.items:
                for v in _vars(c):
                    counts[v] = counts.get(v, 0) + 1
            here: dict[str, int] = {}
            for v in S.term_vars(node):
                if counts[v] >= 2 and v not in outer:
                    here[v] = base + len(here)
            if here:
                vc.scopes[path] = here
                top[0] = max(top[0], base + len(here) - 1)
            inner = outer | set(here)
            for i, c in enumerate(node.items):
                walk(c, path + (i,), base + len(here), inner)
        elif isinstance(node, S.Disj):
            for i, b in enumerate(node.items):
                walk(b, path + (i,), base, outer)

    walk(q, (), CONTROL_SLOTS, set())
    vc.env_size = top[0] + 1 if vc.scopes else 0
    return vc


class _Gen:
    def __init__(self, block: CodeBlock, vc: VarClassification, answer: dict):
        self.block = block
        self.arena = block.arena
        self.vc = vc
        self.answer = answer
        self.e = Emitter()
        self.goal_index = 0
        self.consts: dict = {}

    def const(self, t) -> int:
        """Pre-interned handle for an atomic or ground compound argument."""
        key = t
        h = self.consts.get(key)
        if h is None:
            if S.term_vars(t):
                raise UnsupportedArgument(f"non-ground compound argument {S.format_term(t)}")
            h = intern_term(self.arena, t)
            self.consts[key] = h
        return h

    def args(self, g: S.Goal, path: tuple, init: set) -> None:
        e = self.e
        regs: dict[str, int] = {}
        order = [i for i, a in enumerate(g.args) if isinstance(a, S.Var)]
        order += [i for i, a in enumerate(g.args) if not isinstance(a, S.Var)]
        for i in order:
            a = g.args[i]
            r = i + 1
            if isinstance(a, S.Var):
                y = self.vc.slot_of(path, a.name)
                if y is not None:
                    if a.name in init:
                        e.emit(PUTPVAL, (IMM, (y, r)))
                    else:
                        e.emit(PUTPVAR, (IMM, (y, r)), (IMM, self.answer[a.name]))
                        init.add(a.name)
                elif a.name in regs:
                    e.emit(PUTTVAL, (IMM, (regs[a.name], r)))
                else:
                    e.emit(BLDTVAR, (IMM, r), (IMM, self.answer[a.name]))
                    regs[a.name] = r
            elif isinstance(a, S.Atom):
                e.emit(PUT_ATOM, (IMM, r), (HANDLE, self.const(a)))
            elif isinstance(a, S.Int):
                e.emit(PUT_INT, (IMM, r), (HANDLE, self.const(a)))
            else:
                e.emit(PUT_TERM, (IMM, r), (HANDLE, self.const(a)))
        self.block.max_reg = max(self.block.max_reg, len(g.args))

    def goal(self, g: S.Goal, path: tuple, K: Label | None, init: set) -> None:
        e = self.e
        idx = self.goal_index
        self.goal_index += 1
        self.args(g, path, init)
        if g.arity == 2 and g.name in B_BUILTINS:
            e.emit(B_BUILTINS[g.name], (IMM, (1, 2)), (IMM, idx))
            if K is None:
                e.emit(DEALLOCATE)
                e.emit(PROCEED)
            else:
                e.cont(K)
        elif K is None:
            e.emit(DEALLEX, (IMM, (sym(g.name), g.arity)), (IMM, idx))
        else:
            e.emit(CALL, (IMM, (sym(g.name), g.arity)), (IMM, idx))
            e.cont(K)
        self.block.compiled[idx] = 1

    def node(self, n, path: tuple, K: Label | None, init: set) -> None:
        if isinstance(n, S.Goal):
            self.goal(n, path, K, init)
        elif isinstance(n, S.Conj):
            for i, c in enumerate(n.items):
                last = i == len(n.items) - 1
                J = K if last else Label()
                self.node(c, path + (i,), J, init)
                if not last:
                    self.e.bind(J)
        else:
            self.disj(n, path, K, init)

    def disj(self, n: S.Disj, path: tuple, K: Label | None, init: set) -> None:
        e = self.e
        # permanents of enclosing scopes first bound inside the disjunction
        # are initialised up front so every branch sees a valid slot
        for v in S.term_vars(n):
            y = self.vc.slot_of(path, v)
            if y is not None and v not in init and self._outer(path, v):
                e.emit(INIT_PVAR, (IMM, y), (IMM, self.answer[v]))
                init.add(v)
        m = len(n.items)
        labels = [Label() for _ in range(m - 1)]
        for i, b in enumerate(n.items):
            if i == 0:
                e.emit(TRYMEORELSE, (LABEL, labels[0]))
            else:
                e.bind(labels[i - 1])
                if i < m - 1:
                    e.emit(RETRYMEORELSE, (LABEL, labels[i]))
                else:
                    e.emit(TRUSTMEORELSEFAIL)
            self.node(b, path + (i,), K, set(init))

    def _outer(self, path: tuple, v: str) -> bool:
        """Is ``v`` permanent in a scope enclosing the disjunction at ``path``?"""
        for i in range(len(path), -1, -1):
            m = self.vc.scopes.get(path[:i])
            if m and v in m:
                return True
        return False


def compile_classical(arena: Arena, q) -> CodeBlock:
    goals = S.goals_of(q)
    names = S.term_vars(q)
    info = QueryInfo(None, goal_count=len(goals))
    block = CodeBlock(arena, "classical", info, answer_vars=list(names))
    vc = classify_variables(q)
    gen = _Gen(block, vc, {n: i for i, n in enumerate(names)})
    gen.e.emit(ALLOCATE, (IMM, vc.env_size))
    gen.node(q, (), None, set())
    block.entry, _ = gen.e.place(block)
    block.classification = vc
    return block
