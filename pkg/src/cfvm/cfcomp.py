"""Control-flow compiler: control instructions plus calls through term handles.

The compiler walks the query term on the arena once.  Goals are never
looked into except to spot the four inlined built-ins; their arguments stay
where they are on the heap.
"""

from __future__ import annotations

from .code import (
    ALLOCATE, CF_BUILTINS, CF_CALL, CF_CALL_BY_ARITY, CF_DEALLEX, DEALLOCATE,
    PACK_REPORT, PACK_RETRY, PACK_TRUST, PACK_TRY, PROCEED, RETRYMEORELSE,
    TRUSTMEORELSEFAIL, TRYMEORELSE, CodeBlock, Emitter, Label, QueryInfo,
)
from .packs import PackTable, PackTree, pack_ast
from .terms import (
    ATOM, F_COMMA, F_LEAF, F_PACK, F_SEMI, HANDLE, IMM, INT, LABEL, STRUCT,
    SYMBOLS, Arena, copy_term_contiguous, intern_term,
)

CF_ENV_SIZE = 2  # continuation + choice context; no variable slots


class NotCallable(TypeError):
    pass


# -- reading query terms --------------------------------------------------------

GOAL, CONJ, DISJ, PACK, LEAF = "goal", "conj", "disj", "pack", "leaf"


def node_kind(arena: Arena, a: int) -> str:
    a = arena.deref(a)
    t = arena.tags[a]
    if t == STRUCT:
        f = arena.vals[a]
        if f == F_COMMA:
            return CONJ
        if f == F_SEMI:
            return DISJ
        if f == F_PACK:
            return PACK
        if f == F_LEAF:
            return LEAF
        return GOAL
    if t == ATOM:
        return GOAL
    raise NotCallable(f"term at {a} is not callable")


def spine(arena: Arena, a: int, functor) -> list[tuple[int, int]]:
    """Items of a right-nested ','/';' chain as (item, rest) address pairs;
    ``rest`` is the subterm starting at that item."""
    out = []
    a = arena.deref(a)
    tags, vals = arena.tags, arena.vals
    while tags[a] == STRUCT and vals[a] == functor:
        out.append((arena.deref(a + 1), a))
        a = arena.deref(a + 2)
    out.append((a, a))
    return out


def pack_parts(arena: Arena, a: int) -> tuple[int, list[int]]:
    a = arena.deref(a)
    n = arena.vals[arena.deref(a + 1)]
    return n, [b for b, _ in spine(arena, a + 2, F_SEMI)]


def functor_of(arena: Arena, a: int) -> tuple[str, int]:
    a = arena.deref(a)
    if arena.tags[a] == ATOM:
        return SYMBOLS.name(arena.vals[a]), 0
    s, n = arena.vals[a]
    return SYMBOLS.name(s), n


def is_builtin(arena: Arena, a: int) -> bool:
    name, n = functor_of(arena, a)
    return n == 2 and name in CF_BUILTINS


# -- emission -----------------------------------------------------------------------


class CfEmitter:
    """Shared by the eager and lazy compilers.  ``K`` is the continuation
    label, or None when the code is in last-call position."""

    def __init__(self, block: CodeBlock, e: Emitter):
        self.block = block
        self.arena = block.arena
        self.e = e
        self.visits = 0

    def goal(self, g: int, K: Label | None) -> None:
        ar, e = self.arena, self.e
        self.visits += 1
        name, n = functor_of(ar, g)
        g = ar.deref(g)
        if n == 2 and name in CF_BUILTINS:
            # the op's code depends only on the functor, never on bindings
            e.emit(CF_BUILTINS[name], (HANDLE, g + 1), (HANDLE, g + 2))
            if K is None:
                e.emit(DEALLOCATE)
                e.emit(PROCEED)
            else:
                e.cont(K)
        elif K is None:
            e.emit(CF_DEALLEX, (HANDLE, g))
        else:
            op = CF_CALL_BY_ARITY[n] if self.block.specialize and n < 4 else CF_CALL
            e.emit(op, (HANDLE, g))
            e.cont(K)
        self.block.mark_compiled(g)

    def leaf(self, a: int) -> None:
        self.visits += 1
        a = self.arena.deref(a)
        self.e.emit(PACK_REPORT, (IMM, self.arena.vals[self.arena.deref(a + 1)]))

    def disj(self, branches: list, K: Label | None, branch) -> None:
        """try/retry/trust chain; ``branch(addr, K)`` emits one branch."""
        e = self.e
        n = len(branches)
        labels = [Label() for _ in range(n - 1)]
        for i, b in enumerate(branches):
            if i == 0:
                e.emit(TRYMEORELSE, (LABEL, labels[0]))
            else:
                e.bind(labels[i - 1])
                if i < n - 1:
                    e.emit(RETRYMEORELSE, (LABEL, labels[i]))
                else:
                    e.emit(TRUSTMEORELSEFAIL)
            branch(b, K)

    def pack(self, a: int, branch) -> None:
        node, children = pack_parts(self.arena, a)
        e = self.e
        n = len(children)
        labels = [Label() for _ in range(n - 1)]
        for i, c in enumerate(children):
            if i == 0:
                e.emit(PACK_TRY, (IMM, (node, 0)), (LABEL, labels[0]))
            else:
                e.bind(labels[i - 1])
                if i < n - 1:
                    e.emit(PACK_RETRY, (IMM, (node, i)), (LABEL, labels[i]))
                else:
                    e.emit(PACK_TRUST, (IMM, (node, i)))
            branch(c, None)

    def node(self, a: int, K: Label | None) -> None:
        """Eager compilation of a whole query (sub)term."""
        kind = node_kind(self.arena, a)
        self.visits += 1
        if kind == GOAL:
            self.goal(a, K)
        elif kind == LEAF:
            self.leaf(a)
        elif kind == PACK:
            self.pack(a, self.node)
        elif kind == DISJ:
            self.disj([b for b, _ in spine(self.arena, a, F_SEMI)], K, self.node)
        else:
            items = spine(self.arena, a, F_COMMA)
            for item, _ in items[:-1]:
                J = Label()
                self.node(item, J)
                self.e.bind(J)
            self.node(items[-1][0], K)


def prepare_query(arena: Arena, ast, copy: bool = True) -> tuple[int, dict]:
    """Put a query AST on the arena; returns (handle, name -> var cell)."""
    cells: dict = {}
    h = intern_term(arena, ast, cells)
    if copy:
        vm: dict = {}
        h = copy_term_contiguous(arena, h, vm)
        cells = {n: vm[a] for n, a in cells.items()}
    return h, cells


def compile_cf(arena: Arena, q: int, var_cells: dict | None = None, specialize: bool = True,
               kind: str = "cf", pack: PackTable | None = None) -> CodeBlock:
    block = CodeBlock(arena, kind, QueryInfo.of_term(arena, q, var_cells), specialize=specialize,
                      pack=pack)
    e = Emitter()
    e.emit(ALLOCATE, (IMM, CF_ENV_SIZE))
    c = CfEmitter(block, e)
    c.node(q, None)
    block.entry, _ = e.place(block)
    block.compile_visits = c.visits
    return block


def compile_cf_pack(arena: Arena, pack: PackTree, specialize: bool = True) -> CodeBlock:
    h, cells = prepare_query(arena, pack_ast(pack), copy=False)
    return compile_cf(arena, h, cells, specialize, kind="cf_pack", pack=PackTable.from_tree(pack))
