"""Lazy control-flow compilation.

Code starts as ``allocate 2; lazy_compile &Query``.  Executing a
lazy_compile compiles one unit of its term over the stub and leaves new
stubs for what is left.  A disjunction becomes lazy_trymeorelse carrying
the remaining branches; backtracking into its choice point compiles the
next branch at the end of the code and patches the stub into a plain
trymeorelse/retrymeorelse.

Each stub's second operand is the continuation label, or EMPTY when the
stub is in last-call position.
"""

from __future__ import annotations

import enum
import logging

from .cfcomp import (
    CF_ENV_SIZE, CONJ, DISJ, GOAL, LEAF, PACK, CfEmitter, node_kind, prepare_query, spine,
)
from .code import (
    ALLOCATE, LAZY_COMPILE, LAZY_RETRYMEORELSE, LAZY_TRYMEORELSE, RETRYMEORELSE,
    TRUSTMEORELSEFAIL, TRYMEORELSE, CodeBlock, Emitter, Label, QueryInfo, write,
)
from .packs import PackTable, PackTree, pack_ast
from .terms import F_COMMA, F_SEMI, HANDLE, IMM, LABEL, Arena, ContractError

log = logging.getLogger(__name__)


class Granularity(enum.Enum):
    PER_GOAL = "per-goal"
    PER_CONJUNCTION = "per-conjunction"
    PER_DISJUNCTION = "per-disjunction"

    @classmethod
    def parse(cls, s: str) -> "Granularity":
        s = s.lower().replace("_", "-")
        for g in cls:
            if g.value == s or g.name.lower().replace("_", "-") == s:
                return g
        raise ValueError(f"unknown granularity {s!r}")


# why a stub was created; stitching jumps are classified by it
AFTER_GOAL = "after-goal"
BRANCH = "branch"
NESTED_DISJ = "nested-disjunction"
AFTER_DISJ = "after-disjunction"
ENTRY = "entry"


class LazyEmitter(CfEmitter):
    def __init__(self, block: CodeBlock, e: Emitter):
        super().__init__(block, e)
        self.g = block.granularity
        self.origins: dict[int, str] = {}  # emitter index -> origin

    def stub(self, h: int, K: Label | None, origin: str) -> None:
        self.origins[len(self.e)] = origin
        self.block.stubs_emitted += 1
        self.e.emit(LAZY_COMPILE, (HANDLE, h), (LABEL, K) if K is not None else None)

    def unit(self, a: int, K: Label | None) -> None:
        """Code for the first compilation unit of ``a``, stubs for the rest."""
        kind = node_kind(self.arena, a)
        self.visits += 1
        if kind == GOAL:
            self.goal(a, K)
        elif kind == LEAF:
            self.leaf(a)
        elif kind == PACK:
            self.pack(a, self.branch_upto)
        elif kind == DISJ:
            if self.g is Granularity.PER_DISJUNCTION:
                self.disj([b for b, _ in spine(self.arena, a, F_SEMI)], K, self.branch_upto)
            else:
                self.disj_head(a, K)
        else:
            self.conj(a, K)

    def conj(self, a: int, K: Label | None) -> None:
        items = spine(self.arena, a, F_COMMA)
        per_goal = self.g is Granularity.PER_GOAL
        for i, (item, _) in enumerate(items):
            last = i == len(items) - 1
            kind = node_kind(self.arena, item)
            J = K if last else Label()
            if kind in (GOAL, LEAF):
                self.goal(item, J) if kind == GOAL else self.leaf(item)
                if last:
                    return
                self.e.bind(J)
                if per_goal:
                    self.stub(items[i + 1][1], K, AFTER_GOAL)
                    return
                continue
            # a disjunction (or pack, or a nested conjunction) ends the unit
            self.unit(item, J)
            if not last:
                self.e.bind(J)
                self.stub(items[i + 1][1], K, AFTER_DISJ)
            return

    def disj_head(self, a: int, K: Label | None) -> None:
        branches = spine(self.arena, a, F_SEMI)
        self.block.stubs_emitted += 1
        self.e.emit(LAZY_TRYMEORELSE, (HANDLE, branches[1][1]), (LABEL, K) if K is not None else None)
        self.first_branch(branches[0][0], K)

    def first_branch(self, b: int, K: Label | None) -> None:
        if self.g is Granularity.PER_GOAL:
            self.stub(b, K, BRANCH)
        else:
            self.unit(b, K)

    def branch_upto(self, b: int, K: Label | None) -> None:
        """A branch compiled eagerly up to (not including) its first nested
        disjunction, which is left as a stub."""
        kind = node_kind(self.arena, b)
        self.visits += 1
        if kind == GOAL:
            self.goal(b, K)
        elif kind == LEAF:
            self.leaf(b)
        elif kind in (DISJ, PACK):
            self.stub(b, K, NESTED_DISJ)
        else:
            items = spine(self.arena, b, F_COMMA)
            for i, (item, rest) in enumerate(items):
                last = i == len(items) - 1
                k = node_kind(self.arena, item)
                if k == GOAL:
                    J = None if last else Label()
                    self.goal(item, K if last else J)
                    if not last:
                        self.e.bind(J)
                elif k == LEAF:
                    self.leaf(item)
                else:
                    self.stub(rest, K, NESTED_DISJ)
                    return

    def place(self, site: int | None = None) -> tuple[int, bool]:
        addr, stitched = self.e.place(self.block, site)
        for idx, origin in self.origins.items():
            self.block.stub_origin[self.e.addr_of(idx)] = origin
        return addr, stitched


def compile_lazy_entry(arena: Arena, q: int, g: Granularity = Granularity.PER_GOAL,
                       var_cells: dict | None = None, specialize: bool = True,
                       kind: str = "lazy", pack: PackTable | None = None) -> CodeBlock:
    block = CodeBlock(arena, kind, QueryInfo.of_term(arena, q, var_cells), granularity=g,
                      specialize=specialize, pack=pack)
    e = Emitter()
    e.emit(ALLOCATE, (IMM, CF_ENV_SIZE))
    e.emit(LAZY_COMPILE, (HANDLE, q))
    block.entry, _ = e.place(block)
    block.stub_origin[e.addr_of(1)] = ENTRY
    block.stubs_emitted = 1
    return block


def compile_lazy_pack_entry(arena: Arena, pack: PackTree, specialize: bool = True) -> CodeBlock:
    h, cells = prepare_query(arena, pack_ast(pack), copy=False)
    return compile_lazy_entry(arena, h, Granularity.PER_DISJUNCTION, cells, specialize,
                              kind="lazy_pack", pack=PackTable.from_tree(pack))


def _block_of(m) -> CodeBlock:
    if m.block is None or m.block.granularity is None:
        raise ContractError("lazy instruction outside a lazy code block")
    return m.block


def expand_lazy(m, at: int) -> int:
    """Compile the unit for the lazy_compile stub at ``at`` over it.

    Returns the address to resume at (the stub's slot, which now holds the
    first new instruction or a jump to it).
    """
    block = _block_of(m)
    ar = block.arena
    if ar.vals[at] != LAZY_COMPILE or ar.tags[at + 1] != HANDLE:
        raise ContractError(f"no lazy_compile stub at {at}")
    h = ar.vals[at + 1]
    K = Label(ar.vals[at + 2]) if ar.tags[at + 2] == LABEL else None
    lz = LazyEmitter(block, Emitter())
    lz.unit(h, K)
    origin = block.stub_origin.pop(at, None)
    _, stitched = lz.place(at)
    if stitched:
        block.stitches.append((at, origin))
    block.overwrites.append((at, LAZY_COMPILE))
    block.expansions += 1
    m.note_code()
    _event(m, block, "compile", at, stitched)
    return at


def expand_disj(m, cp) -> int:
    """Backtracking into a lazy disjunction choice point: compile the next
    branch at the end of the code, patch the pending lazy try/retry to point
    at it, and return its address."""
    block = _block_of(m)
    ar = block.arena
    site = cp.site
    branches = spine(ar, cp.term, F_SEMI)
    K = Label(cp.K) if cp.K is not None else None
    lz = LazyEmitter(block, Emitter())
    e = lz.e
    if len(branches) > 1:
        block.stubs_emitted += 1
        e.emit(LAZY_RETRYMEORELSE, (HANDLE, branches[1][1]), (LABEL, K) if K is not None else None)
    else:
        e.emit(TRUSTMEORELSEFAIL)
    lz.first_branch(branches[0][0], K)
    L, _ = lz.place()
    op = ar.vals[site]
    block.overwrites.append((site, op))
    if op == LAZY_TRYMEORELSE:
        write(ar, site, TRYMEORELSE, (LABEL, L))
    elif op == LAZY_RETRYMEORELSE:
        write(ar, site, RETRYMEORELSE, (LABEL, L))
    else:
        raise ContractError(f"no lazy disjunction instruction at {site}")
    block.expansions += 1
    m.note_code()
    _event(m, block, "disjunction", site, False)
    return L


def _event(m, block: CodeBlock, kind: str, at: int, stitched: bool) -> None:
    if m.trace:
        log.debug("lazy %s at %d: %d goals compiled%s", kind, at, block.goals_compiled,
                  " (stitched)" if stitched else "")
        m.trace_lines.append(f"lazy {kind} at {at} goals_compiled={block.goals_compiled}"
                             + (" stitched" if stitched else ""))
    if m.on_expand is not None:
        m.on_expand(m, block, kind)
