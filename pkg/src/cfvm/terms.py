"""Unified arena for terms and code.

Cells are stored in two parallel lists, ``tags`` and ``vals``.  Term cells:

    VAR     unbound variable (val unused)
    REF     bound variable or pointer to a structure header (val = address)
    ATOM    val = symbol id
    INT     val = python int
    STRUCT  structure header, val = (symbol id, arity); args follow inline

Code cells (three per instruction): an OP cell followed by two operand
cells tagged HANDLE (term address), LABEL (code address), IMM (immediate)
or EMPTY.

A bound variable holding an atomic value is overwritten with that value, so
binding never allocates.  There is no occurs check.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field

from . import syntax as S

log = logging.getLogger(__name__)

VAR, REF, ATOM, INT, STRUCT, OP, HANDLE, LABEL, IMM, EMPTY = range(10)
TAG_NAMES = ("VAR", "REF", "ATOM", "INT", "STRUCT", "OP", "HANDLE", "LABEL", "IMM", "EMPTY")
TERM_TAGS = frozenset((VAR, REF, ATOM, INT, STRUCT))

TERM = "term"
CODE = "code"


class ContractError(Exception):
    """A caller violated an operation's precondition."""


class CapacityError(Exception):
    pass


class SymbolTable:
    def __init__(self):
        self._ids: dict[str, int] = {}
        self._names: list[str] = []

    def intern(self, name: str) -> int:
        i = self._ids.get(name)
        if i is None:
            i = self._ids[name] = len(self._names)
            self._names.append(name)
        return i

    def name(self, i: int) -> str:
        return self._names[i]


SYMBOLS = SymbolTable()
sym = SYMBOLS.intern

COMMA = sym(",")
SEMI = sym(";")
PACK = sym("$pack")
LEAF = sym("$leaf")
TRUE = sym("true")
F_COMMA = (COMMA, 2)
F_SEMI = (SEMI, 2)
F_PACK = (PACK, 2)
F_LEAF = (LEAF, 1)


@dataclass
class RelocationStats:
    moved_cells: int = 0
    patched_operands: int = 0
    freed_cells: int = 0
    roots: list = field(default_factory=list)


class Arena:
    """Growable cell store with TERM and CODE regions.

    ``busy`` is raised by a machine while it executes; the collector refuses
    to run unless it is zero.
    """

    def __init__(self, capacity: int | None = None):
        self.tags: list[int] = []
        self.vals: list = []
        self.reg_start: list[int] = []
        self.reg_len: list[int] = []
        self.reg_kind: list[str] = []
        self.capacity = capacity
        self.busy = 0
        self.epoch = 0

    @property
    def top(self) -> int:
        return len(self.tags)

    def alloc(self, n: int, kind: str = TERM) -> int:
        start = len(self.tags)
        if self.capacity is not None and start + n > self.capacity:
            raise CapacityError(f"arena capacity {self.capacity} exceeded")
        self.tags.extend([EMPTY] * n)
        self.vals.extend([0] * n)
        self.reg_start.append(start)
        self.reg_len.append(n)
        self.reg_kind.append(kind)
        return start

    def extend_last(self, n: int) -> int:
        """Grow the last region by ``n`` cells; returns the first new address."""
        start = len(self.tags)
        if self.capacity is not None and start + n > self.capacity:
            raise CapacityError(f"arena capacity {self.capacity} exceeded")
        self.tags.extend([EMPTY] * n)
        self.vals.extend([0] * n)
        self.reg_len[-1] += n
        return start

    def region_index(self, addr: int) -> int:
        i = bisect.bisect_right(self.reg_start, addr) - 1
        if i < 0 or addr >= self.reg_start[i] + self.reg_len[i]:
            raise ContractError(f"address {addr} is outside every region")
        return i

    def region_of(self, addr: int) -> tuple[int, int, str]:
        i = self.region_index(addr)
        return self.reg_start[i], self.reg_len[i], self.reg_kind[i]

    def regions(self) -> list[tuple[int, int, str]]:
        return list(zip(self.reg_start, self.reg_len, self.reg_kind))

    def truncate(self, mark: int) -> None:
        """Drop every cell and region at or above ``mark``."""
        if mark >= len(self.tags):
            return
        i = bisect.bisect_left(self.reg_start, mark)
        if i > 0 and self.reg_start[i - 1] + self.reg_len[i - 1] > mark:
            raise ContractError(f"truncate mark {mark} splits a region")
        del self.reg_start[i:], self.reg_len[i:], self.reg_kind[i:]
        del self.tags[mark:], self.vals[mark:]

    def snapshot(self) -> tuple[tuple, tuple]:
        return tuple(self.tags), tuple(self.vals)

    # -- term primitives

    def deref(self, a: int) -> int:
        tags = self.tags
        while tags[a] == REF:
            a = self.vals[a]
        return a

    def is_unbound(self, a: int) -> bool:
        return self.tags[self.deref(a)] == VAR

    def new_var(self) -> int:
        a = self.alloc(1, TERM)
        self.tags[a] = VAR
        return a

    def unify(self, a: int, b: int, trail: "Trail") -> bool:
        return unify(self, a, b, trail)

    def render(self, a: int, names: dict | None = None, maxprec: int = 1200) -> str:
        return render(self, a, names, maxprec)


class Trail:
    """Undo log of cell overwrites, stored flat as (addr, tag, val) triples."""

    def __init__(self, arena: Arena):
        self.arena = arena
        self.entries: list = []

    def __len__(self) -> int:
        return len(self.entries) // 3

    def mark(self) -> int:
        return len(self.entries)

    def bind(self, addr: int, tag: int, val) -> None:
        ar = self.arena
        self.entries += (addr, ar.tags[addr], ar.vals[addr])
        ar.tags[addr] = tag
        ar.vals[addr] = val

    def undo_to(self, mark: int) -> None:
        undo_to(self, mark)


def undo_to(trail: Trail, mark: int) -> None:
    """Restore every cell recorded after ``mark``, newest first."""
    e = trail.entries
    n = len(e)
    if mark < 0 or mark > n or mark % 3:
        raise ContractError(f"unknown trail mark {mark}")
    tags, vals = trail.arena.tags, trail.arena.vals
    for i in range(n - 3, mark - 3, -3):
        a = e[i]
        tags[a] = e[i + 1]
        vals[a] = e[i + 2]
    del e[mark:]


def unify(arena: Arena, a: int, b: int, trail: Trail) -> bool:
    """Unify two terms, trailing bindings; on failure nothing stays bound."""
    tags, vals = arena.tags, arena.vals
    mark = len(trail.entries)
    entries = trail.entries
    stack = [a, b]
    while stack:
        y = stack.pop()
        x = stack.pop()
        while tags[x] == REF:
            x = vals[x]
        while tags[y] == REF:
            y = vals[y]
        if x == y:
            continue
        tx, ty = tags[x], tags[y]
        if tx == VAR:
            if ty == VAR and y < x:
                x, y = y, x
            # bind the younger of two variables to the older
            if ty == VAR:
                entries += (y, VAR, vals[y])
                tags[y] = REF
                vals[y] = x
            elif ty == STRUCT:
                entries += (x, VAR, vals[x])
                tags[x] = REF
                vals[x] = y
            else:
                entries += (x, VAR, vals[x])
                tags[x] = ty
                vals[x] = vals[y]
        elif ty == VAR:
            entries += (y, VAR, vals[y])
            if tx == STRUCT:
                tags[y] = REF
                vals[y] = x
            else:
                tags[y] = tx
                vals[y] = vals[x]
        elif tx != ty or vals[x] != vals[y]:
            undo_to(trail, mark)
            return False
        elif tx == STRUCT:
            for i in range(vals[x][1], 0, -1):
                stack.append(x + i)
                stack.append(y + i)
    return True


# -- building terms ------------------------------------------------------------


class _Builder:
    """Lays out a term into a scratch buffer, then places it in one region.

    Layout is preorder (a structure header is followed by its argument
    cells, then by the bodies of its first argument, second argument, ...),
    done iteratively so deep right-nested conjunctions are fine.
    """

    def __init__(self):
        self.tags: list[int] = []
        self.vals: list = []
        self.rel: list[int] = []  # positions whose val is buffer-relative

    def cell(self, tag: int, val=0) -> int:
        self.tags.append(tag)
        self.vals.append(val)
        return len(self.tags) - 1

    def header(self, functor: tuple[int, int]) -> int:
        h = self.cell(STRUCT, functor)
        n = functor[1]
        self.tags.extend([EMPTY] * n)
        self.vals.extend([0] * n)
        return h

    def set_ref(self, slot: int, target: int) -> None:
        self.tags[slot] = REF
        self.vals[slot] = target
        self.rel.append(slot)

    def place(self, arena: Arena) -> int:
        base = arena.alloc(len(self.tags), TERM)
        n = len(self.tags)
        arena.tags[base:base + n] = self.tags
        vals = self.vals
        if base:
            for i in self.rel:
                vals[i] += base
        arena.vals[base:base + n] = vals
        return base


def _ast_shape(node):
    """Return (functor, children) for a compound AST node, else None."""
    if isinstance(node, (S.Struct, S.Goal)):
        if not node.args:
            return None
        return (sym(node.name), len(node.args)), node.args
    if isinstance(node, S.Conj):
        return F_COMMA, _right_nest(node.items, S.Conj)
    if isinstance(node, S.Disj):
        alts = _right_nest(node.items, S.Disj)
        if node.pack_id is not None:
            return F_PACK, (S.Int(node.pack_id), _Nested(F_SEMI, alts) if len(node.items) > 1 else node.items[0])
        return F_SEMI, alts
    if isinstance(node, _Nested):
        return node.functor, node.children
    return None


class _Nested:
    __slots__ = ("functor", "children")

    def __init__(self, functor, children):
        self.functor = functor
        self.children = children


def _right_nest(items: tuple, kind) -> tuple:
    functor = F_COMMA if kind is S.Conj else F_SEMI
    if len(items) == 2:
        return items
    return (items[0], _Nested(functor, _right_nest(items[1:], kind)))


def intern_term(arena: Arena, node, var_cells: dict | None = None) -> int:
    """Allocate ``node`` (an AST term or query node) in one TERM region.

    Variables with the same name share one VAR cell.  If ``var_cells`` is
    given it maps names to existing cells (absolute addresses) and is
    extended with the variables created here.
    """
    b = _Builder()
    if var_cells is None:
        var_cells = {}
    local: dict[str, int] = {}
    work: list = []

    def fill(slot: int, t) -> None:
        if isinstance(t, S.Var):
            if t.name in local:
                b.set_ref(slot, local[t.name])
            elif t.name in var_cells:
                b.tags[slot] = REF
                b.vals[slot] = var_cells[t.name]
            else:
                b.tags[slot] = VAR
                local[t.name] = slot
        elif isinstance(t, S.Int):
            b.tags[slot], b.vals[slot] = INT, t.value
        elif isinstance(t, S.Atom):
            b.tags[slot], b.vals[slot] = ATOM, sym(t.name)
        else:
            shape = _ast_shape(t)
            if shape is None:  # zero-arity goal
                b.tags[slot], b.vals[slot] = ATOM, sym(t.name)
            else:
                h = b.header(shape[0])
                b.set_ref(slot, h)
                work.extend((h + 1 + i, c) for i, c in reversed(list(enumerate(shape[1]))))

    shape = _ast_shape(node)
    if shape is None:
        root = b.cell(EMPTY)
        fill(root, node)
    else:
        root = b.header(shape[0])
        work.extend((root + 1 + i, c) for i, c in reversed(list(enumerate(shape[1]))))
    while work:
        slot, t = work.pop()
        fill(slot, t)
    base = b.place(arena)
    for name, slot in local.items():
        var_cells[name] = base + slot
    return base + root


def copy_term_contiguous(arena: Arena, h: int, var_map: dict | None = None) -> int:
    """Copy the term at ``h`` into one fresh contiguous TERM region.

    Variables get fresh cells with sharing preserved inside the copy;
    shared substructures stay shared.  ``var_map`` (old var address -> new
    var address) is filled in when given.
    """
    tags, vals = arena.tags, arena.vals
    b = _Builder()
    seen_var: dict[int, int] = {}
    seen_struct: dict[int, int] = {}
    work: list = []

    def fill(slot: int, a: int) -> None:
        while tags[a] == REF:
            a = vals[a]
        t = tags[a]
        if t == VAR:
            if a in seen_var:
                b.set_ref(slot, seen_var[a])
            else:
                b.tags[slot] = VAR
                seen_var[a] = slot
        elif t == STRUCT:
            if a in seen_struct:
                b.set_ref(slot, seen_struct[a])
                return
            h2 = b.header(vals[a])
            seen_struct[a] = h2
            b.set_ref(slot, h2)
            for i in range(vals[a][1], 0, -1):
                work.append((h2 + i, a + i))
        elif t in (ATOM, INT):
            b.tags[slot], b.vals[slot] = t, vals[a]
        else:
            raise ContractError(f"cell {a} is not a term cell ({TAG_NAMES[t]})")

    a = arena.deref(h)
    if tags[a] == STRUCT:
        root = b.header(vals[a])
        seen_struct[a] = root
        for i in range(vals[a][1], 0, -1):
            work.append((root + i, a + i))
    else:
        root = b.cell(EMPTY)
        fill(root, a)
    while work:
        slot, src = work.pop()
        fill(slot, src)
    base = b.place(arena)
    if var_map is not None:
        for old, slot in seen_var.items():
            var_map[old] = base + slot
    return base + root


def to_ast(arena: Arena, a: int, names: dict | None = None):
    """Read a term back as an AST value (Var names from ``names`` or _G<addr>)."""
    a = arena.deref(a)
    t = arena.tags[a]
    v = arena.vals[a]
    if t == VAR:
        return S.Var((names or {}).get(a, f"_G{a}"))
    if t == ATOM:
        return S.Atom(SYMBOLS.name(v))
    if t == INT:
        return S.Int(v)
    if t == STRUCT:
        return S.Struct(SYMBOLS.name(v[0]), tuple(to_ast(arena, a + i, names) for i in range(1, v[1] + 1)))
    raise ContractError(f"cell {a} is not a term cell")


_OP_PREC = {",": 1000, ";": 1100}


def render(arena: Arena, a: int, names: dict | None = None, maxprec: int = 1200) -> str:
    """Print a term with standard operator syntax and no spaces."""
    tags, vals = arena.tags, arena.vals
    while tags[a] == REF:
        a = vals[a]
    t = tags[a]
    if t == VAR:
        return (names or {}).get(a, f"_G{a}")
    if t == ATOM:
        return S.format_atom(SYMBOLS.name(vals[a]))
    if t == INT:
        return str(vals[a])
    if t != STRUCT:
        raise ContractError(f"cell {a} is not a term cell")
    s, n = vals[a]
    name = SYMBOLS.name(s)
    if n == 2 and name in _OP_PREC:
        prec = _OP_PREC[name]
        parts = []
        x = a
        while True:
            parts.append(render(arena, x + 1, names, prec - 1))
            y = arena.deref(x + 2)
            if tags[y] == STRUCT and vals[y] == vals[a]:
                x = y
                continue
            parts.append(render(arena, y, names, prec))
            break
        out = name.join(parts)
        return f"({out})" if prec > maxprec else out
    if n == 2 and name in S.BUILTIN_OPS:
        out = render(arena, a + 1, names, 699) + name + render(arena, a + 2, names, 699)
        return f"({out})" if 700 > maxprec else out
    args = ",".join(render(arena, a + i, names, 999) for i in range(1, n + 1))
    return f"{S.format_atom(name)}({args})"


# -- relocation collector --------------------------------------------------------


def collect(arena: Arena, roots: list, trail: Trail | None = None) -> RelocationStats:
    """Mark-compact the arena at a quiescent point.

    ``roots`` holds term addresses (ints) and objects exposing
    ``root_addresses()`` and ``relocate(fn)`` (code blocks).  Reachable
    regions slide toward address 0 in order; REF cells and HANDLE/LABEL
    operands are patched.  ``stats.roots`` holds the updated roots.
    """
    if arena.busy:
        raise ContractError("collect called while a machine is executing")
    if trail is not None and trail.entries:
        raise ContractError("collect called with live trail entries")
    tags, vals = arena.tags, arena.vals
    starts, lens, kinds = arena.reg_start, arena.reg_len, arena.reg_kind
    nreg = len(starts)
    live = bytearray(nreg)
    work: list[int] = []

    def mark(addr: int) -> None:
        ri = arena.region_index(addr)
        if not live[ri]:
            live[ri] = 1
            work.append(ri)

    for r in roots:
        if isinstance(r, int):
            mark(r)
        else:
            for a in r.root_addresses():
                mark(a)
    while work:
        ri = work.pop()
        s = starts[ri]
        for i in range(s, s + lens[ri]):
            t = tags[i]
            if t == REF or t == HANDLE or t == LABEL:
                mark(vals[i])

    new_start = [0] * nreg
    cursor = 0
    stats = RelocationStats()
    for ri in range(nreg):
        if live[ri]:
            new_start[ri] = cursor
            if cursor != starts[ri]:
                stats.moved_cells += lens[ri]
            cursor += lens[ri]
    stats.freed_cells = len(tags) - cursor

    old_starts = list(starts)

    def relocate(addr: int) -> int:
        ri = bisect.bisect_right(old_starts, addr) - 1
        return addr - old_starts[ri] + new_start[ri]

    new_tags: list[int] = []
    new_vals: list = []
    for ri in range(nreg):
        if not live[ri]:
            continue
        s = starts[ri]
        for i in range(s, s + lens[ri]):
            t = tags[i]
            v = vals[i]
            if t == REF or t == HANDLE or t == LABEL:
                nv = relocate(v)
                if nv != v:
                    if t != REF:
                        stats.patched_operands += 1
                    v = nv
            new_tags.append(t)
            new_vals.append(v)
    arena.tags[:] = new_tags
    arena.vals[:] = new_vals
    keep = [ri for ri in range(nreg) if live[ri]]
    arena.reg_start[:] = [new_start[ri] for ri in keep]
    arena.reg_len[:] = [lens[ri] for ri in keep]
    arena.reg_kind[:] = [kinds[ri] for ri in keep]
    arena.epoch += 1

    for r in roots:
        if isinstance(r, int):
            stats.roots.append(relocate(r))
        else:
            r.relocate(relocate)
            stats.roots.append(r)
    log.debug("collect: moved=%d patched=%d freed=%d", stats.moved_cells,
              stats.patched_operands, stats.freed_cells)
    return stats


def validate(arena: Arena) -> list[str]:
    """Debug check: region ordering and that every pointer lands in a
    region of the right kind.  Returns a list of problems (empty if clean)."""
    problems = []
    prev_end = 0
    for s, n, k in arena.regions():
        if s < prev_end:
            problems.append(f"region at {s} overlaps previous region")
        prev_end = s + n
    if prev_end != arena.top:
        problems.append(f"regions end at {prev_end}, arena top is {arena.top}")
    for s, n, k in arena.regions():
        for i in range(s, s + n):
            t = arena.tags[i]
            if t in (REF, HANDLE, LABEL):
                want = CODE if t == LABEL else TERM
                try:
                    _, _, kind = arena.region_of(arena.vals[i])
                except ContractError:
                    problems.append(f"cell {i} ({TAG_NAMES[t]}) points outside the arena")
                    continue
                if kind != want:
                    problems.append(f"cell {i} ({TAG_NAMES[t]}) points into a {kind} region")
            if k == TERM and t not in TERM_TAGS:
                problems.append(f"cell {i} in a term region has tag {TAG_NAMES[t]}")
    return problems
