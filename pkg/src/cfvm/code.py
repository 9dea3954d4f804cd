"""Instruction set, code blocks, code placement and the disassembler.

Every instruction is three arena cells: an OP cell and two operand cells.
Unused operands are EMPTY/0, so lazy stubs can be overwritten in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .terms import (
    CODE, EMPTY, HANDLE, IMM, LABEL, OP, STRUCT, ATOM, SYMBOLS, F_COMMA, F_SEMI,
    F_PACK, F_LEAF, Arena, ContractError, render,
)
from . import syntax as S

WIDTH = 3

OPCODES = [
    # control
    "allocate", "deallocate", "proceed", "jump", "fail",
    "trymeorelse", "retrymeorelse", "trustmeorelsefail",
    # control-flow calls and inlined built-ins
    "cf_call", "cf_call0", "cf_call1", "cf_call2", "cf_call3", "cf_deallex",
    "cf_smaller", "cf_greater", "cf_unify", "cf_notunify",
    # lazy stubs
    "lazy_compile", "lazy_trymeorelse", "lazy_retrymeorelse",
    # query packs
    "pack_try", "pack_retry", "pack_trust", "pack_report",
    # classical
    "bldtvar", "putpvar", "putpval", "puttval", "init_pvar",
    "put_atom", "put_int", "put_term", "call", "deallex",
    "b_smaller", "b_greater", "b_unify", "b_notunify",
]
OPC = {name: i for i, name in enumerate(OPCODES)}
globals().update({name.upper(): i for name, i in OPC.items()})

CF_CALL_BY_ARITY = (OPC["cf_call0"], OPC["cf_call1"], OPC["cf_call2"], OPC["cf_call3"])
CF_CALLS = frozenset((OPC["cf_call"],) + CF_CALL_BY_ARITY)
CF_GOAL_OPS = CF_CALLS | {OPC["cf_deallex"]}
CF_BUILTINS = {"<": OPC["cf_smaller"], ">": OPC["cf_greater"], "=": OPC["cf_unify"], "\\=": OPC["cf_notunify"]}
B_BUILTINS = {"<": OPC["b_smaller"], ">": OPC["b_greater"], "=": OPC["b_unify"], "\\=": OPC["b_notunify"]}
CF_BUILTIN_OPS = frozenset(CF_BUILTINS.values())
LAZY_OPS = frozenset((OPC["lazy_compile"], OPC["lazy_trymeorelse"], OPC["lazy_retrymeorelse"]))
CONTROL_OPS = frozenset(OPC[n] for n in (
    "allocate", "deallocate", "proceed", "jump", "fail", "trymeorelse", "retrymeorelse",
    "trustmeorelsefail", "pack_try", "pack_retry", "pack_trust", "pack_report"))
# instructions after which control never falls through to the next slot
TERMINAL_OPS = frozenset(OPC[n] for n in (
    "cf_deallex", "deallex", "proceed", "jump", "fail", "pack_report"))
# operand 2 of these is a continuation label that the disassembler hides
_HIDDEN_CONT = LAZY_OPS

BUILTIN_NAMES = frozenset(S.BUILTIN_OPS)


class Label:
    """A code position; either bound inside an emitter or an absolute address."""

    __slots__ = ("index", "addr")

    def __init__(self, addr: int | None = None):
        self.index: int | None = None
        self.addr = addr


# a pseudo instruction "continue at label": dropped when the label is the
# next address, otherwise emitted as a jump
_CONT = -1


class Emitter:
    def __init__(self):
        self.seq: list[list] = []

    def __len__(self) -> int:
        return len(self.seq)

    def emit(self, op: int, a=None, b=None) -> None:
        self.seq.append([op, a, b])

    def cont(self, label: Label) -> None:
        self.seq.append([_CONT, (LABEL, label), None])

    def bind(self, label: Label) -> None:
        label.index = len(self.seq)

    def ops(self) -> list[int]:
        return [ins[0] for ins in self.seq]

    def addr_of(self, index: int) -> int:
        """Address of the instruction emitted at ``index`` (after place)."""
        return self._addrs[self._remap[index]]

    def _finalize(self) -> tuple[list[list], list[int]]:
        """Drop continue-pseudos whose target label is bound right after them.

        Returns the remaining instructions and an old-index -> new-index map.
        """
        seq = self.seq
        drop = set()
        for i, ins in enumerate(seq):
            if ins[0] == _CONT:
                lab = ins[1][1]
                if lab.index is not None and lab.index == i + 1:
                    drop.add(i)
        remap = []
        out = []
        for i, ins in enumerate(seq):
            remap.append(len(out))
            if i not in drop:
                out.append(ins)
        remap.append(len(out))
        return out, remap

    def place(self, block: "CodeBlock", site: int | None = None) -> tuple[int, bool]:
        """Write the instructions into the arena.

        Without ``site`` the code goes into a fresh CODE region.  With a
        ``site`` (the address of a lazy stub) the first instruction
        overwrites the stub; the rest is appended at the arena top, which is
        contiguous only if the stub is the last instruction in the arena.
        Otherwise the stub becomes a jump to the new code.

        Returns (address where execution continues, whether a stitching
        jump was written).
        """
        arena = block.arena
        seq, remap = self._finalize()
        n = len(seq)
        if n == 0:
            raise ContractError("empty instruction sequence")
        last = seq[-1]
        ext_tail = last[0] == _CONT and last[1][1].index is None
        stitched = False
        if site is None:
            base = arena.alloc(WIDTH * n, CODE)
            block.regions.append(base)
            addrs = [base + WIDTH * i for i in range(n)]
        elif site + WIDTH == arena.top:
            if ext_tail and n >= 2 and last[1][1].addr == site + WIDTH * (n - 1):
                seq.pop()
                n -= 1
            if n > 1:
                arena.extend_last(WIDTH * (n - 1))
            addrs = [site + WIDTH * i for i in range(n)]
        elif n == 1 or (n == 2 and ext_tail and last[1][1].addr == site + WIDTH):
            seq = seq[:1]
            n = 1
            addrs = [site]
        else:
            base = arena.alloc(WIDTH * n, CODE)
            block.regions.append(base)
            addrs = [base + WIDTH * i for i in range(n)]
            write(arena, site, JUMP, (LABEL, base))
            stitched = True

        self._addrs, self._remap = addrs, remap

        def resolve(lab: Label) -> int:
            if lab.index is not None:
                return addrs[remap[lab.index]] if remap[lab.index] < n else addrs[-1] + WIDTH
            if lab.addr is None:
                raise ContractError("unbound label")
            return lab.addr

        for ins, addr in zip(seq, addrs):
            op, a, b = ins
            if op == _CONT:
                op = JUMP
            write(arena, addr, op, _operand(a, resolve), _operand(b, resolve))
        # labels bound inside the sequence become absolute for later users
        for ins in self.seq:
            for opnd in ins[1:]:
                if opnd is not None and opnd[0] == LABEL and opnd[1].index is not None:
                    opnd[1].addr = resolve(opnd[1])
        return (site if site is not None else addrs[0]), stitched


def _operand(opnd, resolve):
    if opnd is None:
        return (EMPTY, 0)
    if opnd[0] == LABEL:
        return (LABEL, resolve(opnd[1]) if isinstance(opnd[1], Label) else opnd[1])
    return opnd


def write(arena: Arena, addr: int, op: int, a=(EMPTY, 0), b=(EMPTY, 0)) -> None:
    tags, vals = arena.tags, arena.vals
    tags[addr] = OP
    vals[addr] = op
    tags[addr + 1], vals[addr + 1] = a
    tags[addr + 2], vals[addr + 2] = b


# -- query bookkeeping --------------------------------------------------------


@dataclass
class QueryInfo:
    """A query term on the arena plus what the harness needs to report on it."""

    handle: int | None
    var_cells: dict = field(default_factory=dict)  # name -> var address
    goal_ids: dict = field(default_factory=dict)  # goal address -> goal index
    goal_count: int = 0

    @classmethod
    def of_term(cls, arena: Arena, handle: int, var_cells: dict | None = None) -> "QueryInfo":
        info = cls(handle, dict(var_cells or {}))
        info.goal_ids = index_goals(arena, handle)
        info.goal_count = len(info.goal_ids)
        return info

    def names(self) -> dict:
        return {a: n for n, a in self.var_cells.items()}

    def root_addresses(self) -> list[int]:
        out = [] if self.handle is None else [self.handle]
        return out + list(self.var_cells.values())

    def relocate(self, fn) -> None:
        if self.handle is not None:
            self.handle = fn(self.handle)
        self.var_cells = {n: fn(a) for n, a in self.var_cells.items()}
        self.goal_ids = {fn(a): i for a, i in self.goal_ids.items()}


def index_goals(arena: Arena, handle: int) -> dict:
    """Number the goals of a query term left to right (control constructs
    and pack markers are not goals)."""
    tags, vals = arena.tags, arena.vals
    out: dict[int, int] = {}
    stack = [handle]
    while stack:
        a = arena.deref(stack.pop())
        if tags[a] == STRUCT:
            f = vals[a]
            if f == F_COMMA or f == F_SEMI:
                stack.append(a + 2)
                stack.append(a + 1)
                continue
            if f == F_PACK:
                stack.append(a + 2)
                continue
            if f == F_LEAF:
                continue
        if a not in out:
            out[a] = len(out)
    return out


@dataclass
class CodeBlock:
    """Compiled code for one query or pack, living in an arena.

    ``calls[i]`` counts executions of goal i (reach flags are calls > 0);
    ``compiled[i]`` is set once goal i has code emitted for it.
    """

    arena: Arena
    kind: str
    query: QueryInfo
    entry: int = -1
    regions: list = field(default_factory=list)
    granularity: object = None
    pack: object = None  # PackTable for pack code
    answer_vars: list = field(default_factory=list)  # classical only
    compiled: bytearray = field(default_factory=bytearray)
    calls: list = field(default_factory=list)
    stitches: list = field(default_factory=list)  # (site, reason)
    overwrites: list = field(default_factory=list)  # (address, lazy opcode replaced)
    stubs_emitted: int = 0
    expansions: int = 0
    specialize: bool = True
    max_reg: int = 0
    compile_visits: int = 0
    stub_origin: dict = field(default_factory=dict)  # stub address -> why it was made

    def __post_init__(self):
        n = self.query.goal_count
        if not self.compiled:
            self.compiled = bytearray(n)
        if not self.calls:
            self.calls = [0] * n

    @property
    def source_query(self) -> int | None:
        return self.query.handle

    @property
    def goal_count(self) -> int:
        return self.query.goal_count

    @property
    def reach_flags(self) -> list[bool]:
        return [c > 0 for c in self.calls]

    @property
    def goals_compiled(self) -> int:
        return sum(self.compiled)

    @property
    def goals_reached(self) -> int:
        return sum(1 for c in self.calls if c)

    def reset_counts(self) -> None:
        self.calls = [0] * self.query.goal_count

    def mark_compiled(self, goal_addr: int) -> None:
        i = self.query.goal_ids.get(goal_addr)
        if i is not None:
            self.compiled[i] = 1

    def addresses(self) -> list[int]:
        """Every instruction address of the block, in address order."""
        out = []
        for s in sorted(self.regions):
            _, n, _ = self.arena.region_of(s)
            out.extend(range(s, s + n, WIDTH))
        return out

    def instructions(self) -> list[tuple]:
        ar = self.arena
        return [(a, ar.vals[a], (ar.tags[a + 1], ar.vals[a + 1]), (ar.tags[a + 2], ar.vals[a + 2]))
                for a in self.addresses()]

    def opcodes(self) -> list[str]:
        return [OPCODES[op] for _, op, _, _ in self.instructions()]

    # relocation support

    def root_addresses(self) -> list[int]:
        return [self.entry] + list(self.regions) + self.query.root_addresses()

    def relocate(self, fn) -> None:
        self.entry = fn(self.entry)
        self.regions = [fn(r) for r in self.regions]
        self.query.relocate(fn)
        self.stitches = [(fn(s), r) for s, r in self.stitches]
        self.overwrites = [(fn(a), op) for a, op in self.overwrites]
        self.stub_origin = {fn(a): v for a, v in self.stub_origin.items()}


# -- disassembly -------------------------------------------------------------------


def _operand_text(arena: Arena, op: int, k: int, tag: int, val, names: dict, labels: dict) -> str | None:
    name = OPCODES[op]
    if tag == EMPTY:
        return None
    if tag == LABEL:
        if k == 2 and op in _HIDDEN_CONT:
            return None
        return labels.get(val, f"@{val}")
    if tag == HANDLE:
        if name in ("lazy_trymeorelse", "lazy_retrymeorelse"):
            return "&(" + render(arena, val, names) + ")"
        if name in ("put_atom", "put_int", "put_term"):
            return render(arena, val, names, 999)
        return "&" + render(arena, val, names, 0)
    # immediates
    if name in ("call", "deallex"):
        if k == 2:
            return None
        s, n = val
        return f"{S.format_atom(SYMBOLS.name(s))}/{n}"
    if name in ("bldtvar",):
        return f"A{val}" if k == 1 else None
    if name in ("putpvar", "putpval"):
        return f"Y{val[0]} A{val[1]}" if k == 1 else None
    if name == "puttval":
        return f"A{val[0]} A{val[1]}"
    if name == "init_pvar":
        return f"Y{val}" if k == 1 else None
    if name in ("put_atom", "put_int", "put_term"):
        return f"A{val}"
    if name in ("cf_call", "cf_call0", "cf_call1", "cf_call2", "cf_call3", "cf_deallex"):
        return None
    if name in ("b_smaller", "b_greater", "b_unify", "b_notunify"):
        return f"A{val[0]} A{val[1]}" if k == 1 else None
    if name in ("pack_try", "pack_retry", "pack_trust"):
        return f"N{val[0]}"
    if name == "pack_report":
        return f"q{val}"
    return str(val)


def disassemble(block: CodeBlock, names: dict | None = None, variants: bool = False) -> list[str]:
    """One line per instruction: ``label: opcode operand operand``.

    Labels L1, L2, ... are given to jump/try targets in address order.
    Specialized cf_call variants print as plain ``cf_call`` unless
    ``variants`` is set.
    """
    arena = block.arena
    if names is None:
        names = block.query.names()
    insns = block.instructions()
    targets = set()
    for addr, op, a, b in insns:
        for k, (tag, val) in ((1, a), (2, b)):
            if tag == LABEL and not (k == 2 and op in _HIDDEN_CONT):
                targets.add(val)
    labels = {t: f"L{i + 1}" for i, t in enumerate(sorted(targets))}
    lines = []
    for addr, op, a, b in insns:
        line = instruction_text(arena, addr, names, labels, variants)
        if addr in labels:
            line = f"{labels[addr]}: {line}"
        lines.append(line)
    return lines


def instruction_text(arena: Arena, addr: int, names: dict | None = None,
                     labels: dict | None = None, variants: bool = False) -> str:
    op = arena.vals[addr]
    name = OPCODES[op]
    if not variants and op in CF_CALL_BY_ARITY:
        name = "cf_call"
    parts = [name]
    for k in (1, 2):
        txt = _operand_text(arena, op, k, arena.tags[addr + k], arena.vals[addr + k],
                            names or {}, labels or {})
        if txt is not None:
            parts.append(txt)
    return " ".join(parts)


def _successors(arena: Arena, addr: int) -> list[int]:
    op = arena.vals[addr]
    out = []
    if op not in TERMINAL_OPS:
        out.append(addr + WIDTH)
    if op in (PACK_TRY, PACK_RETRY):
        out.append(arena.vals[addr + 2])
    elif op in (TRYMEORELSE, RETRYMEORELSE, JUMP):
        out.append(arena.vals[addr + 1])
    return out


def normalize(block: CodeBlock, render_terms: bool = False) -> list[tuple]:
    """Canonical form of a block's control-flow graph with jump chains
    inlined: nodes numbered in breadth-first order from the entry, each
    given as (opcode name, term operand, successor numbers).

    Two blocks whose normal forms are equal execute identical instruction
    sequences on every path.  With ``render_terms`` term operands are
    compared as text, so code compiled against different copies of the
    same query compares equal.
    """
    arena = block.arena

    def skip_jumps(a: int) -> int:
        seen = set()
        while arena.vals[a] == JUMP:
            if a in seen:
                raise ContractError(f"jump cycle at {a}")
            seen.add(a)
            a = arena.vals[a + 1]
        return a

    names = block.query.names() if render_terms else None
    start = skip_jumps(block.entry)
    ids = {start: 0}
    order = [start]
    i = 0
    while i < len(order):
        a = order[i]
        i += 1
        for s in _successors(arena, a):
            s = skip_jumps(s)
            if s not in ids:
                ids[s] = len(order)
                order.append(s)
    out = []
    for a in order:
        op = arena.vals[a]
        operands = tuple(
            (render(arena, arena.vals[a + k], names) if render_terms else arena.vals[a + k])
            if arena.tags[a + k] == HANDLE else
            arena.vals[a + k] if arena.tags[a + k] == IMM else None
            for k in (1, 2)
        )
        succ = tuple(ids[skip_jumps(s)] for s in _successors(arena, a))
        out.append((OPCODES[op], operands, succ))
    return out


def goal_functor(arena: Arena, addr: int) -> tuple[str, int]:
    a = arena.deref(addr)
    if arena.tags[a] == ATOM:
        return SYMBOLS.name(arena.vals[a]), 0
    if arena.tags[a] == STRUCT:
        s, n = arena.vals[a]
        return SYMBOLS.name(s), n
    raise TypeError(f"goal at {addr} is not callable")
