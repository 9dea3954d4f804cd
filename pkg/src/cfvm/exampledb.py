"""Example databases and the driver that runs a strategy over them."""

from __future__ import annotations

import enum
import logging
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import syntax as S
from .cfcomp import compile_cf, compile_cf_pack
from .classical import compile_classical
from .code import QueryInfo
from .lazy import Granularity, compile_lazy_entry, compile_lazy_pack_entry
from .machine import Machine
from .packs import PackTree, pack_ast
from .terms import Arena, collect, copy_term_contiguous, intern_term, validate

log = logging.getLogger(__name__)


class LoadError(Exception):
    pass


class StrategyMismatch(ValueError):
    pass


@dataclass
class Example:
    id: str
    program: S.Program


@dataclass
class ExampleDb:
    examples: list = field(default_factory=list)
    background: S.Program | None = None

    def __post_init__(self):
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise LoadError(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)
        self._views = None

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def ids(self) -> list[str]:
        return [ex.id for ex in self.examples]

    def view(self, i: int) -> S.Program:
        """Example i's predicates, example clauses before background ones."""
        if self._views is None:
            self._views = [self._merge(ex.program) for ex in self.examples]
        return self._views[i]

    def _merge(self, prog: S.Program) -> S.Program:
        if self.background is None or not len(self.background):
            return prog
        merged = S.Program()
        for c in prog.all_clauses():
            merged.add(c)
        for c in self.background.all_clauses():
            merged.add(c)
        return merged


def _split_examples(text: str, source: str) -> list[Example]:
    try:
        clauses = S.parse_clauses(text)
    except S.ParseError as e:
        raise LoadError(f"{source}: {e}") from e
    out: list[Example] = []
    cur: tuple[str, S.Program] | None = None
    loose = S.Program()
    for c in clauses:
        h = c.head
        if h.key in (("begin", 2), ("end", 2)) and h.args and h.args[0] == S.Atom("example"):
            ident = S.format_term(h.args[1])
            if h.name == "begin":
                if cur is not None:
                    raise LoadError(f"{source}: example {cur[0]} not closed before {ident}")
                cur = (ident, S.Program())
            else:
                if cur is None or cur[0] != ident:
                    raise LoadError(f"{source}: end(example,{ident}) without matching begin")
                out.append(Example(*cur))
                cur = None
            continue
        (cur[1] if cur is not None else loose).add(c)
    if cur is not None:
        raise LoadError(f"{source}: example {cur[0]} not closed")
    if not out:
        return [Example(os.path.splitext(os.path.basename(source))[0], loose)]
    if len(loose):
        raise LoadError(f"{source}: clauses outside begin/end example blocks")
    return out


def load_examples(path: str, background: str | None = None) -> ExampleDb:
    """A directory of .pl files (one example each, by file name order) or
    one file with begin(example,Id). ... end(example,Id). blocks."""
    if os.path.isdir(path):
        exs = []
        for name in sorted(os.listdir(path)):
            if name.endswith(".pl"):
                fp = os.path.join(path, name)
                with open(fp, encoding="utf-8") as f:
                    text = f.read()
                found = _split_examples(text, fp)
                if len(found) == 1:
                    found[0].id = os.path.splitext(name)[0]
                exs.extend(found)
    else:
        with open(path, encoding="utf-8") as f:
            exs = _split_examples(f.read(), path)
    bg = None
    if background:
        with open(background, encoding="utf-8") as f:
            bg = S.parse_program(f.read())
    return ExampleDb(exs, bg)


def dump_examples(db: ExampleDb) -> str:
    parts = []
    for ex in db.examples:
        parts.append(f"begin(example,{ex.id}).\n")
        parts.append(S.format_program(ex.program))
        parts.append(f"end(example,{ex.id}).\n")
    return "".join(parts)


# -- strategies ---------------------------------------------------------------------


class Strategy(enum.Enum):
    META_CALL = "metacall"
    COMPILE_AND_RUN = "classical"
    CONTROL_FLOW = "cf"
    LAZY_CONTROL_FLOW = "lazy-cf"

    @classmethod
    def parse(cls, s: str) -> "Strategy":
        s = s.lower().replace("_", "-")
        aliases = {"meta-call": "metacall", "compile-and-run": "classical",
                   "control-flow": "cf", "lazy-control-flow": "lazy-cf", "lazy": "lazy-cf"}
        s = aliases.get(s, s)
        for st in cls:
            if st.value == s:
                return st
        raise ValueError(f"unknown strategy {s!r}")


@dataclass
class RunOptions:
    granularity: Granularity = Granularity.PER_GOAL
    copy: bool = True
    collect: bool = False
    validate: bool = False
    workers: int = 1
    repetitions: int = 1
    specialize: bool = True


@dataclass
class ResultMatrix:
    cells: list  # rows = queries, columns = examples
    example_ids: list
    comp_ms: float | None = 0.0
    exec_ms: float | None = 0.0
    total_ms: float = 0.0
    goals_total: int = 0
    goals_compiled: int = 0
    goals_reached: int = 0
    instructions_executed: int = 0
    collections: int = 0
    validation_problems: list = field(default_factory=list)

    @property
    def unused_pct(self) -> float:
        if not self.goals_total:
            return 0.0
        return 100.0 * (1 - self.goals_reached / self.goals_total)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.cells), len(self.example_ids)

    def format(self) -> str:
        lines = ["query " + " ".join(str(i) for i in self.example_ids)]
        for q, row in enumerate(self.cells):
            lines.append(f"q{q} " + " ".join("1" if c else "0" for c in row))
        return "\n".join(lines)


def intern_scattered(arena: Arena, ast, filler: int = 3) -> tuple[int, dict]:
    """Build a query term the way a query generator leaves it: each goal in
    its own region with unrelated cells allocated in between, and the
    control skeleton last."""
    cells: dict = {}
    places = {}
    goals = S.goals_of(ast)
    for i, g in enumerate(goals):
        places[f"$g{i}"] = intern_term(arena, g, cells)
        if filler:
            arena.alloc(filler)
    it = iter(range(len(goals)))

    def skel(n):
        if isinstance(n, S.Goal):
            return S.Var(f"$g{next(it)}")
        if isinstance(n, S.Conj):
            return S.Conj(tuple(skel(c) for c in n.items))
        return S.Disj(tuple(skel(c) for c in n.items), n.pack_id)

    sk = skel(ast)
    refs = dict(places)
    h = intern_term(arena, sk, refs)
    if isinstance(sk, S.Var):
        h = places["$g0"]
    return h, cells


def _copy(arena: Arena, h: int, cells: dict) -> tuple[int, dict]:
    vm: dict = {}
    h2 = copy_term_contiguous(arena, h, vm)
    return h2, {n: vm[a] for n, a in cells.items() if a in vm}


class _Unit:
    """One compiled query (or pack) living in a worker's arena."""

    def __init__(self, block=None, info=None, handle=None, n_queries=0, row=0):
        self.block = block
        self.info = info
        self.handle = handle
        self.n_queries = n_queries
        self.row = row
        self.reach = [0] * (info.goal_count if info is not None else 0)

    def roots(self) -> list:
        return [self.block] if self.block is not None else [self.info]


def _prepare(arena: Arena, work, strategy: Strategy, opts: RunOptions) -> list[_Unit]:
    units = []
    if isinstance(work, PackTree):
        nq = len(work.leaves())
        if strategy is Strategy.COMPILE_AND_RUN:
            raise StrategyMismatch("query packs need control-flow or lazy control-flow code")
        if strategy is Strategy.META_CALL:
            ast = pack_ast(work, packed=False, markers=True)
            h, cells = intern_scattered(arena, ast)
            units.append(_Unit(info=QueryInfo.of_term(arena, h, cells), handle=h, n_queries=nq))
        elif strategy is Strategy.CONTROL_FLOW:
            units.append(_Unit(compile_cf_pack(arena, work, opts.specialize), n_queries=nq))
        else:
            units.append(_Unit(compile_lazy_pack_entry(arena, work, opts.specialize), n_queries=nq))
        return units
    for row, q in enumerate(work):
        if strategy is Strategy.COMPILE_AND_RUN:
            units.append(_Unit(compile_classical(arena, q), row=row))
            continue
        h, cells = intern_scattered(arena, q)
        if strategy is Strategy.META_CALL:
            units.append(_Unit(info=QueryInfo.of_term(arena, h, cells), handle=h, row=row))
            continue
        if opts.copy:
            h, cells = _copy(arena, h, cells)
        if strategy is Strategy.CONTROL_FLOW:
            b = compile_cf(arena, h, cells, opts.specialize)
        else:
            b = compile_lazy_entry(arena, h, opts.granularity, cells, opts.specialize)
        units.append(_Unit(b, row=row))
    return units


def _compile_all(arena, work, strategy, opts) -> tuple[list[_Unit], float]:
    t0 = time.perf_counter_ns()
    units = _prepare(arena, work, strategy, opts)
    return units, (time.perf_counter_ns() - t0) / 1e6


@dataclass
class _Partial:
    results: dict  # example index -> list of row bitsets
    comp_ms: float
    exec_ms: float
    reach: list
    compiled: list
    instructions: int
    collections: int
    problems: list


def _run_slice(work, db: ExampleDb, indices: list[int], strategy: Strategy,
               opts: RunOptions) -> _Partial:
    arena = Arena()
    units, comp_ms = _compile_all(arena, work, strategy, opts)
    m = Machine(arena)
    results: dict = {}
    instructions = 0
    collections = 0
    problems: list = []
    t0 = time.perf_counter_ns()
    for ex in indices:
        m.program = db.view(ex)
        col = []
        for u in units:
            if u.block is not None:
                r = m.run_code(u.block)
                if u.n_queries:
                    col.extend(m.pack_hits)
                else:
                    col.append(r.succeeded)
            else:
                r = m.meta_call(u.handle, u.info, n_queries=u.n_queries)
                for i, c in enumerate(m.goal_calls):
                    u.reach[i] += c
                if u.n_queries:
                    col.extend(m.pack_hits)
                else:
                    col.append(r.succeeded)
            instructions += r.counters["instructions_executed"]
        results[ex] = col
        if opts.collect:
            roots = [r for u in units for r in u.roots()]
            collect(arena, roots, m.trail)
            m.code_mark = 0
            collections += 1
            for u in units:
                if u.block is None:
                    u.handle = u.info.handle
            if opts.validate:
                problems.extend(validate(arena))
    exec_ms = (time.perf_counter_ns() - t0) / 1e6
    reach = []
    compiled = []
    for u in units:
        if u.block is not None:
            reach.append([c > 0 for c in u.block.calls])
            compiled.append(list(map(bool, u.block.compiled)))
        else:
            reach.append([c > 0 for c in u.reach])
            compiled.append([False] * len(u.reach))
    return _Partial(results, comp_ms, exec_ms, reach, compiled, instructions, collections, problems)


def _goals_total(work) -> int:
    if isinstance(work, PackTree):
        return work.goal_count()
    return sum(len(S.goals_of(q)) for q in work)


def _n_rows(work) -> int:
    return len(work.leaves()) if isinstance(work, PackTree) else len(work)


def run_strategy(work, db: ExampleDb, strategy: Strategy, options: RunOptions | None = None,
                 **kw) -> ResultMatrix:
    """Compile ``work`` (a list of query ASTs or a PackTree) once per worker
    and run it on every example.

    Each repetition starts from a fresh arena; times are medians over the
    repetitions, the other fields come from the last one.
    """
    opts = options or RunOptions(**kw)
    if opts.repetitions < 1 or opts.workers < 1:
        raise ValueError("repetitions and workers must be at least 1")
    n = len(db)
    slices = [list(range(w, n, opts.workers)) for w in range(min(opts.workers, max(n, 1)))]
    comp, exe, tot = [], [], []
    parts: list[_Partial] = []
    for _ in range(opts.repetitions):
        t0 = time.perf_counter_ns()
        if len(slices) == 1:
            parts = [_run_slice(work, db, slices[0], strategy, opts)]
        else:
            with ThreadPoolExecutor(len(slices)) as pool:
                parts = list(pool.map(lambda ix: _run_slice(work, db, ix, strategy, opts), slices))
        tot.append((time.perf_counter_ns() - t0) / 1e6)
        comp.append(max(p.comp_ms for p in parts))
        exe.append(sum(p.exec_ms for p in parts))
    rows = _n_rows(work)
    cells = [[False] * n for _ in range(rows)]
    for p in parts:
        for ex, col in p.results.items():
            for q, c in enumerate(col):
                cells[q][ex] = bool(c)
    reached = compiled = 0
    for u in range(len(parts[0].reach)):
        for g in range(len(parts[0].reach[u])):
            reached += any(p.reach[u][g] for p in parts)
            compiled += any(p.compiled[u][g] for p in parts)
    lazy = strategy is Strategy.LAZY_CONTROL_FLOW
    mat = ResultMatrix(
        cells, db.ids,
        comp_ms=None if lazy else statistics.median(comp),
        exec_ms=None if lazy else statistics.median(exe),
        total_ms=statistics.median(tot),
        goals_total=_goals_total(work),
        goals_compiled=compiled,
        goals_reached=reached,
        instructions_executed=sum(p.instructions for p in parts),
        collections=sum(p.collections for p in parts),
        validation_problems=[x for p in parts for x in p.problems],
    )
    return mat
