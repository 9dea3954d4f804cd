"""The emulator.

One loop runs all instruction sets plus a meta-call interpreter.  The
machine is in one of two modes: executing code at P, or solving a goal term
(``self.goal``) with continuation ``self.cont``.  cf_call switches from code
to goal mode; a continuation of kind CodeCont switches back.

Continuations are None (the query is done), CodeCont(addr, E) or
GoalCont(goal, next).  Environments are Frame objects linked through
``prev``; choice points keep a reference to the frame they protect, so a
frame popped by deallocate stays alive as long as some choice point needs it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import code as C
from . import syntax as S
from .code import CodeBlock, OPCODES, QueryInfo, WIDTH, write
from .terms import (
    ATOM, EMPTY, F_COMMA, F_LEAF, F_PACK, F_SEMI, INT, LABEL, REF, STRUCT, SYMBOLS,
    VAR, Arena, ContractError, Trail, intern_term, render, sym, undo_to, unify,
)

log = logging.getLogger(__name__)

_TRUE = sym("true")
_BUILTIN_SYMS = {sym(n): n for n in S.BUILTIN_OPS}

RUNNING, SUCCESS, FAILED, HALTED = range(4)

CP_CODE, CP_LAZY, CP_CLAUSE, CP_META, CP_PACK = range(5)


class MachineError(Exception):
    pass


class Frame:
    __slots__ = ("cont", "prev", "slots")

    def __init__(self, cont, prev, size: int):
        self.cont = cont
        self.prev = prev
        self.slots = [None] * size


class CodeCont:
    __slots__ = ("addr", "E")

    def __init__(self, addr: int, E):
        self.addr = addr
        self.E = E


class GoalCont:
    __slots__ = ("goal", "next")

    def __init__(self, goal: int, nxt):
        self.goal = goal
        self.next = nxt


class ChoicePoint:
    __slots__ = ("kind", "alt", "E", "CP", "trail", "top", "cont",
                 "args", "clauses", "index", "site", "term", "K", "node")

    def __init__(self, kind: int, E, CP, trail: int, top: int):
        self.kind = kind
        self.E = E
        self.CP = CP
        self.trail = trail
        self.top = top
        self.alt = None
        self.cont = None


@dataclass
class SolveResult:
    succeeded: bool
    bindings: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)
    solutions: int = 0

    def outcome(self) -> tuple:
        return self.succeeded, tuple(sorted(self.bindings.items()))


class Counters:
    def __init__(self):
        self.reset()

    def reset(self) -> None:
        self.instructions = 0
        self.op_counts = [0] * len(OPCODES)
        self.resolutions = 0
        self.builtins = 0
        self.choicepoints = 0
        self.expansions = 0
        self.meta_steps = 0

    def snapshot(self) -> dict:
        d = {
            "instructions_executed": self.instructions,
            "resolutions": self.resolutions,
            "builtins": self.builtins,
            "choicepoints": self.choicepoints,
            "expansions": self.expansions,
            "meta_steps": self.meta_steps,
        }
        for i, n in enumerate(self.op_counts):
            if n:
                d["op." + OPCODES[i]] = n
        return d


# -- clause store -----------------------------------------------------------------


def _clause_table(program) -> dict:
    """Per program, (symbol id, arity) -> [(head args, body or None)]."""
    tab = getattr(program, "_cfvm_table", None)
    if tab is None:
        tab = {}
        for (name, n), cls in program.preds.items():
            tab[(sym(name), n)] = [(c.head.args, c.body) for c in cls]
        try:
            program._cfvm_table = tab
        except AttributeError:
            pass
    return tab


def unify_head(arena: Arena, trail: Trail, pats: tuple, args, env: dict) -> bool:
    """Unify clause head argument ASTs against argument cells.

    Clause variables are bound by recording the cell they meet in ``env``,
    so matching allocates nothing unless a compound head argument meets an
    unbound variable.  On failure the caller undoes the trail.
    """
    tags, vals = arena.tags, arena.vals
    stack = list(zip(pats, args))
    while stack:
        p, a = stack.pop()
        if isinstance(p, S.Var):
            prev = env.get(p.name)
            if prev is None:
                env[p.name] = a
            elif not unify(arena, prev, a, trail):
                return False
            continue
        while tags[a] == REF:
            a = vals[a]
        t = tags[a]
        if isinstance(p, S.Atom):
            want_t, want_v = ATOM, sym(p.name)
        elif isinstance(p, S.Int):
            want_t, want_v = INT, p.value
        else:
            if t == VAR:
                h = intern_term(arena, p, env)
                trail.bind(a, REF, h)
            elif t == STRUCT and vals[a] == (sym(p.name), len(p.args)):
                stack.extend((sub, a + i + 1) for i, sub in enumerate(p.args))
            else:
                return False
            continue
        if t == VAR:
            trail.bind(a, want_t, want_v)
        elif t != want_t or vals[a] != want_v:
            return False
    return True


# -- built-ins ------------------------------------------------------------------------


class BuiltinTypeError(TypeError):
    pass


def eval_builtin(arena: Arena, trail: Trail, op: str, a: int, b: int) -> bool:
    """'<', '>', '=', '\\='.  Comparisons need integers on both sides."""
    if op == "=":
        return unify(arena, a, b, trail)
    if op == "\\=":
        mark = trail.mark()
        ok = unify(arena, a, b, trail)
        undo_to(trail, mark)
        return not ok
    x, y = arena.deref(a), arena.deref(b)
    if arena.tags[x] != INT or arena.tags[y] != INT:
        raise BuiltinTypeError(f"{op}/2 needs integer arguments, got "
                               f"{render(arena, x)} and {render(arena, y)}")
    if op == "<":
        return arena.vals[x] < arena.vals[y]
    if op == ">":
        return arena.vals[x] > arena.vals[y]
    raise MachineError(f"unknown built-in {op}")


_CF_BUILTIN_NAME = {v: k for k, v in C.CF_BUILTINS.items()}
_B_BUILTIN_NAME = {v: k for k, v in C.B_BUILTINS.items()}


# -- the machine ---------------------------------------------------------------------


class Machine:
    def __init__(self, arena: Arena | None = None, program=None, trace: bool = False):
        self.arena = arena if arena is not None else Arena()
        self.trail = Trail(self.arena)
        self.program = program if program is not None else S.Program()
        self.counters = Counters()
        self.trace = trace
        self.trace_lines: list[str] = []
        self.on_expand = None  # callback(machine, block, event) after each JIT step
        self._unknown: set = set()
        self.code_mark = 0
        self.block: CodeBlock | None = None
        self.info: QueryInfo | None = None
        self.all_solutions = False
        self.pack_hits: list | None = None
        self._reset_regs()

    def _reset_regs(self) -> None:
        self.P = -1
        self.E = None
        self.CP = None
        self.goal = None
        self.cont = None
        self.B: list[ChoicePoint] = []
        self.A = [None] * 8
        self.answers: list[int] = []
        self.status = RUNNING

    # public entry points

    def meta_call(self, goal: int, info: QueryInfo | None = None, all_solutions: bool = False,
                  n_queries: int = 0) -> SolveResult:
        if info is None:
            info = QueryInfo.of_term(self.arena, goal)
        return self._run(None, goal, info, all_solutions, n_queries)

    def run_code(self, block: CodeBlock, all_solutions: bool = False) -> SolveResult:
        if block.arena is not self.arena:
            raise ContractError("code block belongs to another arena")
        return self._run(block, None, block.query, all_solutions,
                         block.pack.n_queries if block.pack else 0)

    def run_pack(self, block: CodeBlock) -> list[bool]:
        if block.pack is None:
            raise ContractError("not a pack code block")
        self.run_code(block)
        return list(self.pack_hits)

    # driver

    def _run(self, block, goal, info, all_solutions, n_queries) -> SolveResult:
        ar = self.arena
        self._reset_regs()
        self.counters.reset()
        self.block = block
        self.info = info
        self.all_solutions = all_solutions
        self.solutions = 0
        self.first_bindings = None
        self.pack_hits = [False] * n_queries if n_queries else None
        if block is not None:
            self.A = [None] * max(8, block.max_reg + 1)
        if block is not None and block.pack is not None:
            block.pack.reset()
        trail_mark = self.trail.mark()
        run_top = ar.top
        self.code_mark = max(self.code_mark, self._code_end())
        ar.busy += 1
        try:
            if block is not None and block.answer_vars:
                base = ar.alloc(len(block.answer_vars))
                for i in range(len(block.answer_vars)):
                    ar.tags[base + i] = VAR
                self.answers = list(range(base, base + len(block.answer_vars)))
            if block is not None:
                self.P = block.entry
            else:
                self.goal = goal
            self._loop()
            if self.status == SUCCESS or (all_solutions and self.solutions):
                ok = True
            else:
                ok = False
            if ok and self.first_bindings is None:
                self.first_bindings = self._capture()
        finally:
            ar.busy -= 1
            undo_to(self.trail, trail_mark)
            self.B = []
            self.E = None
        if run_top >= self.code_mark:
            ar.truncate(run_top)
        if self.status == HALTED:
            ok = False
        return SolveResult(ok, self.first_bindings if ok else {}, self.counters.snapshot(),
                           self.solutions)

    def _code_end(self) -> int:
        best = 0
        for s, n, k in zip(self.arena.reg_start, self.arena.reg_len, self.arena.reg_kind):
            if k == "code":
                best = s + n
        return best

    def note_code(self) -> None:
        """Called after code is appended, so backtracking never truncates it."""
        self.code_mark = self.arena.top

    def _capture(self) -> dict:
        """Current values of the query variables, unbound variables named
        _1, _2, ... in order of appearance."""
        ar = self.arena
        if self.block is not None and self.block.answer_vars:
            cells = dict(zip(self.block.answer_vars, self.answers))
        elif self.info is not None:
            cells = self.info.var_cells
        else:
            cells = {}
        names: dict[int, str] = {}
        out = {}
        for name in sorted(cells):
            for a in _unbound_vars(ar, cells[name]):
                if a not in names:
                    names[a] = f"_{len(names) + 1}"
            out[name] = render(ar, cells[name], names)
        return out

    # success / failure

    def _succeed(self) -> None:
        self.solutions += 1
        if self.all_solutions:
            if self.first_bindings is None:
                self.first_bindings = self._capture()
            self._fail()
        else:
            self.status = SUCCESS

    def _push(self, kind: int) -> ChoicePoint:
        cp = ChoicePoint(kind, self.E, self.CP, self.trail.mark(), self.arena.top)
        self.B.append(cp)
        self.counters.choicepoints += 1
        return cp

    def _fail(self) -> None:
        while True:
            if not self.B:
                self.status = FAILED
                return
            cp = self.B[-1]
            undo_to(self.trail, cp.trail)
            if cp.top >= self.code_mark and cp.top < self.arena.top:
                self.arena.truncate(cp.top)
            self.E = cp.E
            self.CP = cp.CP
            self.goal = None
            k = cp.kind
            if k == CP_CODE:
                self.P = cp.alt
                return
            if k == CP_PACK:
                if cp.alt is None:
                    # trusted: kept only as the prune target of its node
                    self.B.pop()
                    continue
                self.P = cp.alt
                return
            if k == CP_LAZY:
                from .lazy import expand_disj
                self.P = expand_disj(self, cp)
                cp.kind = CP_CODE
                return
            if k == CP_META:
                self.B.pop()
                self.goal = cp.alt
                self.cont = cp.cont
                return
            # CP_CLAUSE
            self.B.pop()
            if self._try_clauses(cp.clauses, cp.index, cp.args, cp.cont):
                return

    def _proceed(self, cont) -> None:
        if cont is None:
            self._succeed()
        elif type(cont) is CodeCont:
            self.P = cont.addr
            self.E = cont.E
        else:
            self.goal = cont.goal
            self.cont = cont.next

    # resolution

    def _call_pred(self, key, args, cont) -> None:
        self.counters.resolutions += 1
        clauses = _clause_table(self.program).get(key)
        if not clauses:
            if key not in self._unknown:
                self._unknown.add(key)
                log.info("unknown predicate %s/%d fails", SYMBOLS.name(key[0]), key[1])
            self._fail()
            return
        if not self._try_clauses(clauses, 0, args, cont):
            self._fail()

    def _try_clauses(self, clauses, i, args, cont) -> bool:
        ar, trail = self.arena, self.trail
        n = len(clauses)
        while i < n:
            pats, body = clauses[i]
            mark = trail.mark()
            top = ar.top
            env: dict = {}
            if unify_head(ar, trail, pats, args, env):
                if i + 1 < n:
                    cp = ChoicePoint(CP_CLAUSE, self.E, self.CP, mark, top)
                    cp.clauses, cp.index, cp.args, cp.cont = clauses, i + 1, args, cont
                    self.B.append(cp)
                    self.counters.choicepoints += 1
                if body is None:
                    self._proceed(cont)
                else:
                    self.goal = intern_term(ar, body, env)
                    self.cont = cont
                return True
            undo_to(trail, mark)
            if top < ar.top and top >= self.code_mark:
                ar.truncate(top)
            i += 1
        return False

    def _builtin(self, name: str, a: int, b: int) -> bool:
        self.counters.builtins += 1
        try:
            return eval_builtin(self.arena, self.trail, name, a, b)
        except BuiltinTypeError as e:
            log.info("built-in type error, goal fails: %s", e)
            return False

    def _count_goal(self, g: int) -> None:
        info = self.info
        if info is not None:
            i = info.goal_ids.get(g)
            if i is not None:
                if self.block is not None:
                    self.block.calls[i] += 1
                else:
                    self.goal_calls[i] += 1

    # meta-call

    def _solve_goal(self) -> None:
        ar = self.arena
        tags, vals = ar.tags, ar.vals
        a = self.goal
        while tags[a] == REF:
            a = vals[a]
        self.counters.meta_steps += 1
        t = tags[a]
        cont = self.cont
        self.goal = None
        if t == STRUCT:
            f = vals[a]
            if f == F_COMMA:
                self.goal = a + 1
                self.cont = GoalCont(a + 2, cont)
                return
            if f == F_SEMI:
                cp = self._push(CP_META)
                cp.alt, cp.cont = a + 2, cont
                self.goal = a + 1
                self.cont = cont
                return
            if f == F_PACK:
                self.goal = a + 2
                self.cont = cont
                return
            if f == F_LEAF:
                q = vals[ar.deref(a + 1)]
                if self.pack_hits is not None:
                    self.pack_hits[q] = True
                self._fail()
                return
            self._count_goal(a)
            s, n = f
            if n == 2 and s in _BUILTIN_SYMS:
                if self._builtin(_BUILTIN_SYMS[s], a + 1, a + 2):
                    self._proceed(cont)
                else:
                    self._fail()
                return
            self._call_pred(f, [a + i for i in range(1, n + 1)], cont)
        elif t == ATOM:
            self._count_goal(a)
            if vals[a] == _TRUE:
                self._proceed(cont)
            else:
                self._call_pred((vals[a], 0), [], cont)
        else:
            raise C.ContractError(f"goal at {a} is not callable ({render(ar, a)})")

    # the loop

    def _loop(self) -> None:
        if self.block is None:
            self.goal_calls = [0] * (self.info.goal_count if self.info else 0)
        ar = self.arena
        tags, vals = ar.tags, ar.vals
        cnt = self.counters
        opc = cnt.op_counts
        while self.status == RUNNING:
            if self.goal is not None:
                self._solve_goal()
                continue
            P = self.P
            if tags[P] != C.OP:
                raise MachineError(f"no instruction at address {P}")
            op = vals[P]
            cnt.instructions += 1
            opc[op] += 1
            if self.trace:
                self._trace(P)
            if op in C.CF_CALLS:
                # the goal is counted when it is solved
                self.goal = vals[P + 1]
                self.cont = CodeCont(P + WIDTH, self.E)
            elif op == C.CF_DEALLEX:
                E = self.E
                self.goal = vals[P + 1]
                self.cont = E.cont
                self.E = E.prev
            elif op == C.TRYMEORELSE:
                cp = self._push(CP_CODE)
                cp.alt = vals[P + 1]
                self.P = P + WIDTH
            elif op == C.RETRYMEORELSE:
                self.B[-1].alt = vals[P + 1]
                self.P = P + WIDTH
            elif op == C.TRUSTMEORELSEFAIL:
                self.B.pop()
                self.P = P + WIDTH
            elif op == C.ALLOCATE:
                self.E = Frame(self.CP, self.E, vals[P + 1])
                self.P = P + WIDTH
            elif op == C.JUMP:
                self.P = vals[P + 1]
            elif op in C.CF_BUILTIN_OPS:
                a, b = vals[P + 1], vals[P + 2]
                self._count_goal(a - 1)
                if self._builtin(_CF_BUILTIN_NAME[op], a, b):
                    self.P = P + WIDTH
                else:
                    self._fail()
            elif op == C.DEALLOCATE:
                self.CP = self.E.cont
                self.E = self.E.prev
                self.P = P + WIDTH
            elif op == C.PROCEED:
                self._proceed(self.CP)
            elif op == C.FAIL:
                self._fail()
            elif op in C.LAZY_OPS:
                self._lazy(op, P)
            elif op >= C.BLDTVAR:
                self._classical(op, P)
            else:
                self._pack_op(op, P)

    def _lazy(self, op: int, P: int) -> None:
        ar = self.arena
        vals = ar.vals
        if op == C.LAZY_COMPILE:
            from .lazy import expand_lazy
            self.counters.expansions += 1
            self.P = expand_lazy(self, P)
            return
        if op == C.LAZY_TRYMEORELSE:
            cp = self._push(CP_LAZY)
        else:
            cp = self.B[-1]
            cp.kind = CP_LAZY
        cp.site = P
        cp.term = vals[P + 1]
        cp.K = vals[P + 2] if ar.tags[P + 2] == LABEL else None
        self.P = P + WIDTH

    def _pack_op(self, op: int, P: int) -> None:
        vals = self.arena.vals
        table = self.block.pack
        if op == C.PACK_TRY:
            node, child = vals[P + 1]
            cp = self._push(CP_PACK)
            cp.node = node
            cp.alt = vals[P + 2]
            self.P = P + WIDTH if table.active(node, child) else cp.alt
        elif op == C.PACK_RETRY:
            node, child = vals[P + 1]
            cp = self.B[-1]
            cp.alt = vals[P + 2]
            self.P = P + WIDTH if table.active(node, child) else cp.alt
        elif op == C.PACK_TRUST:
            node, child = vals[P + 1]
            self.B[-1].alt = None
            if table.active(node, child):
                self.P = P + WIDTH
            else:
                self._fail()
        elif op == C.PACK_REPORT:
            q = vals[P + 1]
            if self.pack_hits[q]:
                self._fail()
                return
            self.pack_hits[q] = True
            outer = table.report(q)
            if table.all_done:
                self.status = HALTED
                return
            if outer is not None:
                # prune everything tried inside the exhausted subtree
                B = self.B
                for i in range(len(B) - 1, -1, -1):
                    if B[i].kind == CP_PACK and B[i].node == outer[0]:
                        del B[i + 1:]
                        break
            self._fail()
        else:
            raise MachineError(f"invalid opcode {op} at {P}")

    def _classical(self, op: int, P: int) -> None:
        ar = self.arena
        vals = ar.vals
        A = self.A
        a1 = vals[P + 1]
        nxt = P + WIDTH
        if op == C.BLDTVAR:
            A[a1] = self.answers[vals[P + 2]]
        elif op == C.PUTPVAR:
            y, i = a1
            cell = self.answers[vals[P + 2]]
            self.E.slots[y] = cell
            A[i] = cell
        elif op == C.PUTPVAL:
            y, i = a1
            A[i] = self.E.slots[y]
        elif op == C.PUTTVAL:
            A[a1[1]] = A[a1[0]]
        elif op == C.INIT_PVAR:
            self.E.slots[a1] = self.answers[vals[P + 2]]
        elif op in (C.PUT_ATOM, C.PUT_INT, C.PUT_TERM):
            A[a1] = vals[P + 2]
        elif op == C.CALL:
            self._count_idx(vals[P + 2])
            n = a1[1]
            self._call_pred(a1, A[1:n + 1], CodeCont(nxt, self.E))
            return
        elif op == C.DEALLEX:
            self._count_idx(vals[P + 2])
            n = a1[1]
            E = self.E
            self.E = E.prev
            self._call_pred(a1, A[1:n + 1], E.cont)
            return
        elif op in _B_BUILTIN_NAME:
            self._count_idx(vals[P + 2])
            i, j = a1
            if not self._builtin(_B_BUILTIN_NAME[op], A[i], A[j]):
                self._fail()
                return
        else:
            raise MachineError(f"invalid opcode {op} at {P}")
        self.P = nxt

    def _count_idx(self, i: int) -> None:
        if self.block is not None and 0 <= i < len(self.block.calls):
            self.block.calls[i] += 1

    def _trace(self, P: int) -> None:
        line = f"{P}: {C.instruction_text(self.arena, P, self.info.names() if self.info else {})}"
        self.trace_lines.append(line)
        log.debug(line)


def _unbound_vars(arena: Arena, a: int) -> list[int]:
    out = []
    stack = [a]
    while stack:
        x = arena.deref(stack.pop())
        t = arena.tags[x]
        if t == VAR:
            out.append(x)
        elif t == STRUCT:
            stack.extend(range(x + arena.vals[x][1], x, -1))
    return out


# -- module-level conveniences ----------------------------------------------------------


def meta_call(goal: int, m: Machine, info: QueryInfo | None = None) -> SolveResult:
    return m.meta_call(goal, info)


def run_code(code: CodeBlock, m: Machine, all_solutions: bool = False) -> SolveResult:
    return m.run_code(code, all_solutions)


def run_pack_on_example(code: CodeBlock, example, m: Machine) -> list[bool]:
    m.program = example
    return m.run_pack(code)
