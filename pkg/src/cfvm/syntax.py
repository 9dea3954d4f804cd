"""Minimal logic-program syntax: AST, parser and printer.

Queries are ``?- Body.`` where Body is built from goals with ``,`` and
``;`` (``,`` binds tighter).  Programs are facts and ``Head :- Body.``
clauses.  Only four operator goals are understood: ``<``, ``>``, ``=``
and ``\\=``.  Cut, negation and if-then-else are rejected.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

BUILTIN_OPS = ("<", ">", "=", "\\=")


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{msg} at line {line}, column {col}")
        self.msg = msg
        self.line = line
        self.col = col


class UnsupportedSyntax(ParseError):
    pass


# -- AST -------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Atom:
    name: str


@dataclass(frozen=True, slots=True)
class Int:
    value: int


@dataclass(frozen=True, slots=True)
class Struct:
    name: str
    args: tuple


@dataclass(frozen=True, slots=True)
class Goal:
    name: str
    args: tuple = ()

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def key(self) -> tuple[str, int]:
        return (self.name, len(self.args))


@dataclass(frozen=True, slots=True)
class Conj:
    items: tuple


@dataclass(frozen=True, slots=True)
class Disj:
    items: tuple
    # set only for query-pack disjunctions
    pack_id: int | None = field(default=None, compare=True)


TRUE = Goal("true")


@dataclass
class Clause:
    head: Goal
    body: object = None  # QueryAst or None for facts


@dataclass
class Program:
    """Predicates keyed by (name, arity), clause order preserved."""

    preds: dict = field(default_factory=dict)

    def add(self, clause: Clause) -> None:
        self.preds.setdefault(clause.head.key, []).append(clause)

    def clauses(self, key) -> list:
        return self.preds.get(key, [])

    def __len__(self) -> int:
        return sum(len(v) for v in self.preds.values())

    def all_clauses(self):
        for cls in self.preds.values():
            yield from cls


def conj(items) -> object:
    """Build a conjunction node, flattening nested conjunctions."""
    flat = []
    for it in items:
        if isinstance(it, Conj):
            flat.extend(it.items)
        else:
            flat.append(it)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return Conj(tuple(flat))


def disj(items, pack_id: int | None = None) -> object:
    flat = []
    for it in items:
        if isinstance(it, Disj) and it.pack_id is None and pack_id is None:
            flat.extend(it.items)
        else:
            flat.append(it)
    if len(flat) == 1 and pack_id is None:
        return flat[0]
    return Disj(tuple(flat), pack_id)


def goals_of(node) -> list[Goal]:
    """All GOAL nodes of a query AST, left to right."""
    out: list[Goal] = []
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Goal):
            out.append(n)
        else:
            stack.extend(reversed(n.items))
    return out


def term_vars(t, acc: list | None = None) -> list[str]:
    """Variable names of a term or AST node in first-occurrence order."""
    out = [] if acc is None else acc
    seen = set(out)
    stack = [t]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            if n.name not in seen:
                seen.add(n.name)
                out.append(n.name)
        elif isinstance(n, (Struct, Goal)):
            stack.extend(reversed(n.args))
        elif isinstance(n, (Conj, Disj)):
            stack.extend(reversed(n.items))
    return out


# -- printing ----------------------------------------------------------------

_PLAIN_ATOM = re.compile(r"^[a-z][A-Za-z0-9_]*$")


def format_atom(name: str) -> str:
    if _PLAIN_ATOM.match(name) or name in ("[]",):
        return name
    return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"


def format_term(t) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Int):
        return str(t.value)
    if isinstance(t, Atom):
        return format_atom(t.name)
    if isinstance(t, (Struct, Goal)):
        if isinstance(t, Goal) and t.name in BUILTIN_OPS and len(t.args) == 2:
            return f"{format_term(t.args[0])}{t.name}{format_term(t.args[1])}"
        if not t.args:
            return format_atom(t.name)
        return format_atom(t.name) + "(" + ",".join(format_term(a) for a in t.args) + ")"
    raise TypeError(f"not a term: {t!r}")


def format_body(node) -> str:
    if isinstance(node, Goal):
        return format_term(node)
    if isinstance(node, Conj):
        return ", ".join(format_body(c) for c in node.items)
    if isinstance(node, Disj):
        return "( " + " ; ".join(format_body(c) for c in node.items) + " )"
    raise TypeError(f"not a query node: {node!r}")


def format_query(node) -> str:
    return "?- " + format_body(node) + "."


def format_clause(cl: Clause) -> str:
    head = format_term(cl.head)
    if cl.body is None:
        return head + "."
    return head + " :- " + format_body(cl.body) + "."


def format_program(prog: Program) -> str:
    return "".join(format_clause(c) + "\n" for c in prog.all_clauses())


# -- tokenizer ---------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>%[^\n]*)
  | (?P<unsup>!|\\\+|->)
  | (?P<neck>:-)
  | (?P<query>\?-)
  | (?P<op>\\=|<|>|=)
  | (?P<int>-?\d+)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<atom>[a-z][A-Za-z0-9_]*)
  | (?P<qatom>'(?:[^'\\]|\\.)*')
  | (?P<punct>[(),;])
  | (?P<end>\.(?=\s|%|$))
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int
    width: int = 0


def tokenize(text: str) -> list[Token]:
    toks: list[Token] = []
    pos = 0
    line, line_start = 1, 0
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "unsup":
            raise UnsupportedSyntax(f"unsupported construct {s!r}", line, col)
        if kind not in ("ws", "comment"):
            if kind == "qatom":
                s = re.sub(r"\\(.)", r"\1", s[1:-1])
                kind = "atom"
            toks.append(Token(kind, s, line, col, len(m.group())))
        nl = m.group().count("\n")
        if nl:
            line += nl
            line_start = pos + m.group().rindex("\n") + 1
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


# -- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self._anon = itertools.count(1)

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def error(self, msg: str, cls=ParseError):
        raise cls(msg, self.tok.line, self.tok.col)

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            self.error(f"expected {want!r}, found {t.text or t.kind!r}")
        return self.next()

    def at(self, kind: str, text: str | None = None) -> bool:
        t = self.tok
        return t.kind == kind and (text is None or t.text == text)

    # terms

    def term(self):
        t = self.tok
        if t.kind == "var":
            self.next()
            if t.text == "_":
                return Var(f"_{next(self._anon)}")
            return Var(t.text)
        if t.kind == "int":
            self.next()
            return Int(int(t.text))
        if t.kind == "atom":
            self.next()
            if self.at("punct", "(") and self._adjacent(t):
                args = self.args()
                return Struct(t.text, args)
            return Atom(t.text)
        self.error(f"expected a term, found {t.text or t.kind!r}")

    def _adjacent(self, name_tok: Token) -> bool:
        nxt = self.tok
        return nxt.line == name_tok.line and nxt.col == name_tok.col + name_tok.width

    def args(self) -> tuple:
        self.expect("punct", "(")
        out = [self.term()]
        while self.at("punct", ","):
            self.next()
            out.append(self.term())
        self.expect("punct", ")")
        return tuple(out)

    # bodies

    def goal(self):
        start = self.tok
        if self.at("punct", "("):
            self.next()
            node = self.body()
            self.expect("punct", ")")
            return node
        lhs = self.term()
        if self.at("op"):
            op = self.next().text
            rhs = self.term()
            return Goal(op, (lhs, rhs))
        if isinstance(lhs, Atom):
            return Goal(lhs.name)
        if isinstance(lhs, Struct):
            return Goal(lhs.name, lhs.args)
        raise ParseError("goal is not callable", start.line, start.col)

    def conjunction(self):
        items = [self.goal()]
        while self.at("punct", ","):
            self.next()
            items.append(self.goal())
        return conj(items)

    def body(self):
        items = [self.conjunction()]
        while self.at("punct", ";"):
            self.next()
            items.append(self.conjunction())
        return disj(items)

    def query(self):
        self.expect("query")
        node = self.body()
        self.expect("end")
        return node

    def clause(self) -> Clause:
        start = self.tok
        if self.at("neck"):
            self.error("directives are not supported", UnsupportedSyntax)
        head = self.term()
        if isinstance(head, Atom):
            head = Goal(head.name)
        elif isinstance(head, Struct):
            head = Goal(head.name, head.args)
        else:
            raise ParseError("clause head is not callable", start.line, start.col)
        body = None
        if self.at("neck"):
            self.next()
            body = self.body()
        self.expect("end")
        return Clause(head, body)


def parse_query(text: str):
    """Parse a single ``?- Body.`` query into an AST."""
    p = _Parser(text)
    node = p.query()
    if not p.at("eof"):
        p.error("trailing input after query")
    return node


def parse_query_file(text: str) -> list:
    p = _Parser(text)
    out = []
    while not p.at("eof"):
        out.append(p.query())
    return out


def parse_program(text: str) -> Program:
    p = _Parser(text)
    prog = Program()
    while not p.at("eof"):
        prog.add(p.clause())
    return prog


def parse_clauses(text: str) -> list[Clause]:
    p = _Parser(text)
    out = []
    while not p.at("eof"):
        out.append(p.clause())
    return out
