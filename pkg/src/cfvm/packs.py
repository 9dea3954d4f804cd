"""Query packs: left-factoring a set of conjunctive queries into a tree.

Variables are renamed canonically (A, B, C, ... by first occurrence within
each query) before factoring, so two goals match when they are equal up to
that renaming.  Because the numbering is global from the start of a query,
a shared prefix has the same canonical names in every query that uses it
and suffix variables can never clash with prefix variables.  Each leaf
keeps the map back to the original names.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import syntax as S
from .querygen import var_name

LEAF_NAME = "$leaf"


class UnsupportedInput(ValueError):
    pass


@dataclass
class PackTree:
    prefix: list
    children: list = field(default_factory=list)
    query_id: int | None = None
    names: dict = field(default_factory=dict)  # leaf only: canonical -> original
    node_id: int | None = None  # internal nodes, pre-order

    @property
    def is_leaf(self) -> bool:
        return self.query_id is not None

    def leaves(self) -> list["PackTree"]:
        out = []
        stack = [self]
        while stack:
            n = stack.pop()
            if n.is_leaf:
                out.append(n)
            else:
                stack.extend(reversed(n.children))
        return out

    def internal_nodes(self) -> list["PackTree"]:
        out = []
        stack = [self]
        while stack:
            n = stack.pop()
            if not n.is_leaf:
                out.append(n)
                stack.extend(reversed(n.children))
        return out

    def goal_count(self) -> int:
        return len(self.prefix) + sum(c.goal_count() for c in self.children)

    def format(self, indent: int = 0) -> str:
        pad = "  " * indent
        goals = ", ".join(S.format_term(g) for g in self.prefix) or "true"
        if self.is_leaf:
            line = f"{pad}{goals}  => q{self.query_id}\n"
            return line
        head = f"{pad}{goals}  [node {self.node_id}]\n"
        return head + "".join(c.format(indent + 1) for c in self.children)


def _conj_goals(q) -> list:
    if isinstance(q, S.Goal):
        return [q]
    if isinstance(q, S.Conj) and all(isinstance(g, S.Goal) for g in q.items):
        return list(q.items)
    raise UnsupportedInput("pack input queries must be plain conjunctions of goals")


def _rename(t, m: dict):
    if isinstance(t, S.Var):
        return S.Var(m[t.name])
    if isinstance(t, S.Struct):
        return S.Struct(t.name, tuple(_rename(a, m) for a in t.args))
    if isinstance(t, S.Goal):
        return S.Goal(t.name, tuple(_rename(a, m) for a in t.args))
    return t


def canonical(goals: list) -> tuple[list, dict]:
    """Rename variables by first occurrence; returns goals and canonical->original."""
    fwd: dict[str, str] = {}
    for name in S.term_vars(S.Conj(tuple(goals)) if len(goals) > 1 else goals[0]):
        fwd[name] = var_name(len(fwd))
    return [_rename(g, fwd) for g in goals], {v: k for k, v in fwd.items()}


def build_pack(queries: list) -> PackTree:
    if not queries:
        raise UnsupportedInput("empty query set")
    canon = []
    back = []
    for q in queries:
        gs, names = canonical(_conj_goals(q))
        canon.append(gs)
        back.append(names)

    def build(group: list[int], start: int) -> PackTree:
        if len(group) == 1:
            q = group[0]
            return PackTree(canon[q][start:], query_id=q, names=back[q])
        k = start
        while all(len(canon[q]) > k for q in group) and all(
            canon[q][k] == canon[group[0]][k] for q in group
        ):
            k += 1
        node = PackTree(canon[group[0]][start:k])
        parts: dict = {}
        order = []
        for q in group:
            if len(canon[q]) == k:
                order.append([q])  # query ends here: its own empty-prefix leaf
                continue
            g = canon[q][k]
            if g not in parts:
                parts[g] = []
                order.append(parts[g])
            parts[g].append(q)
        node.children = [build(sub, k) for sub in order]
        return node

    tree = build(list(range(len(queries))), 0)
    for i, n in enumerate(tree.internal_nodes()):
        n.node_id = i
    return tree


def path_goals(tree: PackTree, query_id: int) -> list:
    """Concatenated prefixes from the root to leaf ``query_id``, renamed
    back to the leaf's original variable names."""

    def find(n: PackTree, acc: list):
        acc = acc + n.prefix
        if n.is_leaf:
            return (acc, n) if n.query_id == query_id else None
        for c in n.children:
            r = find(c, acc)
            if r:
                return r
        return None

    r = find(tree, [])
    if r is None:
        raise KeyError(query_id)
    goals, leaf = r
    return [_rename(g, leaf.names) for g in goals]


def leaf_goal(query_id: int) -> S.Goal:
    return S.Goal(LEAF_NAME, (S.Int(query_id),))


def pack_ast(tree: PackTree, packed: bool = True, markers: bool = True):
    """Lower a pack tree to a query AST.

    With ``packed`` the disjunctions carry their pack node ids (compiled to
    pack instructions); ``markers`` appends a '$leaf'(Q) goal at each leaf.
    """

    def lower(n: PackTree):
        items = list(n.prefix)
        if n.is_leaf:
            if markers:
                items.append(leaf_goal(n.query_id))
        else:
            alts = [lower(c) for c in n.children]
            if packed:
                items.append(S.Disj(tuple(alts), n.node_id))
            else:
                items.append(S.disj(alts))
        return S.conj(items)

    return lower(tree)


def pack_to_disjunction(tree: PackTree):
    """The ordinary disjunctive query with the same tree shape."""
    return pack_ast(tree, packed=False, markers=False)


@dataclass
class PackTable:
    """Runtime bookkeeping for one pack: per node and child, how many leaves
    below it have not succeeded yet."""

    n_queries: int
    initial: list  # node id -> list of leaf counts per child
    paths: list  # query id -> [(node id, child index), ...] root first
    remaining: list = field(default_factory=list)
    done: int = 0

    @classmethod
    def from_tree(cls, tree: PackTree) -> "PackTable":
        nodes = tree.internal_nodes()
        initial = [None] * len(nodes)
        paths: list = [None] * len(tree.leaves())

        def walk(n: PackTree, path: list) -> int:
            if n.is_leaf:
                paths[n.query_id] = path
                return 1
            counts = [walk(c, path + [(n.node_id, i)]) for i, c in enumerate(n.children)]
            initial[n.node_id] = counts
            return sum(counts)

        walk(tree, [])
        t = cls(len(paths), initial, paths)
        t.reset()
        return t

    def reset(self) -> None:
        self.remaining = [list(c) for c in self.initial]
        self.done = 0

    def active(self, node: int, child: int) -> bool:
        return self.remaining[node][child] > 0

    def report(self, query_id: int):
        """Record a leaf success.  Returns the outermost (node, child) whose
        subtree became exhausted, or None."""
        self.done += 1
        outer = None
        for node, child in self.paths[query_id]:
            r = self.remaining[node]
            r[child] -= 1
            if r[child] == 0 and outer is None:
                outer = (node, child)
        return outer

    @property
    def all_done(self) -> bool:
        return self.done >= self.n_queries
