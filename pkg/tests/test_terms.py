import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cfvm import syntax as S
from cfvm.terms import (
    ATOM, CODE, HANDLE, INT, REF, STRUCT, TERM, VAR, Arena, CapacityError, ContractError, Trail, collect,
    copy_term_contiguous, intern_term, render, sym, to_ast, undo_to, unify, validate,
)

from conftest import canon, terms


def interned(text, arena=None, cells=None):
    ar = arena or Arena()
    t = S.parse_query(f"?- p({text}).").args[0]
    return ar, intern_term(ar, t, cells)


def test_shared_variable_cell():
    ar = Arena()
    h = intern_term(ar, S.parse_query("?- a(X,X)."))
    assert ar.tags[h] == STRUCT
    assert ar.deref(h + 1) == ar.deref(h + 2)
    assert ar.tags[ar.deref(h + 1)] == VAR


def test_structure_layout():
    ar, h = interned("f(1,g(b))")
    assert ar.vals[h] == (sym("f"), 2)
    assert ar.tags[ar.deref(h + 1)] == INT and ar.vals[ar.deref(h + 1)] == 1
    g = ar.deref(h + 2)
    assert ar.vals[g] == (sym("g"), 1)
    b = ar.deref(g + 1)
    assert ar.tags[b] == ATOM and ar.vals[b] == sym("b")


@given(terms())
@settings(max_examples=1000)
def test_intern_render_roundtrip(t):
    ar = Arena()
    h = intern_term(ar, t)
    back = S.parse_query(f"?- p({render(ar, h)}).").args[0]
    assert canon(back) == canon(t)
    assert canon(to_ast(ar, h)) == canon(t)


# -- unification against a substitution-based oracle


class OccursCheck(Exception):
    pass


def walk(t, s):
    while isinstance(t, S.Var) and t.name in s:
        t = s[t.name]
    return t


def occurs(v, t, s):
    t = walk(t, s)
    if isinstance(t, S.Var):
        return t.name == v
    if isinstance(t, S.Struct):
        return any(occurs(v, a, s) for a in t.args)
    return False


def oracle_unify(a, b, s):
    a, b = walk(a, s), walk(b, s)
    if isinstance(a, S.Var) and isinstance(b, S.Var) and a.name == b.name:
        return s
    if isinstance(a, S.Var):
        if occurs(a.name, b, s):
            raise OccursCheck
        return {**s, a.name: b}
    if isinstance(b, S.Var):
        return oracle_unify(b, a, s)
    if isinstance(a, S.Struct) and isinstance(b, S.Struct):
        if a.name != b.name or len(a.args) != len(b.args):
            return None
        for x, y in zip(a.args, b.args):
            s = oracle_unify(x, y, s)
            if s is None:
                return None
        return s
    return s if a == b else None


def resolve(t, s):
    t = walk(t, s)
    if isinstance(t, S.Struct):
        return S.Struct(t.name, tuple(resolve(a, s) for a in t.args))
    return t


def test_unify_identity_leaves_trail_empty():
    ar = Arena()
    x = ar.new_var()
    tr = Trail(ar)
    assert unify(ar, x, x, tr)
    assert len(tr) == 0


def test_unify_textbook():
    ar = Arena()
    cells = {}
    _, a = interned("f(X,a)", ar, cells)
    _, b = interned("f(b,Y)", ar, cells)
    tr = Trail(ar)
    assert unify(ar, a, b, tr)
    names = {v: k for k, v in cells.items()}
    assert render(ar, cells["X"]) == "b"
    assert render(ar, cells["Y"]) == "a"
    assert render(ar, a, names) == render(ar, b, names) == "f(b,a)"


@given(terms(8), terms(8))
@settings(max_examples=1000)
def test_unify_matches_oracle(t1, t2):
    try:
        want = oracle_unify(t1, t2, {})
    except OccursCheck:
        assume(False)
    ar = Arena()
    cells = {}
    a = intern_term(ar, t1, cells)
    b = intern_term(ar, t2, cells)
    before = ar.snapshot()
    tr = Trail(ar)
    ok = unify(ar, a, b, tr)
    assert ok == (want is not None)
    if ok:
        names = {c: n for n, c in cells.items()}
        got = to_ast(ar, a, names)
        assert to_ast(ar, b, names) == got
        assert canon(got) == canon(resolve(t1, want))
        undo_to(tr, 0)
    assert ar.snapshot() == before


def test_undo_restores_binding():
    ar = Arena()
    x = ar.new_var()
    one = intern_term(ar, S.Int(1))
    tr = Trail(ar)
    m = tr.mark()
    assert unify(ar, x, one, tr)
    assert not ar.is_unbound(x)
    undo_to(tr, m)
    assert ar.is_unbound(x)
    undo_to(tr, tr.mark())  # no-op
    assert ar.is_unbound(x)


def test_undo_unknown_mark():
    ar = Arena()
    tr = Trail(ar)
    with pytest.raises(ContractError):
        undo_to(tr, 3)


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 5), st.integers(0, 5)), max_size=40))
def test_random_bind_undo_matches_snapshot(ops):
    ar = Arena()
    vars_ = [ar.new_var() for _ in range(6)]
    consts = [intern_term(ar, S.Int(i)) for i in range(6)]
    tr = Trail(ar)
    marks = [(tr.mark(), ar.snapshot())]
    for is_mark, i, j in ops:
        if is_mark:
            marks.append((tr.mark(), ar.snapshot()))
        else:
            unify(ar, vars_[i], consts[j] if j % 2 else vars_[j], tr)
    while marks:
        m, snap = marks.pop()
        undo_to(tr, m)
        assert ar.snapshot() == snap


# -- copying


def test_copy_preserves_sharing_and_is_contiguous():
    ar = Arena()
    h = intern_term(ar, S.parse_query("?- a(X,Y), b(Y,Z)."))
    ar.alloc(5)  # unrelated allocation in between
    vm = {}
    c = copy_term_contiguous(ar, h, vm)
    start, n, kind = ar.region_of(c)
    assert kind == TERM and start == c and start + n == ar.top
    a_y = ar.deref(ar.deref(c + 1) + 2)
    b_y = ar.deref(ar.deref(c + 2) + 1)
    assert a_y == b_y
    assert all(start <= v < start + n for v in vm.values())


@given(terms())
@settings(max_examples=1000)
def test_copy_is_a_renaming(t):
    ar = Arena()
    h = intern_term(ar, t)
    c = copy_term_contiguous(ar, h)
    tr = Trail(ar)
    assert unify(ar, h, c, tr)
    # every binding made is variable-to-variable, one-to-one
    e = tr.entries
    bound = [e[i] for i in range(0, len(e), 3)]
    assert len(set(bound)) == len(bound)
    for addr in bound:
        assert ar.tags[addr] == REF and ar.tags[ar.deref(addr)] == VAR
    undo_to(tr, 0)
    assert canon(to_ast(ar, c)) == canon(t)


# -- arena and collector


def test_capacity_error():
    ar = Arena(capacity=10)
    ar.alloc(8)
    with pytest.raises(CapacityError):
        ar.alloc(5)


def test_collect_without_roots_frees_everything():
    ar = Arena()
    intern_term(ar, S.parse_query("?- a(X,f(Y))."))
    n = ar.top
    stats = collect(ar, [])
    assert ar.top == 0 and stats.freed_cells == n and stats.moved_cells == 0


def test_collect_moves_and_patches_refs():
    ar = Arena()
    dead = intern_term(ar, S.Struct("junk", (S.Int(1), S.Int(2))))
    h = intern_term(ar, S.parse_query("?- a(X,g(X,b))."))
    before = canon(to_ast(ar, h))
    stats = collect(ar, [h])
    (h2,) = stats.roots
    assert h2 < h and stats.moved_cells > 0 and stats.freed_cells > 0
    assert canon(to_ast(ar, h2)) == before
    assert validate(ar) == []
    again = collect(ar, [h2])
    assert again.moved_cells == 0 and again.roots == [h2]


@given(st.lists(terms(6), min_size=1, max_size=6), st.data())
@settings(max_examples=200)
def test_collect_keeps_live_terms(ts, data):
    ar = Arena()
    hs = [intern_term(ar, t) for t in ts]
    keep = data.draw(st.lists(st.sampled_from(range(len(ts))), unique=True))
    def joint(roots):
        return canon(S.Struct("t", tuple(to_ast(ar, r) for r in roots)))

    before = joint([hs[i] for i in keep])
    stats = collect(ar, [hs[i] for i in keep])
    assert joint(stats.roots) == before
    assert validate(ar) == []
    assert collect(ar, stats.roots).moved_cells == 0


def test_collect_refuses_live_trail():
    ar = Arena()
    x = ar.new_var()
    tr = Trail(ar)
    unify(ar, x, intern_term(ar, S.Int(3)), tr)
    with pytest.raises(ContractError):
        collect(ar, [x], tr)


def test_validate_flags_bad_pointer():
    ar = Arena()
    h = intern_term(ar, S.Struct("f", (S.Var("X"),)))
    assert validate(ar) == []
    a = ar.alloc(1, CODE)
    ar.tags[a] = HANDLE
    ar.vals[a] = a  # a term handle pointing into code
    assert validate(ar)
