import string

from hypothesis import strategies as st

from cfvm import syntax as S

ATOMS = st.sampled_from(["a", "b", "c", "nil", "foo"])
VARS = st.sampled_from(["X", "Y", "Z", "W", "V"])


def terms(max_leaves=12):
    leaf = st.one_of(
        ATOMS.map(S.Atom),
        st.integers(-50, 50).map(S.Int),
        VARS.map(S.Var),
    )
    return st.recursive(
        leaf,
        lambda kids: st.builds(
            lambda f, args: S.Struct(f, tuple(args)),
            st.sampled_from(["f", "g", "h"]),
            st.lists(kids, min_size=1, max_size=3),
        ),
        max_leaves=max_leaves,
    )


def goals():
    return st.builds(
        lambda p, args: S.Goal(p, tuple(args)),
        st.sampled_from(["p", "q", "r"]),
        st.lists(terms(4), min_size=0, max_size=3),
    )


def bodies():
    return st.recursive(
        goals(),
        lambda kids: st.one_of(
            st.lists(kids, min_size=2, max_size=3).map(S.conj),
            st.lists(kids, min_size=2, max_size=3).map(S.disj),
        ),
        max_leaves=8,
    )


def canon(t, m=None):
    """Rename variables by first occurrence so structurally equal terms compare equal."""
    if m is None:
        m = {}
    if isinstance(t, S.Var):
        if t.name not in m:
            m[t.name] = S.Var(f"V{len(m)}")
        return m[t.name]
    if isinstance(t, S.Struct):
        return S.Struct(t.name, tuple(canon(a, m) for a in t.args))
    return t


ACCEPTANCE_LINES: list = []


def report(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
