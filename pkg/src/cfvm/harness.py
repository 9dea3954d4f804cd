"""Command line: gen, pack, run, bench, disasm."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import random
import sys

from . import syntax as S
from .cfcomp import compile_cf, prepare_query
from .classical import compile_classical
from .code import disassemble
from .exampledb import (
    ExampleDb, LoadError, RunOptions, Strategy, StrategyMismatch, load_examples, run_strategy,
)
from .lazy import Granularity, compile_lazy_entry
from .machine import Machine
from .packs import build_pack
from .querygen import GenParams, generate_query, total_goals
from .terms import Arena
from . import workloads

log = logging.getLogger(__name__)

CSV_COLUMNS = ["workload", "strategy", "comp_ms", "exec_ms", "total_ms", "goals_total",
               "goals_compiled", "goals_reached", "unused_pct", "instructions_executed"]

GOLDEN_QUERY = "?- a(X,Y), ( b(Y,Z) ; c(Y,Z), d(Z,U); e(a,Y) )."

GOLDEN_CF = """\
allocate 2
cf_call &a(X,Y)
trymeorelse L1
cf_deallex &b(Y,Z)
L1: retrymeorelse L2
cf_call &c(Y,Z)
cf_deallex &d(Z,U)
L2: trustmeorelsefail
cf_deallex &e(a,Y)"""

GOLDEN_CLASSICAL = """\
allocate 4
bldtvar A1
putpvar Y2 A2
call a/2
trymeorelse L1
putpval Y2 A1
bldtvar A2
deallex b/2
L1: retrymeorelse L2
putpval Y2 A1
putpvar Y3 A2
call c/2
putpval Y3 A1
bldtvar A2
deallex d/2
L2: trustmeorelsefail
putpval Y2 A2
put_atom A1 a
deallex e/2"""

# the successive listings of the lazy per-goal expansion of two queries
LAZY_LISTINGS = {
    "?- a(X,Y), b(Y,Z).": [
        "allocate 2\nlazy_compile &(a(X,Y),b(Y,Z))",
        "allocate 2\ncf_call &a(X,Y)\nlazy_compile &b(Y,Z)",
        "allocate 2\ncf_call &a(X,Y)\ncf_deallex &b(Y,Z)",
    ],
    GOLDEN_QUERY: [
        "allocate 2\nlazy_compile &(a(X,Y),(b(Y,Z);c(Y,Z),d(Z,U);e(a,Y)))",
        "allocate 2\ncf_call &a(X,Y)\nlazy_compile &(b(Y,Z);c(Y,Z),d(Z,U);e(a,Y))",
        "allocate 2\ncf_call &a(X,Y)\nlazy_trymeorelse &(c(Y,Z),d(Z,U);e(a,Y))\n"
        "lazy_compile &b(Y,Z)",
        "allocate 2\ncf_call &a(X,Y)\nlazy_trymeorelse &(c(Y,Z),d(Z,U);e(a,Y))\n"
        "cf_deallex &b(Y,Z)",
        "allocate 2\ncf_call &a(X,Y)\ntrymeorelse L1\ncf_deallex &b(Y,Z)\n"
        "L1: lazy_retrymeorelse &(e(a,Y))\nlazy_compile &(c(Y,Z),d(Z,U))",
        "allocate 2\ncf_call &a(X,Y)\ntrymeorelse L1\ncf_deallex &b(Y,Z)\n"
        "L1: lazy_retrymeorelse &(e(a,Y))\ncf_call &c(Y,Z)\ncf_deallex &d(Z,U)",
        "allocate 2\ncf_call &a(X,Y)\ntrymeorelse L1\ncf_deallex &b(Y,Z)\n"
        "L1: retrymeorelse L2\ncf_call &c(Y,Z)\ncf_deallex &d(Z,U)\n"
        "L2: trustmeorelsefail\nlazy_compile &e(a,Y)",
        GOLDEN_CF,
    ],
}

# every goal succeeds without binding anything, so listings keep their
# variable names while the query runs
GOLDEN_PROGRAM = "a(_,_). b(_,_). c(_,_). d(_,_). e(_,_)."


def seed_from(args_seed: int | None) -> int:
    env = os.environ.get("CFVM_SEED")
    if env is not None:
        return int(env)
    return args_seed if args_seed is not None else 0


def lazy_listings(query: str, g: Granularity = Granularity.PER_GOAL,
                  program: str = GOLDEN_PROGRAM) -> list[str]:
    """Disassembly after every JIT step while a backtrack-all run drives the
    lazy code through every branch."""
    ar = Arena()
    m = Machine(ar, S.parse_program(program))
    h, cells = prepare_query(ar, S.parse_query(query))
    b = compile_lazy_entry(ar, h, g, cells)
    snaps = ["\n".join(disassemble(b))]
    m.on_expand = lambda mm, bl, kind: snaps.append("\n".join(disassemble(bl)))
    m.run_code(b, all_solutions=True)
    return snaps


def _subsequence(want: list[str], got: list[str]) -> bool:
    it = iter(got)
    return all(any(w == g for g in it) for w in want)


def golden_checks() -> list[tuple[str, bool, str]]:
    """Golden comparisons: (name, passed, detail)."""
    out = []
    ar = Arena()
    h, cells = prepare_query(ar, S.parse_query(GOLDEN_QUERY))
    got = "\n".join(disassemble(compile_cf(ar, h, cells)))
    out.append(("cf listing", got == GOLDEN_CF, got))
    got = "\n".join(disassemble(compile_classical(ar, S.parse_query(GOLDEN_QUERY))))
    out.append(("classical listing", got == GOLDEN_CLASSICAL, got))
    for q, want in LAZY_LISTINGS.items():
        snaps = lazy_listings(q)
        out.append((f"lazy listings for {q}", _subsequence(want, snaps), "\n--\n".join(snaps)))
    return out


# -- subcommands ------------------------------------------------------------------------


def cmd_gen(args) -> int:
    p = GenParams(args.goals, args.branch, args.depth)
    print(S.format_query(generate_query(p)))
    print(f"% total goals: {total_goals(p)}", file=sys.stderr)
    return 0


def _read(path: str) -> str:
    with open(path, encoding="utf-8") as f:
        return f.read()


def cmd_pack(args) -> int:
    qs = S.parse_query_file(_read(args.file))
    tree = build_pack(qs)
    sys.stdout.write(tree.format())
    return 0


def _options(args) -> RunOptions:
    return RunOptions(
        granularity=Granularity.parse(args.granularity),
        copy=not args.no_copy,
        collect=args.collect,
        validate=args.collect,
        workers=args.workers,
        repetitions=getattr(args, "repetitions", 1),
        specialize=not args.no_specialize,
    )


def cmd_run(args) -> int:
    strategy = Strategy.parse(args.strategy)
    if args.pack and strategy in (Strategy.META_CALL, Strategy.COMPILE_AND_RUN):
        raise StrategyMismatch(f"--pack needs strategy cf or lazy-cf, not {strategy.value}")
    qs = S.parse_query_file(_read(args.queries))
    db = load_examples(args.examples)
    work = build_pack(qs) if args.pack else qs
    if args.trace:
        logging.getLogger("cfvm").setLevel(logging.DEBUG)
    mat = run_strategy(work, db, strategy, _options(args))
    print(mat.format())
    print(f"goals_total={mat.goals_total}")
    print(f"goals_compiled={mat.goals_compiled}")
    print(f"goals_reached={mat.goals_reached}")
    print(f"unused_pct={mat.unused_pct:.1f}")
    print(f"instructions_executed={mat.instructions_executed}")
    return 0


def _fmt_ms(v) -> str:
    return "-" if v is None else f"{v:.3f}"


def bench_rows(workload: str, work, db: ExampleDb, strategies: list[Strategy],
               opts: RunOptions) -> tuple[list[dict], dict]:
    rows = []
    mats = {}
    for st in strategies:
        mat = run_strategy(work, db, st, opts)
        label = st.value
        if st is Strategy.LAZY_CONTROL_FLOW:
            label += f"/{opts.granularity.value}"
        mats[label] = mat
        rows.append({
            "workload": workload,
            "strategy": label,
            "comp_ms": _fmt_ms(mat.comp_ms),
            "exec_ms": _fmt_ms(mat.exec_ms),
            "total_ms": _fmt_ms(mat.total_ms),
            "goals_total": mat.goals_total,
            "goals_compiled": mat.goals_compiled,
            "goals_reached": mat.goals_reached,
            "unused_pct": f"{mat.unused_pct:.1f}",
            "instructions_executed": mat.instructions_executed,
        })
    return rows, mats


def _bench_work(args):
    if args.planted is not None:
        tree, _, db = workloads.planted_pack(args.planted)
        return f"planted-{args.planted}", tree, db
    if args.queries:
        qs = S.parse_query_file(_read(args.queries))
        db = load_examples(args.examples)
        return os.path.basename(args.queries), (build_pack(qs) if args.pack else qs), db
    if args.random:
        rng = random.Random(seed_from(args.seed))
        qs = [workloads.random_query(rng) for _ in range(args.random)]
        return f"random-{args.random}", qs, workloads.random_db(rng, args.n_examples)
    p = GenParams(args.goals, args.branch, args.depth)
    qs, db = workloads.artificial(p)
    return f"G{p.G}B{p.B}D{p.D}", qs, db


def format_table(rows: list[dict]) -> str:
    widths = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in CSV_COLUMNS}
    lines = ["  ".join(c.ljust(widths[c]) for c in CSV_COLUMNS)]
    for r in rows:
        lines.append("  ".join(str(r[c]).ljust(widths[c]) for c in CSV_COLUMNS))
    return "\n".join(lines)


def cmd_bench(args) -> int:
    name, work, db = _bench_work(args)
    strategies = [Strategy.parse(s) for s in args.strategies.split(",")]
    opts = _options(args)
    rows, mats = bench_rows(name, work, db, strategies, opts)
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as f:
            f.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    print(format_table(rows), file=sys.stderr)
    cells = {k: m.cells for k, m in mats.items()}
    if len({repr(c) for c in cells.values()}) > 1:
        print("result matrices differ between strategies", file=sys.stderr)
        return 1
    return 0


def cmd_disasm(args) -> int:
    if args.golden:
        ok = True
        for name, passed, detail in golden_checks():
            print(f"{'PASS' if passed else 'FAIL'} {name}")
            if not passed:
                print(detail)
            ok &= passed
        return 0 if ok else 1
    text = args.query or GOLDEN_QUERY
    q = S.parse_query(text)
    ar = Arena()
    st = Strategy.parse(args.strategy)
    if st is Strategy.COMPILE_AND_RUN:
        b = compile_classical(ar, q)
    else:
        h, cells = prepare_query(ar, q)
        if st is Strategy.LAZY_CONTROL_FLOW:
            if args.program:
                for listing in lazy_listings(text, Granularity.parse(args.granularity), _read(args.program)):
                    print(listing + "\n")
                return 0
            b = compile_lazy_entry(ar, h, Granularity.parse(args.granularity), cells)
        else:
            b = compile_cf(ar, h, cells, specialize=not args.no_specialize)
    print("\n".join(disassemble(b, variants=args.variants)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfvm", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen", help="print an artificial query")
    g.add_argument("--goals", "-G", type=int, required=True)
    g.add_argument("--branch", "-B", type=int, required=True)
    g.add_argument("--depth", "-D", type=int, required=True)
    g.set_defaults(func=cmd_gen)

    p = sub.add_parser("pack", help="left-factor a query file")
    p.add_argument("action", choices=["build"])
    p.add_argument("file")
    p.set_defaults(func=cmd_pack)

    def common(sp):
        sp.add_argument("--granularity", default="per-goal")
        sp.add_argument("--no-copy", action="store_true", help="compile against the query as generated")
        sp.add_argument("--collect", action="store_true", help="collect the arena between examples")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--no-specialize", action="store_true", help="plain cf_call for every arity")
        sp.add_argument("--pack", action="store_true", help="run the query file as one query pack")

    r = sub.add_parser("run", help="run queries against examples")
    r.add_argument("--strategy", required=True)
    r.add_argument("--queries", required=True)
    r.add_argument("--examples", required=True)
    r.add_argument("--trace", action="store_true")
    common(r)
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="time strategies and write CSV")
    b.add_argument("--goals", "-G", type=int, default=5)
    b.add_argument("--branch", "-B", type=int, default=5)
    b.add_argument("--depth", "-D", type=int, default=4)
    b.add_argument("--queries")
    b.add_argument("--examples")
    b.add_argument("--random", type=int, help="this many random queries")
    b.add_argument("--n-examples", type=int, default=20)
    b.add_argument("--planted", type=float, help="planted-dead-branch pack workload")
    b.add_argument("--strategies", default="metacall,classical,cf")
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--seed", type=int)
    b.add_argument("--out", "-o")
    common(b)
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("disasm", help="print compiled code")
    d.add_argument("--query")
    d.add_argument("--strategy", default="cf")
    d.add_argument("--granularity", default="per-goal")
    d.add_argument("--program", help="for lazy-cf: run against this program and print every step")
    d.add_argument("--variants", action="store_true", help="show cf_call0..cf_call3")
    d.add_argument("--no-specialize", action="store_true")
    d.add_argument("--golden", action="store_true", help="run the golden listing checks")
    d.set_defaults(func=cmd_disasm)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (S.ParseError, LoadError, StrategyMismatch, ValueError, OSError) as e:
        print(f"cfvm: error: {e}", file=sys.stderr)
        return 2
