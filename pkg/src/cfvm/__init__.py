"""A logic-query VM with four ways of running generated queries: meta-call,
classical put/call compilation, control-flow compilation and lazy
control-flow compilation, plus query packs and a relocating collector."""

from .syntax import (
    Atom, Clause, Conj, Disj, Goal, Int, ParseError, Program, Struct, Var,
    format_query, format_term, parse_clauses, parse_program, parse_query, parse_query_file,
)
from .terms import (
    Arena, CapacityError, ContractError, RelocationStats, Trail, collect, copy_term_contiguous,
    intern_term, render, undo_to, unify, validate,
)
from .code import CodeBlock, disassemble, normalize
from .querygen import GenParams, generate_query, total_goals
from .packs import PackTable, PackTree, build_pack, pack_to_disjunction
from .cfcomp import compile_cf, compile_cf_pack, prepare_query
from .classical import classify_variables, compile_classical
from .lazy import Granularity, compile_lazy_entry, compile_lazy_pack_entry, expand_disj, expand_lazy
from .machine import Machine, SolveResult, meta_call, run_code, run_pack_on_example
from .exampledb import (
    Example, ExampleDb, ResultMatrix, RunOptions, Strategy, StrategyMismatch, dump_examples,
    load_examples, run_strategy,
)

__version__ = "0.1.0"
