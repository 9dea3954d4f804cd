import random

import pytest

from cfvm import syntax as S
from cfvm.exampledb import RunOptions, Strategy, run_strategy
from cfvm.lazy import Granularity
from cfvm.querygen import GenParams
from cfvm.workloads import artificial, planted_pack, random_query, random_query_set


@pytest.mark.parametrize("f", [0.25, 0.5, 0.75])
def test_planted_fraction_is_exact(f):
    tree, queries, db = planted_pack(f)
    assert tree.goal_count() == 80 and len(queries) == 32
    for st in (Strategy.META_CALL, Strategy.CONTROL_FLOW, Strategy.LAZY_CONTROL_FLOW):
        mat = run_strategy(tree, db, st, RunOptions(granularity=Granularity.PER_DISJUNCTION))
        assert mat.unused_pct == pytest.approx(100 * f, abs=0)


def test_unplantable_fraction():
    with pytest.raises(ValueError):
        planted_pack(0.33)


def test_random_workloads_are_seeded():
    a = [S.format_query(random_query(random.Random(5))) for _ in range(3)]
    b = [S.format_query(random_query(random.Random(5))) for _ in range(3)]
    assert a == b


def test_query_sets_are_conjunctions_within_limits():
    for seed in range(50):
        qs = random_query_set(random.Random(seed))
        assert 1 <= len(qs) <= 20
        for q in qs:
            assert not isinstance(q, S.Disj)
            assert 1 <= len(S.goals_of(q)) <= 8


def test_artificial_workload():
    qs, db = artificial(GenParams(2, 2, 1))
    assert len(qs) == 1 and len(db) == 1
    assert len(db.view(0).clauses(("a", 3))) == 1
