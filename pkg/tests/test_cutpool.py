import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cutplane.cutpool import Cut, CutPool, DimensionMismatch, EmptyPool, Selector


def pool_with(cuts, selector="level1", epsilon0=1e-6):
    pool = CutPool(len(cuts[0][1]), Selector.parse(selector), epsilon0)
    for theta, beta in cuts:
        pool.add_cut(Cut(theta, np.array(beta, dtype=float)))
    return pool


@pytest.mark.parametrize("selector", ["level1", "lml1"])
def test_argmax_of_two_lines(selector):
    # C1 = x, C2 = 1 - x; at x = 0 only the second cut is maximal
    pool = pool_with([(0.0, [1.0]), (1.0, [-1.0])], selector)
    pool.add_trial([0.0])
    assert pool.trials[0].argmax == [1]
    assert pool.selected.tolist() == [False, True]


def test_identical_cuts_level1_keeps_all_lml1_keeps_oldest():
    cuts = [(1.0, [2.0]), (1.0, [2.0])]
    level1 = pool_with(cuts, "level1")
    lml1 = pool_with(cuts, "lml1")
    level1.add_trial([0.5])
    lml1.add_trial([0.5])
    assert level1.trials[0].argmax == [0, 1]
    assert lml1.trials[0].argmax == [0]


def test_new_cut_takes_over_trial_points():
    pool = pool_with([(0.0, [0.0])])
    pool.add_trial([1.0])
    pool.add_cut(Cut(1.0, np.array([0.0])))
    assert pool.trials[0].argmax == [1]
    assert pool.selected.tolist() == [False, True]


def test_tie_tolerance_is_relative():
    pool = pool_with([(1000.0, [0.0])], epsilon0=1e-6)
    pool.add_trial([0.0])
    pool.add_cut(Cut(1000.0 + 5e-4, np.array([0.0])))  # within 1e-6 * 1000
    assert pool.trials[0].argmax == [0, 1]
    pool.add_cut(Cut(1000.0 + 5e-3, np.array([0.0])))
    assert pool.trials[0].argmax == [2]


def test_exact_comparisons_with_zero_tolerance():
    pool = pool_with([(1.0, [0.0])], epsilon0=0.0)
    pool.add_trial([0.0])
    pool.add_cut(Cut(1.0 + 1e-15, np.array([0.0])))
    assert pool.trials[0].argmax == [1]


def test_no_selector_selects_everything():
    pool = pool_with([(0.0, [1.0]), (5.0, [0.0])], selector=None)
    pool.add_trial([0.0])
    assert pool.selected.all()
    assert pool.evaluate([0.0]) == 5.0


def test_dimension_and_empty_errors():
    pool = CutPool(2, Selector("level1"))
    with pytest.raises(EmptyPool):
        pool.evaluate([0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        pool.add_cut(Cut(0.0, np.zeros(3)))
    with pytest.raises(DimensionMismatch):
        pool.add_trial([1.0])


def test_birth_iterations_must_increase():
    pool = CutPool(1)
    pool.add_cut(Cut(0.0, np.zeros(1), 5))
    with pytest.raises(ValueError):
        pool.add_cut(Cut(0.0, np.zeros(1), 5))
    pool.add_cut(Cut(0.0, np.zeros(1)))
    assert pool.cuts[-1].birth_iteration == 6


def test_selector_parsing_and_guard():
    assert Selector.parse(None) is None
    assert Selector.parse("prefix:3").positions(5) == range(3)
    assert Selector.parse("newest:2").positions(5) == range(3, 5)
    with pytest.raises(ValueError):
        Selector("newest", 2)
    with pytest.raises(ValueError):
        Selector.parse("bogus")
    with pytest.raises(ValueError):
        Selector("prefix")


@pytest.mark.parametrize("kind", ["level1", "lml1", "prefix:2"])
def test_selector_families_are_nested(kind):
    sel = Selector.parse(kind)
    for m in range(1, 10):
        assert set(sel.positions(m)) <= set(sel.positions(m + 1))
        assert 0 in sel.positions(m)


def test_newest_selector_is_not_nested():
    sel = Selector.parse("newest:1")
    assert not set(sel.positions(2)) <= set(sel.positions(3))


def test_serialization_roundtrip():
    rng = np.random.default_rng(0)
    pool = CutPool(3, Selector("level1"))
    for _ in range(8):
        pool.add_cut(Cut(rng.normal(), rng.normal(size=3)))
        pool.add_trial(rng.normal(size=3))
    back = CutPool.loads(pool.dumps())
    assert np.array_equal(back.theta, pool.theta)
    assert np.array_equal(back.selected, pool.selected)
    assert [t.argmax for t in back.trials] == [t.argmax for t in pool.trials]


def test_serialization_rejects_tampered_selection():
    pool = pool_with([(0.0, [1.0]), (1.0, [-1.0])])
    pool.add_trial([0.0])
    doc = pool.to_dict()
    doc["selected"] = [0, 1]
    with pytest.raises(ValueError):
        CutPool.from_dict(doc)


cut_lists = st.lists(
    st.tuples(st.floats(-5, 5), st.lists(st.floats(-3, 3), min_size=2, max_size=2)),
    min_size=1, max_size=50,
)
points = st.lists(st.lists(st.floats(-2, 2), min_size=2, max_size=2), min_size=1, max_size=20)


def interleave(pool, cuts, pts):
    """Engine order: each cut is followed by a trial point while points remain."""
    for i, (theta, beta) in enumerate(cuts):
        pool.add_cut(Cut(theta, np.array(beta)))
        if i < len(pts):
            pool.add_trial(pts[i])


@settings(max_examples=80, deadline=None)
@given(cut_lists, points, st.sampled_from(["level1", "lml1"]))
def test_selected_matches_all_at_trial_points(cuts, pts, kind):
    pool = CutPool(2, Selector(kind), 1e-6)
    interleave(pool, cuts, pts)
    for rec in pool.trials:
        full = pool.evaluate(rec.point, "all")
        assert abs(pool.evaluate(rec.point) - full) <= 1e-6 * max(1.0, abs(full))
    assert np.array_equal(pool.selected, pool.recompute_selected())
    if kind == "lml1":
        assert pool.selected.sum() <= max(1, pool.num_trials)


@settings(max_examples=40, deadline=None)
@given(cut_lists, points)
def test_lml1_selects_subset_of_level1(cuts, pts):
    a = CutPool(2, Selector("level1"), 1e-6)
    b = CutPool(2, Selector("lml1"), 1e-6)
    interleave(a, cuts, pts)
    interleave(b, cuts, pts)
    if a.num_trials:
        assert np.all(a.selected | ~b.selected)


def test_trial_before_any_cut_waits_for_the_first_cut():
    pool = CutPool(1, Selector("level1"))
    pool.add_trial([0.0])
    assert pool.trials[0].best_value == -np.inf and pool.trials[0].argmax == []
    pool.add_cut(Cut(2.0, np.array([1.0])))
    assert pool.trials[0].argmax == [0] and pool.trials[0].best_value == 2.0


@pytest.mark.parametrize("selector", ["level1", "lml1"])
def test_each_cut_wins_somewhere(selector):
    pool = pool_with([(0.0, [1.0])], selector)
    pool.add_trial([0.0])
    pool.add_trial([1.0])
    pool.add_cut(Cut(1.0, np.array([-1.0])))
    # C2 = 1 - x wins at 0; at 1 the two cuts tie at value 1
    assert pool.selected.tolist() == [True, True]


def test_duplicate_cut_effect_depends_on_selector():
    level1 = pool_with([(1.0, [1.0])], "level1")
    lml1 = pool_with([(1.0, [1.0])], "lml1")
    for pool in (level1, lml1):
        pool.add_trial([0.5])
        pool.add_cut(Cut(1.0, np.array([1.0])))
    assert level1.trials[0].argmax == [0, 1]
    assert lml1.trials[0].argmax == [0]
    assert lml1.selected.tolist() == [True, False]


def test_dominated_cut_is_stored_but_never_selected():
    pool = pool_with([(5.0, [0.0])])
    for x in (-1.0, 0.0, 2.0):
        pool.add_trial([x])
    pool.add_cut(Cut(1.0, np.array([0.1])))
    assert len(pool) == 2
    assert pool.selected.tolist() == [True, False]


def test_evaluate_examples():
    pool = pool_with([(0.0, [1.0]), (1.0, [-1.0])], None)
    assert pool.evaluate([0.0]) == 1.0
    assert pool_with([(2.0, [-0.5])], None).evaluate([2.0]) == 1.0


def test_selection_stats():
    assert CutPool(1).selection_stats() == (0, 0, 0.0)
    pool = CutPool(1, Selector("lml1"))
    for i in range(10):
        pool.add_cut(Cut(float(i % 3 == 0) * i, np.zeros(1)))
    for x in (0.0, 1.0, 2.0):
        pool.add_trial([x])
    total, chosen, share = pool.selection_stats()
    assert (total, chosen) == (10, 1) and share == 0.1
