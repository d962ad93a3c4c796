import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import box_union_area, brute_front
from stiffctl.pareto import ParetoArchive, Staircase, dominates, hypervolume, pareto_front

coord = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
point = st.tuples(coord, coord)
points = st.lists(point, max_size=8)


def test_dominates_examples():
    assert dominates((2, 2), (1, 1))
    assert not dominates((1, 2), (2, 1)) and not dominates((2, 1), (1, 2))
    assert not dominates((1, 1), (1, 1))


def test_pareto_front_examples():
    assert pareto_front([]) == []
    assert pareto_front([(1, 1), (2, 2)]) == [(2.0, 2.0)]
    # duplicates collapse; output ascends in y_C
    assert pareto_front([(1, 2), (1, 2), (2, 1)]) == [(2.0, 1.0), (1.0, 2.0)]


def test_pareto_front_matches_brute_force_on_100_points():
    rng = np.random.default_rng(0)
    for _ in range(20):
        P = rng.random((100, 2)).round(2)  # rounding forces ties and duplicates
        assert [tuple(p) for p in pareto_front(P)] == brute_front(P)


@given(points)
def test_pareto_front_idempotent(P):
    f = pareto_front(P)
    assert pareto_front(f) == f


@given(points, point)
def test_front_never_contains_point_dominated_by_new_point(P, q):
    for p in pareto_front(P + [q]):
        assert not dominates(q, p)


@given(point, point)
def test_dominates_irreflexive_asymmetric(a, b):
    assert not dominates(a, a)
    assert not (dominates(a, b) and dominates(b, a))


def test_hypervolume_examples():
    assert hypervolume([], (0, 0)) == 0.0
    assert hypervolume([(1, 1)], (0, 0)) == 1.0
    assert hypervolume([(2, 1), (1, 2)], (0, 0)) == pytest.approx(2 * 1 + 1 * 2 - 1 * 1)


@given(points)
def test_hypervolume_matches_inclusion_exclusion(P):
    assert hypervolume(P, (0, 0)) == pytest.approx(box_union_area(P, (0, 0)), abs=1e-12)


@given(points, point)
def test_hypervolume_monotone_under_insertion(P, y):
    assert hypervolume(pareto_front(P + [y]), (0, 0)) >= hypervolume(pareto_front(P), (0, 0)) - 1e-15


@settings(max_examples=50)
@given(points, st.randoms(use_true_random=False))
def test_hypervolume_permutation_and_dominated_insertion(P, rnd):
    base = hypervolume(P, (0, 0))
    shuffled = list(P)
    rnd.shuffle(shuffled)
    assert hypervolume(shuffled, (0, 0)) == pytest.approx(base, abs=1e-15)
    if P:
        p = P[0]
        assert hypervolume(P + [(p[0] * 0.5, p[1] * 0.5)], (0, 0)) == pytest.approx(base, abs=1e-15)


def test_points_worse_than_reference_are_clamped():
    assert hypervolume([(-1.0, 5.0), (1.0, 1.0)], (0.0, 0.0)) == pytest.approx(1.0)


@given(points, st.lists(point, min_size=1, max_size=5))
def test_staircase_improvement_matches_difference(P, Y):
    st_ = Staircase(P, (0, 0))
    got = st_.improvement(np.asarray(Y))
    base = box_union_area(P, (0, 0))
    want = [box_union_area(P + [y], (0, 0)) - base for y in Y]
    np.testing.assert_allclose(got, np.maximum(want, 0.0), atol=1e-12)


def test_archive_normalizes_and_clamps():
    ar = ParetoArchive((0.0, -100.0), (2.0, 0.0))
    ar.add(np.array([1.0]), (2.0, -100.0))
    ar.add(np.array([2.0]), (1.0, -50.0))
    ar.add(np.array([3.0]), (-5.0, -10.0))
    assert len(ar) == 3
    assert ar.hypervolume() == pytest.approx(0.5 * 0.5)
    assert ar.front_indices() == [0, 1, 2]
