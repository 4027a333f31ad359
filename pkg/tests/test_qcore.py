import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qvlab import qcore
from qvlab.qcore import QPoint, metric_g, optimal_matching


def qp(rows):
    return QPoint(np.array(rows, dtype=float))


class TestMetric:
    def test_identity_pair_is_zero(self):
        p = qp([[0.0, 0.0], [1.0, 0.0]])
        assert metric_g(p, p) == 0.0

    def test_two_point_symmetric_case(self):
        # {0, 0} vs {1, -1}: both pairings cost 1^2 + 1^2 = 2
        p = qp([[0.0], [0.0]])
        q = qp([[1.0], [-1.0]])
        assert metric_g(p, q) == pytest.approx(math.sqrt(2.0), abs=0.0)

    def test_two_point_tie_case(self):
        # {0, 2} vs {1, 1}: either pairing costs 2
        p = qp([[0.0], [2.0]])
        q = qp([[1.0], [1.0]])
        assert metric_g(p, q) == pytest.approx(math.sqrt(2.0), abs=0.0)

    def test_symmetry(self):
        rng = np.random.default_rng(7)
        p = qp(rng.normal(size=(4, 3)))
        q = qp(rng.normal(size=(4, 3)))
        assert metric_g(p, q) == pytest.approx(metric_g(q, p), rel=1e-15)

    def test_zero_iff_equal_multisets(self):
        p = qp([[1.0, 2.0], [3.0, 4.0]])
        q = qp([[3.0, 4.0], [1.0, 2.0]])
        assert metric_g(p, q) == 0.0
        assert qcore.multiset_equal(p, q)

    def test_dimension_mismatch_raises(self):
        with pytest.raises(qcore.DimensionMismatchError):
            metric_g(qp([[0.0]]), qp([[0.0, 1.0]]))
        with pytest.raises(qcore.DimensionMismatchError):
            metric_g(qp([[0.0], [1.0]]), qp([[0.0]]))


class TestOptimalMatching:
    def test_identity_on_equal_tuples(self):
        p = qp([[0.5, -1.0], [2.0, 0.0], [0.5, -1.0]])
        plan = optimal_matching(p, p)
        assert plan.permutation == (0, 1, 2)
        assert plan.cost == 0.0

    def test_tie_break_prefers_identity(self):
        # {0, 2} vs {1, 1}: both permutations cost 2; lexicographic smallest wins
        plan = optimal_matching(qp([[0.0], [2.0]]), qp([[1.0], [1.0]]))
        assert plan.permutation == (0, 1)
        assert plan.cost == pytest.approx(2.0, abs=0.0)

    def test_cost_matches_exhaustive_q3(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            a = rng.normal(size=(3, 2))
            b = rng.normal(size=(3, 2))
            plan = optimal_matching(qp(a), qp(b))
            brute = min(
                sum(np.sum((a[i] - b[s[i]]) ** 2) for i in range(3))
                for s in itertools.permutations(range(3))
            )
            assert plan.cost == pytest.approx(brute, rel=1e-13)

    def test_assignment_path_matches_exhaustive_q7(self):
        rng = np.random.default_rng(13)
        a = rng.normal(size=(7, 2))
        b = rng.normal(size=(7, 2))
        plan = optimal_matching(qp(a), qp(b))
        brute = min(
            sum(np.sum((a[i] - b[s[i]]) ** 2) for i in range(7))
            for s in itertools.permutations(range(7))
        )
        assert plan.cost == pytest.approx(brute, rel=1e-12)

    def test_assignment_path_lex_tie_break(self):
        # eight identical entries: every permutation is optimal, identity is lex-min
        a = np.zeros((8, 2))
        plan = optimal_matching(qp(a), qp(a))
        assert plan.permutation == tuple(range(8))

    def test_plan_cost_equals_metric_squared(self):
        rng = np.random.default_rng(17)
        p = qp(rng.normal(size=(5, 2)))
        q = qp(rng.normal(size=(5, 2)))
        assert optimal_matching(p, q).cost == pytest.approx(metric_g(p, q) ** 2, rel=1e-14)


class TestMeanAndSeparation:
    def test_mean_symmetric_pair(self):
        p = qp([[1.0, 0.0], [-1.0, 0.0]])
        assert np.allclose(qcore.mean(p), [0.0, 0.0])
        assert np.array_equal(qcore.subtract_mean(p).points, p.points)

    def test_mean_shift(self):
        p = qp([[2.0], [4.0]])
        assert qcore.mean(p) == pytest.approx(3.0)
        shifted = qcore.subtract_mean(p)
        assert shifted.points[:, 0].tolist() == [-1.0, 1.0]

    def test_subtract_mean_centers_exactly(self):
        rng = np.random.default_rng(3)
        p = qp(rng.normal(size=(5, 3)))
        centered = qcore.subtract_mean(p)
        assert np.allclose(qcore.mean(centered), 0.0, atol=1e-15)

    def test_all_equal_tuple(self):
        sd = qcore.separation_and_diameter(qp([[2.0, 1.0]] * 3))
        assert sd.diam == 0.0
        assert sd.sep == math.inf

    def test_two_distinct(self):
        sd = qcore.separation_and_diameter(qp([[0.0], [1.0]]))
        assert sd.sep == 1.0
        assert sd.diam == 1.0

    def test_repeated_entry_ignored_for_sep(self):
        sd = qcore.separation_and_diameter(qp([[0.0], [0.0], [3.0]]))
        assert sd.diam == 3.0
        assert sd.sep == 3.0


coord = st.floats(min_value=-8.0, max_value=8.0, allow_nan=False, allow_infinity=False)


def tuple_strategy(q, m):
    return st.lists(st.lists(coord, min_size=m, max_size=m), min_size=q, max_size=q)


@st.composite
def tuple_pairs(draw, max_q=5, max_m=3):
    q = draw(st.integers(min_value=1, max_value=max_q))
    m = draw(st.integers(min_value=1, max_value=max_m))
    a = draw(tuple_strategy(q, m))
    b = draw(tuple_strategy(q, m))
    return qp(a), qp(b)


@st.composite
def tuple_triples(draw, max_q=5, max_m=3):
    q = draw(st.integers(min_value=1, max_value=max_q))
    m = draw(st.integers(min_value=1, max_value=max_m))
    rows = [draw(tuple_strategy(q, m)) for _ in range(3)]
    return tuple(qp(r) for r in rows)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(tuple_pairs(), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, pq, rnd):
        p, q = pq
        pi = list(range(p.q))
        rnd.shuffle(pi)
        sigma = list(range(q.q))
        rnd.shuffle(sigma)
        d0 = metric_g(p, q)
        d1 = metric_g(p.permuted(pi), q.permuted(sigma))
        assert d1 == pytest.approx(d0, rel=1e-12, abs=1e-12)
        sd0 = qcore.separation_and_diameter(p)
        sd1 = qcore.separation_and_diameter(p.permuted(pi))
        assert sd0 == sd1
        assert np.allclose(qcore.mean(p), qcore.mean(p.permuted(pi)))

    @settings(max_examples=60, deadline=None)
    @given(tuple_triples())
    def test_triangle_inequality(self, triple):
        a, b, c = triple
        slack = 1e-9
        assert metric_g(a, c) <= metric_g(a, b) + metric_g(b, c) + slack

    @settings(max_examples=40, deadline=None)
    @given(tuple_pairs())
    def test_crude_envelope(self, pq):
        # sanity envelope: optimal cost is at most the worst per-row pairing
        p, q = pq
        diff = p.points[:, None, :] - q.points[None, :, :]
        row_worst = np.einsum("ijk,ijk->ij", diff, diff).max(axis=1).sum()
        assert metric_g(p, q) ** 2 <= row_worst + 1e-9


class TestBatchMatching:
    def test_matches_single_calls(self):
        rng = np.random.default_rng(23)
        a = rng.normal(size=(10, 3, 2))
        b = rng.normal(size=(10, 3, 2))
        diff = a[:, :, None, :] - b[:, None, :, :]
        costs = np.einsum("nijk,nijk->nij", diff, diff)
        perms = qcore.batch_match_permutations(costs)
        for t in range(10):
            plan = optimal_matching(qp(a[t]), qp(b[t]))
            assert tuple(perms[t]) == plan.permutation

    def test_rejects_large_q(self):
        with pytest.raises(ValueError):
            qcore.batch_match_permutations(np.zeros((1, 7, 7)))


class TestMultisetEqual:
    def test_tolerance_scales_with_diameter(self):
        base = np.array([[0.0, 0.0], [100.0, 0.0]])
        wiggle = base + np.array([[0.0, 5e-11], [0.0, 0.0]])
        assert qcore.multiset_equal(qp(base), qp(wiggle))
        assert not qcore.multiset_equal(qp(base), qp(base + 1e-6))

    def test_explicit_tolerance(self):
        p = qp([[0.0]])
        q = qp([[0.5]])
        assert qcore.multiset_equal(p, q, tol=1.0)
        assert not qcore.multiset_equal(p, q, tol=0.1)
