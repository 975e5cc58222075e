import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import brute_force_tp, f1_greedy_vs_brute, ref_levenshtein
from tpool import metrics
from tpool.errors import DataError, ShapeError
from tpool.metrics import Segment

A, B, C = 0, 1, 2
labels = st.lists(st.integers(0, 3), min_size=1, max_size=30)


def pair(n_max=30, k=4):
    return st.integers(1, n_max).flatmap(lambda n: st.tuples(
        st.lists(st.integers(0, k - 1), min_size=n, max_size=n),
        st.lists(st.integers(0, k - 1), min_size=n, max_size=n)))


class TestSegments:
    @pytest.mark.parametrize("y, expected", [
        ([A, A, B, B, B, A], [(A, 0, 2), (B, 2, 5), (A, 5, 6)]),
        ([B, B, B], [(B, 0, 3)]),
        ([A, B, A], [(A, 0, 1), (B, 1, 2), (A, 2, 3)]),
    ])
    def test_examples(self, y, expected):
        assert [tuple(s) for s in metrics.to_segments(y)] == expected

    @given(labels)
    def test_partition(self, y):
        segs = metrics.to_segments(y)
        assert segs[0].start == 0 and segs[-1].end == len(y)
        for a, b in zip(segs, segs[1:]):
            assert a.end == b.start and a.label != b.label


class TestAccuracy:
    def test_examples(self):
        assert metrics.frame_accuracy([A, A, B], [A, B, B]) == pytest.approx(66.667, abs=1e-3)
        assert metrics.frame_accuracy([A, B], [A, B]) == 100.0

    def test_ignore(self):
        assert metrics.frame_accuracy([A, A, B], [A, C, B], ignore=C) == 100.0

    def test_all_ignored(self):
        with pytest.raises(DataError):
            metrics.frame_accuracy([A, A], [C, C], ignore=C)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.frame_accuracy([A], [A, B])


class TestEdit:
    def test_identical(self):
        assert metrics.edit_score([A, B, B, C], [A, B, B, C]) == 100.0

    def test_deletion(self):
        # gt segments A,B,C; pred segments A,C
        assert metrics.edit_score([A, A, C, C], [A, B, C, C]) == pytest.approx(66.667, abs=1e-3)

    def test_over_segmentation(self):
        assert metrics.edit_score([A, B, A], [A, A, A]) == pytest.approx(33.333, abs=1e-3)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.edit_score([A], [A, A])

    @given(st.lists(st.integers(0, 3), max_size=12), st.lists(st.integers(0, 3), max_size=12))
    def test_levenshtein_reference(self, a, b):
        assert metrics.levenshtein(a, b) == ref_levenshtein(a, b)

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(1, 4)), min_size=1, max_size=8),
           st.randoms(use_true_random=False))
    def test_duration_invariance(self, runs, rnd):
        y = np.repeat([r[0] for r in runs], [r[1] for r in runs])
        y2 = np.repeat([r[0] for r in runs], [rnd.randint(1, 4) for _ in runs])
        gt = np.zeros(y.size, int)
        gt2 = np.zeros(y2.size, int)
        assert metrics.edit_score(y, gt) == metrics.edit_score(y2, gt2)


class TestOverlapF1:
    def test_hand_example(self):
        gt = np.repeat([A, B], [50, 50])
        pred = np.repeat([A, B], [45, 55])
        assert metrics.iou(Segment(B, 45, 100), Segment(B, 50, 100)) == pytest.approx(50 / 55)
        assert metrics.overlap_f1(pred, gt) == 100.0

    def test_disjoint_classes(self):
        assert metrics.overlap_f1([A, A, B], [C, C, C]) == 0.0

    def test_counts(self):
        # pred A-seg covers gt A 0.5; extra tiny B prediction is a false positive
        tp, fp, fn = metrics.overlap_counts([A, A, A, A, B, A], [A, A, C, C, C, C])
        assert (tp, fp, fn) == (1, 2, 1)

    def test_tau_range(self):
        with pytest.raises(DataError):
            metrics.overlap_f1([A], [A], tau=1.0)

    def test_greedy_shortfall_documented(self):
        # one prediction straddling two gt segments steals the better one
        pred, gt = [2, 0, 0, 0, 0, 2, 0], [0, 0, 1, 0, 0, 0, 0]
        assert metrics.overlap_counts(pred, gt)[0] == 1
        assert metrics.overlap_counts(pred, gt, matching="optimal")[0] == 2

    @settings(max_examples=200, deadline=None)
    @given(pair(9, 3))
    def test_optimal_matches_brute_force(self, pg):
        p, g = pg
        ps = [(s.start, s.end, s.label) for s in metrics.to_segments(p)]
        gs = [(s.start, s.end, s.label) for s in metrics.to_segments(g)]
        want = sum(brute_force_tp([s[:2] for s in ps if s[2] == c], [s[:2] for s in gs if s[2] == c])
                   for c in range(3))
        assert metrics.overlap_counts(p, g, matching="optimal")[0] == want

    def test_small_exhaustive_agreement(self):
        # no disagreement exists below T=7
        pairs, distinct, bad, _ = f1_greedy_vs_brute(5)
        assert distinct > 0 and bad == 0


class TestProperties:
    @given(pair())
    def test_range(self, pg):
        s = metrics.score_sequence(*pg)
        for v in (s.accuracy, s.edit, s.f1):
            assert 0.0 <= v <= 100.0

    @given(labels)
    def test_perfect(self, y):
        s = metrics.score_sequence(y, y)
        assert (s.accuracy, s.edit, s.f1) == (100.0, 100.0, 100.0)

    @given(pair(), st.permutations([0, 1, 2, 3]))
    def test_relabel_invariance(self, pg, perm):
        p, g = np.array(pg[0]), np.array(pg[1])
        pi = np.array(perm)
        assert metrics.score_sequence(p, g) == metrics.score_sequence(pi[p], pi[g])


class TestAggregation:
    def test_unweighted_mean(self):
        m = metrics.mean_scores([metrics.Scores(100, 50, 0), metrics.Scores(0, 50, 100)])
        assert (m.accuracy, m.edit, m.f1) == (50, 50, 50)

    def test_format(self):
        assert str(metrics.Scores(66.666, 100, 12.34)) == "66.7/100.0/12.3"

    def test_empty(self):
        with pytest.raises(DataError):
            metrics.mean_scores([])
