"""Frame accuracy, segmental edit score and overlap F1 for action parsing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import DataError, ShapeError


@dataclass(frozen=True)
class Segment:
    label: int
    start: int
    end: int  # exclusive

    def __iter__(self):
        return iter((self.label, self.start, self.end))


def to_segments(y) -> list[Segment]:
    """Run-length encode a label sequence into maximal constant segments."""
    y = np.asarray(y)
    if y.ndim != 1 or y.size == 0:
        raise ShapeError("to_segments needs a non-empty 1-D label sequence")
    cuts = np.flatnonzero(y[1:] != y[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [y.size]])
    return [Segment(int(y[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _pair(pred, gt):
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ShapeError(f"prediction length {pred.shape} does not match ground truth {gt.shape}")
    return pred, gt


def frame_accuracy(pred, gt, ignore: int | None = None) -> float:
    pred, gt = _pair(pred, gt)
    keep = np.ones(gt.shape, bool) if ignore is None else gt != ignore
    n = int(keep.sum())
    if n == 0:
        raise DataError("no frames left to score after removing the ignored class")
    return 100.0 * float(np.sum(pred[keep] == gt[keep])) / n


def levenshtein(a, b) -> int:
    """Unit-cost edit distance between two sequences."""
    a, b = list(a), list(b)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return prev[-1]


def edit_score(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    p = [s.label for s in to_segments(pred)]
    g = [s.label for s in to_segments(gt)]
    score = 100.0 * (1.0 - levenshtein(p, g) / max(len(p), len(g)))
    return max(score, 0.0)


def iou(a: Segment, b: Segment) -> float:
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 100.0 * 2 * precision * recall / (precision + recall)


def overlap_counts(pred, gt, tau: float = 0.1, matching: str = "greedy") -> tuple[int, int, int]:
    """Match predicted to ground-truth segments; returns ``(tp, fp, fn)``.

    ``greedy`` visits predicted segments in temporal order.  Each takes the
    still unmatched ground-truth segment of its class with the largest IoU
    (earliest on ties) and counts as a hit when that IoU exceeds ``tau``.
    ``optimal`` instead maximises the number of same-class pairs with IoU
    above ``tau`` (maximum bipartite matching); it can find more hits than
    the greedy rule when one prediction straddles two ground-truth segments.
    """
    if not 0.0 < tau < 1.0:
        raise DataError(f"tau must lie in (0, 1), got {tau}")
    pred, gt = _pair(pred, gt)
    psegs, gsegs = to_segments(pred), to_segments(gt)
    if matching == "optimal":
        adj = np.array([[ps.label == gs.label and iou(ps, gs) > tau for gs in gsegs]
                        for ps in psegs])
        match = maximum_bipartite_matching(csr_matrix(adj), perm_type="column")
        tp = int(np.sum(match >= 0))
        return tp, len(psegs) - tp, len(gsegs) - tp
    if matching != "greedy":
        raise DataError(f"unknown matching {matching!r}")
    used = [False] * len(gsegs)
    tp = fp = 0
    for ps in psegs:
        best, best_iou = -1, -1.0
        for k, gs in enumerate(gsegs):
            if used[k] or gs.label != ps.label:
                continue
            v = iou(ps, gs)
            if v > best_iou:
                best, best_iou = k, v
        if best >= 0 and best_iou > tau:
            used[best] = True
            tp += 1
        else:
            fp += 1
    return tp, fp, len(gsegs) - tp


def overlap_f1(pred, gt, tau: float = 0.1, matching: str = "greedy") -> float:
    return f1_from_counts(*overlap_counts(pred, gt, tau, matching))


@dataclass(frozen=True)
class Scores:
    accuracy: float
    edit: float
    f1: float

    def __str__(self):
        return f"{self.accuracy:.1f}/{self.edit:.1f}/{self.f1:.1f}"


def score_sequence(pred, gt, ignore: int | None = None, tau: float = 0.1) -> Scores:
    return Scores(frame_accuracy(pred, gt, ignore), edit_score(pred, gt), overlap_f1(pred, gt, tau))


def mean_scores(scores) -> Scores:
    """Unweighted mean over sequences."""
    scores = list(scores)
    if not scores:
        raise DataError("no sequences to aggregate")
    return Scores(*(float(np.mean([getattr(s, f) for s in scores])) for f in ("accuracy", "edit", "f1")))
