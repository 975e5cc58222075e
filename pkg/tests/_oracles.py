"""Independent reference implementations used as test oracles."""
from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np

from tpool.metrics import overlap_counts, to_segments


def ref_levenshtein(a, b) -> int:
    """Textbook recursive edit distance, memoised."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def _iou(a, b) -> float:
    inter = min(a[1], b[1]) - max(a[0], b[0])
    return 0.0 if inter <= 0 else inter / (max(a[1], b[1]) - min(a[0], b[0]))


def brute_force_tp(P, G, tau: float = 0.1) -> int:
    """Largest true-positive count over every one-to-one matching of two interval lists."""
    best = 0

    def rec(i, used, tp):
        nonlocal best
        if tp + (len(P) - i) <= best:
            return
        if i == len(P):
            best = max(best, tp)
            return
        for k, g in enumerate(G):
            if k not in used:
                rec(i + 1, used | {k}, tp + (_iou(P[i], g) > tau))
        rec(i + 1, used, tp)

    rec(0, frozenset(), 0)
    return best


def _by_class(y, C):
    out = [[] for _ in range(C)]
    for s in to_segments(y):
        out[s.label].append((s.start, s.end))
    return tuple(tuple(v) for v in out)


def _canonical(seq) -> bool:
    """First occurrences of the labels appear in order 0, 1, 2, ..."""
    nxt = 0
    for v in seq:
        if v > nxt:
            return False
        if v == nxt:
            nxt += 1
    return True


def f1_greedy_vs_brute(T_max: int = 8, C: int = 3, tau: float = 0.1):
    """Compare greedy overlap matching with the brute-force optimum.

    Runs over every (pred, gt) pair with T <= T_max and labels < C, taking gt
    up to relabelling (all metrics are relabelling invariant).  Only pairs
    whose same-class IoUs are pairwise distinct are compared.  The problem
    splits by class, so per-class results are cached.

    Returns ``(pairs, distinct, disagreements, first_counterexample)``.
    """
    cache: dict = {}
    pairs = distinct = bad = 0
    first = None

    def per_class(ps, gs):
        key = (ps, gs)
        hit = cache.get(key)
        if hit is None:
            ious = [_iou(p, g) for p in ps for g in gs]
            if len(ps) <= 1 or len(gs) <= 1:
                # with one segment on either side both rules find a hit iff some IoU > tau
                tp = int(any(v > tau for v in ious))
                hit = (tuple(ious), tp, tp)
            else:
                hit = (tuple(ious), None, brute_force_tp(ps, gs, tau))
            cache[key] = hit
        return hit

    for T in range(1, T_max + 1):
        seqs = list(itertools.product(range(C), repeat=T))
        split = [_by_class(s, C) for s in seqs]
        for gi, g in enumerate(seqs):
            if not _canonical(g):
                continue
            for pi, p in enumerate(seqs):
                pairs += 1
                parts = [per_class(split[pi][c], split[gi][c]) for c in range(C)]
                ious = [v for part in parts for v in part[0]]
                if len({round(v, 12) for v in ious}) != len(ious):
                    continue
                distinct += 1
                brute = sum(part[2] for part in parts)
                if all(part[1] is not None for part in parts):
                    greedy = brute
                else:
                    greedy = overlap_counts(np.array(p), np.array(g), tau)[0]
                if greedy != brute:
                    bad += 1
                    if first is None:
                        first = (p, g, greedy, brute)
    return pairs, distinct, bad, first
