"""Brute-force reference implementations used only by the tests.

None of these share code with the package.
"""

from __future__ import annotations

import itertools
import math


def alignment_costs(ref, hyp):
    """All (substitutions, deletions, insertions) reachable by optimal alignments.

    Enumerates every monotone matching between reference and hypothesis
    positions: matched pairs cost 0 or 1 (substitution), unmatched reference
    words are deletions, unmatched hypothesis words are insertions.
    """
    m, n = len(ref), len(hyp)
    best = None
    triples = set()
    for k in range(min(m, n) + 1):
        for ri in itertools.combinations(range(m), k):
            for hj in itertools.combinations(range(n), k):
                subs = sum(ref[a] != hyp[b] for a, b in zip(ri, hj))
                cost = subs + (m - k) + (n - k)
                if best is None or cost < best:
                    best = cost
                    triples = {(subs, m - k, n - k)}
                elif cost == best:
                    triples.add((subs, m - k, n - k))
    return best, triples


def kendall_tau_b(x, y):
    n = len(x)
    conc = disc = tx = ty = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = (x[i] > x[j]) - (x[i] < x[j])
            b = (y[i] > y[j]) - (y[i] < y[j])
            if a == 0:
                tx += 1
            if b == 0:
                ty += 1
            if a * b > 0:
                conc += 1
            elif a * b < 0:
                disc += 1
    n0 = n * (n - 1) // 2
    denom = (n0 - tx) * (n0 - ty)
    if denom == 0:
        return math.nan
    return (conc - disc) / math.sqrt(denom)


def average_ranks(values):
    ranks = []
    for v in values:
        below = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks.append(below + (equal + 1) / 2)
    return ranks


def pearson_textbook(x, y):
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return math.nan
    return sxy / math.sqrt(sxx * syy)


def spearman_rank_then_pearson(x, y):
    return pearson_textbook(average_ranks(x), average_ranks(y))
