"""Inner loops: word-level edit alignment and Kendall pair counting.

Every kernel has two implementations with identical results: a numba
``@njit`` one (``*_jit``) and a pure-numpy one (``*_numpy``). The unsuffixed
names dispatch to whichever path :data:`asrqe._jit.JIT_ENABLED` selects.
"""

from __future__ import annotations

import numpy as np

from asrqe._jit import JIT_ENABLED, njit

__all__ = [
    "edit_counts",
    "edit_counts_jit",
    "edit_counts_numpy",
    "kendall_counts",
    "kendall_counts_jit",
    "kendall_counts_numpy",
    "encode_tokens",
]


def encode_tokens(*sequences: list[str]) -> list[np.ndarray]:
    """Map token sequences onto a shared int64 alphabet."""
    alphabet: dict[str, int] = {}
    out = []
    for seq in sequences:
        out.append(
            np.fromiter((alphabet.setdefault(t, len(alphabet)) for t in seq), dtype=np.int64, count=len(seq))
        )
    return out


# ---------------------------------------------------------------------------
# edit alignment
# ---------------------------------------------------------------------------


@njit
def edit_counts_jit(ref, hyp):
    m = ref.shape[0]
    n = hyp.shape[0]
    dist = np.empty((m + 1, n + 1), dtype=np.int64)
    for i in range(m + 1):
        dist[i, 0] = i
    for j in range(n + 1):
        dist[0, j] = j
    for i in range(1, m + 1):
        r = ref[i - 1]
        for j in range(1, n + 1):
            best = dist[i - 1, j - 1] + (0 if r == hyp[j - 1] else 1)
            d = dist[i - 1, j] + 1
            if d < best:
                best = d
            d = dist[i, j - 1] + 1
            if d < best:
                best = d
            dist[i, j] = best

    subs = 0
    dels = 0
    ins = 0
    i = m
    j = n
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            if dist[i, j] == dist[i - 1, j - 1] + cost:
                subs += cost
                i -= 1
                j -= 1
                continue
        if i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


def _distance_matrix_numpy(ref: np.ndarray, hyp: np.ndarray) -> np.ndarray:
    m, n = ref.shape[0], hyp.shape[0]
    cols = np.arange(n + 1, dtype=np.int64)
    dist = np.empty((m + 1, n + 1), dtype=np.int64)
    dist[0] = cols
    for i in range(1, m + 1):
        prev = dist[i - 1]
        cand = np.empty(n + 1, dtype=np.int64)
        cand[0] = i
        cand[1:] = np.minimum(prev[1:] + 1, prev[:-1] + (hyp != ref[i - 1]))
        # horizontal (insertion) moves: row[j] = min_k<=j cand[k] + (j - k)
        dist[i] = np.minimum.accumulate(cand - cols) + cols
    return dist


def edit_counts_numpy(ref: np.ndarray, hyp: np.ndarray) -> tuple[int, int, int]:
    dist = _distance_matrix_numpy(ref, hyp)
    subs = dels = ins = 0
    i, j = ref.shape[0], hyp.shape[0]
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            cost = int(ref[i - 1] != hyp[j - 1])
            if dist[i, j] == dist[i - 1, j - 1] + cost:
                subs += cost
                i -= 1
                j -= 1
                continue
        if i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


# ---------------------------------------------------------------------------
# Kendall pair counting
# ---------------------------------------------------------------------------


@njit
def kendall_counts_jit(x, y):
    n = x.shape[0]
    score = 0
    tied_x = 0
    tied_y = 0
    for i in range(n - 1):
        xi = x[i]
        yi = y[i]
        for j in range(i + 1, n):
            dx = xi - x[j]
            dy = yi - y[j]
            if dx == 0:
                tied_x += 1
            if dy == 0:
                tied_y += 1
            if dx != 0 and dy != 0:
                if (dx > 0) == (dy > 0):
                    score += 1
                else:
                    score -= 1
    return score, n * (n - 1) // 2, tied_x, tied_y


def kendall_counts_numpy(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    n = x.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    sx = np.sign(x[iu] - x[ju])
    sy = np.sign(y[iu] - y[ju])
    score = int(np.sum(sx * sy))
    return score, n * (n - 1) // 2, int(np.count_nonzero(sx == 0)), int(np.count_nonzero(sy == 0))


if JIT_ENABLED:
    edit_counts = edit_counts_jit
    kendall_counts = kendall_counts_jit
else:
    edit_counts = edit_counts_numpy
    kendall_counts = kendall_counts_numpy
