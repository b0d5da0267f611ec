"""Text normalization, word error rate, ranks and correlation coefficients."""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from asrqe import kernels

__all__ = [
    "NormalizedText",
    "WerBreakdown",
    "CorrelationTriple",
    "EmptyReferenceError",
    "normalize",
    "wer",
    "pearson",
    "spearman",
    "kendall",
    "correlations",
    "rank_within_sample",
]


class EmptyReferenceError(ValueError):
    """WER is undefined because the reference has no words."""


@dataclass(frozen=True)
class NormalizedText:
    tokens: tuple[str, ...]

    def __str__(self) -> str:
        return " ".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def _strip_punctuation(text: str) -> str:
    # Unicode categories P* (connector, dash, open, close, initial, final, other)
    return "".join(" " if unicodedata.category(ch).startswith("P") else ch for ch in text)


def normalize(text: str | NormalizedText) -> NormalizedText:
    """Lowercase, drop punctuation and split on whitespace runs.

    Punctuation characters are replaced by a space rather than deleted, so
    ``"well-known"`` becomes two tokens. Idempotent.
    """
    if isinstance(text, NormalizedText):
        text = str(text)
    return NormalizedText(tuple(_strip_punctuation(text.lower()).split()))


@dataclass(frozen=True)
class WerBreakdown:
    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_length


def _as_normalized(text: str | NormalizedText | Sequence[str]) -> NormalizedText:
    if isinstance(text, NormalizedText):
        return text
    if isinstance(text, str):
        return normalize(text)
    return NormalizedText(tuple(text))


def wer(reference, hypothesis) -> WerBreakdown:
    """Word error rate of ``hypothesis`` against ``reference``.

    Raw strings are normalized first; token sequences and
    :class:`NormalizedText` are used as given. Counts come from one minimum
    edit alignment with unit costs, preferring substitutions over an
    insertion/deletion pair when both are optimal.

    Raises:
        EmptyReferenceError: if the reference has no tokens.
    """
    ref = _as_normalized(reference)
    hyp = _as_normalized(hypothesis)
    if len(ref) == 0:
        raise EmptyReferenceError("reference has no words; WER is undefined")
    r, h = kernels.encode_tokens(list(ref.tokens), list(hyp.tokens))
    subs, dels, ins = kernels.edit_counts(r, h)
    return WerBreakdown(int(subs), int(dels), int(ins), len(ref))


# ---------------------------------------------------------------------------
# correlations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorrelationTriple:
    """Pearson, Spearman and Kendall coefficients.

    A coefficient is ``nan`` when it is undefined (an input vector is
    constant); callers must check :attr:`defined` before averaging.
    """

    pearson: float
    spearman: float
    kendall: float
    n: int = 0
    skipped: int = 0

    @property
    def defined(self) -> bool:
        return not any(math.isnan(v) for v in (self.pearson, self.spearman, self.kendall))

    def as_dict(self) -> dict:
        return {
            "pearson": _json_float(self.pearson),
            "spearman": _json_float(self.spearman),
            "kendall": _json_float(self.kendall),
            "n": self.n,
            "skipped": self.skipped,
        }


def _json_float(v: float) -> float | None:
    return None if math.isnan(v) else float(v)


def _pair_vectors(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise ValueError("correlation inputs must be one-dimensional")
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("need at least two observations")
    return x, y


def pearson(x, y) -> float:
    x, y = _pair_vectors(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def spearman(x, y) -> float:
    """Pearson correlation of average-tie ranks."""
    x, y = _pair_vectors(x, y)
    return pearson(rank_within_sample(x), rank_within_sample(y))


def kendall(x, y) -> float:
    """Kendall tau-b (tie corrected)."""
    x, y = _pair_vectors(x, y)
    score, n0, tied_x, tied_y = kernels.kendall_counts(x, y)
    denom = (n0 - tied_x) * (n0 - tied_y)
    if denom == 0:
        return math.nan
    tau = score / math.sqrt(denom)
    return min(1.0, max(-1.0, tau))


def correlations(x, y, *, skipped: int = 0) -> CorrelationTriple:
    x, y = _pair_vectors(x, y)
    return CorrelationTriple(pearson(x, y), spearman(x, y), kendall(x, y), n=int(x.shape[0]), skipped=skipped)


def rank_within_sample(values, direction: Literal["ascending", "descending"] = "ascending") -> np.ndarray:
    """1-based ranks with ties averaged.

    ``ascending`` gives rank 1 to the smallest value, ``descending`` to the
    largest.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise ValueError("rank_within_sample needs a non-empty 1-D vector")
    if direction == "descending":
        v = -v
    elif direction != "ascending":
        raise ValueError(f"unknown direction {direction!r}")
    order = np.argsort(v, kind="stable")
    sorted_v = v[order]
    # tie groups as [start, end) runs over the sorted values
    boundaries = np.flatnonzero(np.diff(sorted_v) != 0) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [v.shape[0]]))
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(v.shape[0], dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks
