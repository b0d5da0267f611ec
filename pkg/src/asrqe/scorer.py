"""Referenceless hypothesis scores.

``noref`` scores are ``sigmoid(logit)`` from one forward pass of a trained
ranker. ``perplexity_baseline`` scores are ``1 / (1 + ppl)`` where ``ppl`` is
the pseudo-perplexity under a masked language model, so higher is better for
both kinds.
"""

from __future__ import annotations

import functools
from typing import Iterable, Sequence

import torch

from asrqe.corpus_io import Hypothesis, QualityScore
from asrqe.encoders import MaskedLanguageModel, UndefinedPerplexityError, load_masked_lm
from asrqe.model import Checkpoint, SiameseRanker, forward_single, load_checkpoint, sigmoid

__all__ = [
    "score",
    "score_batch",
    "perplexity_baseline",
    "perplexity_batch",
    "NoRefScorer",
    "PerplexityScorer",
    "UndefinedPerplexityError",
]


def _model(checkpoint: Checkpoint | SiameseRanker) -> SiameseRanker:
    model = checkpoint.model if isinstance(checkpoint, Checkpoint) else checkpoint
    if model.training:
        raise RuntimeError("scoring requires a model in eval mode")
    return model


def score(
    text: str,
    checkpoint: Checkpoint | SiameseRanker,
    *,
    utterance_id: str = "",
    source: str = "",
    quality_tier: int | None = None,
) -> QualityScore:
    logit = forward_single(text, _model(checkpoint))
    return QualityScore(utterance_id, source, sigmoid(logit), "noref", logit, quality_tier)


def score_batch(hypotheses: Iterable[Hypothesis], checkpoint: Checkpoint | SiameseRanker) -> list[QualityScore]:
    """Score hypotheses in order.

    Each text runs through the network on its own, so the result is
    bit-identical to calling :func:`score` per item (padded batches can round
    differently).
    """
    model = _model(checkpoint)
    with torch.no_grad():
        return [
            score(h.text, model, utterance_id=h.utterance_id, source=h.source, quality_tier=h.quality_tier)
            for h in hypotheses
        ]


@functools.lru_cache(maxsize=4)
def _cached_lm(model_id: str) -> MaskedLanguageModel:
    return load_masked_lm(model_id)


def _lm(baseline_model) -> MaskedLanguageModel:
    if isinstance(baseline_model, MaskedLanguageModel):
        return baseline_model
    return _cached_lm(str(baseline_model))


def perplexity_baseline(
    text: str,
    baseline_model: MaskedLanguageModel | str,
    *,
    utterance_id: str = "",
    source: str = "",
    quality_tier: int | None = None,
) -> QualityScore:
    """Pseudo-perplexity score of ``text``.

    Raises:
        UndefinedPerplexityError: ``text`` has no tokens.
    """
    ppl = _lm(baseline_model).pseudo_perplexity(text)
    return QualityScore(utterance_id, source, 1.0 / (1.0 + ppl), "perplexity_baseline", ppl, quality_tier)


def perplexity_batch(
    hypotheses: Iterable[Hypothesis], baseline_model: MaskedLanguageModel | str, *, empty_score: float | None = None
) -> list[QualityScore]:
    """Baseline scores in order.

    Empty hypotheses have no perplexity; they raise unless ``empty_score``
    is given, in which case they receive that score and an infinite raw
    perplexity.
    """
    lm = _lm(baseline_model)
    out = []
    for h in hypotheses:
        try:
            out.append(
                perplexity_baseline(
                    h.text, lm, utterance_id=h.utterance_id, source=h.source, quality_tier=h.quality_tier
                )
            )
        except UndefinedPerplexityError:
            if empty_score is None:
                raise
            out.append(
                QualityScore(h.utterance_id, h.source, empty_score, "perplexity_baseline", float("inf"), h.quality_tier)
            )
    return out


class NoRefScorer:
    """Callable text -> score for a trained ranker."""

    kind = "noref"

    def __init__(self, checkpoint: Checkpoint | SiameseRanker | str):
        if isinstance(checkpoint, str):
            checkpoint = load_checkpoint(checkpoint)
        self.model = _model(checkpoint)

    def __call__(self, text: str) -> float:
        return score(text, self.model).score


class PerplexityScorer:
    kind = "perplexity_baseline"

    def __init__(self, baseline_model: MaskedLanguageModel | str, *, empty_score: float = 0.0):
        self.lm = _lm(baseline_model)
        self.empty_score = empty_score

    def __call__(self, text: str) -> float:
        try:
            return perplexity_baseline(text, self.lm).score
        except UndefinedPerplexityError:
            return self.empty_score
