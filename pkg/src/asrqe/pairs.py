"""Self-supervised ranking pairs from multi-tier ASR outputs.

Within each (utterance, source) the hypotheses of different quality tiers are
deduplicated, every two distinct outputs form one (better, worse) pair with the
lower tier as the better side, pairs whose exact reversal occurs anywhere in
the corpus are dropped, and the rest is split speaker-disjointly into
shuffled train/validation mini-batches.
"""

from __future__ import annotations

import logging
import random
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np

from asrqe.corpus_io import Corpus, Hypothesis, TrainingPair, Utterance, pair_weight
from asrqe.metrics import normalize

log = logging.getLogger(__name__)

__all__ = [
    "PairBatchPlan",
    "GenerationReport",
    "PruneReport",
    "SplitReport",
    "SplitResult",
    "unique_outputs",
    "make_pairs",
    "prune_inconsistent",
    "build_pairs",
    "split_and_batch",
]


def unique_outputs(hypotheses: Sequence[Hypothesis]) -> list[tuple[int, str]]:
    """Distinct outputs of one utterance as ``(tier, text)`` sorted by tier.

    Texts that normalize identically collapse onto the best (lowest) tier.
    """
    for h in hypotheses:
        if h.quality_tier is None:
            raise ValueError(f"hypothesis of {h.utterance_id!r} from {h.source!r} has no quality tier")
    best: dict[tuple[str, ...], tuple[int, str]] = {}
    for h in sorted(hypotheses, key=lambda h: h.quality_tier):
        key = normalize(h.text).tokens
        if key not in best:
            best[key] = (h.quality_tier, h.text)
    return sorted(best.values(), key=lambda o: o[0])


def make_pairs(utterance_id: str, outputs: Sequence[tuple[int, str]]) -> list[TrainingPair]:
    """All C(u, 2) pairs of the unique outputs, better side = lower tier."""
    pairs = []
    for (t_a, a), (t_b, b) in combinations(sorted(outputs, key=lambda o: o[0]), 2):
        if t_a == t_b:
            raise ValueError(f"{utterance_id!r}: two distinct outputs share tier {t_a}")
        pairs.append(
            TrainingPair(
                utterance_id=utterance_id,
                better_text=a,
                worse_text=b,
                weight=pair_weight(a, b),
                tier_gap=t_b - t_a,
            )
        )
    return pairs


@dataclass
class PruneReport:
    pairs_in: int = 0
    removed: int = 0
    pairs_out: int = 0
    reversed_keys: int = 0


def prune_inconsistent(pairs: Iterable[TrainingPair]) -> tuple[list[TrainingPair], PruneReport]:
    """Drop every pair whose normalized reversal also occurs, anywhere.

    Both directions are removed. Order of the survivors is preserved.
    """
    pairs = list(pairs)
    keys = [(normalize(p.better_text).tokens, normalize(p.worse_text).tokens) for p in pairs]
    present = set(keys)
    conflicted = {k for k in present if (k[1], k[0]) in present}
    kept = [p for p, k in zip(pairs, keys) if k not in conflicted]
    report = PruneReport(
        pairs_in=len(pairs),
        removed=len(pairs) - len(kept),
        pairs_out=len(kept),
        reversed_keys=len(conflicted) // 2,
    )
    return kept, report


@dataclass
class GenerationReport:
    utterances: int = 0
    groups: int = 0
    hypotheses: int = 0
    unique_outputs: int = 0
    degenerate_groups: int = 0
    pairs_before_pruning: int = 0
    pruned_pairs: int = 0
    pairs_after_pruning: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def build_pairs(corpus: Corpus) -> tuple[list[TrainingPair], GenerationReport]:
    """Pairs for a whole corpus, grouped by (utterance, source).

    Hypotheses from different sources are never paired with each other: tiers
    are only comparable within one model family.
    """
    groups: dict[tuple[str, str], list[Hypothesis]] = defaultdict(list)
    for h in corpus.hypotheses:
        groups[(h.utterance_id, h.source)].append(h)

    report = GenerationReport(utterances=len(corpus.utterances), groups=len(groups), hypotheses=len(corpus))
    all_pairs: list[TrainingPair] = []
    for (uid, _source), hyps in groups.items():
        outs = unique_outputs(hyps)
        report.unique_outputs += len(outs)
        if len(outs) < 2:
            report.degenerate_groups += 1
            continue
        all_pairs.extend(make_pairs(uid, outs))
    report.pairs_before_pruning = len(all_pairs)
    kept, prune = prune_inconsistent(all_pairs)
    report.pruned_pairs = prune.removed
    report.pairs_after_pruning = len(kept)
    return kept, report


# ---------------------------------------------------------------------------
# splitting and batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PairBatchPlan:
    seed: int = 0
    batch_size: int = 32
    train_fraction: float = 0.8
    split_keys: Literal["speaker", "utterance"] = "speaker"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.split_keys not in ("speaker", "utterance"):
            raise ValueError(f"unknown split_keys {self.split_keys!r}")


@dataclass
class SplitReport:
    n_pairs: int = 0
    n_train: int = 0
    n_validation: int = 0
    train_groups: int = 0
    validation_groups: int = 0
    language_share: dict[str, float] = field(default_factory=dict)
    validation_language_share: dict[str, float] = field(default_factory=dict)
    shared_groups: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SplitResult:
    train_batches: list[list[TrainingPair]]
    validation_batches: list[list[TrainingPair]]
    train_utterances: set[str]
    validation_utterances: set[str]
    report: SplitReport

    @property
    def train_pairs(self) -> list[TrainingPair]:
        return [p for b in self.train_batches for p in b]

    @property
    def validation_pairs(self) -> list[TrainingPair]:
        return [p for b in self.validation_batches for p in b]


def _group_key(utt: Utterance, split_keys: str) -> str:
    if split_keys == "speaker" and utt.speaker_id is not None:
        return f"spk:{utt.speaker_id}"
    return f"utt:{utt.utterance_id}"


def _batches(pairs: list[TrainingPair], batch_size: int, rng: np.random.Generator) -> list[list[TrainingPair]]:
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def split_and_batch(
    pairs: Sequence[TrainingPair],
    plan: PairBatchPlan,
    utterances: Mapping[str, Utterance],
    *,
    tolerance: float = 0.05,
) -> SplitResult:
    """Speaker-disjoint, language-stratified train/validation split.

    Groups (speakers, or utterances when the speaker is unknown or
    ``plan.split_keys == "utterance"``) are shuffled per language and moved
    to validation until that language's validation share reaches
    ``1 - train_fraction``. A group spanning languages is filed under the
    language holding most of its pairs. Stratification that misses the
    corpus proportions by more than ``tolerance`` is reported as a warning
    rather than an error.
    """
    report = SplitReport(n_pairs=len(pairs))
    pairs_by_group: dict[str, list[int]] = defaultdict(list)
    group_langs: dict[str, Counter] = defaultdict(Counter)
    for i, p in enumerate(pairs):
        try:
            utt = utterances[p.utterance_id]
        except KeyError:
            raise KeyError(f"pair references unknown utterance {p.utterance_id!r}") from None
        g = _group_key(utt, plan.split_keys)
        pairs_by_group[g].append(i)
        group_langs[g][utt.language] += 1

    by_lang: dict[str, list[str]] = defaultdict(list)
    for g in sorted(pairs_by_group):
        lang = sorted(group_langs[g].items(), key=lambda kv: (-kv[1], kv[0]))[0][0]
        by_lang[lang].append(g)

    val_fraction = 1.0 - plan.train_fraction
    val_groups: set[str] = set()
    for lang in sorted(by_lang):
        groups = list(by_lang[lang])
        random.Random(f"{plan.seed}:{lang}").shuffle(groups)
        total = sum(len(pairs_by_group[g]) for g in groups)
        target = val_fraction * total
        taken = 0
        chosen = []
        for g in groups:
            size = len(pairs_by_group[g])
            if taken + size / 2 <= target:
                chosen.append(g)
                taken += size
        if not chosen and len(groups) >= 2:
            chosen.append(min(groups, key=lambda g: (len(pairs_by_group[g]), g)))
        if len(groups) < 2:
            report.warnings.append(
                f"language {lang!r} has a single split group; it cannot appear in both splits"
            )
        val_groups.update(chosen)

    train_idx = sorted(i for g, idx in pairs_by_group.items() if g not in val_groups for i in idx)
    val_idx = sorted(i for g, idx in pairs_by_group.items() if g in val_groups for i in idx)
    train = [pairs[i] for i in train_idx]
    val = [pairs[i] for i in val_idx]

    lang_of = {uid: u.language for uid, u in utterances.items()}
    all_langs = Counter(lang_of[p.utterance_id] for p in pairs)
    val_langs = Counter(lang_of[p.utterance_id] for p in val)
    report.n_train = len(train)
    report.n_validation = len(val)
    report.train_groups = len(pairs_by_group) - len(val_groups)
    report.validation_groups = len(val_groups)
    report.language_share = {k: all_langs[k] / len(pairs) for k in sorted(all_langs)} if pairs else {}
    report.validation_language_share = {k: val_langs[k] / len(val) for k in sorted(all_langs)} if val else {}
    for lang, share in report.language_share.items():
        got = report.validation_language_share.get(lang, 0.0)
        if abs(got - share) > tolerance:
            report.warnings.append(
                f"validation share of {lang!r} is {got:.3f}, corpus share {share:.3f} (tolerance {tolerance})"
            )
    train_utts = {p.utterance_id for p in train}
    val_utts = {p.utterance_id for p in val}
    train_g = {_group_key(utterances[u], plan.split_keys) for u in train_utts}
    val_g = {_group_key(utterances[u], plan.split_keys) for u in val_utts}
    report.shared_groups = sorted(train_g & val_g)
    for w in report.warnings:
        log.warning(w)

    rng = np.random.default_rng(plan.seed)
    return SplitResult(
        train_batches=_batches(train, plan.batch_size, rng),
        validation_batches=_batches(val, plan.batch_size, rng),
        train_utterances=train_utts,
        validation_utterances=val_utts,
        report=report,
    )
