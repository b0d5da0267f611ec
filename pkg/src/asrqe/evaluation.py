"""Evaluation of a referenceless scorer against reference-based WER.

Orientation: every correlation is computed between quality-consistent
quantities (score vs. negated WER; best-is-rank-1 vs. best-is-rank-1), so a
good metric gives positive coefficients. Rank correlations pool the
per-utterance rank vectors of the whole dataset. Corpus WER is total errors
over total reference words; macro (utterance-averaged) WER is reported
alongside.
"""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from asrqe.corpus_io import Corpus, QualityScore, TrainingPair
from asrqe.metrics import CorrelationTriple, WerBreakdown, correlations, rank_within_sample, wer

__all__ = [
    "EvalRecord",
    "CorrelationReport",
    "EnsembleReport",
    "build_records",
    "pairwise_accuracy",
    "correlation_with_wer_scores",
    "correlation_with_wer_ranking",
    "correlation_report",
    "ensemble_select",
    "corpus_wer",
    "render_correlation_table",
    "render_ensemble_table",
    "write_reports",
]

ORIENTATION_NOTE = (
    "score correlations: score vs -WER pooled over all hypotheses; "
    "rank correlations: per-utterance ranks (rank 1 = lowest WER / highest score) pooled over utterances; "
    "positive = agreement"
)


@dataclass(frozen=True)
class EvalRecord:
    utterance_id: str
    source: str
    score: QualityScore
    wer: WerBreakdown
    language: str = ""


def build_records(corpus: Corpus, scores: Iterable[QualityScore]) -> list[EvalRecord]:
    """Join scores with their hypotheses and compute WER against the references.

    Raises:
        KeyError: a score without a matching hypothesis.
        ValueError: the utterance has no reference.
    """
    hyps = {(h.utterance_id, h.source, h.quality_tier): h for h in corpus.hypotheses}
    records = []
    for s in scores:
        key = (s.utterance_id, s.source, s.quality_tier)
        h = hyps.get(key)
        if h is None:
            raise KeyError(f"score for unknown hypothesis {key}")
        utt = corpus.utterances[s.utterance_id]
        if utt.reference is None:
            raise ValueError(f"utterance {utt.utterance_id!r} has no reference; cannot evaluate")
        records.append(EvalRecord(utt.utterance_id, h.system, s, wer(utt.reference, h.text), utt.language))
    return records


def pairwise_accuracy(pairs: Sequence[TrainingPair], scorer: Callable[[str], float]) -> float:
    """Fraction of pairs with ``scorer(better) > scorer(worse)``; ties count 0.5."""
    if not pairs:
        raise ValueError("pairwise_accuracy needs at least one pair")
    total = 0.0
    for p in pairs:
        a, b = scorer(p.better_text), scorer(p.worse_text)
        total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / len(pairs)


def correlation_with_wer_scores(records: Sequence[EvalRecord]) -> CorrelationTriple:
    if len(records) < 2:
        raise ValueError("need at least two records")
    x = np.array([r.score.score for r in records], dtype=np.float64)
    y = np.array([-r.wer.wer for r in records], dtype=np.float64)
    return correlations(x, y)


def _by_utterance(records: Iterable[EvalRecord]) -> dict[str, list[EvalRecord]]:
    groups: dict[str, list[EvalRecord]] = defaultdict(list)
    for r in records:
        groups[r.utterance_id].append(r)
    return groups


def correlation_with_wer_ranking(records: Sequence[EvalRecord]) -> CorrelationTriple:
    """Correlation of per-utterance score ranks with per-utterance WER ranks.

    Utterances with a single hypothesis have no ranking and are skipped; the
    count is returned in :attr:`CorrelationTriple.skipped`.
    """
    wer_ranks, score_ranks = [], []
    skipped = 0
    used = 0
    groups = _by_utterance(records)
    for uid in sorted(groups):
        group = sorted(groups[uid], key=lambda r: r.source)
        if len(group) < 2:
            skipped += 1
            continue
        used += 1
        wer_ranks.append(rank_within_sample([r.wer.wer for r in group], "ascending"))
        score_ranks.append(rank_within_sample([r.score.score for r in group], "descending"))
    if used < 2:
        raise ValueError(f"need >= 2 utterances with >= 2 hypotheses, got {used}")
    return correlations(np.concatenate(score_ranks), np.concatenate(wer_ranks), skipped=skipped)


@dataclass
class CorrelationReport:
    dataset: str
    language: str
    model: str
    rank_correlations: CorrelationTriple
    score_correlations: CorrelationTriple
    n_samples: int
    n_sources: int
    note: str = ORIENTATION_NOTE

    def as_dict(self) -> dict:
        d = asdict(self)
        d["rank_correlations"] = self.rank_correlations.as_dict()
        d["score_correlations"] = self.score_correlations.as_dict()
        return d


def correlation_report(records: Sequence[EvalRecord], *, dataset: str, language: str, model: str) -> CorrelationReport:
    return CorrelationReport(
        dataset=dataset,
        language=language,
        model=model,
        rank_correlations=correlation_with_wer_ranking(records),
        score_correlations=correlation_with_wer_scores(records),
        n_samples=len({r.utterance_id for r in records}),
        n_sources=len({r.source for r in records}),
    )


# ---------------------------------------------------------------------------
# ensembling
# ---------------------------------------------------------------------------


def corpus_wer(breakdowns: Iterable[WerBreakdown]) -> float:
    """Total errors over total reference words (not the mean of per-utterance WERs)."""
    errors = words = 0
    for b in breakdowns:
        errors += b.errors
        words += b.reference_length
    if words == 0:
        raise ValueError("no reference words")
    return errors / words


def _macro(breakdowns: Sequence[WerBreakdown]) -> float:
    return float(np.mean([b.wer for b in breakdowns]))


@dataclass
class EnsembleReport:
    language: str
    lb_wer: float
    best_single_wer: float
    ensemble_wer: float
    delta: float
    best_single_source: str = ""
    lb_wer_macro: float = math.nan
    best_single_wer_macro: float = math.nan
    ensemble_wer_macro: float = math.nan
    n_utterances: int = 0
    coverage: dict[str, int] = field(default_factory=dict)
    coverage_mismatch: bool = False

    def as_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and math.isnan(v):
                d[k] = None
        return d


def ensemble_select(
    records: Sequence[EvalRecord], *, language: str = "all"
) -> tuple[dict[str, EvalRecord], EnsembleReport]:
    """Pick the highest-scoring hypothesis of every utterance.

    Ties go to the lexicographically smallest source name. The lower bound
    picks the lowest-WER hypothesis; the best single system is the source
    with the lowest corpus WER over the utterances it covers.
    """
    groups = _by_utterance(records)
    if not groups:
        raise ValueError("no records")
    chosen: dict[str, EvalRecord] = {}
    oracle: list[WerBreakdown] = []
    per_source: dict[str, list[WerBreakdown]] = defaultdict(list)
    for uid in sorted(groups):
        group = sorted(groups[uid], key=lambda r: r.source)
        best = group[0]
        for r in group[1:]:
            if r.score.score > best.score.score:
                best = r
        chosen[uid] = best
        oracle.append(min(group, key=lambda r: (r.wer.errors, r.source)).wer)
        for r in group:
            per_source[r.source].append(r.wer)

    source_wer = {s: corpus_wer(bs) for s, bs in per_source.items()}
    best_source = min(sorted(source_wer), key=lambda s: source_wer[s])
    ens = corpus_wer(r.wer for r in chosen.values())
    best_single = source_wer[best_source]
    delta = (best_single - ens) / best_single if best_single > 0 else (0.0 if ens == 0 else math.nan)
    coverage = {s: len(bs) for s, bs in sorted(per_source.items())}
    report = EnsembleReport(
        language=language,
        lb_wer=corpus_wer(oracle),
        best_single_wer=best_single,
        ensemble_wer=ens,
        delta=delta,
        best_single_source=best_source,
        lb_wer_macro=_macro(oracle),
        best_single_wer_macro=_macro(per_source[best_source]),
        ensemble_wer_macro=_macro([r.wer for r in chosen.values()]),
        n_utterances=len(groups),
        coverage=coverage,
        coverage_mismatch=len(set(coverage.values())) > 1 or any(v != len(groups) for v in coverage.values()),
    )
    return chosen, report


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _fmt(v: float | None, spec: str = ".2f") -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return format(v, spec)


def _numeric(cell: str) -> bool:
    return cell == "n/a" or cell.rstrip("%").lstrip("-").replace(".", "", 1).isdigit()


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(header)]
    line = "  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()
    sep = "  ".join("-" * w for w in widths)
    body = []
    for r in rows:
        cells = [c.ljust(w) if not _numeric(c) else c.rjust(w) for c, w in zip(r, widths)]
        body.append("  ".join(cells).rstrip())
    return "\n".join([line, sep, *body]) + "\n"


CORRELATION_HEADER = (
    "Dataset - Language",
    "Model",
    "Rank Pearson",
    "Rank Spearman",
    "Rank Kendall",
    "Score Pearson",
    "Score Spearman",
    "Score Kendall",
)
ENSEMBLE_HEADER = ("Language", "LB", "Best ASR", "Ensemble", "Delta")


def render_correlation_table(reports: Sequence[CorrelationReport]) -> str:
    rows = []
    for r in reports:
        rc, sc = r.rank_correlations, r.score_correlations
        rows.append(
            [
                f"{r.dataset} - {r.language}",
                r.model,
                *(_fmt(v) for v in (rc.pearson, rc.spearman, rc.kendall, sc.pearson, sc.spearman, sc.kendall)),
            ]
        )
    return _table(CORRELATION_HEADER, rows)


def render_ensemble_table(reports: Sequence[EnsembleReport]) -> str:
    """WERs as percentages, delta as percent reduction against the best single system."""
    rows = [
        [
            r.language,
            _fmt(100 * r.lb_wer),
            _fmt(100 * r.best_single_wer),
            _fmt(100 * r.ensemble_wer),
            _fmt(None if math.isnan(r.delta) else 100 * r.delta, ".0f") + "%",
        ]
        for r in reports
    ]
    return _table(ENSEMBLE_HEADER, rows)


def write_reports(
    out_dir: str | os.PathLike,
    *,
    correlation: Sequence[CorrelationReport] | None = None,
    ensemble: Sequence[EnsembleReport] | None = None,
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    if correlation is not None:
        p = out / "correlation_report.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump({"note": ORIENTATION_NOTE, "reports": [r.as_dict() for r in correlation]}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        t = out / "correlation_table.txt"
        t.write_text(render_correlation_table(correlation), encoding="utf-8")
        written.update(correlation_json=p, correlation_table=t)
    if ensemble is not None:
        p = out / "ensemble_report.json"
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "note": "corpus WER = total errors / total reference words; *_macro = mean per-utterance WER",
                    "reports": [r.as_dict() for r in ensemble],
                },
                fh,
                indent=2,
                sort_keys=True,
            )
            fh.write("\n")
        t = out / "ensemble_table.txt"
        t.write_text(render_ensemble_table(ensemble), encoding="utf-8")
        written.update(ensemble_json=p, ensemble_table=t)
    return written
