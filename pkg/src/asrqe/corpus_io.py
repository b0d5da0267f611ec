"""Utterances, hypotheses, training pairs and scores as JSON-lines files.

Corpus file: one hypothesis per line with the utterance metadata repeated::

    {"utterance_id": "u1", "language": "en", "speaker_id": null,
     "reference": null, "source": "whisper", "quality_tier": 3, "text": "..."}

Pair file: a header object followed by one pair per line::

    {"format": "asrqe-pairs", "version": 1, "weight": "...", "seed": 0}
    {"utterance_id": "u1", "better_text": "...", "worse_text": "...",
     "weight": 0.25, "tier_gap": 2}
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

from asrqe.metrics import normalize, wer

log = logging.getLogger(__name__)

PAIR_FORMAT = "asrqe-pairs"
PAIR_FORMAT_VERSION = 1
WEIGHT_CONVENTION = "wer(reference=normalize(better_text), hypothesis=normalize(worse_text))"

CORPUS_FIELDS = ("utterance_id", "language", "speaker_id", "reference", "source", "quality_tier", "text")
PAIR_FIELDS = ("utterance_id", "better_text", "worse_text", "weight", "tier_gap")

# ISO 639-1
LANGUAGE_CODES = frozenset(
    """
    aa ab ae af ak am an ar as av ay az ba be bg bh bi bm bn bo br bs ca ce ch co cr cs cu cv cy
    da de dv dz ee el en eo es et eu fa ff fi fj fo fr fy ga gd gl gn gu gv ha he hi ho hr ht hu
    hy hz ia id ie ig ii ik io is it iu ja jv ka kg ki kj kk kl km kn ko kr ks ku kv kw ky la lb
    lg li ln lo lt lu lv mg mh mi mk ml mn mr ms mt my na nb nd ne ng nl nn no nr nv ny oc oj om
    or os pa pi pl ps pt qu rm rn ro ru rw sa sc sd se sg si sk sl sm sn so sq sr ss st su sv sw
    ta te tg th ti tk tl tn to tr ts tt tw ty ug uk ur uz ve vi vo wa wo xh yi yo za zh zu
    """.split()
)


class CorpusFormatError(ValueError):
    """A corpus, pair or scores file violates its schema."""

    def __init__(self, message: str, path: str | os.PathLike | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class DuplicateKeyError(CorpusFormatError):
    pass


@dataclass(frozen=True)
class Utterance:
    utterance_id: str
    language: str
    speaker_id: str | None = None
    reference: str | None = None


@dataclass(frozen=True)
class Hypothesis:
    utterance_id: str
    source: str
    text: str
    quality_tier: int | None = None

    @property
    def system(self) -> str:
        """Engine label used when ranking hypotheses of one utterance."""
        if self.quality_tier is None:
            return self.source
        return f"{self.source}:t{self.quality_tier}"


@dataclass(frozen=True)
class TrainingPair:
    utterance_id: str
    better_text: str
    worse_text: str
    weight: float
    tier_gap: int


@dataclass
class Corpus:
    utterances: dict[str, Utterance] = field(default_factory=dict)
    hypotheses: list[Hypothesis] = field(default_factory=list)

    def by_utterance(self) -> dict[str, list[Hypothesis]]:
        groups: dict[str, list[Hypothesis]] = {uid: [] for uid in self.utterances}
        for h in self.hypotheses:
            groups[h.utterance_id].append(h)
        return groups

    def __len__(self) -> int:
        return len(self.hypotheses)


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


def _require(rec: dict, key: str, types, path, lineno, nullable=False):
    if key not in rec:
        raise CorpusFormatError(f"missing field {key!r}", path, lineno)
    value = rec[key]
    if value is None and nullable:
        return None
    if isinstance(value, bool) or not isinstance(value, types):
        raise CorpusFormatError(f"field {key!r} has wrong type {type(value).__name__}", path, lineno)
    return value


def _read_json_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"malformed JSON: {exc.msg}", path, lineno) from None
            if not isinstance(rec, dict):
                raise CorpusFormatError("record is not an object", path, lineno)
            yield lineno, rec


def load_corpus(path: str | os.PathLike) -> Corpus:
    """Read and validate a corpus file.

    Raises:
        CorpusFormatError: malformed line or field, or conflicting utterance
            metadata across lines.
        DuplicateKeyError: a repeated (utterance_id, source, quality_tier).
        FileNotFoundError: ``path`` does not exist.
    """
    corpus = Corpus()
    seen: dict[tuple, int] = {}
    warned: set[str] = set()
    for lineno, rec in _read_json_lines(path):
        extra = set(rec) - set(CORPUS_FIELDS)
        if extra:
            raise CorpusFormatError(f"unexpected fields {sorted(extra)}", path, lineno)
        uid = _require(rec, "utterance_id", str, path, lineno)
        lang = _require(rec, "language", str, path, lineno)
        speaker = _require(rec, "speaker_id", str, path, lineno, nullable=True)
        reference = _require(rec, "reference", str, path, lineno, nullable=True)
        source = _require(rec, "source", str, path, lineno)
        tier = _require(rec, "quality_tier", int, path, lineno, nullable=True)
        text = _require(rec, "text", str, path, lineno)
        if not uid:
            raise CorpusFormatError("empty utterance_id", path, lineno)
        if tier is not None and tier < 1:
            raise CorpusFormatError(f"quality_tier must be >= 1, got {tier}", path, lineno)
        if lang not in LANGUAGE_CODES and lang not in warned:
            warned.add(lang)
            log.warning("%s:%d: unknown language code %r", path, lineno, lang)

        key = (uid, source, tier)
        if key in seen:
            raise DuplicateKeyError(
                f"duplicate hypothesis {key} (first seen on line {seen[key]})", path, lineno
            )
        seen[key] = lineno

        utt = Utterance(uid, lang, speaker, reference)
        known = corpus.utterances.get(uid)
        if known is None:
            corpus.utterances[uid] = utt
        elif known != utt:
            raise CorpusFormatError(f"utterance {uid!r} metadata differs from earlier lines", path, lineno)
        corpus.hypotheses.append(Hypothesis(uid, source, text, tier))
    return corpus


def write_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h in corpus.hypotheses:
            u = corpus.utterances[h.utterance_id]
            rec = {
                "utterance_id": u.utterance_id,
                "language": u.language,
                "speaker_id": u.speaker_id,
                "reference": u.reference,
                "source": h.source,
                "quality_tier": h.quality_tier,
                "text": h.text,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# pairs
# ---------------------------------------------------------------------------


def pair_weight(better_text: str, worse_text: str) -> float:
    """Loss weight of a pair: WER of the worse text against the better one."""
    return wer(normalize(better_text), normalize(worse_text)).wer


def validate_pair(pair: TrainingPair) -> None:
    if normalize(pair.better_text) == normalize(pair.worse_text):
        raise CorpusFormatError("better_text and worse_text are equal after normalization")
    if not (pair.weight > 0) or not math.isfinite(pair.weight):
        raise CorpusFormatError(f"weight must be a finite value > 0, got {pair.weight}")
    if pair.tier_gap < 1:
        raise CorpusFormatError(f"tier_gap must be >= 1, got {pair.tier_gap}")


def write_pairs(pairs: Iterable[TrainingPair], path: str | os.PathLike, *, seed: int | None = None) -> None:
    header = {
        "format": PAIR_FORMAT,
        "version": PAIR_FORMAT_VERSION,
        "weight": WEIGHT_CONVENTION,
        "seed": seed,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header) + "\n")
        for p in pairs:
            fh.write(json.dumps(asdict(p), ensure_ascii=False) + "\n")


def read_pair_header(path: str | os.PathLike) -> dict:
    for lineno, rec in _read_json_lines(path):
        if rec.get("format") != PAIR_FORMAT:
            raise CorpusFormatError("missing pair-file header", path, lineno)
        if rec.get("version") != PAIR_FORMAT_VERSION:
            raise CorpusFormatError(f"unsupported pair-file version {rec.get('version')}", path, lineno)
        return rec
    raise CorpusFormatError("empty pair file (header required)", path)


def load_pairs(path: str | os.PathLike, *, verify_weights: bool = True) -> list[TrainingPair]:
    """Read a pair file, checking each record's schema and stored weight.

    The stored weight must equal the WER recomputed from the two texts, to
    within 1e-9.
    """
    pairs: list[TrainingPair] = []
    header_seen = False
    for lineno, rec in _read_json_lines(path):
        if not header_seen:
            if rec.get("format") != PAIR_FORMAT:
                raise CorpusFormatError("missing pair-file header", path, lineno)
            if rec.get("version") != PAIR_FORMAT_VERSION:
                raise CorpusFormatError(f"unsupported pair-file version {rec.get('version')}", path, lineno)
            header_seen = True
            continue
        if set(rec) != set(PAIR_FIELDS):
            raise CorpusFormatError(f"pair fields must be exactly {list(PAIR_FIELDS)}", path, lineno)
        pair = TrainingPair(
            utterance_id=_require(rec, "utterance_id", str, path, lineno),
            better_text=_require(rec, "better_text", str, path, lineno),
            worse_text=_require(rec, "worse_text", str, path, lineno),
            weight=float(_require(rec, "weight", (int, float), path, lineno)),
            tier_gap=_require(rec, "tier_gap", int, path, lineno),
        )
        try:
            validate_pair(pair)
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), path, lineno) from None
        if verify_weights:
            expected = pair_weight(pair.better_text, pair.worse_text)
            if abs(expected - pair.weight) > 1e-9:
                raise CorpusFormatError(
                    f"stored weight {pair.weight} does not match recomputed WER {expected}", path, lineno
                )
        pairs.append(pair)
    if not header_seen:
        raise CorpusFormatError("empty pair file (header required)", path)
    return pairs


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QualityScore:
    """Referenceless quality of one hypothesis; higher is better for every kind.

    ``raw`` is the untransformed auxiliary value: the logit for ``noref``,
    the perplexity for ``perplexity_baseline`` (infinite for an empty text,
    stored as null).
    """

    utterance_id: str
    source: str
    score: float
    scorer_kind: str
    raw: float
    quality_tier: int | None = None

    higher_is_better = True

    @property
    def system(self) -> str:
        if self.quality_tier is None:
            return self.source
        return f"{self.source}:t{self.quality_tier}"


SCORER_KINDS = ("noref", "perplexity_baseline")
SCORE_FIELDS = ("utterance_id", "source", "quality_tier", "scorer_kind", "score", "raw")


def write_scores(scores: Iterable[QualityScore], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in scores:
            rec = {k: getattr(s, k) for k in SCORE_FIELDS}
            if not math.isfinite(rec["raw"]):
                rec["raw"] = None
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _raw_value(v):
    return math.inf if v is None else float(v)


def load_scores(path: str | os.PathLike) -> list[QualityScore]:
    out = []
    for lineno, rec in _read_json_lines(path):
        if set(rec) != set(SCORE_FIELDS):
            raise CorpusFormatError(f"score fields must be exactly {list(SCORE_FIELDS)}", path, lineno)
        kind = _require(rec, "scorer_kind", str, path, lineno)
        if kind not in SCORER_KINDS:
            raise CorpusFormatError(f"unknown scorer_kind {kind!r}", path, lineno)
        out.append(
            QualityScore(
                utterance_id=_require(rec, "utterance_id", str, path, lineno),
                source=_require(rec, "source", str, path, lineno),
                quality_tier=_require(rec, "quality_tier", int, path, lineno, nullable=True),
                scorer_kind=kind,
                score=float(_require(rec, "score", (int, float), path, lineno)),
                raw=_raw_value(_require(rec, "raw", (int, float), path, lineno, nullable=True)),
            )
        )
    return out


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
