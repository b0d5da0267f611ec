"""Synthetic multi-tier ASR outputs with known quality ordering.

Clean sentences are corrupted by word deletion, substitution from the
corpus vocabulary (by default among words seen in the same left context),
adjacent-word transposition and character typos at rates
that grow with the tier, so tier 1 plays the least compressed model and
tier K the most compressed one.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

from asrqe.corpus_io import Corpus, Hypothesis, Utterance, write_corpus

__all__ = [
    "CorruptionSchedule",
    "degrade",
    "build_synthetic_corpus",
    "write_synthetic_corpus",
    "sample_sentences",
    "stable_seed",
    "SubstitutionLexicon",
]

CHANNELS = ("deletion", "substitution", "transposition", "typo")


def stable_seed(*parts) -> int:
    """64-bit seed from a stable hash of ``parts`` (independent of PYTHONHASHSEED)."""
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


@dataclass(frozen=True)
class CorruptionSchedule:
    """Per-tier corruption probabilities; ``rates[k-1]`` belongs to tier ``k``.

    Each tier row maps a channel name to a probability in [0, 1). Rows must
    be non-decreasing in every channel and strictly increase in at least one
    channel from one tier to the next.
    """

    rates: tuple[dict[str, float], ...]
    seed: int = 0
    substitution: Literal["contextual", "uniform"] = "contextual"
    coupling: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.coupling <= 1.0:
            raise ValueError(f"coupling must lie in [0, 1], got {self.coupling}")
        if self.substitution not in ("contextual", "uniform"):
            raise ValueError(f"substitution must be 'contextual' or 'uniform', got {self.substitution!r}")
        if len(self.rates) < 2:
            raise ValueError("a schedule needs at least 2 tiers")
        for k, row in enumerate(self.rates, start=1):
            if set(row) != set(CHANNELS):
                raise ValueError(f"tier {k}: channels must be exactly {CHANNELS}")
            for ch, r in row.items():
                if not 0.0 <= r < 1.0:
                    raise ValueError(f"tier {k}: {ch} rate {r} outside [0, 1)")
        for k in range(1, len(self.rates)):
            lo, hi = self.rates[k - 1], self.rates[k]
            if any(hi[c] < lo[c] for c in CHANNELS):
                raise ValueError(f"tier {k + 1}: rates decrease relative to tier {k}")
            if not any(hi[c] > lo[c] for c in CHANNELS):
                raise ValueError(f"tier {k + 1}: no channel increases relative to tier {k}")

    @property
    def tiers(self) -> int:
        return len(self.rates)

    @classmethod
    def ramp(
        cls,
        tiers: int = 4,
        *,
        deletion: float = 0.12,
        substitution: float = 0.12,
        transposition: float = 0.06,
        typo: float = 0.10,
        floor: float = 0.15,
        seed: int = 0,
        substitution_mode: str = "contextual",
        coupling: float = 0.0,
    ) -> "CorruptionSchedule":
        """Linear ramp from ``floor`` times the maximum at tier 1 to the maximum at tier K."""
        if tiers < 2:
            raise ValueError("a schedule needs at least 2 tiers")
        top = dict(deletion=deletion, substitution=substitution, transposition=transposition, typo=typo)
        rows = []
        for k in range(tiers):
            frac = floor + (1.0 - floor) * k / (tiers - 1)
            rows.append({c: top[c] * frac for c in CHANNELS})
        return cls(tuple(rows), seed=seed, substitution=substitution_mode, coupling=coupling)

    def as_dict(self) -> dict:
        return {
            "tiers": self.tiers,
            "seed": self.seed,
            "substitution": self.substitution,
            "coupling": self.coupling,
            "rates": [dict(r) for r in self.rates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSchedule":
        return cls(
            tuple(dict(r) for r in d["rates"]),
            seed=int(d.get("seed", 0)),
            substitution=d.get("substitution", "contextual"),
            coupling=float(d.get("coupling", 0.0)),
        )


def _typo(word: str, alphabet: str, rng: random.Random) -> str:
    for _ in range(8):
        op = rng.randrange(4) if len(word) > 1 else 0
        i = rng.randrange(len(word))
        if op == 0:
            out = word[:i] + rng.choice(alphabet) + word[i + 1 :]
        elif op == 1:
            out = word[:i] + rng.choice(alphabet) + word[i:]
        elif op == 2:
            out = word[:i] + word[i + 1 :]
        else:
            j = min(i + 1, len(word) - 1)
            i = j - 1
            out = word[:i] + word[j] + word[i] + word[j + 1 :]
        if out and out.lower() != word.lower():
            return out
    return word + rng.choice(alphabet)


class SubstitutionLexicon:
    """Corpus vocabulary of one language plus observed word successors.

    Contextual substitution draws a replacement among the words seen after
    the same preceding word elsewhere in the corpus, imitating the fluent,
    language-model-biased substitutions of real recognizers.
    """

    START = "<s>"

    def __init__(self, sentences: Sequence[str]):
        words: set[str] = set()
        successors: dict[str, set[str]] = {}
        for text in sentences:
            toks = [_key(w) for w in text.split()]
            words.update(t for t in toks if t)
            prev = self.START
            for t in toks:
                if t:
                    successors.setdefault(prev, set()).add(t)
                    prev = t
        self.words = sorted(words)
        self.successors = {k: sorted(v) for k, v in successors.items()}
        self.alphabet = _alphabet(self.words)

    def candidates(self, word: str, prev: str | None, contextual: bool) -> list[str]:
        key = _key(word)
        if contextual:
            pool = [w for w in self.successors.get(prev or self.START, ()) if w != key]
            if pool:
                return pool
        return [w for w in self.words if w != key]


def _alphabet(words: Sequence[str]) -> str:
    return "".join(sorted({ch for w in words for ch in w.lower() if ch.isalpha()}))


def _key(word: str) -> str:
    return "".join(ch for ch in word.lower() if ch.isalnum() or ch in "'-")


def _site(shared: random.Random, own: random.Random, coupling: float) -> tuple[float, int]:
    # fixed number of draws per call keeps both streams aligned across tiers;
    # the returned seed feeds a Random only when the site actually fires
    s_u, s_pick, s_seed = shared.random(), shared.random(), shared.getrandbits(64)
    o_u, o_seed = own.random(), own.getrandbits(64)
    if s_pick < coupling:
        return s_u, s_seed
    return o_u, o_seed


def degrade(
    reference: str,
    tier: int,
    schedule: CorruptionSchedule,
    utterance_seed,
    vocabulary: Sequence[str] | SubstitutionLexicon = (),
) -> str:
    """Corrupt ``reference`` at ``tier`` deterministically.

    Every (word, channel) site draws from a stream shared by all tiers of the
    utterance with probability ``schedule.coupling`` and from a tier-specific
    stream otherwise. Shared sites fire at every tier whose rate exceeds the
    draw, so errors of a better tier tend to recur in worse tiers.
    Substitutes come from ``vocabulary`` (contextually when it is a
    :class:`SubstitutionLexicon` and the schedule asks for it); with no
    vocabulary the substitution channel falls back to a typo.
    """
    if not 1 <= tier <= schedule.tiers:
        raise ValueError(f"tier {tier} outside 1..{schedule.tiers}")
    rates = schedule.rates[tier - 1]
    shared = random.Random(stable_seed(schedule.seed, utterance_seed, "shared"))
    own = random.Random(stable_seed(schedule.seed, utterance_seed, tier))
    words = reference.split()
    lexicon = vocabulary if isinstance(vocabulary, SubstitutionLexicon) else None
    plain = lexicon.words if lexicon is not None else list(vocabulary)
    alphabet = (lexicon.alphabet if lexicon is not None and plain else _alphabet(plain or words)) or "e"
    contextual = schedule.substitution == "contextual"

    out: list[tuple[int, str]] = []
    swaps: list[float] = []
    prev: str | None = None
    for j, w in enumerate(words):
        context, prev = prev, _key(w)
        (u_del, _), (u_sub, seed_sub), (u_typo, seed_typo), (u_swap, _) = (
            _site(shared, own, schedule.coupling) for _ in range(4)
        )
        swaps.append(u_swap)
        if u_del < rates["deletion"]:
            continue
        if u_sub < rates["substitution"]:
            if lexicon is not None:
                choices = lexicon.candidates(w, context, contextual)
            else:
                choices = [v for v in plain if v.lower() != w.lower()]
            r_sub = random.Random(seed_sub)
            out.append((j, r_sub.choice(choices) if choices else _typo(w, alphabet, r_sub)))
            continue
        if u_typo < rates["typo"]:
            out.append((j, _typo(w, alphabet, random.Random(seed_typo))))
            continue
        out.append((j, w))
    i = 0
    while i < len(out) - 1:
        if swaps[out[i][0]] < rates["transposition"]:
            out[i], out[i + 1] = out[i + 1], out[i]
            i += 2
        else:
            i += 1
    return " ".join(w for _, w in out)


def build_synthetic_corpus(
    sentences: Sequence[tuple[str, str]],
    schedule: CorruptionSchedule,
    *,
    speakers_per_language: int = 20,
    source: str = "synthetic",
) -> Corpus:
    """One hypothesis per tier for each ``(language, text)`` sentence.

    Utterance ids are ``<lang>-<index>`` with a per-language running index,
    and speakers are assigned round-robin within each language.
    """
    if len(sentences) < 2:
        raise ValueError("need at least 2 sentences")
    texts_by_lang: dict[str, list[str]] = {}
    for lang, text in sentences:
        texts_by_lang.setdefault(lang, []).append(text)
    lexicons = {lang: SubstitutionLexicon(texts) for lang, texts in texts_by_lang.items()}

    corpus = Corpus()
    counters: dict[str, int] = {}
    for lang, text in sentences:
        idx = counters.get(lang, 0)
        counters[lang] = idx + 1
        uid = f"{lang}-{idx:05d}"
        speaker = f"{lang}-spk{idx % speakers_per_language:02d}"
        corpus.utterances[uid] = Utterance(uid, lang, speaker, text)
        for tier in range(1, schedule.tiers + 1):
            hyp = degrade(text, tier, schedule, uid, lexicons[lang])
            corpus.hypotheses.append(Hypothesis(uid, source, hyp, tier))
    return corpus


def write_synthetic_corpus(corpus: Corpus, schedule: CorruptionSchedule, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus_path = out / "corpus.jsonl"
    schedule_path = out / "schedule.json"
    write_corpus(corpus, corpus_path)
    with open(schedule_path, "w", encoding="utf-8") as fh:
        json.dump(schedule.as_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"corpus": corpus_path, "schedule": schedule_path}


# ---------------------------------------------------------------------------
# clean sentence source
# ---------------------------------------------------------------------------


@dataclass
class _Lexicon:
    subjects: list[str]
    verbs: list[str]
    objects: list[str]
    adjectives: list[str]
    places: list[str]
    times: list[str]
    links: list[str]
    templates: list[str] = field(default_factory=list)


_LEXICONS: dict[str, _Lexicon] = {
    "en": _Lexicon(
        subjects=[
            "the teacher", "my brother", "the old man", "our neighbor", "the young doctor",
            "a small child", "the farmer", "her friend", "the pilot", "the manager",
            "my sister", "the police officer", "a tired student", "the baker", "his mother",
        ],
        verbs=[
            "bought", "found", "painted", "cleaned", "opened", "carried", "sold", "repaired",
            "watched", "borrowed", "cooked", "visited", "described", "forgot", "ordered",
        ],
        objects=[
            "a red car", "the wooden door", "some fresh bread", "the broken window", "a long letter",
            "the new house", "an old book", "the blue bicycle", "a warm coat", "the heavy box",
            "a cup of coffee", "the small garden", "a funny movie", "the kitchen table", "a new phone",
        ],
        adjectives=["quickly", "slowly", "carefully", "happily", "quietly", "suddenly", "finally"],
        places=[
            "in the city", "at the market", "near the river", "in the village", "at the station",
            "behind the school", "on the beach", "in the park",
        ],
        times=["yesterday", "last week", "this morning", "on sunday", "after dinner", "every summer"],
        links=["and then", "because", "but", "so", "while"],
        templates=[
            "{S} {V} {O} {P}",
            "{T} {S} {A} {V} {O}",
            "{S} {V} {O} {P} {T}",
            "{S} {A} {V} {O} {L} {S2} {V2} {O2}",
            "{T} {S} {V} {O} {P} {L} {S2} {V2} {O2}",
        ],
    ),
    "es": _Lexicon(
        subjects=[
            "el profesor", "mi hermano", "el hombre mayor", "nuestro vecino", "la joven doctora",
            "un niño pequeño", "el granjero", "su amiga", "el piloto", "la directora",
            "mi hermana", "el policía", "una estudiante cansada", "el panadero", "su madre",
        ],
        verbs=[
            "compró", "encontró", "pintó", "limpió", "abrió", "llevó", "vendió", "reparó",
            "miró", "pidió", "cocinó", "visitó", "describió", "olvidó", "trajo",
        ],
        objects=[
            "un coche rojo", "la puerta de madera", "pan fresco", "la ventana rota", "una carta larga",
            "la casa nueva", "un libro viejo", "la bicicleta azul", "un abrigo caliente", "la caja pesada",
            "una taza de café", "el jardín pequeño", "una película divertida", "la mesa de la cocina",
            "un teléfono nuevo",
        ],
        adjectives=["rápidamente", "despacio", "con cuidado", "felizmente", "en silencio", "de repente", "por fin"],
        places=[
            "en la ciudad", "en el mercado", "cerca del río", "en el pueblo", "en la estación",
            "detrás de la escuela", "en la playa", "en el parque",
        ],
        times=["ayer", "la semana pasada", "esta mañana", "el domingo", "después de cenar", "cada verano"],
        links=["y luego", "porque", "pero", "así que", "mientras"],
        templates=[
            "{S} {V} {O} {P}",
            "{T} {S} {A} {V} {O}",
            "{S} {V} {O} {P} {T}",
            "{S} {A} {V} {O} {L} {S2} {V2} {O2}",
            "{T} {S} {V} {O} {P} {L} {S2} {V2} {O2}",
        ],
    ),
    "fr": _Lexicon(
        subjects=[
            "le professeur", "mon frère", "le vieil homme", "notre voisin", "la jeune médecin",
            "un petit enfant", "le fermier", "son amie", "le pilote", "la directrice",
            "ma sœur", "le policier", "une étudiante fatiguée", "le boulanger", "sa mère",
        ],
        verbs=[
            "a acheté", "a trouvé", "a peint", "a nettoyé", "a ouvert", "a porté", "a vendu", "a réparé",
            "a regardé", "a emprunté", "a cuisiné", "a visité", "a décrit", "a oublié", "a commandé",
        ],
        objects=[
            "une voiture rouge", "la porte en bois", "du pain frais", "la fenêtre cassée", "une longue lettre",
            "la nouvelle maison", "un vieux livre", "le vélo bleu", "un manteau chaud", "la boîte lourde",
            "une tasse de café", "le petit jardin", "un film drôle", "la table de la cuisine",
            "un nouveau téléphone",
        ],
        adjectives=["vite", "lentement", "avec soin", "joyeusement", "en silence", "soudain", "enfin"],
        places=[
            "dans la ville", "au marché", "près de la rivière", "dans le village", "à la gare",
            "derrière l'école", "sur la plage", "dans le parc",
        ],
        times=["hier", "la semaine dernière", "ce matin", "dimanche", "après le dîner", "chaque été"],
        links=["et puis", "parce que", "mais", "alors", "pendant que"],
        templates=[
            "{S} {V} {O} {P}",
            "{T} {S} {A} {V} {O}",
            "{S} {V} {O} {P} {T}",
            "{S} {A} {V} {O} {L} {S2} {V2} {O2}",
            "{T} {S} {V} {O} {P} {L} {S2} {V2} {O2}",
        ],
    ),
}

SENTENCE_LANGUAGES = tuple(sorted(_LEXICONS))


def _sentence(lex: _Lexicon, rng: random.Random) -> str:
    template = rng.choice(lex.templates)
    s = template.format(
        S=rng.choice(lex.subjects),
        V=rng.choice(lex.verbs),
        O=rng.choice(lex.objects),
        P=rng.choice(lex.places),
        T=rng.choice(lex.times),
        A=rng.choice(lex.adjectives),
        L=rng.choice(lex.links),
        S2=rng.choice(lex.subjects),
        V2=rng.choice(lex.verbs),
        O2=rng.choice(lex.objects),
    )
    return s[0].upper() + s[1:] + "."


def sample_sentences(n: int, languages: Sequence[str] = ("en", "es"), seed: int = 0) -> list[tuple[str, str]]:
    """``n`` distinct template sentences, languages interleaved round-robin."""
    unknown = [lang for lang in languages if lang not in _LEXICONS]
    if unknown:
        raise ValueError(f"no built-in lexicon for {unknown}; available: {list(SENTENCE_LANGUAGES)}")
    if not languages:
        raise ValueError("need at least one language")
    rngs = {lang: random.Random(stable_seed("sentences", seed, lang)) for lang in languages}
    seen: set[str] = set()
    out: list[tuple[str, str]] = []
    attempts = 0
    while len(out) < n:
        lang = languages[len(out) % len(languages)]
        s = _sentence(_LEXICONS[lang], rngs[lang])
        attempts += 1
        if s in seen:
            if attempts > 100 * (n + 10):
                raise RuntimeError("template space exhausted")
            continue
        seen.add(s)
        out.append((lang, s))
    return out
