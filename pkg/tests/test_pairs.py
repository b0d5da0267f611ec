import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrqe.corpus_io import Corpus, Hypothesis, TrainingPair, Utterance, pair_weight
from asrqe.metrics import normalize
from asrqe.pairs import (
    PairBatchPlan,
    build_pairs,
    make_pairs,
    prune_inconsistent,
    split_and_batch,
    unique_outputs,
)

WORDS = ["a", "b", "c"]


@st.composite
def corpora(draw, max_utts=6):
    """Small corpora whose texts collide often, so dedup and pruning both trigger."""
    n = draw(st.integers(1, max_utts))
    c = Corpus()
    for i in range(n):
        uid = f"u{i}"
        c.utterances[uid] = Utterance(uid, "en", f"s{i % 3}", None)
        tiers = draw(st.lists(st.integers(1, 5), min_size=1, max_size=5, unique=True))
        for t in tiers:
            text = " ".join(draw(st.lists(st.sampled_from(WORDS), min_size=1, max_size=3)))
            c.hypotheses.append(Hypothesis(uid, "asr", text, t))
    return c


def _key(p):
    return normalize(p.better_text).tokens, normalize(p.worse_text).tokens


@settings(max_examples=200, deadline=None)
@given(corpora())
def test_pair_invariants(corpus):
    pairs, report = build_pairs(corpus)
    tier = {}
    for h in corpus.hypotheses:
        k = (h.utterance_id, normalize(h.text).tokens)
        tier[k] = min(tier.get(k, h.quality_tier), h.quality_tier)
    for p in pairs:
        b, w = _key(p)
        assert b != w
        assert p.tier_gap >= 1
        assert math.isclose(p.weight, pair_weight(p.better_text, p.worse_text), rel_tol=0, abs_tol=1e-12)
        # each side carries the best tier at which its text was produced
        assert tier[(p.utterance_id, w)] - tier[(p.utterance_id, b)] == p.tier_gap
    keys = {_key(p) for p in pairs}
    assert not any((w, b) in keys for b, w in keys)

    expected = 0
    for hyps in corpus.by_utterance().values():
        u = len(unique_outputs(hyps))
        expected += u * (u - 1) // 2
    assert report.pairs_before_pruning == expected
    assert report.pairs_after_pruning == len(pairs) == expected - report.pruned_pairs


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 9), st.lists(st.sampled_from(WORDS), min_size=1, max_size=3)), max_size=6))
def test_make_pairs_orientation_and_count(outputs):
    outs = {}
    for t, words in outputs:
        outs.setdefault(t, " ".join(words))
    hyps = [Hypothesis("u", "asr", text, t) for t, text in outs.items()]
    uniq = unique_outputs(hyps)
    pairs = make_pairs("u", uniq)
    assert len(pairs) == len(uniq) * (len(uniq) - 1) // 2
    tier_of = {text: t for t, text in uniq}
    for p in pairs:
        assert tier_of[p.better_text] < tier_of[p.worse_text]
        assert p.tier_gap == tier_of[p.worse_text] - tier_of[p.better_text]


def test_unique_outputs_keeps_best_tier():
    hyps = [
        Hypothesis("u", "asr", "The cat.", 3),
        Hypothesis("u", "asr", "the cat", 1),
        Hypothesis("u", "asr", "a cat", 2),
    ]
    assert unique_outputs(hyps) == [(1, "the cat"), (2, "a cat")]


def test_unique_outputs_requires_tiers():
    with pytest.raises(ValueError, match="no quality tier"):
        unique_outputs([Hypothesis("u", "asr", "x", None), Hypothesis("u", "asr", "y", 1)])


def test_make_pairs_rejects_shared_tier():
    with pytest.raises(ValueError, match="share tier"):
        make_pairs("u", [(1, "a"), (1, "b")])


def test_prune_drops_both_directions_across_utterances():
    p1 = TrainingPair("u1", "a b", "a c", 0.5, 1)
    p2 = TrainingPair("u2", "A c", "a b.", 0.5, 1)
    p3 = TrainingPair("u2", "a b", "b b", 0.5, 1)
    kept, report = prune_inconsistent([p1, p2, p3])
    assert kept == [p3]
    assert (report.pairs_in, report.removed, report.pairs_out, report.reversed_keys) == (3, 2, 1, 1)


def test_sources_are_not_paired_together():
    c = Corpus()
    c.utterances["u"] = Utterance("u", "en", None, None)
    c.hypotheses += [
        Hypothesis("u", "x", "a b", 1),
        Hypothesis("u", "y", "a c", 2),
    ]
    pairs, report = build_pairs(c)
    assert pairs == []
    assert report.degenerate_groups == 2


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def _split_corpus(n_per_lang=40, speakers=8, langs=("en", "es")):
    c = Corpus()
    for lang in langs:
        for i in range(n_per_lang):
            uid = f"{lang}{i}"
            c.utterances[uid] = Utterance(uid, lang, f"{lang}-spk{i % speakers}", None)
            for t, text in enumerate([f"w{i} a b c", f"w{i} a b", f"w{i} a", f"w{i}"], start=1):
                c.hypotheses.append(Hypothesis(uid, "asr", text, t))
    return c


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_split_is_speaker_disjoint_and_stratified(seed):
    c = _split_corpus()
    pairs, _ = build_pairs(c)
    res = split_and_batch(pairs, PairBatchPlan(seed=seed, batch_size=16), c.utterances)
    spk = lambda u: c.utterances[u].speaker_id  # noqa: E731
    assert not {spk(u) for u in res.train_utterances} & {spk(u) for u in res.validation_utterances}
    assert res.report.shared_groups == []
    assert res.report.n_train + res.report.n_validation == len(pairs)
    for lang, share in res.report.language_share.items():
        assert abs(res.report.validation_language_share[lang] - share) <= 0.05
    assert 0.1 <= res.report.n_validation / len(pairs) <= 0.3
    assert all(len(b) <= 16 for b in res.train_batches + res.validation_batches)
    assert Counter(map(_key, res.train_pairs + res.validation_pairs)) == Counter(map(_key, pairs))


def test_split_is_deterministic():
    c = _split_corpus()
    pairs, _ = build_pairs(c)
    plan = PairBatchPlan(seed=5)
    a = split_and_batch(pairs, plan, c.utterances)
    b = split_and_batch(pairs, plan, c.utterances)
    assert a.train_batches == b.train_batches
    assert a.validation_batches == b.validation_batches


def test_split_warns_on_single_group_language():
    c = _split_corpus(langs=("en",))
    c.utterances["fr0"] = Utterance("fr0", "fr", "fr-spk", None)
    c.hypotheses += [Hypothesis("fr0", "asr", "x y", 1), Hypothesis("fr0", "asr", "x", 2)]
    pairs, _ = build_pairs(c)
    res = split_and_batch(pairs, PairBatchPlan(seed=0), c.utterances)
    assert any("'fr'" in w and "single split group" in w for w in res.report.warnings)


def test_split_unknown_utterance():
    with pytest.raises(KeyError, match="unknown utterance"):
        split_and_batch([TrainingPair("zz", "a", "b", 1.0, 1)], PairBatchPlan(), {})


@pytest.mark.parametrize(
    "kwargs",
    [dict(batch_size=0), dict(train_fraction=1.0), dict(train_fraction=0.0), dict(split_keys="language")],
)
def test_plan_validation(kwargs):
    with pytest.raises(ValueError):
        PairBatchPlan(**kwargs)
