import itertools
import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrqe.corpus_io import Corpus, Hypothesis, QualityScore, TrainingPair, Utterance
from asrqe.evaluation import (
    CORRELATION_HEADER,
    ENSEMBLE_HEADER,
    build_records,
    correlation_report,
    correlation_with_wer_ranking,
    correlation_with_wer_scores,
    corpus_wer,
    ensemble_select,
    pairwise_accuracy,
    render_correlation_table,
    render_ensemble_table,
    write_reports,
)
from asrqe.metrics import WerBreakdown, wer

WORDS = ["a", "b", "c", "d"]


def _random_corpus(rng, n_utts=5, n_sources=3, lang="en"):
    c = Corpus()
    for i in range(n_utts):
        ref = [rng.choice(WORDS) for _ in range(rng.randint(1, 5))]
        uid = f"{lang}{i}"
        c.utterances[uid] = Utterance(uid, lang, None, " ".join(ref))
        for s in range(n_sources):
            hyp = [w if rng.random() > 0.3 else rng.choice(WORDS) for w in ref if rng.random() > 0.15]
            c.hypotheses.append(Hypothesis(uid, f"src{s}", " ".join(hyp), None))
    return c


def _scores(corpus, fn, kind="noref"):
    return [QualityScore(h.utterance_id, h.source, fn(h), kind, 0.0, h.quality_tier) for h in corpus.hypotheses]


def _oracle(corpus):
    return _scores(corpus, lambda h: -wer(corpus.utterances[h.utterance_id].reference, h.text).errors)


def test_build_records_joins_and_validates():
    c = _random_corpus(random.Random(0))
    recs = build_records(c, _oracle(c))
    assert len(recs) == len(c.hypotheses)
    assert recs[0].wer == wer(c.utterances[recs[0].utterance_id].reference, c.hypotheses[0].text)
    with pytest.raises(KeyError, match="unknown hypothesis"):
        build_records(c, [QualityScore("en0", "nope", 0.5, "noref", 0.0)])
    scores = _oracle(c)
    c.utterances["en0"] = Utterance("en0", "en", None, None)
    with pytest.raises(ValueError, match="no reference"):
        build_records(c, scores)


def test_pairwise_accuracy():
    pairs = [TrainingPair("u", "good one", "bad", 0.5, 1), TrainingPair("u", "x y", "x", 0.5, 1)]
    assert pairwise_accuracy(pairs, len) == 1.0
    assert pairwise_accuracy(pairs, lambda t: -len(t)) == 0.0
    assert pairwise_accuracy(pairs, lambda t: 1.0) == 0.5
    with pytest.raises(ValueError):
        pairwise_accuracy([], len)


def test_orientation_oracle_scorer_is_positive():
    c = _random_corpus(random.Random(1), n_utts=30)
    recs = build_records(c, _scores(c, lambda h: -wer(c.utterances[h.utterance_id].reference, h.text).wer))
    sc = correlation_with_wer_scores(recs)
    assert sc.pearson == pytest.approx(1.0)
    rk = correlation_with_wer_ranking(recs)
    assert rk.kendall == pytest.approx(1.0) and rk.spearman == pytest.approx(1.0)
    anti = build_records(c, _scores(c, lambda h: wer(c.utterances[h.utterance_id].reference, h.text).wer))
    assert correlation_with_wer_ranking(anti).kendall == pytest.approx(-1.0)


def test_ranking_skips_single_hypothesis_utterances():
    c = _random_corpus(random.Random(2), n_utts=6)
    c.utterances["solo"] = Utterance("solo", "en", None, "a b")
    c.hypotheses.append(Hypothesis("solo", "src0", "a", None))
    rk = correlation_with_wer_ranking(build_records(c, _oracle(c)))
    assert rk.skipped == 1 and rk.n == 18


def test_ranking_needs_two_utterances():
    c = _random_corpus(random.Random(2), n_utts=1)
    with pytest.raises(ValueError, match=">= 2 utterances"):
        correlation_with_wer_ranking(build_records(c, _oracle(c)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_rank_correlations_invariant_under_monotone_transform(seed):
    rng = random.Random(seed)
    c = _random_corpus(rng, n_utts=6)
    raw = {(h.utterance_id, h.source): rng.uniform(-3, 3) for h in c.hypotheses}
    base = build_records(c, _scores(c, lambda h: raw[(h.utterance_id, h.source)]))
    moved = build_records(c, _scores(c, lambda h: math.exp(2 * raw[(h.utterance_id, h.source)]) + 5))
    a, b = correlation_with_wer_ranking(base), correlation_with_wer_ranking(moved)
    for x, y in zip((a.pearson, a.spearman, a.kendall), (b.pearson, b.spearman, b.kendall)):
        assert (math.isnan(x) and math.isnan(y)) or x == pytest.approx(y, abs=1e-12)


# ---------------------------------------------------------------------------
# ensembling
# ---------------------------------------------------------------------------


def test_corpus_wer_is_not_macro():
    b = [WerBreakdown(1, 0, 0, 1), WerBreakdown(0, 0, 0, 9)]
    assert corpus_wer(b) == pytest.approx(0.1)
    assert np.mean([x.wer for x in b]) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        corpus_wer([])


@pytest.mark.parametrize("seed", range(20))
def test_oracle_selector_reaches_lower_bound(seed):
    c = _random_corpus(random.Random(seed), n_utts=8)
    chosen, rep = ensemble_select(build_records(c, _oracle(c)))
    assert rep.ensemble_wer == rep.lb_wer
    assert rep.lb_wer <= rep.best_single_wer
    assert rep.delta >= 0 or rep.best_single_wer == 0


@pytest.mark.parametrize("seed", range(20))
def test_ensemble_matches_brute_force(seed):
    rng = random.Random(seed)
    c = _random_corpus(rng, n_utts=4, n_sources=3)
    score = {(h.utterance_id, h.source): rng.choice([0.1, 0.2, 0.3]) for h in c.hypotheses}
    recs = build_records(c, _scores(c, lambda h: score[(h.utterance_id, h.source)]))
    chosen, rep = ensemble_select(recs)

    by_utt = {}
    for r in recs:
        by_utt.setdefault(r.utterance_id, []).append(r)
    ref_words = sum(len(c.utterances[u].reference.split()) for u in by_utt)
    best_total = None
    for combo in itertools.product(*(by_utt[u] for u in sorted(by_utt))):
        total = sum(r.wer.errors for r in combo)
        best_total = total if best_total is None else min(best_total, total)
    assert rep.lb_wer == pytest.approx(best_total / ref_words)

    for u, group in by_utt.items():
        top = max(r.score.score for r in group)
        expected = min(r.source for r in group if r.score.score == top)
        assert chosen[u].source == expected
    assert rep.ensemble_wer == pytest.approx(sum(chosen[u].wer.errors for u in by_utt) / ref_words)

    singles = {s: corpus_wer(r.wer for r in recs if r.source == s) for s in {r.source for r in recs}}
    assert rep.best_single_wer == min(singles.values())
    assert rep.best_single_source == min(s for s, v in singles.items() if v == rep.best_single_wer)


def test_coverage_mismatch_flag():
    c = _random_corpus(random.Random(3), n_utts=3)
    c.hypotheses = [h for h in c.hypotheses if not (h.utterance_id == "en0" and h.source == "src2")]
    _, rep = ensemble_select(build_records(c, _oracle(c)))
    assert rep.coverage_mismatch
    assert rep.coverage == {"src0": 3, "src1": 3, "src2": 2}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def test_tables_and_report_files(tmp_path):
    c = _random_corpus(random.Random(4), n_utts=10)
    recs = build_records(c, _oracle(c))
    corr = correlation_report(recs, dataset="syn", language="en", model="oracle")
    const = correlation_report(
        build_records(c, _scores(c, lambda h: 0.5)), dataset="syn", language="en", model="constant"
    )
    _, ens = ensemble_select(recs, language="en")

    table = render_correlation_table([corr, const])
    lines = table.splitlines()
    assert all(h in lines[0] for h in CORRELATION_HEADER)
    assert lines[2].startswith("syn - en")
    assert "n/a" in lines[3]

    etable = render_ensemble_table([ens])
    assert all(h in etable.splitlines()[0] for h in ENSEMBLE_HEADER)
    assert etable.splitlines()[2].rstrip().endswith(f"{100 * ens.delta:.0f}%")

    paths = write_reports(tmp_path, correlation=[corr, const], ensemble=[ens])
    data = json.loads(paths["correlation_json"].read_text())
    assert data["reports"][1]["score_correlations"]["pearson"] is None
    assert "pooled" in data["note"]
    assert json.loads(paths["ensemble_json"].read_text())["reports"][0]["lb_wer"] == ens.lb_wer
    assert paths["correlation_table"].read_text() == table
