import itertools
import math
import unicodedata

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asrqe import kernels
from asrqe.metrics import (
    EmptyReferenceError,
    NormalizedText,
    correlations,
    kendall,
    normalize,
    pearson,
    rank_within_sample,
    spearman,
    wer,
)

import oracles


@pytest.mark.parametrize(
    "raw,tokens",
    [
        ("Hello, World!", ("hello", "world")),
        ("", ()),
        ("  a\tB.  c ", ("a", "b", "c")),
        ("¿Qué TAL? «bien»", ("qué", "tal", "bien")),
        ("ÉCOLE d'été", ("école", "d", "été")),
    ],
)
def test_normalize(raw, tokens):
    assert normalize(raw).tokens == tokens


@given(st.text())
def test_normalize_round_trip_and_clean(raw):
    norm = normalize(raw)
    assert normalize(str(norm)) == norm
    for tok in norm.tokens:
        assert tok == tok.lower()
        assert not any(ch.isspace() for ch in tok)
        assert not any(unicodedata.category(ch).startswith("P") for ch in tok)


def test_normalize_accepts_normalized_text():
    t = NormalizedText(("a", "b"))
    assert normalize(t) == t


class TestWer:
    def test_identity(self):
        b = wer(["a", "b", "c"], ["a", "b", "c"])
        assert b.wer == 0.0
        assert b.errors == 0

    def test_one_substitution(self):
        b = wer(["a", "b", "c"], ["a", "x", "c"])
        assert b.wer == pytest.approx(1 / 3)
        assert b.substitutions == 1

    def test_insertion_heavy_exceeds_one(self):
        b = wer(["a"], ["x", "y", "z"])
        assert b.wer == 3.0
        assert (b.substitutions, b.deletions, b.insertions) == (1, 0, 2)

    def test_empty_reference_signalled(self):
        with pytest.raises(EmptyReferenceError):
            wer("", "anything")
        with pytest.raises(EmptyReferenceError):
            wer("?!", "")

    def test_raw_strings_are_normalized(self):
        assert wer("Hello, world", "hello world!").wer == 0.0

    def test_prefers_substitution(self):
        b = wer(["a", "b"], ["c", "d"])
        assert (b.substitutions, b.deletions, b.insertions) == (2, 0, 0)

    @given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8))
    def test_self_wer_is_zero(self, toks):
        assert wer(toks, toks).wer == 0.0

    @given(
        st.lists(st.sampled_from("abc"), min_size=1, max_size=6),
        st.lists(st.sampled_from("abc"), max_size=6),
    )
    @settings(max_examples=200)
    def test_zero_iff_equal(self, ref, hyp):
        assert (wer(ref, hyp).wer == 0.0) == (ref == hyp)


def _all_sequences(vocab, max_len):
    for k in range(max_len + 1):
        yield from itertools.product(vocab, repeat=k)


def test_wer_matches_exhaustive_alignment_small():
    seqs = list(_all_sequences("abc", 3))
    for ref in seqs:
        if not ref:
            continue
        for hyp in seqs:
            best, triples = oracles.alignment_costs(ref, hyp)
            b = wer(list(ref), list(hyp))
            assert b.errors == best
            assert (b.substitutions, b.deletions, b.insertions) in triples


@pytest.mark.parametrize("impl", [kernels.edit_counts_jit, kernels.edit_counts_numpy])
def test_edit_kernels_agree(impl):
    rng = np.random.default_rng(0)
    for _ in range(300):
        r = rng.integers(0, 4, size=rng.integers(0, 12))
        h = rng.integers(0, 4, size=rng.integers(0, 12))
        assert tuple(int(v) for v in impl(r, h)) == tuple(
            int(v) for v in kernels.edit_counts_jit(r, h)
        ) == kernels.edit_counts_numpy(r, h)


class TestCorrelations:
    def test_perfect_agreement(self):
        c = correlations([1, 2, 3], [1, 2, 3])
        assert (c.pearson, c.spearman, c.kendall) == (1.0, 1.0, 1.0)

    def test_perfect_reversal(self):
        c = correlations([1, 2, 3], [3, 2, 1])
        assert (c.pearson, c.spearman, c.kendall) == (-1.0, -1.0, -1.0)

    def test_kendall_one_swap(self):
        assert kendall([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(2 / 3, abs=1e-15)

    def test_constant_input_is_undefined_not_zero(self):
        c = correlations([1, 1, 1], [1, 2, 3])
        assert math.isnan(c.pearson) and math.isnan(c.spearman) and math.isnan(c.kendall)
        assert not c.defined
        assert c.as_dict()["pearson"] is None

    @pytest.mark.parametrize("fn", [pearson, spearman, kendall])
    def test_length_mismatch(self, fn):
        with pytest.raises(ValueError):
            fn([1, 2, 3], [1, 2])

    @pytest.mark.parametrize("fn", [pearson, spearman, kendall])
    def test_too_short(self, fn):
        with pytest.raises(ValueError):
            fn([1], [1])

    def test_against_scipy(self):
        scipy_stats = pytest.importorskip("scipy.stats")
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(2, 30))
            x = rng.integers(0, 5, size=n).astype(float)
            y = rng.integers(0, 5, size=n).astype(float)
            if np.ptp(x) == 0 or np.ptp(y) == 0:
                continue
            assert kendall(x, y) == pytest.approx(scipy_stats.kendalltau(x, y).statistic, abs=1e-12)
            assert spearman(x, y) == pytest.approx(scipy_stats.spearmanr(x, y).statistic, abs=1e-12)
            assert pearson(x, y) == pytest.approx(scipy_stats.pearsonr(x, y).statistic, abs=1e-12)


@pytest.mark.parametrize("impl", [kernels.kendall_counts_jit, kernels.kendall_counts_numpy])
def test_kendall_kernels_agree(impl):
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(2, 15))
        x = rng.integers(0, 4, size=n).astype(np.float64)
        y = rng.integers(0, 4, size=n).astype(np.float64)
        got = tuple(int(v) for v in impl(x, y))
        ref = kernels.kendall_counts_numpy(x, y)
        assert got == ref


vectors = st.integers(min_value=2, max_value=12).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(-3, 3), min_size=n, max_size=n),
        st.lists(st.integers(-3, 3), min_size=n, max_size=n),
    )
)


@given(vectors)
def test_spearman_is_pearson_of_ranks(xy):
    x, y = xy
    a = spearman(x, y)
    b = pearson(rank_within_sample(x), rank_within_sample(y))
    assert (math.isnan(a) and math.isnan(b)) or a == b


@given(st.lists(st.integers(-5, 5), min_size=2, max_size=12, unique=True), st.data())
def test_kendall_antisymmetric_without_ties(y, data):
    x = data.draw(st.lists(st.integers(-5, 5), min_size=len(y), max_size=len(y)))
    a = kendall(x, y)
    b = kendall(x, [-v for v in y])
    assert (math.isnan(a) and math.isnan(b)) or a == pytest.approx(-b, abs=1e-15)


@given(vectors, st.floats(0.1, 10), st.floats(-5, 5))
def test_invariance_under_transforms(xy, scale, shift):
    x, y = xy
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    base = correlations(x, y)
    if not base.defined:
        return
    affine = correlations(scale * x + shift, y)
    assert affine.pearson == pytest.approx(base.pearson, abs=1e-9)
    cubed = correlations(x**3 + x, y)
    assert cubed.spearman == pytest.approx(base.spearman, abs=1e-12)
    assert cubed.kendall == pytest.approx(base.kendall, abs=1e-12)


class TestRank:
    def test_strict(self):
        assert rank_within_sample([0.10, 0.30, 0.20], "ascending").tolist() == [1, 3, 2]

    def test_ties(self):
        assert rank_within_sample([0.1, 0.1, 0.2], "ascending").tolist() == [1.5, 1.5, 3]

    def test_singleton(self):
        assert rank_within_sample([5]).tolist() == [1]

    def test_descending(self):
        assert rank_within_sample([0.1, 0.3, 0.2], "descending").tolist() == [3, 1, 2]

    @given(st.lists(st.integers(-4, 4), min_size=1, max_size=15))
    def test_matches_oracle(self, v):
        assert rank_within_sample(v).tolist() == oracles.average_ranks(v)

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            rank_within_sample([1, 2], "sideways")
