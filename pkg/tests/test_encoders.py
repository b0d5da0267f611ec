import math
import random

import numpy as np
import pytest
import torch

from asrqe.encoders import (
    CLS,
    PAD,
    SEP,
    SPECIALS,
    TinyConfig,
    UndefinedPerplexityError,
    WordTokenizer,
    build_encoder,
    encoder_from_spec,
    load_masked_lm,
    pretrain_masked_lm,
    save_masked_lm,
)
from asrqe.synthetic import sample_sentences

SMALL = TinyConfig(dim=32, layers=1, heads=2, ff=64, dropout=0.1, max_positions=32)


class TestTokenizer:
    def test_fit_orders_by_frequency(self):
        tok = WordTokenizer.fit(["b a", "a c", "A!"], oov_buckets=4)
        assert tok.vocab == ["a", "b", "c"]
        assert tok.size == len(SPECIALS) + 3 + 4

    def test_encode_wraps_and_truncates(self):
        tok = WordTokenizer(["x", "y"], oov_buckets=2)
        assert tok.encode("X, y", 10) == [CLS, 5, 6, SEP]
        assert tok.encode("x y x y", 4) == [CLS, 5, 6, SEP]

    def test_oov_buckets_are_stable(self):
        tok = WordTokenizer(["x"], oov_buckets=8)
        a = tok.token_id("zebra")
        assert a == WordTokenizer(["x"], oov_buckets=8).token_id("zebra")
        assert len(SPECIALS) + 1 <= a < tok.size

    def test_batch_pads(self):
        tok = WordTokenizer(["x"], oov_buckets=2)
        ids, mask = tok.batch(["x", "x x x"], 16)
        assert ids.shape == (2, 5)
        assert ids[0, 3:].tolist() == [PAD, PAD]
        assert mask.sum(1).tolist() == [3, 5]

    def test_bad_buckets(self):
        with pytest.raises(ValueError):
            WordTokenizer([], oov_buckets=0)


def test_tiny_encoder_ignores_padding():
    torch.manual_seed(0)
    enc = build_encoder("tiny-random", tiny=SMALL).eval()
    ids, mask = enc.tokenize(["a b c", "a b c d e f g"], 32)
    solo_ids, solo_mask = enc.tokenize(["a b c"], 32)
    with torch.no_grad():
        batched = enc(ids, mask)[0, :5]
        alone = enc(solo_ids, solo_mask)[0]
    assert torch.allclose(batched, alone, atol=1e-5)


def test_unknown_encoder_id():
    with pytest.raises(ValueError, match="unknown encoder id"):
        build_encoder("bert")


def test_spec_round_trip():
    enc = build_encoder("tiny-random", tiny=SMALL)
    again = encoder_from_spec(enc.spec())
    assert again.spec() == enc.spec()
    with pytest.raises(ValueError):
        encoder_from_spec({"kind": "onnx"})


@pytest.fixture(scope="module")
def trained_lm(tmp_path_factory):
    texts = [t for _, t in sample_sentences(600, ("en",), seed=11)]
    model, losses = pretrain_masked_lm(texts, cfg=SMALL, epochs=6, seed=0)
    path = save_masked_lm(model, tmp_path_factory.mktemp("lm") / "lm")
    return model, losses, path


def test_pretraining_reduces_loss(trained_lm):
    _, losses, _ = trained_lm
    assert len(losses) == 6
    assert losses[-1] < 0.85 * losses[0]
    assert min(losses) == losses[-1] or losses[-1] < losses[1]


def test_saved_lm_reproduces_pseudo_perplexity(trained_lm):
    model, _, path = trained_lm
    text = "the teacher bought a red car"
    a = load_masked_lm(str(path)).pseudo_perplexity(text)
    b = load_masked_lm(f"tiny-mlm:{path}").pseudo_perplexity(text)
    assert a == b
    enc = build_encoder(f"tiny-mlm:{path}")
    for name, p in model.encoder.state_dict().items():
        assert torch.equal(enc.encoder.state_dict()[name], p)


def test_pseudo_perplexity_definition(trained_lm):
    _, _, path = trained_lm
    lm = load_masked_lm(str(path))
    lp = lm.token_log_probs("my sister cooked some fresh bread")
    assert lp.shape == (6,)
    assert lm.pseudo_perplexity("my sister cooked some fresh bread") == pytest.approx(math.exp(-lp.mean()), rel=1e-12)
    # one token: inverse probability of that token at the masked position
    single = lm.token_log_probs("bread")
    assert lm.pseudo_perplexity("bread") == pytest.approx(1.0 / math.exp(single[0]), rel=1e-12)
    assert lm.pseudo_perplexity("the pilot") == lm.pseudo_perplexity("the pilot")
    with pytest.raises(UndefinedPerplexityError):
        lm.pseudo_perplexity(" ... ")


def test_grammatical_beats_shuffled(trained_lm):
    _, _, path = trained_lm
    lm = load_masked_lm(str(path))
    rng = random.Random(0)
    wins = 0
    sentences = [t for _, t in sample_sentences(25, ("en",), seed=999)]
    for s in sentences:
        words = s.split()
        shuffled = words[:]
        while shuffled == words:
            rng.shuffle(shuffled)
        wins += lm.pseudo_perplexity(s) < lm.pseudo_perplexity(" ".join(shuffled))
    assert wins > len(sentences) / 2


def test_missing_lm(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_masked_lm(str(tmp_path))


# ---------------------------------------------------------------------------
# transformers adapter, exercised with a tiny locally built BERT
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_bert(tmp_path_factory):
    transformers = pytest.importorskip("transformers")
    d = tmp_path_factory.mktemp("bert")
    vocab = list(SPECIALS) + "the cat sat on mat a dog ran".split()
    (d / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    transformers.BertTokenizer(str(d / "vocab.txt")).save_pretrained(d)
    cfg = transformers.BertConfig(
        vocab_size=len(vocab),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=32,
    )
    torch.manual_seed(0)
    transformers.BertForMaskedLM(cfg).save_pretrained(d)
    return str(d)


def test_hf_encoder(tiny_bert):
    enc = build_encoder(f"hf:{tiny_bert}").eval()
    assert enc.dim == 16
    ids, mask = enc.tokenize(["the cat sat", "a dog"], 16)
    assert mask.dtype == torch.bool and mask.sum(1).tolist() == [5, 4]
    with torch.no_grad():
        assert enc(ids, mask).shape == (2, 5, 16)
    assert enc.spec() == {"kind": "hf", "name": tiny_bert}


def test_hf_pseudo_perplexity(tiny_bert):
    lm = load_masked_lm(f"hf:{tiny_bert}")
    lp = lm.token_log_probs("the cat sat")
    assert lp.shape == (3,)
    assert np.all(lp < 0)
    assert lm.pseudo_perplexity("the cat sat") == pytest.approx(math.exp(-lp.mean()))
