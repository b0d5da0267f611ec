"""Pluggable pre-trained text encoders.

Encoder ids:

``tiny-random``
    Small transformer with random weights and no vocabulary (every word is
    hashed into a bucket). Only useful for tests.
``tiny-mlm:<dir>``
    Small transformer pre-trained as a masked language model by
    :func:`pretrain_masked_lm` and saved with :func:`save_masked_lm`.
``hf:<name-or-path>``
    Any ``transformers`` encoder (``AutoModel`` / ``AutoTokenizer``), e.g. a
    distilled multilingual MiniLM at full scale.

The same masked language models provide pseudo-perplexity for the baseline
scorer through :func:`load_masked_lm`.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from asrqe.metrics import normalize

__all__ = [
    "WordTokenizer",
    "TinyConfig",
    "TinyEncoder",
    "TinyMaskedLM",
    "TextEncoder",
    "TinyTextEncoder",
    "HFTextEncoder",
    "MaskedLanguageModel",
    "build_encoder",
    "encoder_from_spec",
    "pretrain_masked_lm",
    "save_masked_lm",
    "load_masked_lm",
]

PAD, UNK, CLS, SEP, MASK = 0, 1, 2, 3, 4
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


def _bucket(word: str, n: int) -> int:
    return int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=4).digest(), "little") % n


class WordTokenizer:
    """Normalized word tokens; out-of-vocabulary words go to hashed buckets."""

    def __init__(self, vocab: Sequence[str] = (), oov_buckets: int = 64):
        if oov_buckets < 1:
            raise ValueError("oov_buckets must be >= 1")
        self.vocab = list(vocab)
        self.oov_buckets = oov_buckets
        self._index = {w: i + len(SPECIALS) for i, w in enumerate(self.vocab)}

    @classmethod
    def fit(cls, texts: Sequence[str], *, min_count: int = 1, max_size: int = 30000, oov_buckets: int = 64):
        counts: dict[str, int] = {}
        for t in texts:
            for tok in normalize(t).tokens:
                counts[tok] = counts.get(tok, 0) + 1
        words = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
        return cls(words[:max_size], oov_buckets)

    @property
    def size(self) -> int:
        return len(SPECIALS) + len(self.vocab) + self.oov_buckets

    def token_id(self, tok: str) -> int:
        idx = self._index.get(tok)
        if idx is None:
            idx = len(SPECIALS) + len(self.vocab) + _bucket(tok, self.oov_buckets)
        return idx

    def encode(self, text: str, max_tokens: int) -> list[int]:
        toks = normalize(text).tokens[: max_tokens - 2]
        return [CLS] + [self.token_id(t) for t in toks] + [SEP]

    def batch(self, texts: Sequence[str], max_tokens: int) -> tuple[torch.Tensor, torch.Tensor]:
        seqs = [self.encode(t, max_tokens) for t in texts]
        width = max(len(s) for s in seqs)
        ids = torch.full((len(seqs), width), PAD, dtype=torch.long)
        for i, s in enumerate(seqs):
            ids[i, : len(s)] = torch.tensor(s, dtype=torch.long)
        return ids, ids != PAD

    def spec(self) -> dict:
        return {"vocab": self.vocab, "oov_buckets": self.oov_buckets}


@dataclass(frozen=True)
class TinyConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ff: int = 128
    dropout: float = 0.1
    max_positions: int = 128


class TinyEncoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: TinyConfig):
        super().__init__()
        self.cfg = cfg
        self.tokens = nn.Embedding(vocab_size, cfg.dim, padding_idx=PAD)
        self.positions = nn.Embedding(cfg.max_positions, cfg.dim)
        layer = nn.TransformerEncoderLayer(
            cfg.dim, cfg.heads, cfg.ff, cfg.dropout, activation="gelu", batch_first=True, norm_first=True
        )
        self.layers = nn.TransformerEncoder(layer, cfg.layers, enable_nested_tensor=False)
        self.norm = nn.LayerNorm(cfg.dim)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        pos = torch.arange(ids.shape[1], device=ids.device).clamp(max=self.cfg.max_positions - 1)
        x = self.drop(self.tokens(ids) + self.positions(pos)[None])
        x = self.layers(x, src_key_padding_mask=~mask)
        return self.norm(x)


class TinyMaskedLM(nn.Module):
    def __init__(self, tokenizer: WordTokenizer, cfg: TinyConfig):
        super().__init__()
        self.tokenizer = tokenizer
        self.cfg = cfg
        self.encoder = TinyEncoder(tokenizer.size, cfg)
        self.head = nn.Linear(cfg.dim, tokenizer.size)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(ids, mask))


# ---------------------------------------------------------------------------
# encoders seen by the Siamese model
# ---------------------------------------------------------------------------


class TextEncoder(nn.Module):
    """Raw texts in, per-token hidden states and validity mask out."""

    dim: int

    def tokenize(self, texts: Sequence[str], max_tokens: int) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def spec(self) -> dict:
        """JSON-serializable description sufficient to rebuild the architecture."""
        raise NotImplementedError


class TinyTextEncoder(TextEncoder):
    def __init__(self, tokenizer: WordTokenizer, cfg: TinyConfig, encoder: TinyEncoder | None = None):
        super().__init__()
        self.tokenizer = tokenizer
        self.cfg = cfg
        self.encoder = encoder if encoder is not None else TinyEncoder(tokenizer.size, cfg)
        self.dim = cfg.dim

    def tokenize(self, texts, max_tokens):
        return self.tokenizer.batch(texts, min(max_tokens, self.cfg.max_positions))

    def forward(self, ids, mask):
        return self.encoder(ids, mask)

    def spec(self) -> dict:
        return {"kind": "tiny", "config": asdict(self.cfg), "tokenizer": self.tokenizer.spec()}


class HFTextEncoder(TextEncoder):
    def __init__(self, name: str, *, pretrained: bool = True):
        super().__init__()
        from transformers import AutoConfig, AutoModel, AutoTokenizer

        self.name = name
        self.hf_tokenizer = AutoTokenizer.from_pretrained(name)
        if pretrained:
            self.model = AutoModel.from_pretrained(name)
        else:
            self.model = AutoModel.from_config(AutoConfig.from_pretrained(name))
        self.dim = int(self.model.config.hidden_size)

    def tokenize(self, texts, max_tokens):
        enc = self.hf_tokenizer(
            list(texts), padding=True, truncation=True, max_length=max_tokens, return_tensors="pt"
        )
        return enc["input_ids"], enc["attention_mask"].bool()

    def forward(self, ids, mask):
        return self.model(input_ids=ids, attention_mask=mask.long()).last_hidden_state

    def spec(self) -> dict:
        return {"kind": "hf", "name": self.name}


def encoder_from_spec(spec: dict) -> TextEncoder:
    """Rebuild an encoder architecture (weights are loaded separately)."""
    if spec["kind"] == "tiny":
        tok = WordTokenizer(spec["tokenizer"]["vocab"], spec["tokenizer"]["oov_buckets"])
        return TinyTextEncoder(tok, TinyConfig(**spec["config"]))
    if spec["kind"] == "hf":
        return HFTextEncoder(spec["name"], pretrained=False)
    raise ValueError(f"unknown encoder kind {spec['kind']!r}")


def build_encoder(encoder_id: str, *, tiny: TinyConfig | None = None) -> TextEncoder:
    """Instantiate the encoder named by ``encoder_id`` (see module docstring)."""
    if encoder_id == "tiny-random":
        return TinyTextEncoder(WordTokenizer((), oov_buckets=1024), tiny or TinyConfig())
    if encoder_id.startswith("tiny-mlm:"):
        lm = load_masked_lm(encoder_id.split(":", 1)[1])
        return TinyTextEncoder(lm.model.tokenizer, lm.model.cfg, copy.deepcopy(lm.model.encoder))
    if encoder_id.startswith("hf:"):
        return HFTextEncoder(encoder_id[3:])
    raise ValueError(f"unknown encoder id {encoder_id!r}; expected tiny-random, tiny-mlm:<dir> or hf:<name>")


# ---------------------------------------------------------------------------
# masked-LM pre-training and pseudo-perplexity
# ---------------------------------------------------------------------------


def _mask_batch(ids: torch.Tensor, maskable: torch.Tensor, vocab_size: int, gen: torch.Generator, rate: float):
    pick = (torch.rand(ids.shape, generator=gen) < rate) & maskable
    labels = torch.where(pick, ids, torch.full_like(ids, -100))
    roll = torch.rand(ids.shape, generator=gen)
    inputs = ids.clone()
    inputs[pick & (roll < 0.8)] = MASK
    rand_pos = pick & (roll >= 0.8) & (roll < 0.9)
    inputs[rand_pos] = torch.randint(len(SPECIALS), vocab_size, ids.shape, generator=gen)[rand_pos]
    return inputs, labels


def pretrain_masked_lm(
    texts: Sequence[str],
    *,
    cfg: TinyConfig = TinyConfig(),
    epochs: int = 8,
    batch_size: int = 64,
    lr: float = 3e-3,
    mask_rate: float = 0.15,
    max_tokens: int = 64,
    oov_buckets: int = 64,
    seed: int = 0,
) -> tuple[TinyMaskedLM, list[float]]:
    """Train a tiny masked language model on clean ``texts``.

    Returns the model (in eval mode) and the mean loss of every epoch.
    """
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    tok = WordTokenizer.fit(texts, oov_buckets=oov_buckets)
    model = TinyMaskedLM(tok, cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=lr, weight_decay=0.01)
    loss_fn = nn.CrossEntropyLoss()
    losses = []
    texts = list(texts)
    for _ in range(epochs):
        model.train()
        order = torch.randperm(len(texts), generator=gen).tolist()
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = [texts[i] for i in order[start : start + batch_size]]
            ids, valid = tok.batch(chunk, max_tokens)
            maskable = valid & (ids != CLS) & (ids != SEP)
            inputs, labels = _mask_batch(ids, maskable, tok.size, gen, mask_rate)
            if (labels != -100).sum() == 0:
                continue
            logits = model(inputs, valid)
            loss = loss_fn(logits.reshape(-1, tok.size), labels.reshape(-1))
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
            count += len(chunk)
        losses.append(total / max(count, 1))
    model.eval()
    return model, losses


def save_masked_lm(model: TinyMaskedLM, path: str | os.PathLike, *, extra: dict | None = None) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "tiny-mlm",
        "config": asdict(model.cfg),
        "tokenizer": model.tokenizer.spec(),
        **(extra or {}),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    torch.save(model.state_dict(), out / "weights.pt")
    return out


class UndefinedPerplexityError(ValueError):
    """Perplexity of an empty text."""


class MaskedLanguageModel:
    """Pseudo-perplexity under a masked language model.

    Every word position is masked in turn; the perplexity is the exponential
    of the mean negative log-probability of the true tokens.
    """

    def __init__(self, model, *, max_tokens: int = 128, model_id: str = ""):
        self.model = model
        self.max_tokens = max_tokens
        self.model_id = model_id
        self.model.eval()

    def _ids(self, text: str) -> list[int]:
        return self.model.tokenizer.encode(text, self.max_tokens)

    def _logits(self, inputs: torch.Tensor) -> torch.Tensor:
        return self.model(inputs, inputs != PAD)

    @property
    def mask_id(self) -> int:
        return MASK

    def token_log_probs(self, text: str) -> np.ndarray:
        """Log-probability of each word token with that position masked."""
        ids = self._ids(text)
        inner = len(ids) - 2
        if inner <= 0:
            raise UndefinedPerplexityError("perplexity of an empty text is undefined")
        base = torch.tensor(ids, dtype=torch.long)
        inputs = base.repeat(inner, 1)
        positions = torch.arange(1, inner + 1)
        inputs[torch.arange(inner), positions] = self.mask_id
        with torch.no_grad():
            logp = torch.log_softmax(self._logits(inputs).double(), dim=-1)
        return logp[torch.arange(inner), positions, base[positions]].numpy()

    def pseudo_perplexity(self, text: str) -> float:
        return math.exp(-float(np.mean(self.token_log_probs(text))))


class _HFMaskedLanguageModel(MaskedLanguageModel):
    def __init__(self, name: str, *, max_tokens: int = 128):
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        self.hf_tokenizer = AutoTokenizer.from_pretrained(name)
        super().__init__(AutoModelForMaskedLM.from_pretrained(name), max_tokens=max_tokens, model_id=f"hf:{name}")

    @property
    def mask_id(self) -> int:
        return self.hf_tokenizer.mask_token_id

    def _ids(self, text: str) -> list[int]:
        return self.hf_tokenizer(text, truncation=True, max_length=self.max_tokens)["input_ids"]

    def _logits(self, inputs):
        return self.model(input_ids=inputs).logits


def load_masked_lm(model_id: str, *, max_tokens: int = 128) -> MaskedLanguageModel:
    """Load ``tiny-mlm:<dir>``, ``hf:<name>`` or a bare tiny-mlm directory."""
    if model_id.startswith("hf:"):
        return _HFMaskedLanguageModel(model_id[3:], max_tokens=max_tokens)
    path = Path(model_id.split(":", 1)[1] if model_id.startswith("tiny-mlm:") else model_id)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no masked LM at {path} (missing manifest.json)")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("kind") != "tiny-mlm":
        raise ValueError(f"{path} is not a tiny-mlm directory")
    tok = WordTokenizer(manifest["tokenizer"]["vocab"], manifest["tokenizer"]["oov_buckets"])
    model = TinyMaskedLM(tok, TinyConfig(**manifest["config"]))
    model.load_state_dict(torch.load(path / "weights.pt", weights_only=True))
    return MaskedLanguageModel(model, max_tokens=min(max_tokens, model.cfg.max_positions), model_id=f"tiny-mlm:{path}")
