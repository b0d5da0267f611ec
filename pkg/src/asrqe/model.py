"""Siamese pairwise ranker: shared text encoder, pooled embedding, dense head, scalar logit.

A pair ``(better, worse)`` goes through the same network twice; the
probability that ``better`` wins is the sigmoid of the logit difference and
the loss is binary cross-entropy with target 1, weighted by the WER between
the two texts.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import os
import random
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Literal, Sequence

import torch
from torch import nn

from asrqe.corpus_io import TrainingPair
from asrqe.encoders import TextEncoder, TinyConfig, build_encoder, encoder_from_spec
from asrqe.synthetic import stable_seed

log = logging.getLogger(__name__)

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "PairLogits",
    "SiameseRanker",
    "Checkpoint",
    "TrainingDivergedError",
    "IncompatibleCheckpointError",
    "PROBABILITY_FLOOR",
    "build_model",
    "sigmoid",
    "forward_single",
    "forward_pair",
    "pair_loss",
    "weighted_bce",
    "pairwise_accuracy_from_logits",
    "train",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "asrqe-checkpoint"
CHECKPOINT_VERSION = 1
PROBABILITY_FLOOR = 1e-7

POOLINGS = ("mean", "first", "max")
OPTIMIZERS = ("adafactor", "adamw")

ACTIVATIONS: dict[str, Callable[[], nn.Module]] = {
    "gelu": nn.GELU,
    "silu": nn.SiLU,
    "softplus": nn.Softplus,
    "elu": nn.ELU,
    "relu": nn.ReLU,
    "tanh": nn.Tanh,
}


@dataclass(frozen=True)
class ModelConfig:
    encoder_id: str = "tiny-random"
    max_tokens: int = 128
    pooling: Literal["mean", "first", "max"] = "mean"
    head_hidden: int = 256
    head_dropout: float = 0.10
    activation: str = "gelu"
    tiny: dict = field(default_factory=dict)

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise ValueError("; ".join(errors))

    def problems(self) -> list[str]:
        errs = []
        if not 0.0 <= self.head_dropout < 1.0:
            errs.append(f"head_dropout must lie in [0, 1), got {self.head_dropout}")
        if self.max_tokens < 8:
            errs.append(f"max_tokens must be >= 8, got {self.max_tokens}")
        if self.pooling not in POOLINGS:
            errs.append(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if self.activation not in ACTIVATIONS:
            errs.append(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        if self.head_hidden < 1:
            errs.append("head_hidden must be >= 1")
        return errs


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    optimizer: Literal["adafactor", "adamw"] = "adafactor"
    batch_size: int = 32
    max_epochs: int = 20
    early_stop_patience: int = 3
    seed: int = 0

    def __post_init__(self):
        errs = []
        if not self.learning_rate > 0:
            errs.append("learning_rate must be > 0")
        if self.early_stop_patience < 1:
            errs.append("early_stop_patience must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            errs.append(f"unsupported optimizer {self.optimizer!r}")
        if self.max_epochs < 0:
            errs.append("max_epochs must be >= 0")
        if errs:
            raise ValueError("; ".join(errs))


class TrainingDivergedError(RuntimeError):
    pass


class IncompatibleCheckpointError(ValueError):
    pass


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class SiameseRanker(nn.Module):
    def __init__(self, encoder: TextEncoder, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = encoder
        self.head = nn.Sequential(
            nn.Linear(encoder.dim, config.head_hidden),
            nn.Dropout(config.head_dropout),
            ACTIVATIONS[config.activation](),
            nn.Dropout(config.head_dropout),
            nn.Linear(config.head_hidden, 1),
        )

    def pool(self, hidden: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if self.config.pooling == "first":
            return hidden[:, 0]
        if self.config.pooling == "max":
            return hidden.masked_fill(~mask.bool().unsqueeze(-1), -torch.inf).amax(1)
        m = mask.unsqueeze(-1).to(hidden.dtype)
        return (hidden * m).sum(1) / m.sum(1).clamp(min=1.0)

    def embed(self, texts: Sequence[str]) -> torch.Tensor:
        ids, mask = self.encoder.tokenize(texts, self.config.max_tokens)
        return self.pool(self.encoder(ids, mask), mask)

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        """Logits of shape ``(len(texts),)``."""
        return self.head(self.embed(texts)).squeeze(-1)


def build_model(config: ModelConfig, seed: int = 0) -> SiameseRanker:
    torch.manual_seed(seed)
    tiny = TinyConfig(**config.tiny) if config.tiny else None
    encoder = build_encoder(config.encoder_id, tiny=tiny)
    model = SiameseRanker(encoder, config)
    model.eval()
    return model


# ---------------------------------------------------------------------------
# pair readout and loss
# ---------------------------------------------------------------------------

_HALF_UP = math.nextafter(0.5, 1.0)
_ONE_DOWN = math.nextafter(1.0, 0.0)


def _upper_sigmoid(d: float) -> float:
    # d >= 0; result in [0.5, 1), strictly above 0.5 when d > 0
    s = 1.0 / (1.0 + math.exp(-d))
    if d > 0.0 and s <= 0.5:
        s = _HALF_UP
    return min(s, _ONE_DOWN)


def sigmoid(x: float) -> float:
    """Logistic function in (0, 1) with ``sigmoid(x) + sigmoid(-x) == 1`` exactly.

    The upper half is evaluated directly and the lower half as its exact
    complement (``1 - s`` is exact for ``s`` in [0.5, 1]).
    """
    x = float(x)
    if x >= 0.0:
        return _upper_sigmoid(x)
    return 1.0 - _upper_sigmoid(-x)


@dataclass(frozen=True)
class PairLogits:
    logit_better: float
    logit_worse: float

    @property
    def probability(self) -> float:
        """Probability that the first text is the better one."""
        return sigmoid(self.logit_better - self.logit_worse)


@torch.no_grad()
def forward_single(text: str, model: SiameseRanker) -> float:
    """Logit of one text; the model must be in eval mode for determinism."""
    return float(model([text])[0])


def forward_pair(better: str, worse: str, model: SiameseRanker) -> PairLogits:
    return PairLogits(forward_single(better, model), forward_single(worse, model))


def pair_loss(pair_logits: PairLogits, weight: float) -> float:
    """``weight * -log(p)`` with ``p`` clamped below at :data:`PROBABILITY_FLOOR`."""
    if weight < 0:
        raise ValueError("weight must be >= 0")
    if weight == 0:
        return 0.0
    return weight * -math.log(max(pair_logits.probability, PROBABILITY_FLOOR))


def weighted_bce(logit_better: torch.Tensor, logit_worse: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of ``w * -log(max(sigmoid(lb - lw), 1e-7))``.

    Not renormalized by the total weight.
    """
    logp = nn.functional.logsigmoid(logit_better - logit_worse)
    logp = torch.clamp(logp, min=math.log(PROBABILITY_FLOOR))
    return (weights * -logp).mean()


def pairwise_accuracy_from_logits(logit_better: torch.Tensor, logit_worse: torch.Tensor) -> float:
    wins = (logit_better > logit_worse).double() + 0.5 * (logit_better == logit_worse).double()
    return float(wins.mean())


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: SiameseRanker
    model_config: ModelConfig
    train_config: TrainConfig | None = None
    seed: int = 0
    epoch: int = 0
    validation_accuracy: float | None = None


@torch.no_grad()
def _batch_logits(model: SiameseRanker, pairs: Sequence[TrainingPair], chunk: int = 256):
    lb, lw = [], []
    for i in range(0, len(pairs), chunk):
        part = pairs[i : i + chunk]
        out = model([p.better_text for p in part] + [p.worse_text for p in part])
        lb.append(out[: len(part)])
        lw.append(out[len(part) :])
    return torch.cat(lb), torch.cat(lw)


def validation_accuracy(model: SiameseRanker, pairs: Sequence[TrainingPair]) -> float:
    """Plain (unweighted) pairwise ranking accuracy, ties count one half."""
    was_training = model.training
    model.eval()
    try:
        lb, lw = _batch_logits(model, pairs)
    finally:
        model.train(was_training)
    return pairwise_accuracy_from_logits(lb, lw)


def train(
    train_batches: Sequence[Sequence[TrainingPair]],
    validation_batches: Sequence[Sequence[TrainingPair]],
    model_config: ModelConfig,
    train_config: TrainConfig,
    *,
    model: SiameseRanker | None = None,
    time_budget: float | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Fine-tune a Siamese ranker on oriented (better, worse) pairs.

    Returns the checkpoint with the best validation accuracy and one history
    record per epoch; epoch 0 is the untrained model. Training stops after
    ``early_stop_patience`` epochs without improvement, after
    ``max_epochs``, or once ``time_budget`` seconds have elapsed.

    Raises:
        TrainingDivergedError: if a batch produces a non-finite loss.
    """
    if not train_batches or not any(train_batches):
        raise ValueError("no training pairs")
    val_pairs = [p for b in validation_batches for p in b]
    if not val_pairs:
        raise ValueError("no validation pairs")
    seed = train_config.seed
    if model is None:
        model = build_model(model_config, seed)
    torch.manual_seed(seed)
    if train_config.optimizer == "adamw":
        opt = torch.optim.AdamW(model.parameters(), lr=train_config.learning_rate)
    else:
        opt = torch.optim.Adafactor(model.parameters(), lr=train_config.learning_rate)

    acc = validation_accuracy(model, val_pairs)
    history = [{"epoch": 0, "train_loss": None, "val_accuracy": acc}]
    best_acc, best_epoch = acc, 0
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    started = time.monotonic()
    for epoch in range(1, train_config.max_epochs + 1):
        model.train()
        order = list(range(len(train_batches)))
        random.Random(stable_seed(seed, "epoch", epoch)).shuffle(order)
        total, n = 0.0, 0
        for b in order:
            batch = train_batches[b]
            if not batch:
                continue
            out = model([p.better_text for p in batch] + [p.worse_text for p in batch])
            weights = torch.tensor([p.weight for p in batch], dtype=out.dtype)
            loss = weighted_bce(out[: len(batch)], out[len(batch) :], weights)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch {b} "
                    f"(first utterance {batch[0].utterance_id!r})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(batch)
            n += len(batch)
        acc = validation_accuracy(model, val_pairs)
        history.append({"epoch": epoch, "train_loss": total / max(n, 1), "val_accuracy": acc})
        log.info("epoch %d train_loss %.5f val_accuracy %.4f", epoch, total / max(n, 1), acc)
        if acc > best_acc:
            best_acc, best_epoch, stale = acc, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            stale += 1
            if stale >= train_config.early_stop_patience:
                break
        if time_budget is not None and time.monotonic() - started > time_budget:
            log.warning("time budget of %.0fs exhausted after epoch %d", time_budget, epoch)
            break
    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(model, model_config, train_config, seed=seed, epoch=best_epoch, validation_accuracy=best_acc)
    return ckpt, history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(ckpt.model_config),
        "train_config": asdict(ckpt.train_config) if ckpt.train_config else None,
        "seed": ckpt.seed,
        "epoch": ckpt.epoch,
        "validation_accuracy": ckpt.validation_accuracy,
        "encoder_spec": ckpt.model.encoder.spec(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    torch.save(ckpt.model.state_dict(), out / "weights.pt")
    return out


def load_checkpoint(path: str | os.PathLike, *, expected_encoder_id: str | None = None) -> Checkpoint:
    """Rebuild a checkpoint written by :func:`save_checkpoint`, in eval mode.

    Raises:
        FileNotFoundError: no checkpoint at ``path``.
        IncompatibleCheckpointError: unknown format/version, or an encoder id
            different from ``expected_encoder_id``.
    """
    p = Path(path)
    manifest_path = p / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint at {p}")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT or manifest.get("version") != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(
            f"{p}: expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}, "
            f"found {manifest.get('format')} v{manifest.get('version')}"
        )
    model_config = ModelConfig(**manifest["model_config"])
    if expected_encoder_id is not None and model_config.encoder_id != expected_encoder_id:
        raise IncompatibleCheckpointError(
            f"{p}: checkpoint encoder {model_config.encoder_id!r} != expected {expected_encoder_id!r}"
        )
    train_config = TrainConfig(**manifest["train_config"]) if manifest.get("train_config") else None
    model = SiameseRanker(encoder_from_spec(manifest["encoder_spec"]), model_config)
    try:
        model.load_state_dict(torch.load(p / "weights.pt", weights_only=True))
    except RuntimeError as exc:
        raise IncompatibleCheckpointError(f"{p}: weights do not match the recorded architecture: {exc}") from None
    model.eval()
    return Checkpoint(
        model,
        model_config,
        train_config,
        seed=manifest.get("seed", 0),
        epoch=manifest.get("epoch", 0),
        validation_accuracy=manifest.get("validation_accuracy"),
    )
