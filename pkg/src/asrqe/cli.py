"""Command-line entry point: one subcommand per pipeline stage.

Every invocation resolves a run configuration (built-in defaults, then an
optional YAML file, then command-line overrides), validates all of it at
once, creates ``<out>/<timestamp>-seed<seed>-<stage>/`` and writes
``manifest.json`` there before anything else. The manifest echoes the
resolved configuration and the sha256 of every input file; it carries no
timestamp, so identical reruns produce identical files.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
configuration error.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import yaml

from asrqe.corpus_io import file_digest

log = logging.getLogger("asrqe")

STAGES = ("synth", "pretrain-lm", "build-pairs", "train", "score", "evaluate", "ensemble")

DEFAULTS: dict[str, Any] = {
    "seed": None,
    "out": "runs",
    "paths": {
        "corpus": None,
        "pairs": None,
        "checkpoint": None,
        "baseline_model": None,
        "scores": [],
    },
    "synth": {
        "sentences": 600,
        "languages": ["en", "es"],
        "tiers": 4,
        "speakers_per_language": 20,
        "source": "synthetic",
        "schedule": {
            "deletion": 0.12,
            "substitution": 0.12,
            "transposition": 0.06,
            "typo": 0.10,
            "floor": 0.15,
            "substitution_mode": "contextual",
        },
    },
    "lm": {
        "sentences": 3000,
        "languages": ["en", "es"],
        "sentence_seed": 101,
        "epochs": 12,
        "batch_size": 64,
        "learning_rate": 3e-3,
        "mask_rate": 0.15,
        "tiny": {},
    },
    "pairs": {
        "batch_size": 32,
        "train_fraction": 0.8,
        "split_keys": "speaker",
        "tolerance": 0.05,
    },
    "model": {
        "encoder_id": "tiny-random",
        "max_tokens": 128,
        "pooling": "mean",
        "head_hidden": 256,
        "head_dropout": 0.1,
        "activation": "gelu",
        "tiny": {},
    },
    "train": {
        "learning_rate": 1e-5,
        "optimizer": "adafactor",
        "max_epochs": 20,
        "early_stop_patience": 3,
        "time_budget": None,
        "threads": 1,
    },
    "score": {
        "scorer": "noref",
        "subset": "all",
        "empty_score": 0.0,
    },
    "evaluate": {
        "dataset": "synthetic",
        "per_language": True,
    },
}

# inputs each stage needs, by config key under ``paths``
REQUIRED_PATHS = {
    "synth": (),
    "pretrain-lm": (),
    "build-pairs": ("corpus",),
    "train": ("pairs",),
    "score": ("corpus",),
    "evaluate": ("corpus", "scores"),
    "ensemble": ("corpus", "scores"),
}


class ConfigError(Exception):
    """One or more configuration problems; all of them are listed."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, override: dict, prefix: str, problems: list[str]) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        name = f"{prefix}{key}"
        if key not in base:
            problems.append(f"{name}: unknown key")
            continue
        free_form = key == "tiny"
        if isinstance(base[key], dict) and not free_form:
            if not isinstance(value, dict):
                problems.append(f"{name}: expected a mapping")
                continue
            out[key] = _merge(base[key], value, name + ".", problems)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None, overrides: dict[str, Any]) -> dict:
    """Defaults, then the YAML file at ``path``, then dotted-key ``overrides``.

    Raises:
        ConfigError: unreadable file or unknown keys (all listed).
    """
    problems: list[str] = []
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except FileNotFoundError:
            raise ConfigError([f"config: file not found: {path}"]) from None
        except yaml.YAMLError as exc:
            raise ConfigError([f"config: cannot parse {path}: {exc}"]) from None
        if not isinstance(data, dict):
            raise ConfigError([f"config: top level of {path} must be a mapping"])
        cfg = _merge(cfg, data, "", problems)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    if problems:
        raise ConfigError(problems)
    return cfg


def _check_number(problems, name, value, *, kind=(int, float), lo=None, hi=None, lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, kind):
        problems.append(f"{name}: expected {'an integer' if kind is int else 'a number'}, got {value!r}")
        return
    if isinstance(value, float) and not math.isfinite(value):
        problems.append(f"{name}: must be finite")
        return
    if lo is not None and (value <= lo if lo_open else value < lo):
        problems.append(f"{name}: must be {'>' if lo_open else '>='} {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        problems.append(f"{name}: must be {'<' if hi_open else '<='} {hi}, got {value}")


def validate(cfg: dict, stage: str) -> list[str]:
    """Every problem with ``cfg`` for running ``stage``; empty when valid."""
    from asrqe.model import ModelConfig, OPTIMIZERS
    from asrqe.synthetic import SENTENCE_LANGUAGES

    problems: list[str] = []
    if cfg["seed"] is None:
        problems.append("seed: required (set it in the config file or pass --seed)")
    else:
        _check_number(problems, "seed", cfg["seed"], kind=int, lo=0)
    if not isinstance(cfg["out"], str) or not cfg["out"]:
        problems.append("out: expected a directory path")

    syn = cfg["synth"]
    if stage == "synth":
        _check_number(problems, "synth.sentences", syn["sentences"], kind=int, lo=2)
        _check_number(problems, "synth.tiers", syn["tiers"], kind=int, lo=2)
        _check_number(problems, "synth.speakers_per_language", syn["speakers_per_language"], kind=int, lo=1)
        _check_languages(problems, "synth.languages", syn["languages"], SENTENCE_LANGUAGES)
        if not isinstance(syn["source"], str) or not syn["source"] or ":" in syn["source"]:
            problems.append("synth.source: expected a non-empty name without ':'")
        sch = syn["schedule"]
        for ch in ("deletion", "substitution", "transposition", "typo"):
            _check_number(problems, f"synth.schedule.{ch}", sch[ch], lo=0.0, hi=1.0, hi_open=True)
        _check_number(problems, "synth.schedule.floor", sch["floor"], lo=0.0, hi=1.0)
        if sch["substitution_mode"] not in ("contextual", "uniform"):
            problems.append(f"synth.schedule.substitution_mode: 'contextual' or 'uniform', got {sch['substitution_mode']!r}")
        if not problems:
            try:
                _schedule(cfg)
            except ValueError as exc:
                problems.append(f"synth.schedule: {exc}")

    if stage == "pretrain-lm":
        lm = cfg["lm"]
        _check_number(problems, "lm.sentences", lm["sentences"], kind=int, lo=2)
        _check_number(problems, "lm.sentence_seed", lm["sentence_seed"], kind=int, lo=0)
        _check_number(problems, "lm.epochs", lm["epochs"], kind=int, lo=1)
        _check_number(problems, "lm.batch_size", lm["batch_size"], kind=int, lo=1)
        _check_number(problems, "lm.learning_rate", lm["learning_rate"], lo=0.0, lo_open=True)
        _check_number(problems, "lm.mask_rate", lm["mask_rate"], lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        _check_languages(problems, "lm.languages", lm["languages"], SENTENCE_LANGUAGES)
        problems.extend(_tiny_problems("lm.tiny", lm["tiny"]))

    if stage in ("build-pairs", "train"):
        pc = cfg["pairs"]
        _check_number(problems, "pairs.batch_size", pc["batch_size"], kind=int, lo=1)
        _check_number(problems, "pairs.train_fraction", pc["train_fraction"], lo=0.0, hi=1.0, lo_open=True, hi_open=True)
        _check_number(problems, "pairs.tolerance", pc["tolerance"], lo=0.0)
        if pc["split_keys"] not in ("speaker", "utterance"):
            problems.append(f"pairs.split_keys: 'speaker' or 'utterance', got {pc['split_keys']!r}")

    if stage == "train":
        mc = cfg["model"]
        try:
            ModelConfig(**mc)
        except TypeError as exc:
            problems.append(f"model: {exc}")
        except ValueError as exc:
            problems.extend(f"model: {p}" for p in str(exc).split("; "))
        problems.extend(_tiny_problems("model.tiny", mc.get("tiny") or {}))
        problems.extend(_encoder_problems(mc.get("encoder_id")))
        tc = cfg["train"]
        _check_number(problems, "train.learning_rate", tc["learning_rate"], lo=0.0, lo_open=True)
        _check_number(problems, "train.max_epochs", tc["max_epochs"], kind=int, lo=0)
        _check_number(problems, "train.early_stop_patience", tc["early_stop_patience"], kind=int, lo=1)
        _check_number(problems, "train.threads", tc["threads"], kind=int, lo=1)
        if tc["time_budget"] is not None:
            _check_number(problems, "train.time_budget", tc["time_budget"], lo=0.0, lo_open=True)
        if tc["optimizer"] not in OPTIMIZERS:
            problems.append(f"train.optimizer: one of {list(OPTIMIZERS)}, got {tc['optimizer']!r}")

    if stage == "score":
        sc = cfg["score"]
        if sc["scorer"] not in ("noref", "perplexity"):
            problems.append(f"score.scorer: 'noref' or 'perplexity', got {sc['scorer']!r}")
        if sc["subset"] not in ("all", "train", "validation"):
            problems.append(f"score.subset: 'all', 'train' or 'validation', got {sc['subset']!r}")
        _check_number(problems, "score.empty_score", sc["empty_score"], lo=0.0, hi=1.0)
        if sc["scorer"] == "noref" and not cfg["paths"]["checkpoint"]:
            problems.append("paths.checkpoint: required for score.scorer=noref")
        if sc["scorer"] == "perplexity" and not cfg["paths"]["baseline_model"]:
            problems.append("paths.baseline_model: required for score.scorer=perplexity")
        if sc["subset"] != "all" and not cfg["paths"]["pairs"]:
            problems.append(f"paths.pairs: required for score.subset={sc['subset']} (the split is read from it)")

    if stage == "evaluate":
        if not isinstance(cfg["evaluate"]["dataset"], str):
            problems.append("evaluate.dataset: expected a string")
        if not isinstance(cfg["evaluate"]["per_language"], bool):
            problems.append("evaluate.per_language: expected true or false")

    problems.extend(_path_problems(cfg, stage))
    return problems


def _check_languages(problems, name, value, available):
    if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
        problems.append(f"{name}: expected a non-empty list of language codes")
        return
    unknown = [v for v in value if v not in available]
    if unknown:
        problems.append(f"{name}: no built-in sentences for {unknown}; available {list(available)}")
    if len(set(value)) != len(value):
        problems.append(f"{name}: duplicate languages")


def _tiny_problems(name: str, tiny) -> list[str]:
    from asrqe.encoders import TinyConfig

    if not isinstance(tiny, dict):
        return [f"{name}: expected a mapping"]
    known = set(TinyConfig.__dataclass_fields__)
    out = [f"{name}.{k}: unknown key" for k in sorted(set(tiny) - known)]
    if not out:
        cfg = TinyConfig(**tiny)
        if cfg.dim % cfg.heads:
            out.append(f"{name}: dim {cfg.dim} is not divisible by heads {cfg.heads}")
    return out


def _encoder_problems(encoder_id) -> list[str]:
    if not isinstance(encoder_id, str):
        return [f"model.encoder_id: expected a string, got {encoder_id!r}"]
    if encoder_id == "tiny-random" or (encoder_id.startswith("hf:") and len(encoder_id) > 3):
        return []
    if encoder_id.startswith("tiny-mlm:"):
        where = Path(encoder_id.split(":", 1)[1]) / "manifest.json"
        return [] if where.exists() else [f"model.encoder_id: no masked LM at {where.parent}"]
    return [f"model.encoder_id: expected tiny-random, tiny-mlm:<dir> or hf:<name>, got {encoder_id!r}"]


def _path_problems(cfg: dict, stage: str) -> list[str]:
    paths = cfg["paths"]
    out = []
    for key in REQUIRED_PATHS[stage]:
        value = paths[key]
        if not value:
            out.append(f"paths.{key}: required for {stage}")
            continue
        for v in value if isinstance(value, list) else [value]:
            if not Path(v).exists():
                out.append(f"paths.{key}: no such file or directory: {v}")
    for key in ("checkpoint", "baseline_model", "pairs"):
        v = paths[key]
        if v and key not in REQUIRED_PATHS[stage] and _used(cfg, stage, key) and not Path(v).exists():
            out.append(f"paths.{key}: no such file or directory: {v}")
    return out


def _used(cfg: dict, stage: str, key: str) -> bool:
    if stage != "score":
        return False
    if key == "checkpoint":
        return cfg["score"]["scorer"] == "noref"
    if key == "baseline_model":
        return cfg["score"]["scorer"] == "perplexity"
    return cfg["score"]["subset"] != "all"


# ---------------------------------------------------------------------------
# run directory and manifest
# ---------------------------------------------------------------------------


def _inputs(cfg: dict, stage: str) -> dict[str, Any]:
    paths = cfg["paths"]
    keys = set(REQUIRED_PATHS[stage]) | {k for k in ("checkpoint", "baseline_model", "pairs") if _used(cfg, stage, k)}
    out: dict[str, Any] = {}
    for key in sorted(keys):
        values = paths[key] if isinstance(paths[key], list) else [paths[key]]
        out[key] = [{"path": str(v), "sha256": _digest(Path(v))} for v in values]
    return out


def _digest(path: Path) -> str | dict[str, str]:
    if path.is_dir():
        return {str(p.relative_to(path)): file_digest(p) for p in sorted(path.rglob("*")) if p.is_file()}
    return file_digest(path)


def make_run_dir(out: str, seed: int, stage: str, now: _dt.datetime | None = None) -> Path:
    stamp = (now or _dt.datetime.now()).strftime("%Y%m%d-%H%M%S")
    base = Path(out) / f"{stamp}-seed{seed}-{stage}"
    run = base
    n = 1
    while run.exists():
        run = base.with_name(f"{base.name}-{n}")
        n += 1
    run.mkdir(parents=True)
    return run


def write_manifest(run_dir: Path, cfg: dict, stage: str) -> Path:
    from asrqe import __version__

    manifest = {
        "command": stage,
        "package_version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "inputs": _inputs(cfg, stage),
    }
    return _write_json(run_dir / "manifest.json", manifest)


def _write_json(path: Path, obj) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _schedule(cfg: dict):
    from asrqe.synthetic import CorruptionSchedule

    sch = cfg["synth"]["schedule"]
    return CorruptionSchedule.ramp(
        cfg["synth"]["tiers"],
        deletion=sch["deletion"],
        substitution=sch["substitution"],
        transposition=sch["transposition"],
        typo=sch["typo"],
        floor=sch["floor"],
        seed=cfg["seed"],
        substitution_mode=sch["substitution_mode"],
    )


def cmd_synth(cfg: dict, run_dir: Path) -> dict[str, Path]:
    from asrqe.synthetic import build_synthetic_corpus, sample_sentences, write_synthetic_corpus

    syn = cfg["synth"]
    sentences = sample_sentences(syn["sentences"], tuple(syn["languages"]), seed=cfg["seed"])
    schedule = _schedule(cfg)
    corpus = build_synthetic_corpus(
        sentences, schedule, speakers_per_language=syn["speakers_per_language"], source=syn["source"]
    )
    return write_synthetic_corpus(corpus, schedule, run_dir)


def cmd_pretrain_lm(cfg: dict, run_dir: Path) -> dict[str, Path]:
    import torch

    from asrqe.encoders import TinyConfig, pretrain_masked_lm, save_masked_lm
    from asrqe.synthetic import sample_sentences

    lm = cfg["lm"]
    torch.set_num_threads(cfg["train"]["threads"])
    texts = [t for _, t in sample_sentences(lm["sentences"], tuple(lm["languages"]), seed=lm["sentence_seed"])]
    model, losses = pretrain_masked_lm(
        texts,
        cfg=TinyConfig(**lm["tiny"]),
        epochs=lm["epochs"],
        batch_size=lm["batch_size"],
        lr=lm["learning_rate"],
        mask_rate=lm["mask_rate"],
        seed=cfg["seed"],
    )
    lm_dir = save_masked_lm(model, run_dir / "lm", extra={"sentence_seed": lm["sentence_seed"], "seed": cfg["seed"]})
    return {"lm": lm_dir, "losses": _write_json(run_dir / "losses.json", {"epoch_losses": losses})}


def cmd_build_pairs(cfg: dict, run_dir: Path) -> dict[str, Path]:
    from asrqe.corpus_io import load_corpus, write_pairs
    from asrqe.pairs import PairBatchPlan, build_pairs, split_and_batch

    pc = cfg["pairs"]
    corpus = load_corpus(cfg["paths"]["corpus"])
    pairs, gen_report = build_pairs(corpus)
    plan = PairBatchPlan(
        seed=cfg["seed"], batch_size=pc["batch_size"], train_fraction=pc["train_fraction"], split_keys=pc["split_keys"]
    )
    split = split_and_batch(pairs, plan, corpus.utterances, tolerance=pc["tolerance"])
    out = {
        "pairs": run_dir / "pairs.jsonl",
        "train_pairs": run_dir / "train_pairs.jsonl",
        "val_pairs": run_dir / "val_pairs.jsonl",
    }
    write_pairs(pairs, out["pairs"], seed=cfg["seed"])
    write_pairs(split.train_pairs, out["train_pairs"], seed=cfg["seed"])
    write_pairs(split.validation_pairs, out["val_pairs"], seed=cfg["seed"])
    out["split"] = _write_json(
        run_dir / "split.json",
        {
            "train_utterances": sorted(split.train_utterances),
            "validation_utterances": sorted(split.validation_utterances),
        },
    )
    out["report"] = _write_json(
        run_dir / "report.json",
        {"generation": gen_report.as_dict(), "split": split.report.as_dict(), "plan": asdict(plan)},
    )
    return out


def _chunks(items: list, size: int) -> list[list]:
    return [items[i : i + size] for i in range(0, len(items), size)]


def cmd_train(cfg: dict, run_dir: Path) -> dict[str, Path]:
    import torch

    from asrqe.corpus_io import load_pairs
    from asrqe.model import ModelConfig, TrainConfig, save_checkpoint, train

    pairs_dir = Path(cfg["paths"]["pairs"])
    missing = [n for n in ("train_pairs.jsonl", "val_pairs.jsonl") if not (pairs_dir / n).exists()]
    if missing:
        raise ConfigError([f"paths.pairs: {pairs_dir} lacks {', '.join(missing)}"])
    tc = cfg["train"]
    torch.set_num_threads(tc["threads"])
    bs = cfg["pairs"]["batch_size"]
    train_batches = _chunks(load_pairs(pairs_dir / "train_pairs.jsonl"), bs)
    val_batches = _chunks(load_pairs(pairs_dir / "val_pairs.jsonl"), bs)
    model_config = ModelConfig(**cfg["model"])
    train_config = TrainConfig(
        learning_rate=tc["learning_rate"],
        optimizer=tc["optimizer"],
        batch_size=bs,
        max_epochs=tc["max_epochs"],
        early_stop_patience=tc["early_stop_patience"],
        seed=cfg["seed"],
    )
    ckpt, history = train(train_batches, val_batches, model_config, train_config, time_budget=tc["time_budget"])
    out = {"checkpoint": save_checkpoint(ckpt, run_dir / "checkpoint")}
    hist_path = run_dir / "history.jsonl"
    with open(hist_path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in history:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    out["history"] = hist_path
    out["summary"] = _write_json(
        run_dir / "summary.json",
        {"best_epoch": ckpt.epoch, "validation_accuracy": ckpt.validation_accuracy, "epochs_run": len(history) - 1},
    )
    return out


def _subset(cfg: dict, corpus) -> list:
    subset = cfg["score"]["subset"]
    hyps = list(corpus.hypotheses)
    if subset == "all":
        return hyps
    split_path = Path(cfg["paths"]["pairs"]) / "split.json"
    if not split_path.exists():
        raise ConfigError([f"paths.pairs: {split_path} not found (needed for score.subset={subset})"])
    with open(split_path, encoding="utf-8") as fh:
        keep = set(json.load(fh)[f"{subset}_utterances"])
    return [h for h in hyps if h.utterance_id in keep]


def cmd_score(cfg: dict, run_dir: Path) -> dict[str, Path]:
    import torch

    from asrqe.corpus_io import load_corpus, write_scores
    from asrqe.scorer import perplexity_batch, score_batch

    torch.set_num_threads(cfg["train"]["threads"])
    corpus = load_corpus(cfg["paths"]["corpus"])
    hyps = _subset(cfg, corpus)
    if cfg["score"]["scorer"] == "noref":
        from asrqe.model import load_checkpoint

        scores = score_batch(hyps, load_checkpoint(cfg["paths"]["checkpoint"]))
    else:
        scores = perplexity_batch(hyps, cfg["paths"]["baseline_model"], empty_score=cfg["score"]["empty_score"])
    path = run_dir / "scores.jsonl"
    write_scores(scores, path)
    return {"scores": path}


def _records(cfg: dict):
    from asrqe.corpus_io import load_corpus, load_scores
    from asrqe.evaluation import build_records

    corpus = load_corpus(cfg["paths"]["corpus"])
    by_model = {}
    for p in cfg["paths"]["scores"]:
        scores = load_scores(p)
        kinds = sorted({s.scorer_kind for s in scores})
        name = kinds[0] if len(kinds) == 1 else Path(p).stem
        if name in by_model:
            name = f"{name}:{Path(p).parent.name}"
        by_model[name] = build_records(corpus, scores)
    return by_model


def _languages(records) -> list[str]:
    return sorted({r.language for r in records})


def cmd_evaluate(cfg: dict, run_dir: Path) -> dict[str, Path]:
    from asrqe.evaluation import correlation_report, write_reports

    dataset = cfg["evaluate"]["dataset"]
    reports = []
    for model, records in _records(cfg).items():
        reports.append(correlation_report(records, dataset=dataset, language="all", model=model))
        if cfg["evaluate"]["per_language"]:
            for lang in _languages(records):
                subset = [r for r in records if r.language == lang]
                reports.append(correlation_report(subset, dataset=dataset, language=lang, model=model))
    return write_reports(run_dir, correlation=reports)


def cmd_ensemble(cfg: dict, run_dir: Path) -> dict[str, Path]:
    from asrqe.evaluation import ensemble_select, write_reports

    reports = []
    for model, records in _records(cfg).items():
        groups = [("all", records)] + [
            (lang, [r for r in records if r.language == lang]) for lang in _languages(records)
        ]
        for lang, subset in groups:
            _, report = ensemble_select(subset, language=f"{lang} ({model})")
            reports.append(report)
    return write_reports(run_dir, ensemble=reports)


COMMANDS = {
    "synth": cmd_synth,
    "pretrain-lm": cmd_pretrain_lm,
    "build-pairs": cmd_build_pairs,
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "ensemble": cmd_ensemble,
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

HELP = {
    "synth": "generate a synthetic multi-tier corpus",
    "pretrain-lm": "pretrain a tiny masked language model on clean sentences",
    "build-pairs": "build ranking pairs and the train/validation split from a corpus",
    "train": "train the pairwise ranker",
    "score": "score hypotheses with a trained ranker or the perplexity baseline",
    "evaluate": "correlate scores with WER",
    "ensemble": "pick the best-scored hypothesis per utterance and compare WERs",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="random seed (required here or in the config)")
    common.add_argument("--out", help="parent directory for run directories")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")

    parser = argparse.ArgumentParser(prog="asrqe", description="Referenceless ASR quality estimation.")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="STAGE")
    p = {name: sub.add_parser(name, parents=[common], help=HELP[name], description=HELP[name]) for name in STAGES}

    p["synth"].add_argument("--tiers", type=int, dest="synth.tiers")
    p["synth"].add_argument("--sentences", type=int, dest="synth.sentences")
    p["pretrain-lm"].add_argument("--sentences", type=int, dest="lm.sentences")
    for name in ("build-pairs", "score", "evaluate", "ensemble"):
        p[name].add_argument("--corpus", dest="paths.corpus")
    for name in ("build-pairs", "train"):
        p[name].add_argument("--batch-size", type=int, dest="pairs.batch_size")
    for name in ("train", "score"):
        p[name].add_argument("--pairs", dest="paths.pairs", help="build-pairs run directory")
    p["train"].add_argument("--encoder", dest="model.encoder_id")
    p["train"].add_argument("--learning-rate", type=float, dest="train.learning_rate")
    p["train"].add_argument("--max-epochs", type=int, dest="train.max_epochs")
    p["score"].add_argument("--scorer", choices=("noref", "perplexity"), dest="score.scorer")
    p["score"].add_argument("--checkpoint", dest="paths.checkpoint")
    p["score"].add_argument("--baseline-model", dest="paths.baseline_model", help="tiny-mlm directory or hf:<name>")
    p["score"].add_argument("--subset", choices=("all", "train", "validation"), dest="score.subset")
    for name in ("evaluate", "ensemble"):
        p[name].add_argument("--scores", nargs="+", dest="paths.scores")
    p["evaluate"].add_argument("--dataset", dest="evaluate.dataset")
    return parser


def run(argv: Sequence[str] | None = None, *, now: _dt.datetime | None = None) -> tuple[int, Path | None]:
    """Parse ``argv``, execute the stage and return ``(exit status, run directory)``."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0), None
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    overrides = {k: v for k, v in vars(args).items() if k not in ("config", "stage", "verbose")}
    run_dir = None
    try:
        cfg = load_config(args.config, overrides)
        problems = validate(cfg, args.stage)
        if problems:
            raise ConfigError(problems)
        run_dir = make_run_dir(cfg["out"], cfg["seed"], args.stage, now)
        write_manifest(run_dir, cfg, args.stage)
        outputs = COMMANDS[args.stage](cfg, run_dir)
    except ConfigError as exc:
        print(f"asrqe {args.stage}: {exc}", file=sys.stderr)
        return 2, run_dir
    except Exception as exc:  # noqa: BLE001 - reported, then mapped to exit status 1
        log.debug("failure", exc_info=True)
        print(f"asrqe {args.stage}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1, run_dir
    print(run_dir)
    for name, path in sorted(outputs.items()):
        log.info("%s -> %s", name, path)
    return 0, run_dir


def main(argv: Sequence[str] | None = None) -> int:
    return run(argv)[0]


if __name__ == "__main__":
    sys.exit(main())
