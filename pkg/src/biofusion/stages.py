"""Three-stage training orchestration: language model, alignment, QA tuning.

Each stage reads its inputs and prerequisite checkpoint, trains under the
stage's freeze policy, and emits a loss CSV plus a full-bundle checkpoint, so
tensor names stay identical across stages.
"""

from __future__ import annotations

import os
import random
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    CheckpointBundle,
    load_checkpoint,
    save_checkpoint,
    tensors_from_module,
    tensors_into_module,
)
from .chem import GINEncoder
from .config import RunConfig
from .datakit import QARecord, read_qa_jsonl
from .errors import ConfigError, EmptyInputError, MissingPrerequisiteError
from .evaluate import entity_of
from .fusion import FreezePolicy, ModalityAdaptor, ModelBundle, alignment_train_step, qa_finetune_step
from .lm import DecoderLM, make_optimizer, train_lm, write_loss_csv
from .protein import ProteinEncoder
from .tokenizer import BOS_ID, EOS_ID, Tokenizer

STAGES = ("lm", "align", "qa")

DETERMINISM_ENV = "BIOFUSION_DETERMINISTIC"


def seed_all(seed: int) -> None:
    random.seed(seed)
    np.random.seed(seed % (2**32))
    torch.manual_seed(seed)


def apply_determinism() -> None:
    """Honor the determinism env var: single thread, deterministic kernels."""
    if os.environ.get(DETERMINISM_ENV) == "1":
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


@contextmanager
def output_lock(out_dir: str | Path):
    """Advisory exclusive lock on an output directory (single-writer rule)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock_path = out_dir / ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ConfigError(
            f"output directory {out_dir} is locked by another run; "
            f"remove {lock_path} if that run is no longer alive") from None
    try:
        os.write(fd, str(os.getpid()).encode("ascii"))
        os.close(fd)
        yield
    finally:
        lock_path.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# bundle construction and checkpoint plumbing


def build_model_bundle(config: RunConfig, tokenizer: Tokenizer) -> ModelBundle:
    m = config.model
    lm = DecoderLM(tokenizer.vocab_size, dim=m.lm_dim, num_blocks=m.lm_blocks,
                   num_heads=m.lm_heads, context_length=m.context_length)
    mol_encoder = GINEncoder(hidden_dim=m.mol_dim, num_layers=m.mol_layers)
    protein_encoder = ProteinEncoder(hidden_dim=m.protein_dim, num_layers=m.protein_layers,
                                     num_heads=m.protein_heads, max_residues=m.max_residues)
    mol_adaptor = ModalityAdaptor("molecule", m.mol_dim, m.lm_dim)
    protein_adaptor = ModalityAdaptor("protein", m.protein_dim, m.lm_dim)
    return ModelBundle(tokenizer, lm, mol_encoder, protein_encoder, mol_adaptor,
                       protein_adaptor)


def _component_param_counts(bundle: ModelBundle) -> dict[str, int]:
    return {
        "lm": sum(p.numel() for p in bundle.lm.parameters()),
        "mol_encoder": sum(p.numel() for p in bundle.mol_encoder.parameters()),
        "protein_encoder": sum(p.numel() for p in bundle.protein_encoder.parameters()),
        "mol_adaptor": sum(p.numel() for p in bundle.mol_adaptor.parameters()),
        "protein_adaptor": sum(p.numel() for p in bundle.protein_adaptor.parameters()),
    }


def checkpoint_model(bundle: ModelBundle, config: RunConfig, stage: str, step: int,
                     path: str | Path) -> None:
    manifest = {
        "format": 1,
        "stage": stage,
        "step": step,
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "param_counts": _component_param_counts(bundle),
        "frozen": bundle.frozen_parameter_names(),
        "tokenizer_merges": [[a, b] for a, b in bundle.tokenizer.merges],
    }
    save_checkpoint(CheckpointBundle(manifest=manifest, tensors=tensors_from_module(bundle)),
                    path)


def restore_model(path: str | Path) -> tuple[ModelBundle, dict]:
    ckpt = load_checkpoint(path)
    config = RunConfig.from_dict(ckpt.manifest["config"])
    if config.config_hash() != ckpt.manifest["config_hash"]:
        raise ConfigError("checkpoint config does not match its recorded hash")
    tokenizer = Tokenizer([tuple(pair) for pair in ckpt.manifest["tokenizer_merges"]])
    bundle = build_model_bundle(config, tokenizer)
    tensors_into_module(bundle, ckpt.tensors)
    frozen = set(ckpt.manifest.get("frozen", []))
    for name, param in bundle.named_parameters():
        param.requires_grad_(name not in frozen)
    return bundle, ckpt.manifest


# ---------------------------------------------------------------------------
# stage runners


@dataclass(frozen=True)
class StageResult:
    checkpoint_path: Path
    loss_csv: Path
    trace: tuple[tuple[int, float], ...]


def _require_file(path: str | None, what: str, hint: str) -> Path:
    if path is None:
        raise MissingPrerequisiteError(f"{what} is not configured; {hint}")
    resolved = Path(path)
    if not resolved.exists():
        raise MissingPrerequisiteError(f"{what} not found at {resolved}; {hint}")
    return resolved


def _training_records(paths: list[str | None], want_text_only: bool) -> list[QARecord]:
    records: list[QARecord] = []
    for path in paths:
        if path is None:
            continue
        for record in read_qa_jsonl(path):
            if record.split not in ("", "train"):
                continue
            is_text = record.smiles is None and record.sequence is None
            if is_text == want_text_only:
                records.append(record)
    if not records:
        raise EmptyInputError("no training records found for this stage")
    return records


def _train_over_batches(bundle: ModelBundle, records: list[QARecord], config: RunConfig,
                        step_fn) -> list[tuple[int, float]]:
    opt = config.optimizer
    optimizer, scheduler = make_optimizer(
        bundle.trainable_parameters(), opt.learning_rate, opt.steps, opt.warmup_fraction)
    rng = random.Random(opt.seed)
    trace = []
    for step in range(opt.steps):
        picked = [records[rng.randrange(len(records))] for _ in range(opt.batch_size)]
        batches = [bundle.assemble(entity_of(r), r.question, answer=r.answer,
                                   context=r.context, truncate=True)
                   for r in picked]
        loss = step_fn(bundle, batches, optimizer, scheduler)
        trace.append((step, loss))
    return trace


def _stage_lm(config: RunConfig, out_dir: Path) -> StageResult:
    tokenizer_path = _require_file(config.paths.tokenizer_file, "tokenizer file",
                                   "run train-tokenizer first")
    corpus_path = _require_file(config.paths.lm_corpus, "language-model corpus",
                                "run build-corpus first")
    tokenizer = Tokenizer.load(tokenizer_path)
    seed_all(config.optimizer.seed)
    bundle = build_model_bundle(config, tokenizer)
    chunks = []
    for line in corpus_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            chunks.append([BOS_ID] + tokenizer.encode(line) + [EOS_ID])
    if not chunks:
        raise EmptyInputError(f"corpus file {corpus_path} has no usable lines")
    opt = config.optimizer
    trace = train_lm(bundle.lm, chunks, opt.learning_rate, opt.steps, opt.batch_size,
                     seed=opt.seed, warmup_frac=opt.warmup_fraction)
    ckpt_path = out_dir / "lm.ckpt"
    csv_path = out_dir / "lm_loss.csv"
    checkpoint_model(bundle, config, "lm", opt.steps, ckpt_path)
    write_loss_csv(trace, csv_path)
    return StageResult(ckpt_path, csv_path, tuple(trace))


def _stage_align(config: RunConfig, out_dir: Path) -> StageResult:
    prior = _require_file(str(out_dir / "lm.ckpt"), "language-model checkpoint",
                          "run the lm stage first")
    bundle, _ = restore_model(prior)
    bundle.apply_freeze(FreezePolicy(lm_frozen=True, encoders_frozen=False))
    records = _training_records([config.paths.molecule_qa, config.paths.protein_qa],
                                want_text_only=False)
    seed_all(config.optimizer.seed)
    trace = _train_over_batches(bundle, records, config, alignment_train_step)
    ckpt_path = out_dir / "align.ckpt"
    csv_path = out_dir / "align_loss.csv"
    checkpoint_model(bundle, config, "align", config.optimizer.steps, ckpt_path)
    write_loss_csv(trace, csv_path)
    return StageResult(ckpt_path, csv_path, tuple(trace))


def _stage_qa(config: RunConfig, out_dir: Path) -> StageResult:
    prior = _require_file(str(out_dir / "align.ckpt"), "alignment checkpoint",
                          "run the align stage first")
    bundle, _ = restore_model(prior)
    bundle.apply_freeze(FreezePolicy(lm_frozen=False, encoders_frozen=True))
    records = _training_records([config.paths.text_qa], want_text_only=True)
    seed_all(config.optimizer.seed)
    trace = _train_over_batches(bundle, records, config, qa_finetune_step)
    ckpt_path = out_dir / "qa.ckpt"
    csv_path = out_dir / "qa_loss.csv"
    checkpoint_model(bundle, config, "qa", config.optimizer.steps, ckpt_path)
    write_loss_csv(trace, csv_path)
    return StageResult(ckpt_path, csv_path, tuple(trace))


_STAGE_RUNNERS = {"lm": _stage_lm, "align": _stage_align, "qa": _stage_qa}


def run_stage(stage: str, config: RunConfig) -> StageResult:
    """Run one pipeline stage under the output-directory lock."""
    if stage not in _STAGE_RUNNERS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    apply_determinism()
    out_dir = Path(config.paths.out_dir)
    with output_lock(out_dir):
        return _STAGE_RUNNERS[stage](config, out_dir)
