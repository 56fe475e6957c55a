"""Modality adaptors, prompt assembly, freeze-aware training steps, and QA inference.

A prompt is a single embedding sequence: text-token embeddings with the
projected per-atom (or per-residue) feature rows spliced between two reserved
marker tokens.  Targets are next-token aligned — ``target_ids[t]`` is the id
of sequence element t+1, so ``logits[t]`` from the LM scores ``target_ids[t]``
directly and the loss needs no further shifting.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .chem import GINEncoder, MolecularGraph
from .errors import ConfigError, ContextOverflowError, FreezeViolationError, ShapeError
from .layers import init_linear
from .lm import DecoderLM, DecodingConfig, autoregressive_loss, generate
from .protein import ProteinEncoder, ProteinSequence
from .tokenizer import (
    EOS_ID,
    MOLECULE_CLOSE_ID,
    MOLECULE_OPEN_ID,
    PAD_ID,
    PROTEIN_CLOSE_ID,
    PROTEIN_OPEN_ID,
    Tokenizer,
)


@dataclass(frozen=True)
class PromptTemplate:
    modality: str
    system: str
    human_prefix: str
    question_prefix: str
    assistant_prefix: str
    open_marker_id: int
    close_marker_id: int
    open_marker_text: str
    close_marker_text: str
    placeholder: str

    def render(self, question: str, answer: str | None = None) -> str:
        """Plain-text form of the prompt, the modality block standing as the placeholder."""
        text = (
            self.system
            + self.human_prefix
            + self.open_marker_text
            + self.placeholder
            + self.close_marker_text
            + self.question_prefix
            + question
            + self.assistant_prefix
        )
        return text if answer is None else text + answer


MOLECULE_TEMPLATE = PromptTemplate(
    modality="molecule",
    system=(
        "You are working as an excellent assistant in chemistry and molecule "
        "discovery. Below a human gives the representation of a molecule. Answer "
        "a question about it."
    ),
    human_prefix="\n### Human: ",
    question_prefix=" ",
    assistant_prefix=".\n### Assistant: ",
    open_marker_id=MOLECULE_OPEN_ID,
    close_marker_id=MOLECULE_CLOSE_ID,
    open_marker_text="<molecule>",
    close_marker_text="</molecule>",
    placeholder="<moleculeHere>",
)

PROTEIN_TEMPLATE = PromptTemplate(
    modality="protein",
    system=(
        "You are working as an excellent assistant in biology. Below a human "
        "gives the representation of a protein. Answer a question about it."
    ),
    human_prefix="\n### Human: ",
    question_prefix=" ",
    assistant_prefix=".\n### Assistant: ",
    open_marker_id=PROTEIN_OPEN_ID,
    close_marker_id=PROTEIN_CLOSE_ID,
    open_marker_text="<protein>",
    close_marker_text="</protein>",
    placeholder="<proteinHere>",
)


def text_qa_prompt(question: str, context: str | None = None) -> str:
    """Prompt for the pure-text QA path (no modality block)."""
    body = question if context is None else f"{context}\n{question}"
    return f"### Human: {body}\n### Assistant: "


class ModalityAdaptor(nn.Module):
    """Fully-connected projection from encoder feature space to LM embedding space."""

    def __init__(self, modality: str, input_dim: int, output_dim: int,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        if modality not in ("molecule", "protein"):
            raise ConfigError(f"unknown adaptor modality {modality!r}")
        self.modality = modality
        self.proj = nn.Linear(input_dim, output_dim, dtype=dtype)
        init_linear(self.proj)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.dim() != 2 or features.shape[1] != self.proj.in_features:
            raise ShapeError(
                f"expected (n, {self.proj.in_features}) features, got {tuple(features.shape)}"
            )
        return self.proj(features)


def project_modality(features: torch.Tensor, adaptor: ModalityAdaptor) -> torch.Tensor:
    """Affine per-row projection; row count is preserved."""
    return adaptor(features)


@dataclass
class FusedPromptBatch:
    """One assembled prompt: input embeddings plus (in training mode) shifted targets."""

    embeddings: torch.Tensor                 # (T, d) LM inputs
    target_ids: torch.Tensor | None          # (T,) long, aligned with logits[t]
    loss_mask: torch.Tensor | None           # (T,) bool, true on answer tokens + EOS
    modality_positions: tuple[int, ...]      # input positions holding modality rows
    marker_positions: tuple[int, int] | None  # (open, close) marker input positions
    rendered_text: str
    modality: str                            # "molecule" | "protein" | "text"

    @property
    def length(self) -> int:
        return self.embeddings.shape[0]


def _build_batch(ids: list[int], is_answer: list[bool], pieces: list[torch.Tensor],
                 modality_positions: tuple[int, ...], marker_positions,
                 rendered: str, modality: str, training: bool) -> FusedPromptBatch:
    emb = torch.cat(pieces, dim=0)
    if training:
        return FusedPromptBatch(
            embeddings=emb[:-1],
            target_ids=torch.tensor(ids[1:], dtype=torch.long),
            loss_mask=torch.tensor(is_answer[1:], dtype=torch.bool),
            modality_positions=modality_positions,
            marker_positions=marker_positions,
            rendered_text=rendered,
            modality=modality,
        )
    return FusedPromptBatch(
        embeddings=emb,
        target_ids=None,
        loss_mask=None,
        modality_positions=modality_positions,
        marker_positions=marker_positions,
        rendered_text=rendered,
        modality=modality,
    )


def assemble_prompt(template: PromptTemplate, modality_embeddings: torch.Tensor,
                    question: str, answer: str | None, tokenizer: Tokenizer,
                    lm: DecoderLM, budget: int | None = None) -> FusedPromptBatch:
    """Splice projected modality rows into the tokenized prompt template.

    Sequence order: system ++ human prefix ++ open marker ++ modality rows ++
    close marker ++ question ++ assistant prefix ++ (answer ++ EOS when
    training).  Raises :class:`ContextOverflowError` reporting how many rows
    are over budget when the total exceeds the LM context length (or the
    tighter ``budget`` a caller passes to reserve generation room).
    """
    if modality_embeddings.dim() != 2 or modality_embeddings.shape[1] != lm.dim:
        raise ShapeError(
            f"modality rows must be (n, {lm.dim}), got {tuple(modality_embeddings.shape)}"
        )
    limit = lm.context_length if budget is None else min(budget, lm.context_length)
    n_mod = modality_embeddings.shape[0]
    pre_ids = tokenizer.encode(template.system + template.human_prefix)
    post_ids = tokenizer.encode(template.question_prefix + question + template.assistant_prefix)
    training = answer is not None
    answer_ids = tokenizer.encode(answer) + [EOS_ID] if training else []

    total = len(pre_ids) + 1 + n_mod + 1 + len(post_ids) + len(answer_ids)
    if total > limit:
        excess = total - limit
        raise ContextOverflowError(
            f"prompt of {total} positions exceeds the {limit}-position budget; "
            f"truncate {excess} modality row(s)",
            excess=excess,
        )

    head_ids = pre_ids + [template.open_marker_id]
    tail_ids = [template.close_marker_id] + post_ids + answer_ids
    ids = head_ids + [PAD_ID] * n_mod + tail_ids
    is_answer = [False] * (len(head_ids) + n_mod + 1 + len(post_ids)) + [True] * len(answer_ids)

    pieces = [
        lm.embed_tokens(torch.tensor(head_ids, dtype=torch.long)),
        modality_embeddings,
        lm.embed_tokens(torch.tensor(tail_ids, dtype=torch.long)),
    ]
    open_pos = len(pre_ids)
    modality_positions = tuple(range(open_pos + 1, open_pos + 1 + n_mod))
    marker_positions = (open_pos, open_pos + 1 + n_mod)
    rendered = template.render(question, answer)
    return _build_batch(ids, is_answer, pieces, modality_positions, marker_positions,
                        rendered, template.modality, training)


def assemble_text_prompt(question: str, answer: str | None, tokenizer: Tokenizer,
                         lm: DecoderLM, context: str | None = None) -> FusedPromptBatch:
    """Pure-text QA prompt (no modality rows or markers)."""
    prompt = text_qa_prompt(question, context)
    prompt_ids = tokenizer.encode(prompt)
    training = answer is not None
    answer_ids = tokenizer.encode(answer) + [EOS_ID] if training else []
    ids = prompt_ids + answer_ids
    total = len(ids)
    if total > lm.context_length:
        raise ContextOverflowError(
            f"text prompt of {total} tokens exceeds context {lm.context_length}",
            excess=total - lm.context_length,
        )
    is_answer = [False] * len(prompt_ids) + [True] * len(answer_ids)
    pieces = [lm.embed_tokens(torch.tensor(ids, dtype=torch.long))]
    rendered = prompt if answer is None else prompt + answer
    return _build_batch(ids, is_answer, pieces, (), None, rendered, "text", training)


def collate(batches: list[FusedPromptBatch]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Right-pad training batches into (B, T, d) embeddings with aligned targets/mask.

    Padding sits strictly after each sample's real positions, so with causal
    attention it cannot influence any masked-loss position.
    """
    if not batches:
        raise ShapeError("empty batch")
    if any(b.target_ids is None for b in batches):
        raise ShapeError("collate requires training-mode batches (with targets)")
    width = max(b.length for b in batches)
    dim = batches[0].embeddings.shape[1]
    dtype = batches[0].embeddings.dtype
    rows = []
    targets = torch.full((len(batches), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros(len(batches), width, dtype=torch.bool)
    for k, b in enumerate(batches):
        pad = width - b.length
        emb = b.embeddings
        if pad:
            emb = torch.cat([emb, torch.zeros(pad, dim, dtype=dtype)], dim=0)
        rows.append(emb)
        targets[k, : b.length] = b.target_ids
        mask[k, : b.length] = b.loss_mask
    return torch.stack(rows, dim=0), targets, mask


@dataclass(frozen=True)
class FreezePolicy:
    lm_frozen: bool = False
    encoders_frozen: bool = False


class ModelBundle(nn.Module):
    """All trainable components plus the tokenizer, addressed by stable names."""

    def __init__(self, tokenizer: Tokenizer, lm: DecoderLM, mol_encoder: GINEncoder,
                 protein_encoder: ProteinEncoder, mol_adaptor: ModalityAdaptor,
                 protein_adaptor: ModalityAdaptor):
        super().__init__()
        self.tokenizer = tokenizer
        self.lm = lm
        self.mol_encoder = mol_encoder
        self.protein_encoder = protein_encoder
        self.mol_adaptor = mol_adaptor
        self.protein_adaptor = protein_adaptor

    # -- component views -------------------------------------------------
    def encoder_modules(self) -> list[nn.Module]:
        return [self.mol_encoder, self.protein_encoder, self.mol_adaptor, self.protein_adaptor]

    def apply_freeze(self, policy: FreezePolicy) -> None:
        for p in self.lm.parameters():
            p.requires_grad_(not policy.lm_frozen)
        for module in self.encoder_modules():
            for p in module.parameters():
                p.requires_grad_(not policy.encoders_frozen)

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_parameter_names(self) -> list[str]:
        return [name for name, p in self.named_parameters() if not p.requires_grad]

    # -- modality features ------------------------------------------------
    def molecule_rows(self, graph: MolecularGraph) -> torch.Tensor:
        return self.mol_adaptor(self.mol_encoder(graph))

    def protein_rows(self, seq: ProteinSequence) -> torch.Tensor:
        return self.protein_adaptor(self.protein_encoder(seq))

    def assemble(self, entity, question: str, answer: str | None = None,
                 context: str | None = None, truncate: bool = False,
                 budget: int | None = None) -> FusedPromptBatch:
        """Build the prompt for a molecule, protein, or text-only sample.

        With ``truncate=True``, a context overflow drops modality rows from
        the end (never question or answer tokens) and retries once.
        """
        if entity is None:
            return assemble_text_prompt(question, answer, self.tokenizer, self.lm, context)
        if isinstance(entity, MolecularGraph):
            template, rows = MOLECULE_TEMPLATE, self.molecule_rows(entity)
        elif isinstance(entity, ProteinSequence):
            template, rows = PROTEIN_TEMPLATE, self.protein_rows(entity)
        else:
            raise ShapeError(f"unsupported entity type {type(entity).__name__}")
        try:
            return assemble_prompt(template, rows, question, answer, self.tokenizer,
                                   self.lm, budget=budget)
        except ContextOverflowError as err:
            if not truncate:
                raise
            keep = rows.shape[0] - err.excess
            if keep < 0:
                raise
            return assemble_prompt(template, rows[:keep], question, answer,
                                   self.tokenizer, self.lm, budget=budget)

    # -- inference ---------------------------------------------------------
    def answer_question(self, entity, question: str,
                        decoding: DecodingConfig = DecodingConfig(),
                        context: str | None = None) -> str:
        # reserve one context slot so generation always has room to start
        batch = self.assemble(entity, question, answer=None, context=context,
                              truncate=True, budget=self.lm.context_length - 1)
        return generate(self.lm, batch.embeddings, self.tokenizer, decoding)

    @torch.no_grad()
    def option_scores(self, question: str, options: list[str],
                      context: str | None = None) -> list[float]:
        """Length-normalized log-likelihood of each option after the text-QA prompt."""
        prefix_ids = self.tokenizer.encode(text_qa_prompt(question, context))
        scores: list[float] = []
        for option in options:
            option_ids = self.tokenizer.encode(option)
            if not option_ids:
                scores.append(float("-inf"))
                continue
            full = prefix_ids + option_ids
            if len(full) > self.lm.context_length:
                crop = len(full) - self.lm.context_length
                if crop >= len(prefix_ids):
                    raise ShapeError(
                        f"option of {len(option_ids)} tokens cannot fit in context "
                        f"{self.lm.context_length}"
                    )
                full = full[crop:]
            logits = self.lm.forward_ids(torch.tensor(full, dtype=torch.long))
            log_probs = torch.log_softmax(logits, dim=-1)
            start = len(full) - len(option_ids)
            total = 0.0
            for k, token_id in enumerate(option_ids):
                total += float(log_probs[start - 1 + k, token_id])
            scores.append(total / len(option_ids))
        return scores


def batch_loss(bundle: ModelBundle, batches: list[FusedPromptBatch]) -> torch.Tensor:
    """Pooled masked loss over a list of training batches."""
    embeddings, targets, mask = collate(batches)
    logits = bundle.lm.forward_embeddings(embeddings)
    return autoregressive_loss(logits, targets, mask)


def _snapshot(module: nn.Module) -> list[torch.Tensor]:
    return [p.detach().clone() for p in module.parameters()]


def _audit_unchanged(module: nn.Module, before: list[torch.Tensor], what: str) -> None:
    for p, prior in zip(module.parameters(), before):
        if not torch.equal(p.detach(), prior):
            raise FreezeViolationError(f"{what} parameter changed during a step that froze it")


def alignment_train_step(bundle: ModelBundle, batches: list[FusedPromptBatch],
                         optimizer: torch.optim.Optimizer,
                         scheduler=None) -> float:
    """One optimizer step training encoders+adaptors against a frozen LM.

    The LM must be freeze-annotated (``requires_grad=False``); its parameters
    are snapshotted and re-checked after the step, so any leak through the
    optimizer raises :class:`FreezeViolationError`.
    """
    if any(p.requires_grad for p in bundle.lm.parameters()):
        raise ConfigError("alignment step requires a frozen LM (apply_freeze with lm_frozen=True)")
    lm_before = _snapshot(bundle.lm)
    loss = batch_loss(bundle, batches)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    _audit_unchanged(bundle.lm, lm_before, "a frozen LM")
    return float(loss.detach())


def qa_finetune_step(bundle: ModelBundle, batches: list[FusedPromptBatch],
                     optimizer: torch.optim.Optimizer, scheduler=None) -> float:
    """One optimizer step of text-only QA fine-tuning; updates the LM only."""
    if not all(p.requires_grad for p in bundle.lm.parameters()):
        raise ConfigError("QA fine-tuning requires a trainable LM (frozen-LM config rejected)")
    for b in batches:
        if b.modality_positions:
            raise ConfigError("QA fine-tuning takes text-only prompts (modality rows found)")
    snapshots = [_snapshot(m) for m in bundle.encoder_modules()]
    loss = batch_loss(bundle, batches)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    if scheduler is not None:
        scheduler.step()
    for module, before in zip(bundle.encoder_modules(), snapshots):
        _audit_unchanged(module, before, "an encoder/adaptor")
    return float(loss.detach())
