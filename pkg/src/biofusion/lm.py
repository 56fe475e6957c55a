"""Decoder-only autoregressive LM operating on token ids or pre-fused embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import EmptyMaskError, NaNLossError, ShapeError
from .layers import TransformerBlock
from .tokenizer import EOS_ID, PAD_ID, Tokenizer


@dataclass(frozen=True)
class DecodingConfig:
    greedy: bool = True
    temperature: float = 1.0
    seed: int = 0
    max_new_tokens: int = 64


class DecoderLM(nn.Module):
    """Causal transformer with tied input/output embeddings.

    ``forward_embeddings`` accepts an already-built embedding sequence (the
    fusion module splices modality rows into text-token embeddings before
    calling it) and adds learned positional embeddings internally, so spliced
    rows receive position information exactly like text tokens.
    """

    def __init__(self, vocab_size: int, dim: int = 128, num_blocks: int = 4,
                 num_heads: int = 4, context_length: int = 256,
                 dtype: torch.dtype = torch.float64):
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = dim
        self.context_length = context_length
        self.dtype = dtype
        self.token_embedding = nn.Embedding(vocab_size, dim, dtype=dtype)
        self.position_embedding = nn.Embedding(context_length, dim, dtype=dtype)
        nn.init.trunc_normal_(self.token_embedding.weight, std=0.02)
        nn.init.trunc_normal_(self.position_embedding.weight, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(dim, num_heads, causal=True, dtype=dtype)
            for _ in range(num_blocks)
        )
        self.final_norm = nn.LayerNorm(dim, dtype=dtype)

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        """Token embeddings without positions (positions are added at forward time)."""
        return self.token_embedding(ids)

    def forward_embeddings(self, embeddings: torch.Tensor) -> torch.Tensor:
        """Map (T, d) or (B, T, d) embeddings to next-token logits of the same leading shape."""
        squeeze = embeddings.dim() == 2
        if squeeze:
            embeddings = embeddings.unsqueeze(0)
        if embeddings.dim() != 3:
            raise ShapeError(f"expected (T, d) or (B, T, d) embeddings, got {tuple(embeddings.shape)}")
        b, t, d = embeddings.shape
        if d != self.dim:
            raise ShapeError(f"embedding dim {d} does not match model dim {self.dim}")
        if t > self.context_length:
            raise ShapeError(f"sequence length {t} exceeds context length {self.context_length}")
        if t == 0:
            raise ShapeError("empty input sequence")

        positions = torch.arange(t, dtype=torch.long)
        x = embeddings + self.position_embedding(positions).unsqueeze(0)
        for block in self.blocks:
            x = block(x)
        x = self.final_norm(x)
        logits = x @ self.token_embedding.weight.t()
        return logits.squeeze(0) if squeeze else logits

    def forward_ids(self, ids: torch.Tensor) -> torch.Tensor:
        return self.forward_embeddings(self.embed_tokens(ids))


def autoregressive_loss(logits: torch.Tensor, targets: torch.Tensor,
                        mask: torch.Tensor) -> torch.Tensor:
    """Mean over masked positions of -log softmax(logits)[target].

    ``logits[..., t, :]`` scores the token at target position t, so callers
    supply already-shifted targets.  Positions where ``mask`` is false do not
    contribute; their target values are ignored entirely.
    """
    if logits.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ShapeError(
            f"misaligned loss inputs: logits {tuple(logits.shape)}, "
            f"targets {tuple(targets.shape)}, mask {tuple(mask.shape)}"
        )
    if not bool(mask.any()):
        raise EmptyMaskError("loss mask selects no positions")
    log_probs = torch.log_softmax(logits, dim=-1)
    picked = log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -picked[mask].mean()


def lr_schedule(step: int, total_steps: int, warmup_frac: float = 0.03) -> float:
    """Linear warmup for warmup_frac of steps, then cosine decay to zero."""
    warmup_steps = max(1, int(round(warmup_frac * total_steps)))
    if step < warmup_steps:
        return (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return 1.0
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return 0.5 * (1.0 + math.cos(math.pi * progress))


def make_optimizer(params, learning_rate: float, total_steps: int, warmup_frac: float = 0.03):
    """Adam with the package-wide warmup+cosine schedule attached."""
    optimizer = torch.optim.Adam(params, lr=learning_rate)
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lr_lambda=lambda step: lr_schedule(step, total_steps, warmup_frac)
    )
    return optimizer, scheduler


def _pad_batch(chunks: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Right-pad id chunks into (inputs, targets, mask) batch tensors."""
    width = max(len(c) for c in chunks) - 1
    inputs = torch.full((len(chunks), width), PAD_ID, dtype=torch.long)
    targets = torch.full((len(chunks), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros(len(chunks), width, dtype=torch.bool)
    for row, chunk in enumerate(chunks):
        n = len(chunk) - 1
        inputs[row, :n] = torch.tensor(chunk[:-1], dtype=torch.long)
        targets[row, :n] = torch.tensor(chunk[1:], dtype=torch.long)
        mask[row, :n] = True
    return inputs, targets, mask


def train_lm(model: DecoderLM, chunks: list[list[int]], learning_rate: float,
             max_steps: int, batch_size: int, seed: int = 0,
             warmup_frac: float = 0.03) -> list[tuple[int, float]]:
    """Autoregressive training over all token positions of the given chunks.

    Returns the per-step loss trace as (step, loss) pairs.  Batches are drawn
    with a seeded generator so the trace is reproducible.  A non-finite loss
    aborts with :class:`NaNLossError`.
    """
    usable = [c[: model.context_length + 1] for c in chunks if len(c) >= 2]
    if not usable:
        raise ShapeError("no trainable chunks (each needs at least 2 tokens)")
    generator = torch.Generator().manual_seed(seed)
    optimizer, scheduler = make_optimizer(model.parameters(), learning_rate, max_steps, warmup_frac)

    trace: list[tuple[int, float]] = []
    for step in range(max_steps):
        if learning_rate == 0.0:
            # keep the trace well-defined without perturbing optimizer state
            pick = torch.randperm(len(usable), generator=generator)[:batch_size]
            batch = [usable[i] for i in pick.tolist()]
            inputs, targets, mask = _pad_batch(batch)
            with torch.no_grad():
                loss = autoregressive_loss(model.forward_ids(inputs), targets, mask)
            trace.append((step, float(loss)))
            continue
        pick = torch.randperm(len(usable), generator=generator)[:batch_size]
        batch = [usable[i] for i in pick.tolist()]
        inputs, targets, mask = _pad_batch(batch)
        logits = model.forward_ids(inputs)
        loss = autoregressive_loss(logits, targets, mask)
        if not torch.isfinite(loss):
            raise NaNLossError(f"non-finite loss {float(loss.detach())} at step {step}")
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        scheduler.step()
        trace.append((step, float(loss.detach())))
    return trace


def write_loss_csv(trace: list[tuple[int, float]], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in trace:
            writer.writerow([step, f"{loss:.10f}"])


@torch.no_grad()
def generate(model: DecoderLM, prefix_embeddings: torch.Tensor, tokenizer: Tokenizer,
             decoding: DecodingConfig = DecodingConfig()) -> str:
    """Decode text continuing a prefix of embeddings; stops at EOS or max_new_tokens."""
    if prefix_embeddings.dim() != 2:
        raise ShapeError(f"expected a (T, d) prefix, got {tuple(prefix_embeddings.shape)}")
    if prefix_embeddings.shape[0] >= model.context_length:
        raise ShapeError(
            f"prefix length {prefix_embeddings.shape[0]} leaves no room in context "
            f"{model.context_length}"
        )
    generator = torch.Generator().manual_seed(decoding.seed)
    seq = prefix_embeddings
    out_ids: list[int] = []
    for _ in range(decoding.max_new_tokens):
        logits = model.forward_embeddings(seq)[-1]
        if decoding.greedy:
            next_id = int(torch.argmax(logits))
        else:
            probs = torch.softmax(logits / decoding.temperature, dim=-1)
            next_id = int(torch.multinomial(probs, 1, generator=generator))
        if next_id == EOS_ID:
            break
        out_ids.append(next_id)
        if seq.shape[0] + 1 > model.context_length:
            break
        seq = torch.cat([seq, model.embed_tokens(torch.tensor([next_id]))], dim=0)
    return tokenizer.decode(out_ids)
