"""Protein sequence validation and a bidirectional transformer residue encoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import AlphabetError, ShapeError
from .layers import TransformerBlock

CANONICAL_AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"
RESIDUE_ALPHABET = CANONICAL_AMINO_ACIDS + "X"
_RESIDUE_INDEX = {aa: i for i, aa in enumerate(RESIDUE_ALPHABET)}


@dataclass(frozen=True)
class ProteinSequence:
    """Uppercase-normalized amino-acid string over the 21-letter alphabet."""

    residues: str

    def __post_init__(self):
        if not self.residues:
            raise ValueError("empty protein sequence")

    def __len__(self) -> int:
        return len(self.residues)


def validate_sequence(text: str) -> ProteinSequence:
    """Uppercase and validate a raw sequence; report the first bad character."""
    if not text:
        raise AlphabetError("empty protein sequence")
    upper = text.upper()
    for pos, ch in enumerate(upper):
        if ch not in _RESIDUE_INDEX:
            raise AlphabetError(f"invalid residue {ch!r} at position {pos}")
    return ProteinSequence(upper)


def residue_ids(seq: ProteinSequence) -> torch.Tensor:
    return torch.tensor([_RESIDUE_INDEX[aa] for aa in seq.residues], dtype=torch.long)


class ProteinEncoder(nn.Module):
    """Residue embedding + learned positions + pre-norm bidirectional transformer blocks.

    Sequences longer than ``max_residues`` are truncated to their prefix; the
    output row count is min(len(seq), max_residues).
    """

    def __init__(self, hidden_dim: int = 64, num_layers: int = 4, num_heads: int = 4,
                 max_residues: int = 1024, dtype: torch.dtype = torch.float64):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.max_residues = max_residues
        self.dtype = dtype
        self.residue_embedding = nn.Embedding(len(RESIDUE_ALPHABET), hidden_dim, dtype=dtype)
        self.position_embedding = nn.Embedding(max_residues, hidden_dim, dtype=dtype)
        nn.init.trunc_normal_(self.residue_embedding.weight, std=0.02)
        nn.init.trunc_normal_(self.position_embedding.weight, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(hidden_dim, num_heads, causal=False, dtype=dtype)
            for _ in range(num_layers)
        )

    def forward(self, seq: ProteinSequence, return_attention: bool = False):
        ids = residue_ids(seq)[: self.max_residues]
        if ids.numel() == 0:
            raise ShapeError("cannot encode an empty sequence")
        positions = torch.arange(ids.shape[0], dtype=torch.long)
        x = (self.residue_embedding(ids) + self.position_embedding(positions)).unsqueeze(0)

        attention_maps = []
        for block in self.blocks:
            if return_attention:
                x, weights = block(x, return_weights=True)
                attention_maps.append(weights.squeeze(0))
            else:
                x = block(x)
        features = x.squeeze(0)
        if return_attention:
            return features, attention_maps
        return features
