"""Byte-level BPE tokenizer with reserved special tokens.

Ids 0..6 are special tokens, ids 7..262 are the 256 raw bytes, and learned
merges occupy ids 263 and up.  Merges are chosen by pair frequency with ties
broken lexicographically on the (left bytes, right bytes) pair, and a merge
whose result would spell a special token's literal text is skipped, so plain
text can never encode to a special id.
"""

from __future__ import annotations

import json
from collections import Counter
from pathlib import Path
from typing import Iterable

from .errors import ConfigError

BOS_ID = 0
EOS_ID = 1
PAD_ID = 2
MOLECULE_OPEN_ID = 3
MOLECULE_CLOSE_ID = 4
PROTEIN_OPEN_ID = 5
PROTEIN_CLOSE_ID = 6

SPECIAL_TOKENS = ("<bos>", "<eos>", "<pad>", "<molecule>", "</molecule>", "<protein>", "</protein>")
NUM_SPECIALS = len(SPECIAL_TOKENS)
BYTE_OFFSET = NUM_SPECIALS
BASE_VOCAB_SIZE = NUM_SPECIALS + 256

_SPECIAL_BYTES = frozenset(text.encode("utf-8") for text in SPECIAL_TOKENS)


class Tokenizer:
    """Byte-level BPE codec. ``merges`` pair existing ids in learned order."""

    def __init__(self, merges: list[tuple[int, int]] | None = None):
        self.merges: list[tuple[int, int]] = [tuple(m) for m in (merges or [])]
        # id -> raw bytes, for every non-special id
        self._bytes: dict[int, bytes] = {BYTE_OFFSET + b: bytes([b]) for b in range(256)}
        self._rank: dict[tuple[int, int], int] = {}
        for k, (a, b) in enumerate(self.merges):
            new_id = BASE_VOCAB_SIZE + k
            if a not in self._bytes or b not in self._bytes:
                raise ConfigError(f"merge {k} references unknown token ids ({a}, {b})")
            self._bytes[new_id] = self._bytes[a] + self._bytes[b]
            self._rank[(a, b)] = k

    @property
    def vocab_size(self) -> int:
        return BASE_VOCAB_SIZE + len(self.merges)

    def token_bytes(self, token_id: int) -> bytes:
        return self._bytes[token_id]

    def is_special(self, token_id: int) -> bool:
        return 0 <= token_id < NUM_SPECIALS

    def encode(self, text: str) -> list[int]:
        """Encode plain text. Never emits special ids."""
        ids = [BYTE_OFFSET + b for b in text.encode("utf-8")]
        while len(ids) > 1:
            best_rank = None
            best_pos = -1
            for pos in range(len(ids) - 1):
                rank = self._rank.get((ids[pos], ids[pos + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pos = pos
            if best_rank is None:
                break
            merged = BASE_VOCAB_SIZE + best_rank
            ids = ids[:best_pos] + [merged] + ids[best_pos + 2 :]
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        """Decode ids back to text; special ids are skipped."""
        chunks = [self._bytes[i] for i in ids if not self.is_special(i)]
        return b"".join(chunks).decode("utf-8", errors="replace")

    def save(self, path: str | Path) -> None:
        payload = {"format": "biofusion-bpe", "version": 1, "merges": [list(m) for m in self.merges]}
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Tokenizer":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != "biofusion-bpe":
            raise ConfigError(f"not a tokenizer file: {path}")
        return cls(merges=[tuple(m) for m in payload["merges"]])


def _pair_counts(sequences: list[list[int]]) -> Counter:
    counts: Counter = Counter()
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            counts[(a, b)] += 1
    return counts


def _apply_merge(seq: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out: list[int] = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and seq[i] == pair[0] and seq[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


def train_tokenizer(corpus: Iterable[str], vocab_size: int) -> Tokenizer:
    """Learn BPE merges from a stream of text lines.

    Merging stops when the vocabulary is full or no adjacent pair occurs at
    least twice (merging a singleton pair gains nothing and is unstable).
    """
    if vocab_size < BASE_VOCAB_SIZE:
        raise ConfigError(
            f"vocab_size {vocab_size} is smaller than the base alphabet + specials ({BASE_VOCAB_SIZE})"
        )
    sequences = [[BYTE_OFFSET + b for b in line.encode("utf-8")] for line in corpus]
    if not any(sequences):
        raise ConfigError("cannot train a tokenizer on an empty corpus")

    tokenizer = Tokenizer()
    token_bytes = dict(tokenizer._bytes)
    merges: list[tuple[int, int]] = []
    while BASE_VOCAB_SIZE + len(merges) < vocab_size:
        counts = _pair_counts(sequences)
        candidate = None
        candidate_key = None
        for pair, count in counts.items():
            if count < 2:
                continue
            if token_bytes[pair[0]] + token_bytes[pair[1]] in _SPECIAL_BYTES:
                continue
            key = (-count, token_bytes[pair[0]], token_bytes[pair[1]])
            if candidate_key is None or key < candidate_key:
                candidate, candidate_key = pair, key
        if candidate is None:
            break
        new_id = BASE_VOCAB_SIZE + len(merges)
        token_bytes[new_id] = token_bytes[candidate[0]] + token_bytes[candidate[1]]
        merges.append(candidate)
        sequences = [_apply_merge(seq, candidate, new_id) for seq in sequences]

    return Tokenizer(merges=merges)
