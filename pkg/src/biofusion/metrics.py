"""Text-generation metrics: corpus BLEU, ROUGE-1/2/L, and exact-match METEOR.

All kernels share one tokenization — lowercase, split on whitespace and
punctuation — and return values in [0, 1]. Each candidate may carry one
reference string or a list of alternatives; scores against alternatives take
the per-sample maximum (clipped-count pooling for BLEU).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from typing import Sequence

from .errors import EmptyInputError, ShapeError

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; keeps alphanumeric runs."""
    return _TOKEN.findall(text.lower())


def _normalize(candidates: Sequence[str],
               references: Sequence) -> tuple[list[list[str]], list[list[list[str]]]]:
    if len(candidates) != len(references):
        raise ShapeError(
            f"got {len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise EmptyInputError("no samples to score")
    cand_tokens = [tokenize(c) for c in candidates]
    ref_tokens = []
    for ref in references:
        group = [ref] if isinstance(ref, str) else list(ref)
        if not group:
            raise EmptyInputError("a sample has no references")
        ref_tokens.append([tokenize(r) for r in group])
    return cand_tokens, ref_tokens


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidates: Sequence[str], references: Sequence, n: int) -> float:
    """Corpus-level BLEU with uniform weights over 1..n-gram precisions.

    Modified n-gram counts are clipped per sample against the best reference
    and pooled over the corpus; the brevity penalty uses the pooled candidate
    length against the pooled closest-reference length. Any order with zero
    matches scores 0 (no smoothing).
    """
    if n < 1:
        raise ShapeError(f"n must be positive, got {n}")
    cands, refs = _normalize(candidates, references)
    matched = [0] * n
    possible = [0] * n
    cand_len = 0
    ref_len = 0
    for cand, ref_group in zip(cands, refs):
        cand_len += len(cand)
        ref_len += min((len(r) for r in ref_group),
                       key=lambda L: (abs(L - len(cand)), L))
        for order in range(1, n + 1):
            counts = _ngrams(cand, order)
            possible[order - 1] += sum(counts.values())
            clip = Counter()
            for r in ref_group:
                for gram, c in _ngrams(r, order).items():
                    clip[gram] = max(clip[gram], c)
            matched[order - 1] += sum(min(c, clip[gram]) for gram, c in counts.items())
    if any(m == 0 or p == 0 for m, p in zip(matched, possible)):
        return 0.0
    log_precision = sum(
        (1.0 / n) * math.log(m / p) for m, p in zip(matched, possible))
    brevity = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(log_precision)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def rouge_n(candidates: Sequence[str], references: Sequence, n: int) -> float:
    """Mean over samples of clipped n-gram overlap F1."""
    if n < 1:
        raise ShapeError(f"n must be positive, got {n}")
    cands, refs = _normalize(candidates, references)
    scores = []
    for cand, ref_group in zip(cands, refs):
        cand_counts = _ngrams(cand, n)
        best = 0.0
        for r in ref_group:
            ref_counts = _ngrams(r, n)
            overlap = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
            total_c = sum(cand_counts.values())
            total_r = sum(ref_counts.values())
            p = overlap / total_c if total_c else 0.0
            rec = overlap / total_r if total_r else 0.0
            best = max(best, _f1(p, rec))
        scores.append(best)
    return sum(scores) / len(scores)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidates: Sequence[str], references: Sequence) -> float:
    """Mean over samples of longest-common-subsequence F1."""
    cands, refs = _normalize(candidates, references)
    scores = []
    for cand, ref_group in zip(cands, refs):
        best = 0.0
        for r in ref_group:
            lcs = _lcs_length(cand, r)
            p = lcs / len(cand) if cand else 0.0
            rec = lcs / len(r) if r else 0.0
            best = max(best, _f1(p, rec))
        scores.append(best)
    return sum(scores) / len(scores)


_CHUNK_SEARCH_BUDGET = 200_000


def _min_chunks(cand: Sequence[str], ref: Sequence[str], quota: Counter) -> int:
    """Fewest chunks over all maximum exact-match alignments.

    Depth-first search over candidate positions (match to an unused reference
    occurrence or skip when quota allows), pruning branches that cannot beat
    the best chunk count found. Falls back to a greedy chunk-extending
    alignment if the node budget runs out.
    """
    ref_positions: dict[str, list[int]] = {}
    for j, tok in enumerate(ref):
        ref_positions.setdefault(tok, []).append(j)
    remaining_after: list[Counter] = [Counter() for _ in range(len(cand) + 1)]
    for i in range(len(cand) - 1, -1, -1):
        remaining_after[i] = remaining_after[i + 1].copy()
        remaining_after[i][cand[i]] += 1

    total_matches = sum(quota.values())
    best = total_matches + 1  # every alignment has at most `matches` chunks
    used = [False] * len(ref)
    nodes = 0
    exhausted = False

    def dfs(i: int, need: Counter, matched: int, last_c: int, last_r: int, chunks: int):
        nonlocal best, nodes, exhausted
        if exhausted or chunks >= best:
            return
        nodes += 1
        if nodes > _CHUNK_SEARCH_BUDGET:
            exhausted = True
            return
        if matched == total_matches:
            best = chunks
            return
        if i == len(cand):
            return
        tok = cand[i]
        if need[tok] > 0:
            for j in ref_positions.get(tok, ()):
                if used[j]:
                    continue
                used[j] = True
                need[tok] -= 1
                extends = (i == last_c + 1 and j == last_r + 1)
                dfs(i + 1, need, matched + 1, i, j, chunks if extends else chunks + 1)
                need[tok] += 1
                used[j] = False
        # skip this occurrence if later occurrences can still fill the quota
        if remaining_after[i + 1][tok] >= need[tok]:
            dfs(i + 1, need, matched, last_c, last_r, chunks)

    dfs(0, quota.copy(), 0, -2, -2, 0)
    if not exhausted:
        return best
    found = best if best <= total_matches else None

    # greedy fallback: left-to-right, prefer the reference slot that extends
    # the current chunk, else the leftmost free one
    need = quota.copy()
    used = [False] * len(ref)
    chunks, last_c, last_r = 0, -2, -2
    for i, tok in enumerate(cand):
        if need[tok] <= 0:
            continue
        slots = [j for j in ref_positions.get(tok, ()) if not used[j]]
        if not slots:
            continue
        if i == last_c + 1 and (last_r + 1) in slots:
            j = last_r + 1
        else:
            j = slots[0]
            chunks += 1
        used[j] = True
        need[tok] -= 1
        last_c, last_r = i, j
    greedy = max(chunks, 1)
    return min(found, greedy) if found is not None else greedy


def _meteor_single(cand: Sequence[str], ref: Sequence[str]) -> float:
    if not cand or not ref:
        return 0.0
    cand_counts = Counter(cand)
    ref_counts = Counter(ref)
    quota = Counter({tok: min(c, ref_counts[tok])
                     for tok, c in cand_counts.items() if ref_counts[tok]})
    matches = sum(quota.values())
    if matches == 0:
        return 0.0
    precision = matches / len(cand)
    recall = matches / len(ref)
    f_mean = 10 * precision * recall / (recall + 9 * precision)
    chunks = _min_chunks(cand, ref, quota)
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1 - penalty)


def meteor(candidates: Sequence[str], references: Sequence) -> float:
    """Mean over samples of exact-match METEOR (no stemming or synonymy).

    Unigram alignment maximizes matches, then minimizes chunks; score is
    F_mean scaled by the fragmentation penalty 0.5 * (chunks/matches)^3.
    """
    cands, refs = _normalize(candidates, references)
    scores = []
    for cand, ref_group in zip(cands, refs):
        scores.append(max(_meteor_single(cand, r) for r in ref_group))
    return sum(scores) / len(scores)
