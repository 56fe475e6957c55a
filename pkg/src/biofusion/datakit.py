"""Dataset curation: corpus cleaning, QA builders, splits, and benchmark IO.

Everything here is a pure function of its inputs plus an explicit seed, so two
runs over the same files produce byte-identical JSONL. Each pipeline stage can
append an in/out/dropped line to a :class:`StatsManifest` so record counts are
conserved and auditable.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .chem import parse_smiles
from .errors import AlphabetError, ConfigError, FormatError, ParseError, SchemaError
from .protein import validate_sequence
from .tokenizer import Tokenizer

MOLECULE_QUESTION = "please describe the molecule"

PROTEIN_QUESTIONS = {
    "function": "What is the function of this protein?",
    "official_name": "What is the official name of this protein?",
    "family": "Which protein family does this protein belong to?",
    "subcellular_location": "Where is this protein subcellularly located?",
}

SPLIT_NAMES = ("train", "val", "test")


# ---------------------------------------------------------------------------
# record types


@dataclass(frozen=True)
class TaggedSpan:
    """Half-open character range ``[start, end)`` marked for removal."""

    kind: str
    start: int
    end: int


@dataclass(frozen=True)
class CorpusDoc:
    doc_id: str
    title: str
    body: str
    pmid: str | None = None
    pmcid: str | None = None
    spans: tuple[TaggedSpan, ...] = ()
    metadata: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class QARecord:
    """One question-answer pair about a molecule, protein, or plain context."""

    record_id: str
    question: str
    answer: str
    question_type: str
    smiles: str | None = None
    sequence: str | None = None
    context: str | None = None
    split: str = ""

    @property
    def entity_id(self) -> str:
        """Grouping key: the record id up to the first ``#``."""
        return self.record_id.split("#", 1)[0]


@dataclass(frozen=True)
class MCQRecord:
    question: str
    options: tuple[str, ...]
    gold: int
    context: str | None = None

    def __post_init__(self):
        if len(self.options) < 2:
            raise ValueError("multiple-choice record needs at least 2 options")
        if len(set(self.options)) != len(self.options):
            raise ValueError("options must be distinct")
        if not 0 <= self.gold < len(self.options):
            raise ValueError(
                f"gold index {self.gold} out of range for {len(self.options)} options"
            )


@dataclass(frozen=True)
class StageStats:
    stage: str
    records_in: int
    records_out: int
    records_dropped: int
    tokens: int | None = None

    @property
    def conserved(self) -> bool:
        return self.records_in == self.records_out + self.records_dropped


@dataclass
class StatsManifest:
    stages: list[StageStats] = field(default_factory=list)

    def add(self, stats: StageStats) -> None:
        self.stages.append(stats)

    def to_json(self) -> str:
        payload = []
        for s in self.stages:
            row = {
                "stage": s.stage,
                "in": s.records_in,
                "out": s.records_out,
                "dropped": s.records_dropped,
            }
            if s.tokens is not None:
                row["tokens"] = s.tokens
            payload.append(row)
        return json.dumps({"stages": payload}, ensure_ascii=False, indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def _record_stage(manifest: StatsManifest | None, stage: str, n_in: int, n_out: int,
                  tokens: int | None = None) -> None:
    if manifest is not None:
        manifest.add(StageStats(stage, n_in, n_out, n_in - n_out, tokens))


# ---------------------------------------------------------------------------
# corpus processing


def filter_biomedical(docs: Sequence[CorpusDoc], id_allowlist: Iterable[str],
                      manifest: StatsManifest | None = None) -> list[CorpusDoc]:
    """Keep docs whose pmid or pmcid is allowlisted, with full text, once per id.

    Docs whose body is empty (after stripping whitespace) are dropped, and a
    second doc sharing a pmid or pmcid with an earlier kept doc is dropped.
    """
    allowed = set(id_allowlist)
    kept: list[CorpusDoc] = []
    seen_ids: set[str] = set()
    for doc in docs:
        ids = [i for i in (doc.pmid, doc.pmcid) if i is not None]
        if not any(i in allowed for i in ids):
            continue
        if not doc.body.strip():
            continue
        if any(i in seen_ids for i in ids):
            continue
        seen_ids.update(ids)
        kept.append(doc)
    _record_stage(manifest, "filter_biomedical", len(docs), len(kept))
    return kept


def _merged_intervals(spans: Sequence[TaggedSpan], body_len: int) -> list[tuple[int, int]]:
    for span in spans:
        if not isinstance(span.start, int) or not isinstance(span.end, int):
            raise FormatError(f"span offsets must be integers, got {span!r}")
        if span.start < 0 or span.end > body_len or span.start > span.end:
            raise FormatError(
                f"span [{span.start}, {span.end}) out of bounds for body of length {body_len}"
            )
    merged: list[tuple[int, int]] = []
    for start, end in sorted((s.start, s.end) for s in spans):
        if start == end:
            continue
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    return merged


def strip_nonbody(doc: CorpusDoc) -> CorpusDoc:
    """Remove every tagged span from the body; untagged text is untouched.

    Segments left between removed spans are stripped of edge whitespace and
    joined with a single space. A doc with no spans is returned unchanged.
    """
    if not doc.spans:
        return doc
    merged = _merged_intervals(doc.spans, len(doc.body))
    segments: list[str] = []
    cursor = 0
    for start, end in merged:
        segments.append(doc.body[cursor:start])
        cursor = end
    segments.append(doc.body[cursor:])
    cleaned = " ".join(part for part in (seg.strip() for seg in segments) if part)
    return replace(doc, body=cleaned, spans=())


_SENTENCE_BREAK = re.compile(r"[.!?]+\s+")


def split_sentences(body: str) -> list[str]:
    """Split text into sentences, each keeping its trailing whitespace.

    A boundary is a run of ``.!?`` followed by whitespace when the next
    character is uppercase; concatenating the pieces reproduces the input.
    """
    sentences: list[str] = []
    start = 0
    for match in _SENTENCE_BREAK.finditer(body):
        end = match.end()
        if end < len(body) and body[end].isupper():
            sentences.append(body[start:end])
            start = end
    if start < len(body):
        sentences.append(body[start:])
    return sentences


_CONTINUATION_BYTE = 0x80


def _is_codepoint_boundary(raw: bytes, offset: int) -> bool:
    if offset <= 0 or offset >= len(raw):
        return True
    return (raw[offset] & 0xC0) != _CONTINUATION_BYTE


def _hard_split(sentence: str, ids: list[int], tokenizer: Tokenizer,
                max_tokens: int) -> list[tuple[str, list[int]]]:
    """Split one oversized sentence at token boundaries into ≤ max_tokens parts.

    Split points prefer offsets that land on UTF-8 codepoint boundaries so the
    part texts concatenate back to the sentence exactly.
    """
    raw = sentence.encode("utf-8")
    lengths = [len(tokenizer.token_bytes(i)) for i in ids]
    parts: list[tuple[str, list[int]]] = []
    t, byte_at = 0, 0
    while t < len(ids):
        take = min(max_tokens, len(ids) - t)
        while take > 1 and not _is_codepoint_boundary(raw, byte_at + sum(lengths[t:t + take])):
            take -= 1
        part_ids = ids[t:t + take]
        part_bytes = raw[byte_at:byte_at + sum(lengths[t:t + take])]
        parts.append((part_bytes.decode("utf-8", errors="replace"), part_ids))
        byte_at += len(part_bytes)
        t += take
    return parts


@dataclass(frozen=True)
class SentenceChunk:
    text: str
    token_ids: tuple[int, ...]


def chunk_sentences(doc: CorpusDoc, tokenizer: Tokenizer, max_tokens: int,
                    manifest: StatsManifest | None = None) -> list[SentenceChunk]:
    """Pack whole sentences greedily into chunks of at most ``max_tokens``.

    Sentence order is preserved and a sentence that alone exceeds the budget
    is hard-split at token boundaries. Chunk texts concatenate back to the
    body.
    """
    if max_tokens < 16:
        raise ConfigError(f"max_tokens must be at least 16, got {max_tokens}")
    chunks: list[SentenceChunk] = []
    cur_text: list[str] = []
    cur_ids: list[int] = []

    def flush():
        if cur_ids:
            chunks.append(SentenceChunk("".join(cur_text), tuple(cur_ids)))
            cur_text.clear()
            cur_ids.clear()

    for sentence in split_sentences(doc.body):
        ids = tokenizer.encode(sentence)
        if len(ids) > max_tokens:
            flush()
            for part_text, part_ids in _hard_split(sentence, ids, tokenizer, max_tokens):
                chunks.append(SentenceChunk(part_text, tuple(part_ids)))
            continue
        if cur_ids and len(cur_ids) + len(ids) > max_tokens:
            flush()
        cur_text.append(sentence)
        cur_ids.extend(ids)
    flush()
    total_tokens = sum(len(c.token_ids) for c in chunks)
    _record_stage(manifest, f"chunk_sentences:{doc.doc_id}", len(chunks), len(chunks),
                  tokens=total_tokens)
    return chunks


# ---------------------------------------------------------------------------
# QA builders


def _words(text: str) -> list[str]:
    return text.split()


def build_pubchemqa(raw_pairs: Sequence[tuple[str, str, str]],
                    manifest: StatsManifest | None = None,
                    log: Callable[[str], None] | None = None) -> list[QARecord]:
    """Turn (cid, smiles, description) rows into molecule QA records.

    Rows with unparseable SMILES or descriptions under 4 words are dropped;
    descriptions over 256 words are cropped to the first 256. Every record
    asks the same fixed question. Repeat cids get ``cid#k`` record ids.
    """
    records: list[QARecord] = []
    per_cid: dict[str, int] = {}
    for cid, smiles, description in raw_pairs:
        try:
            parse_smiles(smiles)
        except ParseError as err:
            if log is not None:
                log(f"drop cid {cid}: {err}")
            continue
        words = _words(description)
        if len(words) < 4:
            if log is not None:
                log(f"drop cid {cid}: description has {len(words)} words")
            continue
        answer = " ".join(words[:256])
        k = per_cid.get(cid, 0)
        per_cid[cid] = k + 1
        record_id = cid if k == 0 else f"{cid}#{k}"
        records.append(QARecord(record_id=record_id, question=MOLECULE_QUESTION,
                                answer=answer, question_type="description",
                                smiles=smiles))
    _record_stage(manifest, "build_pubchemqa", len(raw_pairs), len(records))
    return records


def pubchemqa_counts(records: Sequence[QARecord]) -> tuple[int, int]:
    """(unique molecules, molecule-text pairs) for a built record set."""
    return len({r.entity_id for r in records}), len(records)


def build_uniprotqa(entries: Sequence[Mapping[str, str]],
                    manifest: StatsManifest | None = None,
                    log: Callable[[str], None] | None = None) -> list[QARecord]:
    """Turn annotated protein entries into QA records, one per annotation.

    Each entry carries ``accession``, ``sequence``, and any of the four
    annotation keys in :data:`PROTEIN_QUESTIONS`; a record is emitted per
    present annotation with that type's fixed question. Entries whose
    sequence fails validation are dropped whole and logged.
    """
    records: list[QARecord] = []
    n_in = 0
    for entry in entries:
        n_in += 1
        accession = entry["accession"]
        try:
            validate_sequence(entry["sequence"])
        except AlphabetError as err:
            if log is not None:
                log(f"drop accession {accession}: {err}")
            continue
        for question_type, question in PROTEIN_QUESTIONS.items():
            answer = entry.get(question_type)
            if answer is None or not str(answer).strip():
                continue
            records.append(QARecord(record_id=f"{accession}#{question_type}",
                                    question=question, answer=str(answer),
                                    question_type=question_type,
                                    sequence=entry["sequence"].upper()))
    _record_stage(manifest, "build_uniprotqa", n_in, len(records))
    return records


def uniprotqa_counts(records: Sequence[QARecord]) -> tuple[int, int]:
    """(unique proteins, question-answering samples) for a built record set."""
    return len({r.entity_id for r in records}), len(records)


# ---------------------------------------------------------------------------
# splitting


def split_dataset(records: Sequence[QARecord], seed: int,
                  ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                  group_key: Callable[[QARecord], str] | None = None) -> list[QARecord]:
    """Assign train/val/test tags deterministically, keeping entities together.

    Target sizes are floor allocations of the normalized ratios with the
    remainder going to train. Groups (all records sharing an entity id) are
    shuffled by the seed and each lands wholly in the split with the largest
    remaining deficit, ties favoring train, then val. Output order equals
    input order.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"ratios must be 3 non-negative numbers, got {ratios!r}")
    total_ratio = sum(ratios)
    if total_ratio <= 0:
        raise ConfigError("ratios must not all be zero")
    if group_key is None:
        group_key = lambda record: record.entity_id

    n = len(records)
    normalized = [r / total_ratio for r in ratios]
    targets = [int(n * r) for r in normalized]
    targets[0] += n - sum(targets)

    groups: dict[str, list[int]] = {}
    for idx, record in enumerate(records):
        groups.setdefault(group_key(record), []).append(idx)
    group_names = list(groups)
    random.Random(seed).shuffle(group_names)

    assigned = [0, 0, 0]
    split_of_index: dict[int, str] = {}
    for name in group_names:
        deficits = [targets[i] - assigned[i] for i in range(3)]
        choice = max(range(3), key=lambda i: (deficits[i], -i))
        for idx in groups[name]:
            split_of_index[idx] = SPLIT_NAMES[choice]
        assigned[choice] += len(groups[name])
    return [replace(record, split=split_of_index[idx])
            for idx, record in enumerate(records)]


# ---------------------------------------------------------------------------
# JSONL IO


def _write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                raise SchemaError(f"invalid JSON ({err.msg})", line=line_no) from err
            if not isinstance(row, dict):
                raise SchemaError("each line must hold a JSON object", line=line_no)
            yield line_no, row


def _require(row: dict, key: str, line_no: int):
    if key not in row:
        raise SchemaError(f"missing required field {key!r}", line=line_no)
    return row[key]


def write_corpus_jsonl(docs: Sequence[CorpusDoc], path: str | Path) -> None:
    _write_jsonl(path, (
        {
            "doc_id": d.doc_id,
            "pmid": d.pmid,
            "pmcid": d.pmcid,
            "title": d.title,
            "body": d.body,
            "spans": [{"kind": s.kind, "start": s.start, "end": s.end} for s in d.spans],
        }
        for d in docs
    ))


def read_corpus_jsonl(path: str | Path) -> list[CorpusDoc]:
    docs = []
    for line_no, row in _read_jsonl(path):
        spans_raw = row.get("spans", [])
        if not isinstance(spans_raw, list):
            raise SchemaError("'spans' must be a list", line=line_no)
        try:
            spans = tuple(TaggedSpan(kind=s["kind"], start=s["start"], end=s["end"])
                          for s in spans_raw)
        except (KeyError, TypeError) as err:
            raise SchemaError(f"malformed span entry: {err}", line=line_no) from err
        docs.append(CorpusDoc(
            doc_id=str(_require(row, "doc_id", line_no)),
            pmid=row.get("pmid"),
            pmcid=row.get("pmcid"),
            title=str(row.get("title", "")),
            body=str(_require(row, "body", line_no)),
            spans=spans,
        ))
    return docs


def write_qa_jsonl(records: Sequence[QARecord], path: str | Path) -> None:
    rows = []
    for r in records:
        if r.smiles is not None:
            rows.append({"cid": r.entity_id, "smiles": r.smiles, "question": r.question,
                         "answer": r.answer, "split": r.split})
        elif r.sequence is not None:
            rows.append({"accession": r.entity_id, "sequence": r.sequence,
                         "question_type": r.question_type, "question": r.question,
                         "answer": r.answer, "split": r.split})
        else:
            rows.append({"record_id": r.record_id, "context": r.context,
                         "question": r.question, "answer": r.answer, "split": r.split})
    _write_jsonl(path, rows)


def read_qa_jsonl(path: str | Path) -> list[QARecord]:
    records = []
    counters: dict[str, int] = {}
    for line_no, row in _read_jsonl(path):
        question = str(_require(row, "question", line_no))
        answer = str(_require(row, "answer", line_no))
        split = str(row.get("split", ""))
        if "cid" in row:
            cid = str(row["cid"])
            k = counters.get(cid, 0)
            counters[cid] = k + 1
            record_id = cid if k == 0 else f"{cid}#{k}"
            records.append(QARecord(record_id=record_id, question=question, answer=answer,
                                    question_type="description",
                                    smiles=str(_require(row, "smiles", line_no)),
                                    split=split))
        elif "accession" in row:
            question_type = str(_require(row, "question_type", line_no))
            if question_type not in PROTEIN_QUESTIONS:
                raise SchemaError(f"unknown question_type {question_type!r}", line=line_no)
            records.append(QARecord(record_id=f"{row['accession']}#{question_type}",
                                    question=question, answer=answer,
                                    question_type=question_type,
                                    sequence=str(_require(row, "sequence", line_no)),
                                    split=split))
        else:
            records.append(QARecord(record_id=str(_require(row, "record_id", line_no)),
                                    question=question, answer=answer,
                                    question_type=str(row.get("question_type", "text")),
                                    context=row.get("context"), split=split))
    return records


def read_pubchem_raw(path: str | Path) -> list[tuple[str, str, str]]:
    """Load raw (cid, smiles, description) rows from JSONL."""
    rows = []
    for line_no, row in _read_jsonl(path):
        rows.append((str(_require(row, "cid", line_no)),
                     str(_require(row, "smiles", line_no)),
                     str(_require(row, "description", line_no))))
    return rows


def read_uniprot_raw(path: str | Path) -> list[dict]:
    """Load raw annotated protein entries from JSONL."""
    entries = []
    for line_no, row in _read_jsonl(path):
        _require(row, "accession", line_no)
        _require(row, "sequence", line_no)
        entries.append(row)
    return entries


MCQ_FORMATS = ("medmcqa-like", "pubmedqa-like", "usmle-like")
PUBMEDQA_OPTIONS = ("yes", "no", "maybe")


def load_mcq_benchmark(path: str | Path, format: str) -> list[MCQRecord]:
    """Load a multiple-choice benchmark file into normalized records.

    medmcqa-like and usmle-like files already carry explicit option lists;
    pubmedqa-like files carry a yes/no/maybe answer that maps onto the fixed
    option order ``yes, no, maybe`` with the context attached.
    """
    if format not in MCQ_FORMATS:
        raise ConfigError(f"unknown benchmark format {format!r}; expected one of {MCQ_FORMATS}")
    records = []
    for line_no, row in _read_jsonl(path):
        question = str(_require(row, "question", line_no))
        if format == "pubmedqa-like":
            answer = str(_require(row, "answer", line_no)).strip().lower()
            if answer not in PUBMEDQA_OPTIONS:
                raise SchemaError(
                    f"answer must be one of {PUBMEDQA_OPTIONS}, got {answer!r}", line=line_no)
            record = MCQRecord(question=question, options=PUBMEDQA_OPTIONS,
                               gold=PUBMEDQA_OPTIONS.index(answer),
                               context=row.get("context"))
        else:
            options = _require(row, "options", line_no)
            if not isinstance(options, list) or not all(isinstance(o, str) for o in options):
                raise SchemaError("'options' must be a list of strings", line=line_no)
            gold = _require(row, "gold", line_no)
            if not isinstance(gold, int) or isinstance(gold, bool):
                raise SchemaError("'gold' must be an integer index", line=line_no)
            try:
                record = MCQRecord(question=question, options=tuple(options), gold=gold,
                                   context=row.get("context"))
            except ValueError as err:
                raise SchemaError(str(err), line=line_no) from err
        records.append(record)
    return records


def save_mcq_benchmark(records: Sequence[MCQRecord], path: str | Path) -> None:
    rows = []
    for r in records:
        row = {"question": r.question, "options": list(r.options), "gold": r.gold}
        if r.context is not None:
            row["context"] = r.context
        rows.append(row)
    _write_jsonl(path, rows)
