"""Generation and multiple-choice evaluation drivers over a model bundle."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .chem import parse_smiles
from .datakit import MCQRecord, QARecord
from .errors import EmptyInputError
from .lm import DecodingConfig
from .metrics import bleu_n, meteor, rouge_l, rouge_n
from .protein import validate_sequence


@dataclass(frozen=True)
class GenEvalReport:
    bleu2: float
    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float
    meteor: float
    sample_count: int
    failures: int = 0

    def __post_init__(self):
        for name in ("bleu2", "bleu4", "rouge1", "rouge2", "rougeL", "meteor"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.sample_count <= 0:
            raise ValueError("sample_count must be positive")

    def to_json(self) -> str:
        return json.dumps({
            "bleu2": self.bleu2, "bleu4": self.bleu4,
            "rouge1": self.rouge1, "rouge2": self.rouge2, "rougeL": self.rougeL,
            "meteor": self.meteor,
            "sample_count": self.sample_count, "failures": self.failures,
        }, indent=2)


@dataclass(frozen=True)
class MCQEvalReport:
    accuracy: float
    correct: int
    total: int
    predictions: tuple[int, ...]
    option_scores: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if self.total <= 0:
            raise ValueError("total must be positive")
        if self.accuracy != self.correct / self.total:
            raise ValueError("accuracy must equal correct/total exactly")

    def to_json(self) -> str:
        return json.dumps({
            "accuracy": self.accuracy, "correct": self.correct, "total": self.total,
            "predictions": list(self.predictions),
            "option_scores": [list(row) for row in self.option_scores],
        }, indent=2)


def entity_of(record: QARecord):
    """Parse the record's payload into the object the model bundle consumes."""
    if record.smiles is not None:
        return parse_smiles(record.smiles)
    if record.sequence is not None:
        return validate_sequence(record.sequence)
    return None


def gen_eval(bundle, records: Sequence[QARecord],
             decoding: DecodingConfig = DecodingConfig(),
             predictions_path: str | Path | None = None,
             log: Callable[[str], None] | None = None) -> GenEvalReport:
    """Generate an answer per record and score it against the gold answer.

    Records whose entity fails to parse or whose generation raises are
    logged, counted as failures, and excluded from the metrics. Per-sample
    predictions can be written as JSONL for audit.
    """
    if not records:
        raise EmptyInputError("no records to evaluate")
    predictions: list[str] = []
    golds: list[str] = []
    rows: list[dict] = []
    failures = 0
    for record in records:
        try:
            entity = entity_of(record)
            prediction = bundle.answer_question(entity, record.question, decoding,
                                                context=record.context)
        except Exception as err:  # noqa: BLE001 - per-record isolation is the contract
            failures += 1
            if log is not None:
                log(f"record {record.record_id} failed: {err}")
            continue
        predictions.append(prediction)
        golds.append(record.answer)
        rows.append({"record_id": record.record_id, "prediction": prediction,
                     "gold": record.answer})
    if predictions_path is not None:
        with open(predictions_path, "w", encoding="utf-8") as handle:
            for row in rows:
                handle.write(json.dumps(row, ensure_ascii=False) + "\n")
    if not predictions:
        raise EmptyInputError(f"all {failures} records failed evaluation")
    return GenEvalReport(
        bleu2=bleu_n(predictions, golds, 2),
        bleu4=bleu_n(predictions, golds, 4),
        rouge1=rouge_n(predictions, golds, 1),
        rouge2=rouge_n(predictions, golds, 2),
        rougeL=rouge_l(predictions, golds),
        meteor=meteor(predictions, golds),
        sample_count=len(predictions),
        failures=failures,
    )


def mcq_accuracy(bundle, records: Sequence[MCQRecord]) -> MCQEvalReport:
    """Score each option by likelihood and count argmax matches (ties → index 0)."""
    if not records:
        raise EmptyInputError("no records to evaluate")
    predictions: list[int] = []
    all_scores: list[tuple[float, ...]] = []
    correct = 0
    for record in records:
        scores = bundle.option_scores(record.question, list(record.options),
                                      context=record.context)
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        predictions.append(best)
        all_scores.append(tuple(scores))
        if best == record.gold:
            correct += 1
    return MCQEvalReport(
        accuracy=correct / len(records),
        correct=correct,
        total=len(records),
        predictions=tuple(predictions),
        option_scores=tuple(all_scores),
    )
