"""Command-line interface for dataset building, training, and evaluation.

Exit codes: 0 success, 1 data/configuration errors, 2 usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import RunConfig
from .datakit import (
    StatsManifest,
    build_pubchemqa,
    build_uniprotqa,
    chunk_sentences,
    filter_biomedical,
    load_mcq_benchmark,
    pubchemqa_counts,
    read_corpus_jsonl,
    read_pubchem_raw,
    read_qa_jsonl,
    read_uniprot_raw,
    split_dataset,
    strip_nonbody,
    uniprotqa_counts,
    write_corpus_jsonl,
    write_qa_jsonl,
)
from .errors import BiofusionError
from .evaluate import gen_eval, mcq_accuracy
from .lm import DecodingConfig
from .chem import parse_smiles
from .protein import validate_sequence
from .stages import restore_model, run_stage
from .tokenizer import Tokenizer, train_tokenizer


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _log_stderr(message: str) -> None:
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# dataset commands


def cmd_build_corpus(args) -> int:
    out = _out_dir(args)
    docs = read_corpus_jsonl(args.input)
    allowlist = [line.strip() for line in
                 Path(args.allowlist).read_text(encoding="utf-8").splitlines()
                 if line.strip()]
    tokenizer = Tokenizer.load(args.tokenizer)
    manifest = StatsManifest()
    kept = filter_biomedical(docs, allowlist, manifest=manifest)
    cleaned = [strip_nonbody(doc) for doc in kept]
    write_corpus_jsonl(cleaned, out / "corpus_clean.jsonl")
    total_tokens = 0
    with open(out / "chunks.txt", "w", encoding="utf-8") as handle:
        for doc in cleaned:
            for chunk in chunk_sentences(doc, tokenizer, args.max_tokens,
                                         manifest=manifest):
                handle.write(chunk.text.replace("\n", " ").strip() + "\n")
                total_tokens += len(chunk.token_ids)
    manifest.save(out / "stats.json")
    print(f"kept {len(cleaned)} of {len(docs)} docs; {total_tokens} tokens "
          f"-> {out / 'chunks.txt'}")
    return 0


def cmd_build_pubchemqa(args) -> int:
    out = _out_dir(args)
    raw = read_pubchem_raw(args.input)
    manifest = StatsManifest()
    records = split_dataset(build_pubchemqa(raw, manifest=manifest, log=_log_stderr),
                            seed=args.seed)
    write_qa_jsonl(records, out / "pubchemqa.jsonl")
    manifest.save(out / "stats.json")
    molecules, pairs = pubchemqa_counts(records)
    print(f"{molecules} unique molecules, {pairs} molecule-text pairs "
          f"-> {out / 'pubchemqa.jsonl'}")
    return 0


def cmd_build_uniprotqa(args) -> int:
    out = _out_dir(args)
    entries = read_uniprot_raw(args.input)
    manifest = StatsManifest()
    records = split_dataset(build_uniprotqa(entries, manifest=manifest, log=_log_stderr),
                            seed=args.seed)
    write_qa_jsonl(records, out / "uniprotqa.jsonl")
    manifest.save(out / "stats.json")
    proteins, samples = uniprotqa_counts(records)
    print(f"{proteins} proteins, {samples} question-answering samples "
          f"-> {out / 'uniprotqa.jsonl'}")
    return 0


def cmd_train_tokenizer(args) -> int:
    out = _out_dir(args)
    lines = [line for line in Path(args.corpus).read_text(encoding="utf-8").splitlines()
             if line.strip()]
    tokenizer = train_tokenizer(lines, vocab_size=args.vocab_size)
    tokenizer.save(out / "tokenizer.json")
    print(f"vocab size {tokenizer.vocab_size} -> {out / 'tokenizer.json'}")
    return 0


# ---------------------------------------------------------------------------
# training commands


def _load_config(args) -> RunConfig:
    config = RunConfig.load(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _cmd_stage(stage: str):
    def handler(args) -> int:
        result = run_stage(stage, _load_config(args))
        final_loss = result.trace[-1][1] if result.trace else float("nan")
        print(f"stage {stage}: final loss {final_loss:.6f}; "
              f"checkpoint {result.checkpoint_path}; trace {result.loss_csv}")
        return 0

    return handler


# ---------------------------------------------------------------------------
# evaluation commands


def _decoding_from(args) -> DecodingConfig:
    return DecodingConfig(greedy=not args.sample, temperature=args.temperature,
                          seed=args.seed, max_new_tokens=args.max_new_tokens)


def cmd_eval_gen(args) -> int:
    out = _out_dir(args)
    bundle, _ = restore_model(args.checkpoint)
    records = read_qa_jsonl(args.data)
    if args.split != "all":
        records = [r for r in records if r.split == args.split]
    report = gen_eval(bundle, records, _decoding_from(args),
                      predictions_path=out / "predictions.jsonl", log=_log_stderr)
    (out / "gen_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(report.to_json())
    return 0


def cmd_eval_mcq(args) -> int:
    out = _out_dir(args)
    bundle, _ = restore_model(args.checkpoint)
    records = load_mcq_benchmark(args.data, args.format)
    report = mcq_accuracy(bundle, records)
    (out / "mcq_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"accuracy {report.accuracy:.4f} ({report.correct}/{report.total})")
    return 0


def cmd_ask(args) -> int:
    bundle, _ = restore_model(args.checkpoint)
    if args.smiles is not None:
        entity = parse_smiles(args.smiles)
    elif args.protein is not None:
        entity = validate_sequence(args.protein)
    else:
        entity = None
    answer = bundle.answer_question(entity, args.question, _decoding_from(args),
                                    context=args.context)
    print(answer)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biofusion",
        description="Molecule/protein-aware language model: data, training, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="filter, clean, and chunk a document corpus")
    p.add_argument("--input", required=True, help="corpus JSONL")
    p.add_argument("--allowlist", required=True, help="file of allowed pmid/pmcid, one per line")
    p.add_argument("--tokenizer", required=True, help="tokenizer JSON file")
    p.add_argument("--max-tokens", type=int, default=256, help="chunk budget in tokens")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_build_corpus)

    p = sub.add_parser("build-pubchemqa", help="build molecule-description QA records")
    p.add_argument("--input", required=True, help="JSONL of cid/smiles/description rows")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_build_pubchemqa)

    p = sub.add_parser("build-uniprotqa", help="build protein-annotation QA records")
    p.add_argument("--input", required=True, help="JSONL of annotated protein entries")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_build_uniprotqa)

    p = sub.add_parser("train-tokenizer", help="train the byte-pair tokenizer")
    p.add_argument("--corpus", required=True, help="text file, one sample per line")
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train_tokenizer)

    for stage, name in (("lm", "train-lm"), ("align", "align"), ("qa", "finetune-qa")):
        p = sub.add_parser(name, help=f"run the {stage} training stage")
        p.add_argument("--config", required=True, help="run-config JSON file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.set_defaults(handler=_cmd_stage(stage))

    def add_decoding_flags(p):
        p.add_argument("--max-new-tokens", type=int, default=64)
        p.add_argument("--sample", action="store_true", help="sample instead of greedy decoding")
        p.add_argument("--temperature", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0, help="sampling seed")

    p = sub.add_parser("eval-gen", help="generation metrics over a QA file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="QA JSONL file")
    p.add_argument("--split", default="test", help="split tag to evaluate, or 'all'")
    p.add_argument("--out", required=True)
    add_decoding_flags(p)
    p.set_defaults(handler=cmd_eval_gen)

    p = sub.add_parser("eval-mcq", help="multiple-choice accuracy over a benchmark file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="benchmark JSONL file")
    p.add_argument("--format", required=True,
                   choices=("medmcqa-like", "pubmedqa-like", "usmle-like"))
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval_mcq)

    p = sub.add_parser("ask", help="answer one question about a molecule, protein, or text")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--question", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--smiles", default=None)
    group.add_argument("--protein", default=None)
    p.add_argument("--context", default=None)
    add_decoding_flags(p)
    p.set_defaults(handler=cmd_ask)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if err.code is not None else 0
    try:
        return args.handler(args)
    except (BiofusionError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
