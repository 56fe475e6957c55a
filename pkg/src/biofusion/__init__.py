"""Multimodal molecule/protein/text alignment toolkit.

Graph and sequence encoders project molecules and proteins into the embedding
space of a byte-level language model; fused prompts train adaptors while the
language model stays frozen, then the language model is fine-tuned on text QA.
"""

from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .chem import GINEncoder, MolecularGraph, atom_features, parse_smiles
from .config import ModelConfig, OptimizerConfig, PathsConfig, RunConfig
from .errors import (
    AlphabetError,
    BiofusionError,
    ConfigError,
    ContextOverflowError,
    CorruptCheckpointError,
    EmptyInputError,
    EmptyMaskError,
    FormatError,
    FreezeViolationError,
    MissingPrerequisiteError,
    NaNLossError,
    ParseError,
    SchemaError,
    ShapeError,
)
from .evaluate import GenEvalReport, MCQEvalReport, gen_eval, mcq_accuracy
from .fusion import (
    FreezePolicy,
    FusedPromptBatch,
    ModalityAdaptor,
    ModelBundle,
    MOLECULE_TEMPLATE,
    PROTEIN_TEMPLATE,
    PromptTemplate,
    alignment_train_step,
    assemble_prompt,
    assemble_text_prompt,
    batch_loss,
    collate,
    qa_finetune_step,
    text_qa_prompt,
)
from .lm import DecoderLM, DecodingConfig, autoregressive_loss, generate, train_lm
from .metrics import bleu_n, meteor, rouge_l, rouge_n
from .protein import ProteinEncoder, ProteinSequence, validate_sequence
from .stages import STAGES, build_model_bundle, restore_model, run_stage
from .tokenizer import BASE_VOCAB_SIZE, SPECIAL_TOKENS, Tokenizer, train_tokenizer

__version__ = "0.1.0"

__all__ = [
    "AlphabetError",
    "BASE_VOCAB_SIZE",
    "BiofusionError",
    "CheckpointBundle",
    "ConfigError",
    "ContextOverflowError",
    "CorruptCheckpointError",
    "DecoderLM",
    "DecodingConfig",
    "EmptyInputError",
    "EmptyMaskError",
    "FormatError",
    "FreezePolicy",
    "FreezeViolationError",
    "FusedPromptBatch",
    "GINEncoder",
    "GenEvalReport",
    "MCQEvalReport",
    "MOLECULE_TEMPLATE",
    "MissingPrerequisiteError",
    "ModalityAdaptor",
    "ModelBundle",
    "ModelConfig",
    "MolecularGraph",
    "NaNLossError",
    "OptimizerConfig",
    "PROTEIN_TEMPLATE",
    "ParseError",
    "PathsConfig",
    "PromptTemplate",
    "ProteinEncoder",
    "ProteinSequence",
    "RunConfig",
    "SPECIAL_TOKENS",
    "STAGES",
    "SchemaError",
    "ShapeError",
    "Tokenizer",
    "alignment_train_step",
    "assemble_prompt",
    "assemble_text_prompt",
    "atom_features",
    "autoregressive_loss",
    "batch_loss",
    "bleu_n",
    "build_model_bundle",
    "collate",
    "gen_eval",
    "generate",
    "load_checkpoint",
    "mcq_accuracy",
    "meteor",
    "parse_smiles",
    "qa_finetune_step",
    "restore_model",
    "rouge_l",
    "rouge_n",
    "run_stage",
    "save_checkpoint",
    "text_qa_prompt",
    "train_lm",
    "train_tokenizer",
    "validate_sequence",
]
