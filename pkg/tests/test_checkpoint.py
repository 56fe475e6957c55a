"""Checkpoint container tests: round-trips, corruption detection, model restore."""

import numpy as np
import pytest
import torch

from biofusion.checkpoint import (
    CheckpointBundle,
    load_checkpoint,
    save_checkpoint,
    tensors_from_module,
    tensors_into_module,
)
from biofusion.config import ModelConfig, OptimizerConfig, PathsConfig, RunConfig
from biofusion.chem import parse_smiles
from biofusion.errors import ConfigError, CorruptCheckpointError
from biofusion.fusion import FreezePolicy
from biofusion.stages import build_model_bundle, checkpoint_model, restore_model
from biofusion.tokenizer import train_tokenizer, BASE_VOCAB_SIZE


def sample_bundle():
    return CheckpointBundle(
        manifest={"stage": "lm", "step": 3, "note": "fixture"},
        tensors={
            "weights": np.linspace(-1, 1, 12, dtype="<f8").reshape(3, 4),
            "floats32": np.arange(6, dtype="<f4").reshape(2, 3),
            "ids": np.array([1, 2, 3], dtype="<i8"),
            "small": np.array([7], dtype="<i4"),
            "bytes": np.array([0, 255], dtype="u1"),
            "flags": np.array([True, False, True], dtype="?"),
            "scalar": np.array(2.5, dtype="<f8"),
        },
    )


def test_round_trip_preserves_tensors(tmp_path):
    path = tmp_path / "x.ckpt"
    bundle = sample_bundle()
    save_checkpoint(bundle, path)
    loaded = load_checkpoint(path)
    assert loaded.manifest == bundle.manifest
    assert set(loaded.tensors) == set(bundle.tensors)
    for name, array in bundle.tensors.items():
        assert loaded.tensors[name].dtype == array.dtype
        assert loaded.tensors[name].shape == array.shape
        assert np.array_equal(loaded.tensors[name], array)


def test_save_load_save_is_byte_identical(tmp_path):
    first = tmp_path / "a.ckpt"
    second = tmp_path / "b.ckpt"
    save_checkpoint(sample_bundle(), first)
    save_checkpoint(load_checkpoint(first), second)
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize("keep_fraction", [0.1, 0.5, 0.95])
def test_truncated_file_detected(tmp_path, keep_fraction):
    path = tmp_path / "x.ckpt"
    save_checkpoint(sample_bundle(), path)
    data = path.read_bytes()
    path.write_bytes(data[: int(len(data) * keep_fraction)])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_flipped_payload_byte_detected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(sample_bundle(), path)
    data = bytearray(path.read_bytes())
    data[-10] ^= 0xFF  # inside the last tensor's payload or checksum
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_flipped_manifest_byte_detected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(sample_bundle(), path)
    data = bytearray(path.read_bytes())
    data[20] ^= 0x01  # inside the manifest JSON
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_unknown_version_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(sample_bundle(), path)
    data = bytearray(path.read_bytes())
    data[8:12] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(sample_bundle(), path)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_unsupported_dtype_rejected(tmp_path):
    bundle = CheckpointBundle(manifest={}, tensors={"z": np.zeros(2, dtype="complex128")})
    with pytest.raises(CorruptCheckpointError):
        save_checkpoint(bundle, tmp_path / "x.ckpt")


def test_tensors_into_module_validates_names_and_shapes():
    layer = torch.nn.Linear(3, 2).to(torch.float64)
    good = tensors_from_module(layer)
    with pytest.raises(CorruptCheckpointError):
        tensors_into_module(layer, {"weight": good["weight"]})  # bias missing
    bad_shape = dict(good)
    bad_shape["weight"] = np.zeros((5, 5), dtype="<f8")
    with pytest.raises(CorruptCheckpointError):
        tensors_into_module(layer, bad_shape)


# --------------------------------------------------------------------------
# model-bundle checkpoints


def tiny_config():
    return RunConfig(
        model=ModelConfig(vocab_size=BASE_VOCAB_SIZE + 8, lm_dim=16, lm_blocks=2,
                          lm_heads=2, context_length=96, mol_dim=8, mol_layers=2,
                          protein_dim=8, protein_layers=1, protein_heads=2,
                          max_residues=32),
        optimizer=OptimizerConfig(steps=2, batch_size=2),
        paths=PathsConfig(out_dir="unused"),
    )


def trained_tokenizer():
    return train_tokenizer(["the quick brown fox jumps over the lazy dog"],
                           vocab_size=BASE_VOCAB_SIZE + 8)


def test_model_checkpoint_forward_equivalence_bitwise(tmp_path):
    config = tiny_config()
    torch.manual_seed(3)
    bundle = build_model_bundle(config, trained_tokenizer())
    ids = torch.tensor([5, 30, 90, 200, 17], dtype=torch.long)
    graph = parse_smiles("CCO")
    logits_before = bundle.lm.forward_ids(ids)
    rows_before = bundle.molecule_rows(graph)

    path = tmp_path / "model.ckpt"
    checkpoint_model(bundle, config, "lm", 0, path)
    restored, manifest = restore_model(path)
    assert torch.equal(restored.lm.forward_ids(ids), logits_before)
    assert torch.equal(restored.molecule_rows(graph), rows_before)
    assert manifest["stage"] == "lm"
    assert manifest["config_hash"] == config.config_hash()


def test_model_checkpoint_keeps_freeze_annotations(tmp_path):
    config = tiny_config()
    bundle = build_model_bundle(config, trained_tokenizer())
    bundle.apply_freeze(FreezePolicy(lm_frozen=True))
    path = tmp_path / "model.ckpt"
    checkpoint_model(bundle, config, "align", 5, path)
    restored, manifest = restore_model(path)
    assert all(not p.requires_grad for p in restored.lm.parameters())
    assert all(p.requires_grad
               for module in restored.encoder_modules() for p in module.parameters())
    assert manifest["frozen"] == bundle.frozen_parameter_names()


def test_model_checkpoint_param_counts(tmp_path):
    config = tiny_config()
    bundle = build_model_bundle(config, trained_tokenizer())
    path = tmp_path / "model.ckpt"
    checkpoint_model(bundle, config, "lm", 0, path)
    counts = load_checkpoint(path).manifest["param_counts"]
    assert counts["lm"] == sum(p.numel() for p in bundle.lm.parameters())
    assert set(counts) == {"lm", "mol_encoder", "protein_encoder", "mol_adaptor",
                           "protein_adaptor"}


def test_tampered_config_hash_detected(tmp_path):
    config = tiny_config()
    bundle = build_model_bundle(config, trained_tokenizer())
    path = tmp_path / "model.ckpt"
    checkpoint_model(bundle, config, "lm", 0, path)
    ckpt = load_checkpoint(path)
    ckpt.manifest["config"]["optimizer"]["seed"] = 999  # no hash update
    save_checkpoint(ckpt, path)
    with pytest.raises(ConfigError):
        restore_model(path)
