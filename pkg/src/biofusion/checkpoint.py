"""Single-file binary checkpoints with CRC-validated tensors.

Layout (all integers little-endian):

    magic "BMGPTCKP" | version u32 | manifest_len u64 | manifest JSON bytes
    | manifest_crc u32 | tensor_count u64 | tensor records...

Each tensor record:

    name_len u32 | name UTF-8 | dtype_code u8 | rank u32 | dims u64 x rank
    | payload (little-endian raw bytes) | payload_crc u32

Tensors are written in sorted-name order, so identical state produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptCheckpointError

MAGIC = b"BMGPTCKP"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("<i8"): 2,
    np.dtype("<i4"): 3,
    np.dtype("u1"): 4,
    np.dtype("?"): 5,
}
_CODE_DTYPES = {code: dtype for dtype, code in _DTYPE_CODES.items()}

_TORCH_FROM_NUMPY = {
    0: torch.float32,
    1: torch.float64,
    2: torch.int64,
    3: torch.int32,
    4: torch.uint8,
    5: torch.bool,
}


@dataclass
class CheckpointBundle:
    """A manifest (config snapshot, stage, step, freeze annotations) plus named tensors."""

    manifest: dict
    tensors: dict[str, np.ndarray] = field(default_factory=dict)


def _crc(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


def save_checkpoint(bundle: CheckpointBundle, path: str | Path) -> None:
    names = sorted(bundle.tensors)
    if len(names) != len(bundle.tensors):
        raise CorruptCheckpointError("tensor names must be unique")
    manifest_bytes = json.dumps(bundle.manifest, sort_keys=True,
                                separators=(",", ":")).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    out += struct.pack("<Q", len(manifest_bytes))
    out += manifest_bytes
    out += struct.pack("<I", _crc(manifest_bytes))
    out += struct.pack("<Q", len(names))
    for name in names:
        original = bundle.tensors[name]
        # ascontiguousarray promotes rank-0 arrays to rank-1; restore the shape
        array = np.ascontiguousarray(original).reshape(original.shape)
        dtype = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
        if dtype not in _DTYPE_CODES:
            raise CorruptCheckpointError(f"unsupported tensor dtype {array.dtype} for {name!r}")
        payload = array.astype(dtype, copy=False).tobytes()
        name_bytes = name.encode("utf-8")
        out += struct.pack("<I", len(name_bytes))
        out += name_bytes
        out += struct.pack("<B", _DTYPE_CODES[dtype])
        out += struct.pack("<I", array.ndim)
        out += struct.pack(f"<{array.ndim}Q", *array.shape) if array.ndim else b""
        out += payload
        out += struct.pack("<I", _crc(payload))
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.at = 0

    def take(self, n: int) -> bytes:
        if self.at + n > len(self.data):
            raise CorruptCheckpointError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.at}, "
                f"file has {len(self.data)}")
        chunk = self.data[self.at:self.at + n]
        self.at += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


def load_checkpoint(path: str | Path) -> CheckpointBundle:
    reader = _Reader(Path(path).read_bytes())
    if reader.take(len(MAGIC)) != MAGIC:
        raise CorruptCheckpointError("bad magic bytes: not a checkpoint file")
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}")
    manifest_bytes = reader.take(reader.u64())
    if reader.u32() != _crc(manifest_bytes):
        raise CorruptCheckpointError("manifest checksum mismatch")
    try:
        manifest = json.loads(manifest_bytes)
    except json.JSONDecodeError as err:
        raise CorruptCheckpointError(f"manifest is not valid JSON: {err.msg}") from err
    tensors: dict[str, np.ndarray] = {}
    for _ in range(reader.u64()):
        name = reader.take(reader.u32()).decode("utf-8")
        if name in tensors:
            raise CorruptCheckpointError(f"duplicate tensor name {name!r}")
        code = reader.u8()
        if code not in _CODE_DTYPES:
            raise CorruptCheckpointError(f"unknown dtype code {code} for {name!r}")
        dtype = _CODE_DTYPES[code]
        rank = reader.u32()
        shape = tuple(reader.u64() for _ in range(rank))
        count = 1
        for dim in shape:
            count *= dim
        payload = reader.take(count * dtype.itemsize)
        if reader.u32() != _crc(payload):
            raise CorruptCheckpointError(f"payload checksum mismatch for {name!r}")
        tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    if reader.at != len(reader.data):
        raise CorruptCheckpointError(
            f"{len(reader.data) - reader.at} trailing bytes after last tensor")
    return CheckpointBundle(manifest=manifest, tensors=tensors)


def tensors_from_module(module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {name: param.detach().cpu().numpy().copy()
            for name, param in module.state_dict().items()}


def tensors_into_module(module: torch.nn.Module, tensors: dict[str, np.ndarray]) -> None:
    state = module.state_dict()
    missing = sorted(set(state) - set(tensors))
    extra = sorted(set(tensors) - set(state))
    if missing or extra:
        raise CorruptCheckpointError(
            f"tensor names do not match the model (missing {missing}, unexpected {extra})")
    converted = {}
    for name, array in tensors.items():
        code = _DTYPE_CODES.get(array.dtype)
        if code is None:
            raise CorruptCheckpointError(f"unsupported dtype {array.dtype} for {name!r}")
        tensor = torch.from_numpy(array.copy()).to(_TORCH_FROM_NUMPY[code])
        if tuple(tensor.shape) != tuple(state[name].shape):
            raise CorruptCheckpointError(
                f"shape mismatch for {name!r}: checkpoint {tuple(tensor.shape)}, "
                f"model {tuple(state[name].shape)}")
        converted[name] = tensor
    module.load_state_dict(converted)
