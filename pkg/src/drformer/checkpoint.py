"""Versioned binary checkpoint container.

Layout (little-endian)::

    magic   8 bytes  b"DRFCKPT\\x00"
    version uint32
    config  uint32 length + UTF-8 JSON {"model": {...}, "meta": {...}}
    count   uint32
    entries name (uint16 length + UTF-8), kind uint8 (0 float64, 1 bitmap),
            ndim uint8, dims uint32 * ndim, payload (uint64 length + bytes)
    trailer sha256 of every preceding byte
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .model import ConfigError, ForecastModel, ModelConfig

MAGIC = b"DRFCKPT\x00"
VERSION = 1
MASK_ENTRY = "tokenizer.mask"
_FLOAT, _BITS = 0, 1
# fields that change parameter shapes or the forward graph
ARCH_FIELDS = (
    "input_len", "horizon", "patch_len", "stride", "dim", "groups", "scales", "layers", "heads", "pe_mode",
)


class CheckpointError(ValueError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def _entry(name: str, kind: int, arr: np.ndarray, payload: bytes) -> bytes:
    raw = name.encode("utf-8")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", kind, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + struct.pack("<Q", len(payload)) + payload


def encode_checkpoint(model: ForecastModel, meta: dict | None = None) -> bytes:
    config = json.dumps({"model": model.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    params = model.parameters()
    body = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config)), config]
    body.append(struct.pack("<I", len(params) + 1))
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data, dtype="<f8")
        body.append(_entry(name, _FLOAT, arr, arr.tobytes()))
    mask = model.tokenizer.mask
    body.append(_entry(MASK_ENTRY, _BITS, mask, np.packbits(mask.reshape(-1)).tobytes()))
    blob = b"".join(body)
    return blob + hashlib.sha256(blob).digest()


def save_checkpoint(model: ForecastModel, path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(model, meta))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(blob: bytes) -> tuple[ModelConfig, dict, dict[str, np.ndarray], np.ndarray]:
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointError(f"checkpoint truncated ({len(blob)} bytes)")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    body, digest = blob[:-32], blob[-32:]
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint integrity hash mismatch (file truncated or corrupted)")
    (clen,) = r.unpack("<I")
    header = json.loads(r.take(clen).decode("utf-8"))
    try:
        config = ModelConfig.from_dict(header["model"])
    except (ConfigError, TypeError, KeyError) as exc:
        raise CheckpointError(f"invalid config block: {exc}") from exc
    (count,) = r.unpack("<I")
    arrays, mask = {}, None
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        kind, ndim = r.unpack("<BB")
        shape = r.unpack(f"<{ndim}I")
        (plen,) = r.unpack("<Q")
        payload = r.take(plen)
        size = int(np.prod(shape))
        if kind == _FLOAT:
            if plen != 8 * size:
                raise CheckpointError(f"{name}: payload of {plen} bytes does not fit shape {shape}")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        elif kind == _BITS:
            bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))[:size]
            mask = bits.reshape(shape).astype(bool)
        else:
            raise CheckpointError(f"{name}: unknown entry kind {kind}")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after last entry")
    if mask is None:
        raise CheckpointError("checkpoint has no tokenizer mask")
    return config, header.get("meta", {}), arrays, mask


def load_checkpoint(path, expect: ModelConfig | dict | None = None) -> tuple[ForecastModel, dict]:
    """Rebuild the model from ``path``.

    ``expect`` is either a full ModelConfig (every architecture field must
    agree) or a mapping of field -> value holding only the fields to check.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    config, meta, arrays, mask = decode_checkpoint(path.read_bytes())
    if isinstance(expect, ModelConfig):
        expect = {k: getattr(expect, k) for k in ARCH_FIELDS}
    if expect:
        diff = [f"{k}: checkpoint {getattr(config, k)} vs requested {v}"
                for k, v in expect.items() if k in ARCH_FIELDS and getattr(config, k) != v]
        if diff:
            raise ConfigMismatchError("config mismatch: " + "; ".join(diff))
    model = ForecastModel(config)
    model.load_state_arrays(arrays, mask)
    model.tokenizer.dynamic = config.dynamic_tokenizer
    return model, meta
