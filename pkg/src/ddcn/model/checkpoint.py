"""``DDCK`` checkpoint files.

Layout: magic ``DDCK``, u32 version, one u32 per ModelConfig field, u32 entry
count, then per entry a u16 name length, the UTF-8 name and a DDCT tensor.
Optimizer moments ride along as extra entries whose names carry an ``@``
suffix; the epoch and Adam step count are stored as 1-element tensors.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from ddcn.core.tensorfile import encode_tensor, read_tensor
from ddcn.errors import CorruptFileError, ManifestError
from ddcn.model.config import ModelConfig
from ddcn.model.params import is_trainable, manifest

MAGIC = b"DDCK"
VERSION = 1
M_SUFFIX = "@adam_m"
V_SUFFIX = "@adam_v"
STEP_KEY = "@adam_t"
EPOCH_KEY = "@epoch"


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def fresh(cls, params) -> "AdamState":
        names = [k for k in params if is_trainable(k)]
        return cls({k: np.zeros_like(np.asarray(params[k], dtype=np.float64)) for k in names},
                   {k: np.zeros_like(np.asarray(params[k], dtype=np.float64)) for k in names}, 0)


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState | None = None
    epoch: int = 0


def _config_block(config: ModelConfig) -> bytes:
    values = [int(getattr(config, f.name)) for f in fields(ModelConfig)]
    return struct.pack(f"<{len(values)}I", *values)


def _entry(name: str, arr) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw + encode_tensor(arr)


def encode_checkpoint(params, config: ModelConfig, adam: AdamState | None = None,
                      epoch: int = 0) -> bytes:
    entries = []
    for e in manifest(config):
        if e.name not in params:
            raise ManifestError(f"cannot save: parameter {e.name} is missing")
        if np.shape(params[e.name]) != e.shape:
            raise ManifestError(f"cannot save: {e.name} has shape {np.shape(params[e.name])}, "
                                f"manifest says {e.shape}")
        entries.append(_entry(e.name, params[e.name]))
    if adam is not None:
        for e in manifest(config):
            if is_trainable(e.name):
                entries.append(_entry(e.name + M_SUFFIX, adam.m[e.name]))
                entries.append(_entry(e.name + V_SUFFIX, adam.v[e.name]))
        entries.append(_entry(STEP_KEY, np.array([adam.t])))
    entries.append(_entry(EPOCH_KEY, np.array([epoch])))
    return (MAGIC + struct.pack("<I", VERSION) + _config_block(config)
            + struct.pack("<I", len(entries)) + b"".join(entries))


def save_checkpoint(path, params, config: ModelConfig, adam: AdamState | None = None,
                    epoch: int = 0) -> None:
    Path(path).write_bytes(encode_checkpoint(params, config, adam, epoch))


def _unpack(fh, fmt: str, what: str):
    size = struct.calcsize(fmt)
    buf = fh.read(size)
    if len(buf) != size:
        raise CorruptFileError(f"truncated checkpoint while reading {what}")
    return struct.unpack(fmt, buf)


def decode_checkpoint(buf: bytes, expected: ModelConfig | None = None) -> Checkpoint:
    fh = io.BytesIO(buf)
    if fh.read(4) != MAGIC:
        raise CorruptFileError("not a DDCK checkpoint (bad magic)")
    (version,) = _unpack(fh, "<I", "version")
    if version != VERSION:
        raise CorruptFileError(f"unsupported checkpoint version {version}")
    names = [f for f in fields(ModelConfig)]
    raw = _unpack(fh, f"<{len(names)}I", "config block")
    values = {f.name: (bool(v) if f.type in (bool, "bool") else int(v)) for f, v in zip(names, raw)}
    try:
        config = ModelConfig(**values)
    except ValueError as exc:
        raise CorruptFileError(f"invalid config block: {exc}") from None
    if expected is not None and config != expected:
        raise ManifestError(f"checkpoint was written for {config}, expected {expected}")

    (count,) = _unpack(fh, "<I", "entry count")
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = _unpack(fh, "<H", "entry name length")
        raw_name = fh.read(n)
        if len(raw_name) != n:
            raise CorruptFileError("truncated checkpoint while reading entry name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptFileError("entry name is not UTF-8") from None
        table[name] = read_tensor(fh)
    if fh.read(1):
        raise CorruptFileError("trailing bytes after checkpoint entries")

    params = {}
    for e in manifest(config):
        if e.name not in table:
            raise ManifestError(f"checkpoint lacks parameter {e.name}")
        if table[e.name].shape != e.shape:
            raise ManifestError(f"{e.name}: stored shape {table[e.name].shape} != {e.shape}")
        params[e.name] = table.pop(e.name)
    adam = None
    if STEP_KEY in table:
        m, v = {}, {}
        for name in params:
            if is_trainable(name):
                try:
                    m[name] = table.pop(name + M_SUFFIX)
                    v[name] = table.pop(name + V_SUFFIX)
                except KeyError:
                    raise ManifestError(f"optimizer state missing for {name}") from None
        adam = AdamState(m, v, int(table.pop(STEP_KEY)[0]))
    epoch = int(table.pop(EPOCH_KEY)[0]) if EPOCH_KEY in table else 0
    if table:
        raise ManifestError(f"unexpected checkpoint entries: {sorted(table)[:5]}")
    return Checkpoint(config, params, adam, epoch)


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), expected)


def quantize_params(params) -> dict[str, np.ndarray]:
    """Apply the binary32 rounding a checkpoint round trip would."""
    return {k: np.asarray(v, dtype=np.float32).astype(np.float64) for k, v in params.items()}
