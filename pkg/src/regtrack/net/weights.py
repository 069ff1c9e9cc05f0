"""Weight files.

Layout (little-endian)::

    b"RGTKNET\\0"                      magic
    u32 version
    u32 n, n bytes                     NetConfig as key=value text
    u32 tensor count
    per tensor:
        u16 n, n bytes                 name
        u8 dtype code (0 f32, 1 f64, 2 u64)
        u8 ndim, ndim * u32            shape
        raw data
"""

from __future__ import annotations

import dataclasses
import struct
from pathlib import Path

import numpy as np

from ..config import apply_kv, as_kv, format_kv, parse_kv
from .model import NetConfig, Network

MAGIC = b"RGTKNET\0"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<u8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("uint64"): 2}


class WeightFileError(ValueError):
    pass


class TruncatedWeightsError(WeightFileError):
    pass


class ConfigMismatchError(WeightFileError):
    pass


def config_to_text(cfg: NetConfig) -> str:
    return format_kv(as_kv(cfg))


def config_from_text(text: str) -> NetConfig:
    return apply_kv(NetConfig(), parse_kv(text, "<weights header>"))


def encode_weights(net: Network, extra: dict[str, np.ndarray] | None = None) -> bytes:
    tensors = dict(net.parameters())
    tensors.update(extra or {})
    cfg = config_to_text(net.cfg).encode()
    parts = [MAGIC, struct.pack("<II", VERSION, len(cfg)), cfg, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        t = np.asarray(t)
        code = _CODES.get(t.dtype)
        if code is None:
            t = t.astype(np.float64)
            code = 1
        bname = name.encode()
        parts.append(struct.pack("<HBB", len(bname), code, t.ndim) + bname)
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def save_weights(net: Network, path, extra: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters (plus optional ``extra`` named arrays) to ``path``."""
    Path(path).write_bytes(encode_weights(net, extra))


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedWeightsError(
                f"{self.source}: truncated at byte {len(self.data)} (needed {self.pos + n})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_weights(data: bytes, source: str = "<bytes>") -> tuple[NetConfig, dict[str, np.ndarray]]:
    r = _Reader(data, source)
    if r.take(len(MAGIC)) != MAGIC:
        raise WeightFileError(f"{source}: not a regtrack weight file (bad magic)")
    version, n = r.unpack("<II")
    if version != VERSION:
        raise WeightFileError(f"{source}: unsupported weight format version {version}")
    cfg = config_from_text(r.take(n).decode())
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        n, code, ndim = r.unpack("<HBB")
        name = r.take(n).decode()
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES.get(code)
        if dt is None:
            raise WeightFileError(f"{source}: unknown dtype code {code} for {name}")
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(r.take(size), dtype=dt).reshape(shape).copy()
    if r.pos != len(data):
        raise WeightFileError(f"{source}: {len(data) - r.pos} trailing bytes")
    return cfg, tensors


def load_weights(path, expected: NetConfig | None = None, ignore: tuple[str, ...] = ("seed",)):
    """Network restored from ``path``.

    If ``expected`` is given, every NetConfig field except those in ``ignore``
    must match the stored one. Returns ``(net, extra)`` where ``extra`` holds
    stored arrays that are not network parameters.
    """
    path = Path(path)
    cfg, tensors = decode_weights(path.read_bytes(), str(path))
    if expected is not None:
        diffs = [
            f"{f.name}: file {getattr(cfg, f.name)!r} vs expected {getattr(expected, f.name)!r}"
            for f in dataclasses.fields(cfg)
            if f.name not in ignore and getattr(cfg, f.name) != getattr(expected, f.name)
        ]
        if diffs:
            raise ConfigMismatchError(f"{path}: config mismatch ({'; '.join(diffs)})")
    net = Network(cfg)
    params = net.parameters()
    missing = sorted(set(params) - set(tensors))
    if missing:
        raise WeightFileError(f"{path}: missing tensors {missing}")
    for name, p in params.items():
        t = tensors.pop(name)
        if t.shape != p.shape:
            raise ConfigMismatchError(f"{path}: tensor {name} has shape {t.shape}, expected {p.shape}")
        p[...] = t
    return net, tensors
