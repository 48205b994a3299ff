"""Binary checkpoint format.

Layout (all little-endian):
    bytes 0-3   magic "STCL"
    u16         format version (currently 1)
    u32 + bytes JSON config echo (sorted keys)
    u32         blob count
    per blob:   u16 name length, name utf-8, u8 ndim, ndim*u32 dims,
                float32 values
    u32         CRC-32 of everything above

Round trips are byte-identical; magic, version, and checksum failures raise
distinct errors.
"""

import json
import struct
import zlib
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

from .errors import BadMagicError, BadVersionError, ChecksumError, CheckpointError

MAGIC = b"STCL"
FORMAT_VERSION = 1


def encode_checkpoint(blobs: Dict[str, np.ndarray], config_echo: dict) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    cfg = json.dumps(config_echo, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        nb = name.encode("utf-8")
        out += struct.pack("<H", len(nb))
        out += nb
        a = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<B", a.ndim)
        out += struct.pack(f"<{a.ndim}I", *a.shape)
        out += a.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def decode_checkpoint(raw: bytes) -> Tuple[dict, Dict[str, np.ndarray]]:
    if len(raw) < len(MAGIC) + 2 + 4:
        raise CheckpointError(f"checkpoint too short ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}")
    body, tail = raw[:-4], raw[-4:]
    (crc_stored,) = struct.unpack("<I", tail)
    if zlib.crc32(body) != crc_stored:
        raise ChecksumError("checkpoint checksum mismatch (file truncated or corrupt)")
    (version,) = struct.unpack_from("<H", body, 4)
    if version != FORMAT_VERSION:
        raise BadVersionError(f"unsupported checkpoint version {version}")
    try:
        pos = 6
        (cfg_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        config_echo = json.loads(body[pos : pos + cfg_len].decode("utf-8"))
        pos += cfg_len
        (count,) = struct.unpack_from("<I", body, pos)
        pos += 4
        blobs: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (ndim,) = struct.unpack_from("<B", body, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}I", body, pos)
            pos += 4 * ndim
            n_vals = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(body, dtype="<f4", count=n_vals, offset=pos)
            pos += 4 * n_vals
            blobs[name] = arr.reshape(shape).copy()
        if pos != len(body):
            raise CheckpointError(f"{len(body) - pos} trailing bytes after blobs")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"malformed checkpoint body: {exc}") from exc
    return config_echo, blobs


def save_checkpoint(path, blobs: Dict[str, np.ndarray], config_echo: dict) -> None:
    Path(path).write_bytes(encode_checkpoint(blobs, config_echo))


def load_checkpoint(path) -> Tuple[dict, Dict[str, np.ndarray]]:
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint file not found: {p}")
    return decode_checkpoint(p.read_bytes())
