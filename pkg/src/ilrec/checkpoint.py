"""Self-describing checkpoint container.

Layout (little-endian):
  magic    8 bytes b"ILRCKPT1"
  conf_len u32, then conf_len bytes of UTF-8 `key=value` lines
  n        u32 tensor count
  per tensor: u32 name length, UTF-8 name, u8 ndim, ndim * u32 dims,
              prod(dims) float32 values

Values are serialized in float32; higher-precision tensors are for test
oracles only and are not checkpointed.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"ILRCKPT1"


def save_checkpoint(path, config: dict, tensors: dict) -> None:
    """Write config (str/int/float/bool values) and named float tensors."""
    lines = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, bool):
            value = "true" if value else "false"
        text = str(value)
        if "\n" in text or "=" in text.split(" ", 1)[0] and "=" in str(key):
            raise ValueError(f"config value for {key!r} cannot contain newlines")
        lines.append(f"{key}={text}")
    blob = "\n".join(lines).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float32))
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, count, what):
        if offset + count > len(blob):
            raise FormatError(f"{path}: truncated at offset {offset}: expected {count} bytes of {what}")
        return blob[offset:offset + count]

    if need(0, 8, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0: {blob[:8]!r}")
    (conf_len,) = struct.unpack("<I", need(8, 4, "config length"))
    config_text = need(12, conf_len, "config block").decode("utf-8")
    config = {}
    for line in config_text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed config line {line!r}")
        key, _, value = line.partition("=")
        config[key] = value
    off = 12 + conf_len
    (count,) = struct.unpack("<I", need(off, 4, "tensor count"))
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", need(off, 4, "tensor name length"))
        off += 4
        name = need(off, name_len, "tensor name").decode("utf-8")
        off += name_len
        ndim = need(off, 1, "tensor rank")[0]
        off += 1
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack("<I", need(off, 4, "tensor dim"))
            shape.append(dim)
            off += 4
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        data = need(off, size * 4, f"tensor {name!r} payload")
        off += size * 4
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    if off != len(blob):
        raise FormatError(f"{path}: {len(blob) - off} trailing bytes after offset {off}")
    return config, tensors
