"""Per-type item feature matrices and their bit-exact binary container.

File layout (all integers little-endian):
  magic   8 bytes  b"ILRFEAT1"
  type    1 byte   0=Img 1=CF 2=Text 3=JointText
  n_items u32
  dim     u32
  ids     n_items * (u32 byte length + UTF-8 item_id), row order
  rows    n_items*dim float32, row-major

Rows are stored and kept in float32 so save -> load -> save reproduces the
file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .seeding import subseed

MAGIC = b"ILRFEAT1"

IMG = "Img"
CF = "CF"
TEXT = "Text"
JOINT_TEXT = "JointText"

FEATURE_TYPES = (IMG, CF, TEXT, JOINT_TEXT)
_TYPE_TAGS = {IMG: 0, CF: 1, TEXT: 2, JOINT_TEXT: 3}
_TAG_TYPES = {v: k for k, v in _TYPE_TAGS.items()}


@dataclass
class FeatureMatrix:
    """A (n_items x dim) float32 matrix for one feature type, with an id index."""

    feature_type: str
    item_ids: list[str]
    rows: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if self.feature_type not in FEATURE_TYPES:
            raise ValueError(f"unknown feature type {self.feature_type!r}")
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.item_ids):
            raise ValueError(f"rows shape {self.rows.shape} does not match {len(self.item_ids)} ids")
        if not np.isfinite(self.rows).all():
            raise ValueError("feature rows must be finite")
        self.index = {item: i for i, item in enumerate(self.item_ids)}
        if len(self.index) != len(self.item_ids):
            raise ValueError("duplicate item_ids in feature matrix")

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.index

    def row(self, item_id: str) -> np.ndarray:
        return self.rows[self.index[item_id]]


class FeatureStore:
    """Bundle of FeatureMatrix objects keyed by feature type."""

    def __init__(self, matrices=()):
        self._by_type: dict[str, FeatureMatrix] = {}
        for m in matrices:
            self.add(m)

    def add(self, matrix: FeatureMatrix) -> None:
        self._by_type[matrix.feature_type] = matrix
        img, joint = self._by_type.get(IMG), self._by_type.get(JOINT_TEXT)
        if img is not None and joint is not None and img.dim != joint.dim:
            raise ValueError(f"JointText dim {joint.dim} must equal Img dim {img.dim} (shared space)")

    def __contains__(self, feature_type: str) -> bool:
        return feature_type in self._by_type

    def __getitem__(self, feature_type: str) -> FeatureMatrix:
        return self._by_type[feature_type]

    def get(self, feature_type: str):
        return self._by_type.get(feature_type)

    @property
    def types(self) -> list[str]:
        return [t for t in FEATURE_TYPES if t in self._by_type]

    def visual_row(self, item_id: str, fallback: bool) -> np.ndarray:
        """Img row for an item; with fallback, JointText substitutes for missing rows."""
        img = self._by_type.get(IMG)
        if img is not None and item_id in img:
            return img.row(item_id)
        if fallback:
            joint = self._by_type.get(JOINT_TEXT)
            if joint is not None and item_id in joint:
                return joint.row(item_id)
            raise KeyError(f"item {item_id}: no Img row and no JointText fallback row")
        raise KeyError(f"item {item_id}: no Img feature row (fallback disabled)")


def save_feature_store(matrix: FeatureMatrix, path) -> None:
    """Write one feature matrix in the ILRFEAT1 container."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", _TYPE_TAGS[matrix.feature_type]))
        fh.write(struct.pack("<II", len(matrix.item_ids), matrix.dim))
        for item_id in matrix.item_ids:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes())


def load_feature_store(path) -> FeatureMatrix:
    """Read an ILRFEAT1 file, validating structure with byte offsets on failure."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, count, what):
        if offset + count > len(blob):
            raise FormatError(f"{path}: truncated at offset {offset}: expected {count} bytes of {what}")
        return blob[offset:offset + count]

    if need(0, 8, "magic") != MAGIC:
        raise FormatError(f"{path}: bad magic at offset 0: {blob[:8]!r}")
    tag = need(8, 1, "type tag")[0]
    if tag not in _TAG_TYPES:
        raise FormatError(f"{path}: unknown feature type tag {tag} at offset 8")
    n_items, dim = struct.unpack("<II", need(9, 8, "header"))
    off = 17
    item_ids = []
    for i in range(n_items):
        (ln,) = struct.unpack("<I", need(off, 4, f"id length [{i}]"))
        off += 4
        item_ids.append(need(off, ln, f"id bytes [{i}]").decode("utf-8"))
        off += ln
    payload = need(off, n_items * dim * 4, "row payload")
    if off + n_items * dim * 4 != len(blob):
        raise FormatError(f"{path}: {len(blob) - off - n_items * dim * 4} trailing bytes after offset {off}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n_items, dim).copy()
    if not np.isfinite(rows).all():
        raise FormatError(f"{path}: non-finite values in row payload at offset {off}")
    return FeatureMatrix(_TAG_TYPES[tag], item_ids, rows)


def unit_rows(rows: np.ndarray) -> np.ndarray:
    """L2-normalize each row; zero rows stay zero."""
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return np.divide(rows, norms, out=np.zeros_like(rows, dtype=np.float64), where=norms > 0)


def hashed_text_embedding(text: str, dim: int, salt: str = "textstub") -> np.ndarray:
    """Deterministic sentence-embedding stand-in: signed hashed bag of words.

    Each word contributes +-1 at a bucket derived from a stable hash of the
    word, so identical texts map to identical unit vectors on any platform.
    """
    vec = np.zeros(dim, dtype=np.float64)
    for word in text.lower().split():
        h = subseed(salt, word)
        vec[h % dim] += 1.0 if (h >> 32) % 2 == 0 else -1.0
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec
