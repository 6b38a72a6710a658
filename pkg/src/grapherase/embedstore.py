"""Vocabulary embedding tables and prompt-token sequences, with their file formats.

Text tables are one row per line, ``label v_1 ... v_D``; ``#`` starts a comment
line. Binary tables::

    b"GROCEEMB" | u32 version=1 | u32 M | u32 D
    M x (u16 byte-length, UTF-8 label)
    M*D little-endian f32, row-major

Prompt files::

    b"GROCEPRM" | u32 version=1 | u32 L | u32 D | L*D little-endian f32
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

TABLE_MAGIC = b"GROCEEMB"
PROMPT_MAGIC = b"GROCEPRM"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<8sIII")


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """L2-normalize rows in float64 and return float32. Zero rows raise."""
    x64 = np.asarray(x, dtype=np.float64)
    if x64.ndim == 1:
        x64 = x64[None, :]
    norms = np.sqrt(np.einsum("ij,ij->i", x64, x64))
    bad = np.flatnonzero(~(norms > 0) | ~np.isfinite(norms))
    if bad.size:
        raise ValidationError(f"row {int(bad[0])} has zero or non-finite norm; cannot normalize")
    return (x64 / norms[:, None]).astype(np.float32)


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """M unit-norm concept vectors with unique labels.

    Instances are immutable; ``vectors`` is a read-only float32 array. Use
    :meth:`from_arrays` rather than the constructor so rows get normalized
    and labels checked.
    """

    labels: tuple
    vectors: np.ndarray
    _index: dict = field(repr=False, compare=False)

    @classmethod
    def from_arrays(cls, labels: Sequence[str], vectors) -> "EmbeddingTable":
        labels = tuple(str(label) for label in labels)
        vectors = np.asarray(vectors)
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be 2-D, got shape {vectors.shape}")
        if len(labels) != vectors.shape[0]:
            raise ValidationError(f"{len(labels)} labels for {vectors.shape[0]} rows")
        if len(labels) < 1:
            raise ValidationError("table must contain at least one row")
        if vectors.shape[1] < 2:
            raise ValidationError(f"dimension must be >= 2, got {vectors.shape[1]}")
        index = {}
        for i, label in enumerate(labels):
            if not label or any(c.isspace() for c in label):
                raise ValidationError(f"label {label!r} is empty or contains whitespace")
            if label in index:
                raise ValidationError(f"duplicate label {label!r}")
            index[label] = i
        unit = normalize_rows(vectors)
        unit.setflags(write=False)
        return cls(labels, unit, index)

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.count

    def __contains__(self, label):
        return label in self._index

    def index_of(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise KeyError(label) from None

    def appended(self, label: str, vector) -> "EmbeddingTable":
        """Return a new table with one extra (normalized) row."""
        vector = np.asarray(vector, dtype=np.float64).ravel()
        if vector.shape[0] != self.dim:
            raise ValidationError(f"vector has dimension {vector.shape[0]}, table has {self.dim}")
        if label in self._index:
            raise ValidationError(f"duplicate label {label!r}")
        if not label or any(c.isspace() for c in label):
            raise ValidationError(f"label {label!r} is empty or contains whitespace")
        # existing rows are kept bit-exact; the new row is normalized like a fresh load
        unit = np.vstack([self.vectors, normalize_rows(vector)])
        unit.setflags(write=False)
        return EmbeddingTable(self.labels + (label,), unit, {**self._index, label: self.count})

    def content_hash(self) -> bytes:
        """SHA-256 over labels and the float32 payload; 32 bytes."""
        h = hashlib.sha256()
        h.update(struct.pack("<II", self.count, self.dim))
        for label in self.labels:
            raw = label.encode("utf-8")
            h.update(struct.pack("<H", len(raw)))
            h.update(raw)
        h.update(np.ascontiguousarray(self.vectors, dtype="<f4").tobytes())
        return h.digest()


@dataclass(frozen=True, eq=False)
class PromptEmbedding:
    """Ordered token vectors of one prompt. Magnitudes are kept as given."""

    tokens: np.ndarray
    source_labels: Optional[tuple] = None

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float32)
        if tokens.ndim != 2 or tokens.shape[0] < 1:
            raise ValidationError(f"prompt must be a non-empty L x D array, got shape {tokens.shape}")
        if self.source_labels is not None and len(self.source_labels) != tokens.shape[0]:
            raise ValidationError("source_labels length does not match token count")
        object.__setattr__(self, "tokens", tokens)

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]


def _parse_text(path: Path):
    labels, rows = [], []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if dim is None:
                dim = len(fields) - 1
            if len(fields) - 1 != dim or dim < 1:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim + 1 if dim else 'label plus'} fields, got {len(fields)}"
                )
            try:
                rows.append([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            labels.append(fields[0])
    if not labels:
        raise FormatError(f"{path}: no embedding rows")
    return labels, np.asarray(rows, dtype=np.float64)


def _read_exact(buf: bytes, offset: int, size: int, what: str, path) -> bytes:
    if offset + size > len(buf):
        raise FormatError(f"{path}: truncated {what}: expected {size} bytes, got {max(len(buf) - offset, 0)}")
    return buf[offset:offset + size]


def _parse_binary(path: Path):
    buf = path.read_bytes()
    magic, version, m, d = _HEADER.unpack(_read_exact(buf, 0, _HEADER.size, "header", path))
    if magic != TABLE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    offset = _HEADER.size
    labels = []
    for _ in range(m):
        (n,) = struct.unpack("<H", _read_exact(buf, offset, 2, "label length", path))
        offset += 2
        labels.append(_read_exact(buf, offset, n, "label", path).decode("utf-8"))
        offset += n
    payload = 4 * m * d
    if len(buf) - offset != payload:
        raise FormatError(f"{path}: payload size mismatch: expected {payload} bytes, got {len(buf) - offset}")
    vectors = np.frombuffer(buf, dtype="<f4", count=m * d, offset=offset).reshape(m, d)
    return labels, vectors


def load_table(path, format: str = "text") -> EmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    if format == "text":
        labels, vectors = _parse_text(path)
    elif format == "binary":
        labels, vectors = _parse_binary(path)
    else:
        raise ValidationError(f"unknown table format {format!r}")
    return EmbeddingTable.from_arrays(labels, vectors)


def save_table(table: EmbeddingTable, path, format: str = "text") -> None:
    path = Path(path)
    try:
        if format == "text":
            with open(path, "w", encoding="utf-8") as fh:
                for label, row in zip(table.labels, table.vectors):
                    fh.write(label + " " + " ".join(f"{v:.9g}" for v in row.tolist()) + "\n")
        elif format == "binary":
            with open(path, "wb") as fh:
                fh.write(_HEADER.pack(TABLE_MAGIC, FORMAT_VERSION, table.count, table.dim))
                for label in table.labels:
                    raw = label.encode("utf-8")
                    fh.write(struct.pack("<H", len(raw)))
                    fh.write(raw)
                fh.write(np.ascontiguousarray(table.vectors, dtype="<f4").tobytes())
        else:
            raise ValidationError(f"unknown table format {format!r}")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write table: {exc.strerror}", str(path)) from exc


def load_prompt(path) -> PromptEmbedding:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    buf = path.read_bytes()
    magic, version, length, d = _HEADER.unpack(_read_exact(buf, 0, _HEADER.size, "header", path))
    if magic != PROMPT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = 4 * length * d
    actual = len(buf) - _HEADER.size
    if actual != expected:
        raise FormatError(f"{path}: payload size mismatch: expected {expected} bytes, got {actual}")
    tokens = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(length, d)
    return PromptEmbedding(tokens.copy())


def prompt_bytes(prompt: PromptEmbedding) -> bytes:
    return _HEADER.pack(PROMPT_MAGIC, FORMAT_VERSION, prompt.length, prompt.dim) + np.ascontiguousarray(
        prompt.tokens, dtype="<f4"
    ).tobytes()


def save_prompt(prompt: PromptEmbedding, path) -> None:
    Path(path).write_bytes(prompt_bytes(prompt))
