"""Readers and writers for the on-disk formats.

* FTEN: ``b"FTEN"``, uint32-LE rank, rank uint32-LE extents, then float32-LE
  values in row-major order. Values are widened to float64 on load.
* PGM masks: binary ``P5`` with maxval <= 255; 0 is background, anything else
  foreground.
* Embedding table: one ``<label> <v1> ... <vE>`` record per line.
* Manifest: JSON lines, one item per line.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

FTEN_MAGIC = b"FTEN"


class ParseError(ValueError):
    """A file does not follow its format."""


class DataError(ValueError):
    """A file parsed but holds values outside the documented range."""


class LookupFailure(KeyError):
    """A class label is missing from the embedding table."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "lookup failure"


@contextmanager
def atomic_output(path: str | os.PathLike, mode: str = "wb"):
    """Write to a temporary sibling and rename over ``path`` only on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    with atomic_output(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- FTEN ---------------------------------------------------------------------


def encode_ften(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    header = FTEN_MAGIC + struct.pack("<I", array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype="<f4").tobytes()


def decode_ften(buf: bytes) -> np.ndarray:
    if buf[:4] != FTEN_MAGIC:
        raise ParseError(f"bad FTEN magic {buf[:4]!r} at byte offset 0")
    if len(buf) < 8:
        raise ParseError("truncated FTEN rank at byte offset 4")
    (rank,) = struct.unpack_from("<I", buf, 4)
    body = 8 + 4 * rank
    if len(buf) < body:
        raise ParseError(f"truncated FTEN extents at byte offset {len(buf)}")
    shape = struct.unpack_from(f"<{rank}I", buf, 8)
    n = int(np.prod(shape, dtype=np.int64))
    if len(buf) != body + 4 * n:
        raise ParseError(
            f"FTEN payload at byte offset {body} holds {len(buf) - body} bytes, "
            f"expected {4 * n} for shape {shape}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=body)
    return data.astype(np.float64).reshape(shape)


def write_ften(path, array: np.ndarray) -> None:
    with atomic_output(path) as fh:
        fh.write(encode_ften(array))


def read_ften(path) -> np.ndarray:
    return decode_ften(Path(path).read_bytes())


# -- PGM ----------------------------------------------------------------------


def _pgm_tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    tokens = []
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ParseError(f"truncated PGM header at byte offset {pos}")
        token = buf[start:pos]
        if not token.isdigit():
            raise ParseError(f"non-numeric PGM header field {token!r} at byte offset {start}")
        tokens.append(int(token))
    return tokens, pos


def decode_pgm(buf: bytes) -> np.ndarray:
    """Decode a binary P5 image into a uint8 array of shape (height, width)."""
    if buf[:2] != b"P5":
        raise ParseError(f"bad PGM magic {buf[:2]!r} at byte offset 0")
    (width, height, maxval), pos = _pgm_tokens(buf, 3, 2)
    if not 0 < maxval <= 255:
        raise DataError(f"PGM maxval {maxval} unsupported; masks must be 8-bit")
    pos += 1  # single whitespace byte ends the header
    expected = width * height
    if len(buf) - pos != expected:
        raise ParseError(
            f"PGM raster at byte offset {pos} holds {len(buf) - pos} bytes, expected {expected}"
        )
    return np.frombuffer(buf, dtype=np.uint8, offset=pos).reshape(height, width).copy()


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-d grid, got shape {image.shape}")
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    with atomic_output(path) as fh:
        fh.write(encode_pgm(image))


def load_mask(path) -> np.ndarray:
    """Boolean (height, width) mask; any nonzero byte is foreground."""
    return decode_pgm(Path(path).read_bytes()) != 0


def save_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, np.where(np.asarray(mask, dtype=bool), 255, 0))


# -- embedding table ----------------------------------------------------------


class EmbeddingTable:
    """Case-sensitive label -> vector map with a fixed dimension."""

    def __init__(self, vectors: dict[str, np.ndarray]):
        dims = {v.shape[0] for v in vectors.values()}
        if len(dims) > 1:
            raise DataError(f"embedding vectors have mixed dimensions {sorted(dims)}")
        self.vectors = vectors
        self.dim = dims.pop() if dims else 0

    def __contains__(self, label: str) -> bool:
        return label in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def labels(self) -> list[str]:
        return list(self.vectors)

    def lookup(self, label: str) -> np.ndarray:
        try:
            return self.vectors[label]
        except KeyError:
            raise LookupFailure(f"class label {label!r} not in embedding table") from None


def load_embedding_table(path) -> EmbeddingTable:
    vectors: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            label, values = fields[0], fields[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric embedding component") from None
            if dim is None:
                dim = vec.size
            if vec.size != dim or dim == 0:
                raise ParseError(f"{path}:{lineno}: expected {dim} components, got {vec.size}")
            if label in vectors:
                raise ParseError(f"{path}:{lineno}: duplicate label {label!r}")
            vectors[label] = vec
    return EmbeddingTable(vectors)


def save_embedding_table(path, table: dict[str, np.ndarray]) -> None:
    with atomic_output(path, "w") as fh:
        for label, vec in table.items():
            fh.write(label + " " + " ".join(f"{v:.6f}" for v in vec) + "\n")


# -- manifest -----------------------------------------------------------------

MANIFEST_REQUIRED = ("class", "image_or_feature_path", "mask_path")


def load_manifest(path) -> list[dict]:
    """Read a JSON-lines manifest. Relative paths resolve against its folder."""
    root = Path(path).parent
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise ParseError(f"{path}:{lineno}: record is not an object")
            for key in MANIFEST_REQUIRED:
                if key not in rec:
                    raise ParseError(f"{path}:{lineno}: missing field {key!r}")
            for key in ("image_or_feature_path", "mask_path"):
                rec[key] = str(root / rec[key])
            records.append(rec)
    return records


def write_manifest(path, records: list[dict]) -> None:
    with atomic_output(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_class_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]
