"""On-disk formats: 16-bit PGM images, CSV manifests and feature caches, and
the binary ``GLM1`` model container."""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


def _prepare(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------- PGM


def write_pgm(img, path) -> None:
    """Write a normalized image as binary PGM (P5), 16-bit big-endian."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {img.shape}")
    if img.size and (img.min() < 0.0 or img.max() > 1.0 or not np.isfinite(img).all()):
        raise ValueError("write_pgm expects pixel values in [0, 1]")
    h, w = img.shape
    samples = np.round(img * 65535.0).astype(">u2")
    with open(_prepare(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(samples.tobytes())


def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the first payload byte.
    """
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError(f"truncated PGM header at byte offset {pos}")
        tokens.append(data[start:pos])
    if pos >= n or not data[pos : pos + 1].isspace():
        raise FormatError(f"truncated PGM header at byte offset {pos}")
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (maxval 255 or 65535) normalized to [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {data[:2]!r} at byte offset 0)")
    tokens, offset = _pgm_tokens(data, 4)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric PGM header field") from None
    if w < 1 or h < 1:
        raise FormatError(f"{path}: invalid dimensions {w}x{h}")
    if maxval == 255:
        dtype = np.dtype("u1")
    elif maxval == 65535:
        dtype = np.dtype(">u2")
    else:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    need = w * h * dtype.itemsize
    if len(data) - offset < need:
        raise FormatError(
            f"{path}: truncated payload at byte offset {len(data)} "
            f"(expected {offset + need} bytes)"
        )
    samples = np.frombuffer(data, dtype=dtype, count=w * h, offset=offset)
    return samples.reshape(h, w).astype(np.float64) / maxval


# --------------------------------------------------------------------- CSV


@dataclass(frozen=True)
class ManifestRow:
    path: str
    wavelength_nm: float
    source_kind: str
    concentration_mgdl: float
    split: str = "none"
    augmented_from: str = ""

    @property
    def source(self) -> str:
        return f"{self.wavelength_nm:g}-{self.source_kind}"

    @property
    def is_raw(self) -> bool:
        return self.augmented_from == ""


MANIFEST_COLUMNS = [f.name for f in fields(ManifestRow)]
_SPLITS = ("train", "test", "none")


def _row_to_strings(row: ManifestRow) -> dict:
    d = asdict(row)
    d["wavelength_nm"] = repr(float(row.wavelength_nm))
    d["concentration_mgdl"] = repr(float(row.concentration_mgdl))
    return d


def _check_header(header, expected, where):
    if header is None:
        raise FormatError(f"{where}: empty file, missing header")
    missing = [c for c in expected if c not in header]
    unknown = [c for c in header if c not in expected]
    if missing:
        raise FormatError(f"{where}: missing column(s): {', '.join(missing)}")
    if unknown:
        raise FormatError(f"{where}: unknown column(s): {', '.join(unknown)}")


def _parse_manifest_record(rec: dict, where: str) -> ManifestRow:
    if rec["split"] not in _SPLITS:
        raise FormatError(f"{where}: bad split value {rec['split']!r}")
    try:
        return ManifestRow(
            path=rec["path"],
            wavelength_nm=float(rec["wavelength_nm"]),
            source_kind=rec["source_kind"],
            concentration_mgdl=float(rec["concentration_mgdl"]),
            split=rec["split"],
            augmented_from=rec["augmented_from"],
        )
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{where}: {exc}") from None


def write_manifest(rows, path) -> None:
    with open(_prepare(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(_row_to_strings(row))


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, MANIFEST_COLUMNS, str(path))
        return [
            _parse_manifest_record(rec, f"{path}:{i + 2}") for i, rec in enumerate(reader)
        ]


def write_features(rows, features: np.ndarray, names, path) -> None:
    """Feature cache: manifest columns followed by one column per feature."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (len(rows), len(names)):
        raise ValueError(f"feature matrix shape {features.shape} does not match rows/names")
    with open(_prepare(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS + list(names))
        for row, vec in zip(rows, features):
            d = _row_to_strings(row)
            writer.writerow([d[c] for c in MANIFEST_COLUMNS] + [repr(float(v)) for v in vec])


def read_features(path, names):
    """Inverse of :func:`write_features`; returns ``(rows, matrix)``."""
    names = list(names)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _check_header(reader.fieldnames, MANIFEST_COLUMNS + names, str(path))
        rows, vecs = [], []
        for i, rec in enumerate(reader):
            rows.append(_parse_manifest_record(rec, f"{path}:{i + 2}"))
            vecs.append([float(rec[n]) for n in names])
    return rows, np.array(vecs, dtype=np.float64).reshape(len(rows), len(names))


def write_table(path, header, records) -> None:
    """Plain RFC-4180 CSV with a fixed header."""
    with open(_prepare(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(records)


def read_table(path, required=()) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: empty file, missing header")
        missing = [c for c in required if c not in reader.fieldnames]
        if missing:
            raise FormatError(f"{path}: missing column(s): {', '.join(missing)}")
        return list(reader)


# ------------------------------------------------------------------ models

MAGIC = b"GLM1"
FORMAT_VERSION = 1


@dataclass
class ModelFile:
    """Decoded model container: a kind tag, a JSON spec block and named arrays."""

    kind: str
    spec: dict
    arrays: dict[str, np.ndarray]


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<Q", len(b)) + b


def encode_model_file(mf: ModelFile) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", FORMAT_VERSION))
    out.write(_pack_str(mf.kind))
    out.write(_pack_str(json.dumps(mf.spec, sort_keys=True, separators=(",", ":"))))
    out.write(struct.pack("<Q", len(mf.arrays)))
    for name, arr in mf.arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        out.write(_pack_str(name))
        out.write(struct.pack("<Q", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(struct.pack("<Q", arr.size))
        out.write(arr.tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes, where: str):
        self.data = data
        self.pos = 0
        self.where = where

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.where}: truncated model file at byte offset {len(self.data)}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u64()).decode("utf-8")


def decode_model_file(data: bytes, where: str = "<bytes>") -> ModelFile:
    r = _Reader(data, where)
    if r.take(4) != MAGIC:
        raise FormatError(f"{where}: bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"{where}: unsupported format version {version} (expected {FORMAT_VERSION})")
    kind = r.string()
    spec = json.loads(r.string())
    arrays = {}
    for _ in range(r.u64()):
        name = r.string()
        ndim = r.u64()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        size = r.u64()
        if int(np.prod(shape)) != size:
            raise FormatError(f"{where}: array {name!r} size does not match its shape")
        arrays[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{where}: {len(data) - r.pos} trailing bytes after last block")
    return ModelFile(kind, spec, arrays)


def model_save(model, path) -> None:
    """Serialize any model exposing ``to_model_file()``."""
    _prepare(path).write_bytes(encode_model_file(model.to_model_file()))


def model_load(path):
    mf = decode_model_file(Path(path).read_bytes(), str(path))
    if mf.kind == "nn":
        from .nn import TrainedModel

        return TrainedModel.from_model_file(mf)
    if mf.kind == "forest":
        from .forest import ForestModel

        return ForestModel.from_model_file(mf)
    if mf.kind == "ols":
        from .forest import OlsModel

        return OlsModel.from_model_file(mf)
    raise FormatError(f"{path}: unknown model kind {mf.kind!r}")
