"""Readers for the dataset file formats: IMF float images, binary PGM,
and JSONL manifests.

These formats are the interchange contract with the dataset-generation
toolkit; this module reimplements just enough of them to consume and
produce dataset files without importing that toolkit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

__all__ = ["ManifestRecord", "ManifestData", "read_image", "write_imf",
           "read_manifest"]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a64(payload: bytes) -> int:
    h = _FNV_OFFSET
    for b in payload:
        h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    clean_path: str
    degraded_path: str
    euler: tuple[float, float, float]
    rotation: tuple[float, ...]
    noise_norm: float
    seed: int
    split: str | None


@dataclass
class ManifestData:
    records: list[ManifestRecord]
    base_dir: str
    convention: str

    def with_split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]


def _read_imf(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode("utf-8"))
        if header.get("dtype") != "f32le":
            raise ValueError(f"{path}: unsupported IMF dtype {header.get('dtype')!r}")
        w, h = header["w"], header["h"]
        payload = f.read(4 * w * h)
    if len(payload) != 4 * w * h:
        raise ValueError(f"{path}: truncated IMF payload")
    if f"{_fnv1a64(payload):016x}" != header.get("fnv64"):
        raise ValueError(f"{path}: IMF checksum mismatch")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM")
    # header: magic, width, height, maxval, separated by whitespace/comments
    tokens = []
    i = 2
    while len(tokens) < 3:
        while i < len(blob) and blob[i : i + 1] in b" \t\r\n":
            i += 1
        if blob[i : i + 1] == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(blob) and blob[j : j + 1] not in b" \t\r\n":
            j += 1
        tokens.append(int(blob[i:j]))
        i = j
    i += 1  # single whitespace after maxval
    w, h, maxval = tokens
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    raw = np.frombuffer(blob[i : i + w * h * dtype.itemsize], dtype=dtype).reshape(h, w)
    return (raw.astype(np.float64) / maxval).astype(np.float32)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Load an IMF or binary PGM file as a (h, w) float32 array."""
    path = os.fspath(path)
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"P5":
        return _read_pgm(path)
    return _read_imf(path)


def write_imf(data: np.ndarray, path: str | os.PathLike) -> None:
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2:
        raise ValueError(f"expected 2-D image, got shape {data.shape}")
    payload = data.tobytes()
    header = json.dumps(
        {"w": data.shape[1], "h": data.shape[0], "dtype": "f32le",
         "fnv64": f"{_fnv1a64(payload):016x}"},
        separators=(",", ":"),
    )
    with open(os.fspath(path), "wb") as f:
        f.write(header.encode("utf-8"))
        f.write(b"\n")
        f.write(payload)


def read_manifest(path: str | os.PathLike) -> ManifestData:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as f:
        header = json.loads(f.readline())
        records = []
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(ManifestRecord(
                id=d["id"],
                clean_path=d["clean_path"],
                degraded_path=d["degraded_path"],
                euler=tuple(d["euler"]),
                rotation=tuple(d["rotation"]),
                noise_norm=float(d["noise_norm"]),
                seed=int(d["seed"]),
                split=d.get("split"),
            ))
    return ManifestData(records=records, base_dir=os.path.dirname(path),
                        convention=header.get("convention", ""))
