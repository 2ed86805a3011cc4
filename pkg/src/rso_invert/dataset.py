"""Paired clean/degraded dataset generation with manifests and deterministic splits.

A dataset is a directory of degraded IMF images plus ``manifest.jsonl``:
line 1 is a header carrying the degradation config and the Euler
convention, each following line is one sample record. Per-sample noise is
keyed by hashing (config seed, sample id) so insertion order and worker
parallelism cannot change any sample's pixels.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .degrade import DegradeConfig, degrade
from .image import fnv1a64, load_image, save_image
from .rotations import EULER_CONVENTION, EulerXYZ, euler_to_matrix, grid_labels

__all__ = [
    "SampleRecord",
    "Manifest",
    "ValidationReport",
    "derive_seed",
    "generate",
    "split",
    "validate",
    "save_manifest",
    "load_manifest",
    "max_workers",
]

MANIFEST_NAME = "manifest.jsonl"
_SPLIT_NAMES = ("train", "val", "test")


def max_workers() -> int:
    """Worker cap for batch operations; RSO_INVERT_THREADS overrides."""
    cap = os.cpu_count() or 1
    env = os.environ.get("RSO_INVERT_THREADS")
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            pass
    return cap


@dataclass(frozen=True)
class SampleRecord:
    id: str
    clean_path: str
    degraded_path: str
    euler: EulerXYZ
    rotation: tuple[float, ...]
    noise_norm: float
    seed: int
    split: str | None = None

    def to_json_dict(self) -> dict:
        d = {
            "id": self.id,
            "clean_path": self.clean_path,
            "degraded_path": self.degraded_path,
            "euler": [self.euler.rx, self.euler.ry, self.euler.rz],
            "rotation": list(self.rotation),
            "noise_norm": self.noise_norm,
            "seed": self.seed,
        }
        if self.split is not None:
            d["split"] = self.split
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SampleRecord":
        return cls(
            id=d["id"],
            clean_path=d["clean_path"],
            degraded_path=d["degraded_path"],
            euler=EulerXYZ(*d["euler"]),
            rotation=tuple(float(v) for v in d["rotation"]),
            noise_norm=float(d["noise_norm"]),
            seed=int(d["seed"]),
            split=d.get("split"),
        )


@dataclass
class Manifest:
    records: list[SampleRecord]
    config: DegradeConfig
    convention: str = EULER_CONVENTION
    version: int = 1
    path: str | None = None

    @property
    def base_dir(self) -> str:
        return os.path.dirname(self.path) if self.path else "."


@dataclass
class ValidationReport:
    ok: bool
    counts: dict[str, tuple[int, int]] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)


def derive_seed(base_seed: int, sample_id: str) -> int:
    """Stable per-sample seed from the config seed and the sample id."""
    payload = int(base_seed).to_bytes(8, "little", signed=False) + sample_id.encode("utf-8")
    return fnv1a64(payload)


def save_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    path = os.fspath(path)
    header = {
        "config": manifest.config.to_json_dict(),
        "convention": manifest.convention,
        "version": manifest.version,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(header, separators=(",", ":")))
        f.write("\n")
        for rec in manifest.records:
            f.write(json.dumps(rec.to_json_dict(), separators=(",", ":")))
            f.write("\n")
    manifest.path = path


def load_manifest(path: str | os.PathLike) -> Manifest:
    path = os.fspath(path)
    with open(path, "r", encoding="utf-8") as f:
        header_line = f.readline()
        header = json.loads(header_line)
        records = [SampleRecord.from_json_dict(json.loads(line))
                   for line in f if line.strip()]
    return Manifest(
        records=records,
        config=DegradeConfig.from_json_dict(header["config"]),
        convention=header["convention"],
        version=int(header.get("version", 1)),
        path=path,
    )


def _resolve_labels(labels, image_ids: list[str]) -> dict[str, EulerXYZ]:
    """Map sample ids to Euler labels from a grid spec or a JSON label file."""
    if isinstance(labels, str) and labels.startswith("grid:"):
        steps = int(labels.split(":", 1)[1])
        grid = grid_labels(steps)
        if len(image_ids) > len(grid):
            raise ValueError(
                f"{len(image_ids)} images exceed the {len(grid)}-point grid")
        return {sid: grid[i] for i, sid in enumerate(image_ids)}
    if isinstance(labels, dict):
        table = labels
    else:
        with open(os.fspath(labels), "r", encoding="utf-8") as f:
            table = json.load(f)
    out = {}
    for sid in image_ids:
        if sid not in table:
            raise ValueError(f"missing label for image {sid!r}")
        v = table[sid]
        out[sid] = v if isinstance(v, EulerXYZ) else EulerXYZ(*v)
    return out


def _generate_one(args) -> SampleRecord:
    sid, clean_file, euler, cfg, out_dir = args
    degraded_rel = os.path.join("degraded", sid + ".imf")
    preview_rel = os.path.join("preview", sid + ".pgm")
    degraded_abs = os.path.join(out_dir, degraded_rel)
    preview_abs = os.path.join(out_dir, preview_rel)
    try:
        img = load_image(clean_file)
        sample_cfg = cfg.with_seed(derive_seed(cfg.seed, sid))
        degraded, record = degrade(img, sample_cfg)
        save_image(degraded, degraded_abs, format="imf")
        save_image(degraded, preview_abs, format="pgm8")
    except Exception:
        # never leave half-written sample files behind
        for p in (degraded_abs, preview_abs):
            if os.path.exists(p):
                os.unlink(p)
        raise
    rot = euler_to_matrix(euler)
    return SampleRecord(
        id=sid,
        clean_path=os.path.relpath(clean_file, out_dir),
        degraded_path=degraded_rel,
        euler=euler,
        rotation=tuple(rot.flat()),
        noise_norm=record.noise_norm,
        seed=record.seed,
    )


def generate(clean_dir: str | os.PathLike, labels, cfg: DegradeConfig,
             out_dir: str | os.PathLike) -> Manifest:
    """Degrade every clean image and write the dataset manifest.

    ``labels`` is either "grid:N" (sorted images take grid indices in
    order) or a JSON file / dict keyed by image stem. Output layout:
    out_dir/degraded/<id>.imf, out_dir/preview/<id>.pgm,
    out_dir/manifest.jsonl. Regeneration with the same config seed is
    byte-identical.
    """
    clean_dir = os.fspath(clean_dir)
    out_dir = os.fspath(out_dir)
    files = sorted(
        f for f in os.listdir(clean_dir)
        if f.rsplit(".", 1)[-1].lower() in ("pgm", "imf")
    )
    ids = [os.path.splitext(f)[0] for f in files]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate image stems in clean directory")
    label_map = _resolve_labels(labels, ids)
    os.makedirs(os.path.join(out_dir, "degraded"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "preview"), exist_ok=True)
    jobs = [(sid, os.path.join(clean_dir, f), label_map[sid], cfg, out_dir)
            for sid, f in zip(ids, files)]
    workers = max_workers()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            records = list(ex.map(_generate_one, jobs))
    else:
        records = [_generate_one(j) for j in jobs]
    records.sort(key=lambda r: r.id)
    manifest = Manifest(records=records, config=cfg)
    save_manifest(manifest, os.path.join(out_dir, MANIFEST_NAME))
    return manifest


def _largest_remainder(n: int, fractions: tuple[float, ...]) -> list[int]:
    exact = [n * f for f in fractions]
    counts = [int(math.floor(e)) for e in exact]
    short = n - sum(counts)
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def split(manifest: Manifest, fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> Manifest:
    """Assign train/val/test tags by a seeded permutation.

    Counts follow the largest-remainder apportionment of the fractions,
    so they always sum to the record count; the same seed always yields
    the same assignment.
    """
    if not manifest.records:
        raise ValueError("cannot split an empty manifest")
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    n = len(manifest.records)
    counts = _largest_remainder(n, tuple(fractions))
    perm = np.random.Generator(np.random.PCG64(seed)).permutation(n)
    tags: list[str | None] = [None] * n
    pos = 0
    for name, cnt in zip(_SPLIT_NAMES, counts):
        for idx in perm[pos : pos + cnt]:
            tags[int(idx)] = name
        pos += cnt
    new_records = [replace(rec, split=tags[i]) for i, rec in enumerate(manifest.records)]
    return Manifest(records=new_records, config=manifest.config,
                    convention=manifest.convention, version=manifest.version,
                    path=manifest.path)


def validate(manifest: Manifest, base_dir: str | os.PathLike | None = None) -> ValidationReport:
    """Structural audit: id uniqueness, file existence, rotation/Euler
    consistency, and split partition (when tags are present)."""
    base = os.fspath(base_dir) if base_dir is not None else manifest.base_dir
    counts: dict[str, list[int]] = {k: [0, 0] for k in
                                    ("unique_ids", "files_exist", "rotation_consistent",
                                     "split_partition")}
    failures: list[str] = []

    seen: set[str] = set()
    for rec in manifest.records:
        if rec.id in seen:
            counts["unique_ids"][1] += 1
            failures.append(f"duplicate id {rec.id!r}")
        else:
            counts["unique_ids"][0] += 1
            seen.add(rec.id)

    for rec in manifest.records:
        missing = [p for p in (rec.clean_path, rec.degraded_path)
                   if not os.path.exists(os.path.join(base, p))]
        if missing:
            counts["files_exist"][1] += 1
            failures.append(f"{rec.id}: missing files {missing}")
        else:
            counts["files_exist"][0] += 1

    for rec in manifest.records:
        expected = np.asarray(euler_to_matrix(rec.euler).flat())
        got = np.asarray(rec.rotation, dtype=np.float64)
        if got.shape != (9,) or np.max(np.abs(expected - got)) > 1e-9:
            counts["rotation_consistent"][1] += 1
            failures.append(f"{rec.id}: rotation does not match euler angles")
        else:
            counts["rotation_consistent"][0] += 1

    tagged = [rec for rec in manifest.records if rec.split is not None]
    if tagged:
        for rec in manifest.records:
            if rec.split in _SPLIT_NAMES:
                counts["split_partition"][0] += 1
            else:
                counts["split_partition"][1] += 1
                failures.append(f"{rec.id}: split tag {rec.split!r} breaks the partition")
    else:
        counts["split_partition"][0] = len(manifest.records)

    ok = all(bad == 0 for _, bad in counts.values())
    return ValidationReport(ok=ok,
                            counts={k: (v[0], v[1]) for k, v in counts.items()},
                            failures=failures)
