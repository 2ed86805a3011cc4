"""Shared fixtures: synthetic rotating-object scenes and CLI plumbing.

The dataset/deconvolution toolkit is driven strictly through its
command-line interface and file formats; nothing here imports it.
"""

import json
import math
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from rso_learned.io import write_imf

CLI = [sys.executable, "-m", "rso_invert.cli"]


def run_cli(*args, check=True):
    proc = subprocess.run(CLI + [str(a) for a in args],
                          capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise RuntimeError(f"CLI {' '.join(map(str, args))} failed "
                           f"rc={proc.returncode}:\n{proc.stderr}")
    return proc


def rotated_pattern(rz: float, size: int = 64) -> np.ndarray:
    """Asymmetric bright object rotated in-plane by rz.

    A one-sided bar gives a coarse orientation cue with no half-turn
    ambiguity; the small peripheral blobs are the fine cues whose
    recoverability separates the restoration methods.
    """
    c = (size - 1) / 2.0
    ys, xs = np.mgrid[0:size, 0:size]
    ca, sa = math.cos(-rz), math.sin(-rz)
    u = ca * (xs - c) - sa * (ys - c)
    v = sa * (xs - c) + ca * (ys - c)
    img = np.zeros((size, size), dtype=np.float64)
    img += 0.85 * ((u > -2) & (u < 20) & (np.abs(v) < 1.8))
    img += 0.9 * np.exp(-(((u - 16) ** 2 + v ** 2) / (2 * 1.6 ** 2)))
    img += 0.65 * np.exp(-((u ** 2 + (v - 8) ** 2) / (2 * 1.3 ** 2)))
    img += 0.5 * np.exp(-(((u + 7) ** 2 + (v + 4) ** 2) / (2 * 1.2 ** 2)))
    img += 0.55 * np.exp(-((u ** 2 + v ** 2) / (2 * 3.0 ** 2)))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def asymmetric_kernel(side: int = 17) -> np.ndarray:
    """Optics-like blur: bright core plus a displaced skirt (not Gaussian)."""
    r = np.arange(side) - side // 2
    xx, yy = np.meshgrid(r, r)
    core = np.exp(-((xx ** 2 + yy ** 2) / (2 * 2.6 ** 2)))
    skirt = 0.45 * np.exp(-(((xx - 1.8) ** 2 + (yy + 1.2) ** 2) / (2 * 4.2 ** 2)))
    k = core + skirt
    return (k / k.sum()).astype(np.float32)


def star_points_image(rng, size: int = 360, n_stars: int = 25) -> np.ndarray:
    """Clean point-source field (subpixel positions, CIC-deposited)."""
    img = np.zeros((size, size), dtype=np.float32)
    margin = 30
    placed = []
    while len(placed) < n_stars:
        x = int(rng.integers(margin, size - margin))
        y = int(rng.integers(margin, size - margin))
        if all((x - px) ** 2 + (y - py) ** 2 > 40 ** 2 for px, py in placed):
            placed.append((x, y))
    for x, y in placed:
        fx, fy = rng.uniform(-0.5, 0.5, 2)
        flux = float(rng.uniform(40, 100))
        x0, y0 = int(np.floor(x + fx)), int(np.floor(y + fy))
        ax, ay = x + fx - x0, y + fy - y0
        for dy in (0, 1):
            for dx in (0, 1):
                w = (ax if dx else 1 - ax) * (ay if dy else 1 - ay)
                img[y0 + dy, x0 + dx] += flux * w
    return img


def build_scene_dataset(root, kernel: np.ndarray, n: int = 240, size: int = 64,
                        seed: int = 5, noise: float = 0.10,
                        gen_seed: int = 31, split_seed: int = 4) -> str:
    """Clean scenes + labels -> degraded dataset via the dataset CLI.

    Returns the manifest path. Labels are single-axis rotations (0, 0, rz).
    """
    rng = np.random.default_rng(seed)
    clean = os.path.join(root, "clean")
    os.makedirs(clean, exist_ok=True)
    labels = {}
    for i in range(n):
        rz = float(rng.uniform(0, 2 * math.pi))
        sid = f"s{i:04d}"
        write_imf(rotated_pattern(rz, size), os.path.join(clean, sid + ".imf"))
        labels[sid] = [0.0, 0.0, rz]
    label_path = os.path.join(root, "labels.json")
    with open(label_path, "w") as f:
        json.dump(labels, f)
    kernel_path = os.path.join(root, "kernel.imf")
    write_imf(kernel, kernel_path)
    out = os.path.join(root, "ds")
    run_cli("dataset", "gen", "--clean-dir", clean, "--labels", label_path,
            "--out", out, "--psf", kernel_path, "--noise-sigma", noise,
            "--seed", gen_seed)
    manifest = os.path.join(out, "manifest.jsonl")
    run_cli("dataset", "split", "--manifest", manifest,
            "--fractions", "0.8,0.1,0.1", "--seed", split_seed)
    return manifest


def deconvolve_dataset(manifest_path: str, psf_path: str, out_dir: str,
                       workers: int = 4) -> None:
    """Run the deconvolution CLI over every degraded sample."""
    from rso_learned.io import read_manifest

    manifest = read_manifest(manifest_path)
    os.makedirs(out_dir, exist_ok=True)

    def one(rec):
        run_cli("deconv", "--in", os.path.join(manifest.base_dir, rec.degraded_path),
                "--psf", psf_path, "--method", "gkt", "--delta", "auto",
                "--manifest", manifest_path,
                "--out", os.path.join(out_dir, rec.id + ".imf"))

    with ThreadPoolExecutor(max_workers=workers) as ex:
        list(ex.map(one, manifest.records))
