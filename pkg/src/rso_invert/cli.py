"""Command-line surface for the toolkit.

Subcommands: epsf-build, deconv, metrics, pose-eval, and the dataset
group (gen / split / validate). Exit codes: 0 success, 1 validation or
input error, 2 numerical failure. All tabular output is RFC-4180 CSV
with LF endings and '.' decimals; plotting is left to external tools.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import dataset as ds
from . import epsf as ep
from . import metrics as mt
from . import solvers as sv
from .degrade import DegradeConfig
from .image import ImageGray, load_image, save_image
from .operator import make_operator
from .rotations import Rotation, geodesic_angle, svd_orthogonalize

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2

_METHOD_ITERS = {"at": 20, "hgmres": 20, "gkt": 10}


class _CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def _load_kernel(path: str) -> ImageGray:
    """Load a deconvolution kernel from an ePSF file (with sidecar) or a
    plain kernel image; plain kernels are renormalized to sum 1."""
    if os.path.exists(path + ".json"):
        return ep.sample_kernel(ep.load_epsf(path))
    img = load_image(path)
    total = float(img.data.sum())
    if total <= 0:
        raise _CliError(f"kernel {path} has nonpositive mass")
    return ImageGray((img.data.astype(np.float64) / total).astype(np.float32))


def _write_csv(path: str, rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerows(rows)


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return repr(float(v))


def cmd_epsf_build(args) -> int:
    if os.path.isdir(args.stars):
        frames = sorted(
            os.path.join(args.stars, f) for f in os.listdir(args.stars)
            if f.rsplit(".", 1)[-1].lower() in ("pgm", "imf")
        )
        if not frames:
            raise _CliError(f"no images in {args.stars}")
    else:
        frames = [args.stars]
    n_detected = 0
    stamps = []
    for frame in frames:
        img = load_image(frame)
        positions = ep.detect_stars(img, threshold=args.threshold,
                                    min_sep=args.min_sep,
                                    edge_margin=args.edge_margin)
        n_detected += len(positions)
        stamps.extend(ep.extract_stamps(img, positions, radius=args.radius))
    if n_detected == 0:
        raise _CliError("no stars detected")
    if not stamps:
        raise _CliError("no usable stamps (all positions too close to a border)")
    psf = ep.build_epsf(stamps, oversample=args.oversample,
                        kernel_side=args.kernel_side, max_iter=args.max_iter,
                        tol=args.tol)
    ep.save_epsf(psf, args.out)
    diagnostics = {
        "frames": len(frames),
        "stars_detected": n_detected,
        "stamps_used": len(stamps),
        "stamps_skipped": n_detected - len(stamps),
        "iterations": psf.iterations_run,
        "final_shift": psf.final_shift,
    }
    with open(args.out + ".diag.json", "w", encoding="utf-8") as f:
        json.dump(diagnostics, f, separators=(",", ":"))
        f.write("\n")
    print(json.dumps(diagnostics))
    return EXIT_OK


def cmd_deconv(args) -> int:
    if args.method not in _METHOD_ITERS:
        raise _CliError(f"unknown method {args.method!r}")
    img = load_image(args.input)
    kernel = _load_kernel(args.psf)
    if args.delta == "auto":
        if not args.manifest:
            raise _CliError("--delta auto requires --manifest")
        manifest = ds.load_manifest(args.manifest)
        base = manifest.base_dir
        target = os.path.abspath(args.input)
        matches = [r for r in manifest.records
                   if os.path.abspath(os.path.join(base, r.degraded_path)) == target]
        if not matches:
            raise _CliError(f"input {args.input} not found in manifest")
        delta = matches[0].noise_norm
    else:
        try:
            delta = float(args.delta)
        except ValueError:
            raise _CliError(f"bad --delta value {args.delta!r}") from None
    iters = args.iters if args.iters is not None else _METHOD_ITERS[args.method]
    op = make_operator(kernel, img.width, img.height)
    b = img.data.astype(np.float64).reshape(-1)
    if args.method == "at":
        sol = sv.arnoldi_tikhonov(op, b, k=iters, delta=delta, eta=args.eta)
    elif args.method == "hgmres":
        sol = sv.hybrid_gmres(op, b, k_max=iters, delta=delta, eta=args.eta)
    else:
        sol = sv.gk_tikhonov(op, b, k=iters, delta=delta, eta=args.eta)
    if not np.all(np.isfinite(sol.x)):
        raise _CliError("solver produced a non-finite solution", EXIT_NUMERIC)
    save_image(ImageGray(sol.x.reshape(img.shape).astype(np.float32)), args.out,
               format="imf")
    diagnostics = {
        "method": args.method,
        "k": sol.iterations,
        "lambda": sol.lam,
        "alpha": sol.alpha,
        "residual": sol.residual_norm,
        "delta": delta,
        "eta": args.eta,
        "converged": sol.converged,
        "status": sol.status,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as f:
        json.dump(diagnostics, f, separators=(",", ":"))
        f.write("\n")
    print(json.dumps(diagnostics))
    return EXIT_OK


def _metric_pairs(args) -> list[tuple[str, ImageGray, ImageGray]]:
    if len(args.pairs) == 1:
        manifest = ds.load_manifest(args.pairs[0])
        base = manifest.base_dir
        out = []
        for rec in manifest.records:
            a = load_image(os.path.join(base, rec.clean_path))
            b = load_image(os.path.join(base, rec.degraded_path))
            out.append((rec.id, a, b))
        return out
    if len(args.pairs) == 2:
        return [("pair", load_image(args.pairs[0]), load_image(args.pairs[1]))]
    raise _CliError("--pairs takes one manifest or exactly two image paths")


def cmd_metrics(args) -> int:
    pairs = _metric_pairs(args)
    if not pairs:
        raise _CliError("no image pairs to compare")
    rows = [["id", "mse", "psnr", "ssim"]]
    values = {"mse": [], "psnr": [], "ssim": []}
    for pid, a, b in pairs:
        try:
            rep = mt.compare(a, b, peak=args.peak)
        except ValueError as exc:
            raise _CliError(str(exc)) from None
        rows.append([pid, _fmt(rep.mse), _fmt(rep.psnr), _fmt(rep.ssim)])
        values["mse"].append(rep.mse)
        values["psnr"].append(rep.psnr)
        values["ssim"].append(rep.ssim)
    for stat in ("mean", "std", "min", "q1", "median", "q3", "max"):
        row = [stat]
        for key in ("mse", "psnr", "ssim"):
            finite = [v for v in values[key] if math.isfinite(v)]
            if finite:
                summary = mt.summarize(finite)
                row.append(_fmt(getattr(summary, stat)))
            else:
                row.append("inf")
        rows.append(row)
    _write_csv(args.out, rows)
    finite_mse = [v for v in values["mse"] if math.isfinite(v)]
    kde = mt.summarize(finite_mse, with_kde=True).kde_points if finite_mse else None
    if kde:
        _write_csv(args.out + ".violin.csv",
                   [["value", "density"]] + [[_fmt(v), _fmt(d)] for v, d in kde])
    return EXIT_OK


def _read_predictions(path: str) -> dict[str, np.ndarray]:
    preds = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise _CliError("empty predictions file")
        if header[:1] != ["id"] or len(header) != 10:
            raise _CliError("predictions header must be id,m00,...,m22")
        for line in reader:
            if not line:
                continue
            if len(line) != 10:
                raise _CliError(f"malformed prediction row for id {line[0]!r}")
            try:
                m = np.array([float(v) for v in line[1:]], dtype=np.float64).reshape(3, 3)
            except ValueError:
                raise _CliError(f"non-numeric prediction for id {line[0]!r}") from None
            preds[line[0]] = m
    return preds


def cmd_pose_eval(args) -> int:
    manifest = ds.load_manifest(args.truth)
    truth = {rec.id: np.asarray(rec.rotation, dtype=np.float64).reshape(3, 3)
             for rec in manifest.records}
    preds = _read_predictions(args.pred)
    if not preds:
        raise _CliError("no predictions to evaluate")
    rows = [["id", "error_rad"]]
    errors = []
    for pid, m in preds.items():
        if pid not in truth:
            raise _CliError(f"prediction id {pid!r} not present in truth manifest")
        try:
            rot = svd_orthogonalize(m)
        except ValueError as exc:
            raise _CliError(f"{pid}: {exc}", EXIT_NUMERIC) from None
        err = geodesic_angle(rot, Rotation(truth[pid]))
        errors.append(err)
        rows.append([pid, _fmt(err)])
    summary = mt.summarize(errors, with_kde=True)
    rows.append(["mean", _fmt(summary.mean)])
    rows.append(["std", _fmt(summary.std)])
    _write_csv(args.out, rows)
    if summary.kde_points:
        _write_csv(args.out + ".violin.csv",
                   [["value", "density"]] + [[_fmt(v), _fmt(d)]
                                             for v, d in summary.kde_points])
    print(json.dumps({"count": len(errors), "mean": summary.mean, "std": summary.std}))
    return EXIT_OK


def _config_from_args(args) -> DegradeConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            return DegradeConfig.from_json_dict(json.load(f))
    if not args.psf:
        raise _CliError("dataset gen needs --config or --psf")
    return DegradeConfig(
        kernel=_load_kernel(args.psf),
        bloom_threshold=args.bloom_threshold,
        bloom_sigma=args.bloom_sigma,
        bloom_strength=args.bloom_strength,
        noise_sigma=args.noise_sigma,
        background_level=args.background,
        seed=args.seed,
    )


def cmd_dataset(args) -> int:
    if args.dataset_cmd == "gen":
        cfg = _config_from_args(args)
        manifest = ds.generate(args.clean_dir, args.labels, cfg, args.out)
        print(json.dumps({"records": len(manifest.records),
                          "manifest": os.path.join(args.out, ds.MANIFEST_NAME)}))
        return EXIT_OK
    if args.dataset_cmd == "split":
        manifest = ds.load_manifest(args.manifest)
        fractions = tuple(float(v) for v in args.fractions.split(","))
        if len(fractions) != 3:
            raise _CliError("--fractions must be three comma-separated values")
        tagged = ds.split(manifest, fractions, seed=args.seed)
        ds.save_manifest(tagged, args.manifest)
        counts = {name: sum(1 for r in tagged.records if r.split == name)
                  for name in ("train", "val", "test")}
        print(json.dumps(counts))
        return EXIT_OK
    if args.dataset_cmd == "validate":
        manifest = ds.load_manifest(args.manifest)
        report = ds.validate(manifest)
        print(json.dumps({"ok": report.ok, "counts": report.counts,
                          "failures": report.failures[:20]}))
        return EXIT_OK if report.ok else EXIT_INPUT
    raise _CliError(f"unknown dataset subcommand {args.dataset_cmd!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rso-invert",
        description="Degraded-image synthesis, PSF-based deconvolution, and "
                    "pose-error evaluation for RSO imagery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("epsf-build", formatter_class=fmt,
                       help="fit an effective PSF from a star field image")
    p.add_argument("--stars", required=True,
               help="star field image or directory of frames (PGM/IMF)")
    p.add_argument("--threshold", type=float, required=True,
                   help="detection intensity threshold")
    p.add_argument("--min-sep", dest="min_sep", type=float, default=5.0,
                   help="minimum separation between kept stars (px)")
    p.add_argument("--edge-margin", dest="edge_margin", type=int, default=10,
                   help="minimum distance of peaks from image borders (px)")
    p.add_argument("--radius", type=int, default=7, help="stamp radius (px)")
    p.add_argument("--oversample", type=int, default=4,
                   help="PSF grid samples per detector pixel")
    p.add_argument("--kernel-side", dest="kernel_side", type=int, default=None,
                   help="detector kernel side (odd; defaults to stamp side)")
    p.add_argument("--max-iter", dest="max_iter", type=int, default=20,
                   help="maximum refinement iterations")
    p.add_argument("--tol", type=float, default=0.01,
                   help="stop when star centers move less than this (px)")
    p.add_argument("--out", required=True, help="output ePSF path")
    p.set_defaults(func=cmd_epsf_build)

    p = sub.add_parser("deconv", formatter_class=fmt,
                       help="recover an image by projected Tikhonov deconvolution")
    p.add_argument("--in", dest="input", required=True, help="degraded image")
    p.add_argument("--psf", required=True, help="ePSF file or kernel image")
    p.add_argument("--method", choices=("at", "hgmres", "gkt"), default="gkt",
                   help="at=Arnoldi-Tikhonov, hgmres=hybrid GMRES, "
                        "gkt=Golub-Kahan-Tikhonov")
    p.add_argument("--iters", type=int, default=None,
                   help="Krylov steps (default 20 for at, 20 for hgmres, 10 for gkt)")
    p.add_argument("--delta", default="0", help="noise norm, or 'auto' with --manifest")
    p.add_argument("--manifest", default=None,
                   help="manifest providing noise_norm for --delta auto")
    p.add_argument("--eta", type=float, default=1.01, help="discrepancy safety factor")
    p.add_argument("--out", required=True, help="output IMF path")
    p.set_defaults(func=cmd_deconv)

    p = sub.add_parser("metrics", formatter_class=fmt,
                       help="MSE/PSNR/SSIM for image pairs, with summary rows")
    p.add_argument("--pairs", nargs="+", required=True,
                   help="one manifest path, or two image paths")
    p.add_argument("--peak", type=float, default=1.0,
                   help="PSNR peak reference (255 mimics 8-bit conventions)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pose-eval", formatter_class=fmt,
                       help="geodesic pose error of predicted rotation matrices")
    p.add_argument("--pred", required=True, help="predictions CSV (id,m00..m22)")
    p.add_argument("--truth", required=True, help="truth manifest")
    p.add_argument("--out", required=True,
                   help="output CSV (a .violin.csv KDE export is written beside it)")
    p.set_defaults(func=cmd_pose_eval)

    p = sub.add_parser("dataset", formatter_class=fmt,
                       help="generate, split, or validate paired datasets")
    dsub = p.add_subparsers(dest="dataset_cmd", required=True)

    g = dsub.add_parser("gen", formatter_class=fmt, help="degrade a clean image set")
    g.add_argument("--clean-dir", dest="clean_dir", required=True,
                   help="directory of clean PGM/IMF images")
    g.add_argument("--labels", required=True,
                   help="'grid:N' or a JSON file mapping image stem to [rx,ry,rz]")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--config", default=None, help="degradation config JSON")
    g.add_argument("--psf", default=None, help="ePSF file or kernel image")
    g.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.01,
                   help="Gaussian noise std dev")
    g.add_argument("--background", type=float, default=0.0,
                   help="constant background level")
    g.add_argument("--bloom-threshold", dest="bloom_threshold", type=float, default=0.8,
                   help="bloom highlight threshold")
    g.add_argument("--bloom-sigma", dest="bloom_sigma", type=float, default=3.0,
                   help="bloom blur sigma (px)")
    g.add_argument("--bloom-strength", dest="bloom_strength", type=float, default=0.0,
                   help="bloom gain")
    g.add_argument("--seed", type=int, default=0, help="dataset seed")
    g.set_defaults(func=cmd_dataset)

    g = dsub.add_parser("split", formatter_class=fmt,
                        help="tag records train/val/test in place")
    g.add_argument("--manifest", required=True, help="manifest to tag")
    g.add_argument("--fractions", default="0.8,0.1,0.1",
                   help="train,val,test fractions")
    g.add_argument("--seed", type=int, default=0, help="shuffle seed")
    g.set_defaults(func=cmd_dataset)

    g = dsub.add_parser("validate", formatter_class=fmt,
                        help="audit manifest integrity")
    g.add_argument("--manifest", required=True, help="manifest to validate")
    g.set_defaults(func=cmd_dataset)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; those are input errors here
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
