"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every command that writes outputs also writes the resolved run configuration
(``*.config.json``) next to them.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import secrets
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import __version__, classifier, evaluation
from .errors import (
    DegenerateConfigurationError,
    FpadError,
    InsufficientDataError,
    InvalidDataError,
    ManifestError,
)
from .imaging import (
    RGB,
    CalibrationProfile,
    PointCorrespondence,
    estimate_perspective,
    process_ftir,
    read_image,
    reprojection_residuals,
    rgb_to_hsv,
    to_grayscale,
    write_image,
)
from .texture import (
    CLBP_486,
    FUSED_972,
    GRAY_LBP_54,
    FeatureVector,
    clbp_feature,
    fuse_features,
    grayscale_lbp_feature,
    read_features,
    write_features,
)

log = logging.getLogger("fpad")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

DESCRIPTOR_FLAGS = {"gray54": GRAY_LBP_54, "clbp486": CLBP_486, "fusion972": FUSED_972}
DEFAULT_STREAM = {"gray54": "cots", "clbp486": "ftir", "fusion972": "ftir"}
IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    """Bad arguments or inputs detected before any work starts."""


def _require_file(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"missing {what}")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {p}")
    return p


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is None:
        seed = secrets.randbits(32)
        log.info("no --seed given; using random seed %d", seed)
    return seed


def _write_config(path: Path, args: argparse.Namespace, **resolved) -> None:
    doc = {k: v for k, v in vars(args).items() if k != "func"}
    doc.update(resolved)
    doc["fpad_version"] = __version__
    path.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")


def _config_path(out: Path) -> Path:
    return out / "config.json" if out.is_dir() else out.with_name(out.name + ".config.json")


def _parse_grid(text: Optional[str]) -> Tuple[float, ...]:
    if text is None:
        return classifier.DEFAULT_C_GRID
    try:
        grid = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"--c-grid must be comma-separated numbers, got {text!r}") from None
    if not grid or any(c <= 0 for c in grid):
        raise UsageError("--c-grid values must be positive")
    return grid


def _manifest_fingerprint(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# calibrate


def read_correspondences(path: Path) -> List[PointCorrespondence]:
    """CSV rows ``sx,sy,dx,dy``; a non-numeric first row is taken as a header."""
    pairs = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip():
                continue
            try:
                sx, sy, dx, dy = (float(v) for v in row)
            except ValueError:
                if lineno == 1:
                    continue
                raise UsageError(f"{path}:{lineno}: expected sx,sy,dx,dy") from None
            pairs.append(PointCorrespondence((sx, sy), (dx, dy)))
    return pairs


def cmd_calibrate(args) -> int:
    pairs_path = _require_file(args.pairs, "correspondence file")
    pairs = read_correspondences(pairs_path)
    try:
        profile = estimate_perspective(pairs, args.native_ppi, args.target_ppi)
    except (InsufficientDataError, DegenerateConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    profile.save(out)
    residual = float(reprojection_residuals(profile, pairs).max())
    _write_config(_config_path(out), args, n_pairs=len(pairs), max_residual=residual)
    print(f"wrote {out} from {len(pairs)} pairs; max reprojection residual {residual:.3g} px")
    return EXIT_OK


# --------------------------------------------------------------------------
# process


def cmd_process(args) -> int:
    in_dir = Path(args.in_dir)
    if not in_dir.is_dir():
        raise UsageError(f"input directory not found: {in_dir}")
    profile = CalibrationProfile.load(_require_file(args.profile, "calibration profile"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = sorted(p for p in in_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    done, failed = 0, 0
    for path in inputs:
        try:
            img = read_image(path)
            result = process_ftir(img.with_data(img.data, ppi=None), profile)
            write_image(result, out / (path.stem + ".png"))
            done += 1
        except (FpadError, OSError) as exc:
            log.error("%s: %s", path.name, exc)
            failed += 1
    _write_config(_config_path(out), args, processed=done, failed=failed)
    print(f"processed {done} image(s), {failed} failed")
    return EXIT_RUNTIME if failed else EXIT_OK


# --------------------------------------------------------------------------
# features


def _load_records(path: Path) -> List[evaluation.SampleRecord]:
    return evaluation.load_manifest(path)


def _select_records(records, descriptor_flag: str, stream_flag: Optional[str]):
    stream = (stream_flag or DEFAULT_STREAM[descriptor_flag]).upper()
    if descriptor_flag == "clbp486" and stream == "COTS":
        raise UsageError("clbp486 needs a color stream (ftir or direct)")
    if descriptor_flag == "fusion972":
        pairs = evaluation.pair_streams(records)
        return [a for a, _ in pairs], pairs
    chosen = [r for r in records if r.stream == stream]
    if not chosen:
        raise UsageError(f"manifest has no {stream} records")
    return chosen, None


def _missing_images(records, root: Path) -> List[str]:
    return [r.id for r in records if not (root / r.image_path).is_file()]


def _record_feature(record, descriptor: str, root: Path) -> FeatureVector:
    img = read_image(root / record.image_path)
    if descriptor == GRAY_LBP_54:
        if img.space == RGB:
            img = to_grayscale(img)
        return grayscale_lbp_feature(img, record.stream, record.id)
    return clbp_feature(rgb_to_hsv(img), record.stream, record.id)


def _feature_job(job):
    record, descriptor, root = job
    return _record_feature(record, descriptor, root)


def compute_features(records, descriptor_flag: str, stream_flag: Optional[str], root: Path,
                     workers: int = 1) -> Tuple[List[FeatureVector], List[evaluation.SampleRecord]]:
    """Features in manifest order, plus the record whose label each carries."""
    units, pairs = _select_records(records, descriptor_flag, stream_flag)
    needed = [r for p in pairs for r in p] if pairs else units
    missing = _missing_images(needed, root)
    if missing:
        raise FileNotFoundError(f"{len(missing)} image(s) missing, e.g. {missing[:5]}")
    descriptor = GRAY_LBP_54 if descriptor_flag == "gray54" else CLBP_486
    jobs = [(r, descriptor, root) for r in needed]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            feats = list(pool.map(_feature_job, jobs))
    else:
        feats = [_feature_job(j) for j in jobs]
    if pairs:
        by_id = {fv.sample_id: fv for fv in feats}
        feats = [fuse_features(by_id[a.id], by_id[b.id], a.acquisition_id) for a, b in pairs]
    return feats, units


def cmd_extract(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    records = _load_records(manifest)
    root = manifest.parent
    try:
        feats, _ = compute_features(records, args.descriptor, args.stream, root, args.workers)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_features(out, feats)
    _write_config(_config_path(out), args, n_records=len(feats),
                  descriptor_resolved=DESCRIPTOR_FLAGS[args.descriptor])
    print(f"wrote {len(feats)} {DESCRIPTOR_FLAGS[args.descriptor]} record(s) to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# train / predict


def cmd_train(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    seed = _resolve_seed(args.seed)
    grid = _parse_grid(args.c_grid)
    records = _load_records(manifest)
    descriptor = DESCRIPTOR_FLAGS[args.descriptor]
    if args.features:
        units, _ = _select_records(records, args.descriptor, args.stream)
        feats = {fv.sample_id: fv for fv in read_features(_require_file(args.features, "feature file"))}
        key = (lambda r: r.acquisition_id) if args.descriptor == "fusion972" else (lambda r: r.id)
        try:
            X = np.stack([feats[key(r)].values for r in units])
        except KeyError as exc:
            raise UsageError(f"feature file lacks sample {exc}") from None
    else:
        fvs, units = compute_features(records, args.descriptor, args.stream, manifest.parent,
                                      args.workers)
        X = np.stack([fv.values for fv in fvs])
    y = np.array([r.y for r in units], dtype=np.float64)
    cfg = classifier.TrainConfig(C=args.c or classifier.DEFAULT_C, c_grid=grid, seed=seed)
    C = args.c if args.c is not None else classifier.select_C(X, y, cfg, args.folds)
    model = classifier.train_l2svm(X, y, cfg, C=C, descriptor=descriptor)
    model = classifier.calibrate(model, X, y)
    model = classifier.SvmModel(model.w, model.b, model.C, descriptor, model.calib,
                                _manifest_fingerprint(manifest))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_config(_config_path(out), args, seed=seed, C_selected=C, n_train=len(y))
    print(f"trained {descriptor} model on {len(y)} samples with C={C:g}; wrote {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = classifier.SvmModel.load(_require_file(args.model, "model"))
    image = _require_file(args.image, "image")
    img = read_image(image)
    if model.descriptor == GRAY_LBP_54:
        fv = grayscale_lbp_feature(to_grayscale(img) if img.space == RGB else img)
    elif model.descriptor == CLBP_486:
        fv = clbp_feature(rgb_to_hsv(img), (args.stream or "ftir").upper())
    else:
        direct = read_image(_require_file(args.direct_image, "direct image (--direct-image)"))
        fv = fuse_features(clbp_feature(rgb_to_hsv(img), "FTIR"),
                           clbp_feature(rgb_to_hsv(direct), "DIRECT"))
    s = classifier.score(model, fv)
    label = "SPOOF" if s >= 0.5 else "LIVE"
    print(f"{image.name}\tscore={s:.6f}\t{label}")
    return EXIT_OK


# --------------------------------------------------------------------------
# evaluate / synth


def cmd_evaluate(args) -> int:
    manifest = _require_file(args.manifest, "manifest")
    seed = _resolve_seed(args.seed)
    grid = _parse_grid(args.c_grid)
    records = _load_records(manifest)
    if args.experiment == "all":
        experiments = list(evaluation.EXPERIMENTS)
    else:
        experiments = [args.experiment.upper()]
    cfg = evaluation.ExperimentConfig(k=args.folds, seed=seed, fdr_target=args.fdr, C=args.c,
                                      c_grid=grid, workers=args.workers,
                                      instance_disjoint=args.instance_disjoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cache: dict = {}
    reports = []
    for exp in experiments:
        try:
            reports.append(evaluation.run_experiment(records, exp, cfg, manifest.parent, cache))
        except evaluation.MissingStreamError as exc:
            if args.experiment != "all":
                raise
            log.warning("skipping %s: %s", exp, exc)
    if not reports:
        log.error("no experiment could run on this manifest")
        return EXIT_RUNTIME
    paths = evaluation.write_reports(reports, out)
    if not args.no_figures:
        from .plotting import render_report_figures

        render_report_figures(reports, out / "figures")
    _write_config(_config_path(out), args, seed=seed, experiments=[r.experiment for r in reports])
    sys.stdout.write(evaluation.summary_table(reports))
    print(f"reports: {paths['json']}, {paths['text']}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import SyntheticSpec, generate_synthetic_corpus

    seed = _resolve_seed(args.seed)
    materials = tuple(m.strip() for m in args.materials.split(",") if m.strip())
    spec = SyntheticSpec(
        n_subjects=args.subjects, fingers_per_subject=args.fingers,
        impressions_per_finger=args.impressions, materials=materials,
        spoofs_per_material=args.spoofs, impressions_per_spoof=args.spoof_impressions,
        image_size=args.size, hue_separation=args.hue_separation, noise=args.noise,
        streams=tuple(s.strip().upper() for s in args.streams.split(",")),
    )
    out = Path(args.out)
    records, manifest = generate_synthetic_corpus(spec, seed, out)
    _write_config(_config_path(out), args, seed=seed)
    print(f"wrote {len(records)} image(s) and {manifest}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="estimate a perspective profile from point pairs")
    p.add_argument("--pairs", required=True, help="CSV of sx,sy,dx,dy rows")
    p.add_argument("--native-ppi", type=float, required=True)
    p.add_argument("--target-ppi", type=float, default=500.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("process", help="raw FTIR images -> 500 ppi grayscale")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_process)

    def features_args(p, out_required=True):
        p.add_argument("--manifest", required=True)
        p.add_argument("--descriptor", choices=sorted(DESCRIPTOR_FLAGS), required=True)
        p.add_argument("--stream", choices=("cots", "ftir", "direct"))
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", required=out_required)

    p = sub.add_parser("extract", help="compute LBP/CLBP feature files")
    features_args(p)
    p.set_defaults(func=cmd_extract)

    def c_args(p):
        g = p.add_mutually_exclusive_group()
        g.add_argument("--c", type=float, help="fixed C (skips selection)")
        g.add_argument("--c-grid", help="comma-separated C candidates for cross-validation")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train and calibrate a linear SVM")
    features_args(p)
    p.add_argument("--features", help="precomputed feature file")
    p.add_argument("--folds", type=int, default=5, help="folds for C selection")
    c_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="run the five-fold spoof detection experiments")
    p.add_argument("--manifest", required=True)
    p.add_argument("--experiment", default="all",
                   choices=["all"] + [e.lower() for e in evaluation.EXPERIMENTS])
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--fdr", type=float, default=0.001)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--instance-disjoint", action="store_true",
                   help="keep each spoof instance on one side of every fold")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--out", required=True)
    c_args(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="score one image (or FTIR/direct pair)")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True, help="image to score (FTIR image for fusion)")
    p.add_argument("--direct-image", help="direct image, fusion models only")
    p.add_argument("--stream", choices=("ftir", "direct"))
    p.add_argument("--seed", type=int, help="accepted for uniformity; scoring is deterministic")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="generate a synthetic live/spoof corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--subjects", type=int, default=10)
    p.add_argument("--fingers", type=int, default=4)
    p.add_argument("--impressions", type=int, default=5)
    p.add_argument("--materials", default="ecoflex,wood_glue,gelatin,body_paint")
    p.add_argument("--spoofs", type=int, default=5)
    p.add_argument("--spoof-impressions", type=int, default=10)
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--hue-separation", type=float, default=30.0)
    p.add_argument("--noise", type=float, default=6.0)
    p.add_argument("--streams", default="FTIR,DIRECT,COTS")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", 0) is None and args.command in ("train", "evaluate", "synth"):
        args.seed = _resolve_seed(None)
    try:
        return args.func(args)
    except (UsageError, ManifestError, InvalidDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FpadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
