"""Command-line front end wiring the pipeline stages.

Subcommands: synth, shape, patches, features-baseline, train, predict, eval.
Exit codes: 0 ok, 2 input error, 3 excessive per-record failures,
4 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import features as ft
from . import forest as rf
from . import harmonics as sh
from . import mesh as msh
from . import patches as pt
from . import synth
from .config import PipelineConfig
from .errors import ConfigurationError, FormatError
from .spheremap import conformal_map_traced
from .volume import read_volume, resample_isotropic

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FAILURES = 3
EXIT_CONFIG = 4

FAILURE_RATIO_LIMIT = 0.10


class _CliInputError(Exception):
    pass


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _read_labels(path: str) -> list[ev.NoduleRecord]:
    if not Path(path).exists():
        raise _CliInputError(f"labels file {path} does not exist")
    try:
        return ev.read_labels_csv(path)
    except FormatError as exc:
        raise _CliInputError(str(exc)) from exc


def _jobs(args) -> int:
    if getattr(args, "jobs", None):
        return max(1, args.jobs)
    return os.cpu_count() or 1


def _run_per_record(tasks, worker, jobs: int):
    """Run worker over tasks, in-process when jobs == 1."""
    if jobs <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


# ---------------------------------------------------------------------------
# shape: mask -> mesh -> cleanup -> smooth -> conformal -> SH fit
# ---------------------------------------------------------------------------

def _shape_worker(task):
    record, base_dir, cfg, want_trace = task
    try:
        mask = read_volume(Path(base_dir) / record.mask_path)
        mesh = msh.extract_isosurface(mask)
        mesh = msh.laplacian_smooth(msh.fill_holes(msh.remove_islands(mesh)), 1)
        # express the shape in its own frame: coefficients must not encode
        # where the nodule sits in the scanner
        mesh = msh.TriMesh(mesh.vertices - msh.surface_centroid(mesh),
                           mesh.triangles)
        param, trace = conformal_map_traced(mesh, cfg.map_options())
        coeffs = sh.fit_coefficients(mesh, param, cfg.l_max)
        return (record.id, coeffs.l_max, coeffs.coeffs,
                trace if want_trace else None, None)
    except Exception as exc:  # per-record failure policy: skip and report
        return (record.id, None, None, None, f"{type(exc).__name__}: {exc}")


def cmd_shape(args) -> int:
    cfg = _load_config(args)
    records = _read_labels(args.labels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base_dir = str(Path(args.labels).parent)
    tasks = [(r, base_dir, cfg, args.energy_trace) for r in records]
    results = _run_per_record(tasks, _shape_worker, _jobs(args))
    coeffs_by_id: dict[str, sh.ShCoeffs] = {}
    failures = 0
    for rec_id, l_max, coeffs, trace, error in results:
        if error is not None:
            failures += 1
            _log(f"skip {rec_id}: {error}")
            continue
        coeffs_by_id[rec_id] = sh.ShCoeffs(l_max=l_max, coeffs=coeffs)
        if trace is not None:
            with open(out_dir / f"trace_{rec_id}.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["iteration", "energy", "mass_center_norm"])
                for it, energy, mc in trace:
                    writer.writerow([int(it), f"{energy:.9g}", f"{mc:.9g}"])
    sh.write_coeffs_csv(out_dir / "coeffs.csv", coeffs_by_id)
    _log(f"shape: {len(coeffs_by_id)} records written, {failures} skipped")
    if failures > FAILURE_RATIO_LIMIT * len(records):
        return EXIT_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# patches: volume + mask -> tri-planar RGB montage
# ---------------------------------------------------------------------------

def _patches_worker(task):
    record, base_dir, cfg, edge_mm, out_dir = task
    try:
        base = Path(base_dir)
        volume = read_volume(base / record.volume_path)
        mask = read_volume(base / record.mask_path)
        if cfg.resample_patches:
            volume = resample_isotropic(volume, cfg.iso_spacing_mm)
            mask = resample_isotropic(mask, cfg.iso_spacing_mm)
        center = pt.mask_center_of_mass(mask)
        axes, fallback = pt.pca_axes(mask)
        ps = pt.extract_triplanar(volume, center, axes, edge_mm, cfg.patch_px)
        ps.pca_fallback = fallback
        rgb = pt.montage_rgb(ps, cfg.hu_window, out_px=cfg.patch_px)
        out = Path(out_dir)
        pt.write_rgb_png(rgb, out / f"{record.id}_rgb.png")
        pt.write_sidecar(ps, cfg.hu_window, out / f"{record.id}_rgb.json")
        return (record.id, None)
    except Exception as exc:
        return (record.id, f"{type(exc).__name__}: {exc}")


def cmd_patches(args) -> int:
    cfg = _load_config(args)
    records = _read_labels(args.labels)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = Path(args.labels).parent
    masks = []
    for r in records:
        try:
            masks.append(read_volume(base / r.mask_path))
        except FormatError:
            pass  # counted when the worker hits it
    if not masks:
        raise _CliInputError("no readable masks")
    edge_mm = pt.compute_roi_edge(masks, cfg.roi_margin)
    tasks = [(r, str(base), cfg, edge_mm, str(out_dir)) for r in records]
    results = _run_per_record(tasks, _patches_worker, _jobs(args))
    failures = 0
    for rec_id, error in results:
        if error is not None:
            failures += 1
            _log(f"skip {rec_id}: {error}")
    _log(f"patches: {len(records) - failures} images written, {failures} skipped")
    if failures > FAILURE_RATIO_LIMIT * len(records):
        return EXIT_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# baseline appearance features from the montage images
# ---------------------------------------------------------------------------

def cmd_features_baseline(args) -> int:
    records = _read_labels(args.labels)
    images = Path(args.images)
    rows = []
    failures = 0
    for r in records:
        png = images / f"{r.id}_rgb.png"
        if not png.exists():
            failures += 1
            _log(f"skip {r.id}: missing {png}")
            continue
        rows.append(ft.baseline_appearance(pt.read_rgb_png(png), r.id))
    ft.save_features_csv(rows, args.out)
    _log(f"features-baseline: {len(rows)} rows, {failures} skipped")
    if failures > FAILURE_RATIO_LIMIT * len(records):
        return EXIT_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / predict / eval
# ---------------------------------------------------------------------------

def _load_feature_sources(args, need_shape: bool, need_appearance: bool):
    shape_coeffs = None
    appearance = None
    if need_shape:
        if not args.shape_coeffs or not Path(args.shape_coeffs).exists():
            raise ConfigurationError(
                f"mode {args.mode!r} needs --shape-coeffs")
        shape_coeffs = sh.read_coeffs_csv(args.shape_coeffs)
    if need_appearance:
        if not args.appearance or not Path(args.appearance).exists():
            raise ConfigurationError(
                f"mode {args.mode!r} needs --appearance (external or baseline CSV)")
        appearance = ft.load_external_features(args.appearance)
    return shape_coeffs, appearance


def _with_features(records, shape_coeffs, appearance):
    """Drop records whose upstream stages were skipped, with a warning."""
    kept = []
    dropped = 0
    for r in records:
        if shape_coeffs is not None and r.id not in shape_coeffs:
            dropped += 1
            continue
        if appearance is not None and r.id not in appearance:
            dropped += 1
            continue
        kept.append(r)
    if dropped:
        _log(f"warning: {dropped} records lack features and are excluded")
    if not kept:
        raise ConfigurationError("no records with the required features")
    return kept


def _build_features(records, mode, n_sh, shape_coeffs, appearance):
    ids = [r.id for r in records]
    x = ev.mode_features(mode, ids, n_sh, shape_coeffs, appearance)
    y = np.array([r.rating for r in records])
    return ids, x, y


def cmd_train(args) -> int:
    cfg = _load_config(args)
    records = _read_labels(args.labels)
    need_shape = args.mode in ("shape_only", "hybrid")
    need_app = args.mode in ("appearance_only", "hybrid")
    shape_coeffs, appearance = _load_feature_sources(args, need_shape, need_app)
    records = _with_features(records, shape_coeffs, appearance)
    _, x, y = _build_features(records, args.mode, args.n_sh, shape_coeffs, appearance)
    model = rf.train(x, y, cfg.forest_params())
    rf.save(model, args.out)
    _log(f"train: {len(y)} records, d={model.d}, {cfg.n_trees} trees -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    records = _read_labels(args.labels)
    need_shape = args.mode in ("shape_only", "hybrid")
    need_app = args.mode in ("appearance_only", "hybrid")
    shape_coeffs, appearance = _load_feature_sources(args, need_shape, need_app)
    records = _with_features(records, shape_coeffs, appearance)
    ids, x, _ = _build_features(records, args.mode, args.n_sh, shape_coeffs, appearance)
    try:
        model = rf.load(args.forest)
    except FormatError as exc:
        raise _CliInputError(str(exc)) from exc
    if x.shape[1] != model.d:
        raise ConfigurationError(
            f"feature dimension {x.shape[1]} != forest dimension {model.d}")
    pred = rf.predict_batch(model, x)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "rating"])
        for rec_id, rating in zip(ids, pred):
            writer.writerow([rec_id, int(rating)])
    _log(f"predict: {len(ids)} rows -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    records = _read_labels(args.labels)
    shape_coeffs = None
    appearance = None
    if args.shape_coeffs:
        shape_coeffs = sh.read_coeffs_csv(args.shape_coeffs)
    if args.appearance:
        appearance = ft.load_external_features(args.appearance)
    records = _with_features(records, shape_coeffs, appearance)
    modes = tuple(args.modes.split(",")) if args.modes else ev.MODES
    ab_config = ev.AblationConfig(
        modes=modes, sh_counts=cfg.sh_counts, min_annotations=cfg.min_annotations,
        k_folds=cfg.k_folds, seed=cfg.seed,
        group_threshold_mm=cfg.group_threshold_mm,
        forest=cfg.forest_params(), jobs=_jobs(args))
    report = ev.run_ablation(records, shape_coeffs, appearance, ab_config)
    report.to_csv(args.out)
    print(report.format_table())
    _log(f"eval: {len(report.rows)} rows -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    records = synth.generate_corpus(args.per_class, cfg.seed, args.out)
    _log(f"synth: {len(records)} segmentation records -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--jobs", type=int, help="worker processes (default: cores)")

    parser = argparse.ArgumentParser(
        prog="nodulekit",
        description="Lung nodule characterization: SH shape + tri-planar "
                    "appearance + random-forest rating")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common],
                       help="generate the synthetic benchmark corpus")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("shape", parents=[common],
                       help="masks -> conformal map -> SH coefficient CSV")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--energy-trace", action="store_true",
                   help="write per-record energy trace CSVs")
    p.set_defaults(func=cmd_shape)

    p = sub.add_parser("patches", parents=[common],
                       help="volumes -> tri-planar RGB montage images")
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_patches)

    p = sub.add_parser("features-baseline", parents=[common],
                       help="montage images -> baseline appearance feature CSV")
    p.add_argument("--labels", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features_baseline)

    for name, func in (("train", cmd_train), ("predict", cmd_predict)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--labels", required=True)
        p.add_argument("--mode", default="hybrid",
                       choices=("shape_only", "appearance_only", "hybrid"))
        p.add_argument("--n-sh", type=int, default=150)
        p.add_argument("--shape-coeffs")
        p.add_argument("--appearance")
        p.add_argument("--out", required=True)
        if name == "predict":
            p.add_argument("--forest", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", parents=[common],
                       help="grouped k-fold ablation report")
    p.add_argument("--labels", required=True)
    p.add_argument("--shape-coeffs")
    p.add_argument("--appearance")
    p.add_argument("--modes", help="comma list (default: all three)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CliInputError as exc:
        _log(f"input error: {exc}")
        return EXIT_INPUT
    except ConfigurationError as exc:
        _log(f"configuration error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
