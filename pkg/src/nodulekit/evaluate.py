"""Nodule-level grouping, grouped k-fold CV, off-by-one accuracy, Welch's
t-test, and the shape/appearance/hybrid ablation report."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import forest as rf
from .errors import ConfigurationError, FormatError, UndefinedStatisticError
from .features import FeatureVector
from .harmonics import ShCoeffs, truncate

GROUP_THRESHOLD_MM = 5.0

MODES = ("shape_only", "appearance_only", "hybrid")


@dataclass
class NoduleRecord:
    id: str
    mask_path: str
    volume_path: str
    center: np.ndarray  # ROI center, mm
    rating: int         # 1..5
    annotator: str

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=float).reshape(3)
        if not np.isfinite(self.center).all():
            raise ValueError(f"record {self.id!r}: center must be finite")
        if self.rating not in (1, 2, 3, 4, 5):
            raise ValueError(f"record {self.id!r}: rating must be 1..5, got {self.rating}")


@dataclass
class GroupedSplit:
    groups: list[set[str]]        # record ids per group
    folds: list[list[int]]        # group indices per fold


# ---------------------------------------------------------------------------
# labels CSV
# ---------------------------------------------------------------------------

_LABEL_COLUMNS = ("id", "rating", "annotator", "center_x_mm", "center_y_mm",
                  "center_z_mm", "mask_path", "volume_path")


def write_labels_csv(records: list[NoduleRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_LABEL_COLUMNS)
        for r in records:
            writer.writerow([
                r.id, r.rating, r.annotator,
                f"{r.center[0]:.9g}", f"{r.center[1]:.9g}", f"{r.center[2]:.9g}",
                r.mask_path, r.volume_path])


def read_labels_csv(path: str | Path) -> list[NoduleRecord]:
    records = []
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty labels file")
    if rows[0][0] == "id":
        rows = rows[1:]
    for row in rows:
        if not row:
            continue
        if len(row) != len(_LABEL_COLUMNS):
            raise FormatError(
                f"{path}: expected {len(_LABEL_COLUMNS)} columns, got {len(row)}")
        try:
            records.append(NoduleRecord(
                id=row[0], rating=int(row[1]), annotator=row[2],
                center=np.array([float(row[3]), float(row[4]), float(row[5])]),
                mask_path=row[6], volume_path=row[7]))
        except ValueError as exc:
            raise FormatError(f"{path}: bad row {row}: {exc}") from exc
    return records


# ---------------------------------------------------------------------------
# grouping and folds
# ---------------------------------------------------------------------------

def group_nodules(records: list[NoduleRecord],
                  threshold_mm: float = GROUP_THRESHOLD_MM) -> list[set[str]]:
    """Single-linkage components of records whose centers are within threshold."""
    if threshold_mm <= 0:
        raise ValueError("threshold must be positive")
    n = len(records)
    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    centers = np.array([r.center for r in records]).reshape(n, 3)
    for i in range(n):
        dists = np.linalg.norm(centers[i + 1:] - centers[i], axis=1)
        for j in np.flatnonzero(dists <= threshold_mm):
            parent[find(i)] = find(i + 1 + int(j))
    by_root: dict[int, set[str]] = {}
    for i, r in enumerate(records):
        by_root.setdefault(find(i), set()).add(r.id)
    # deterministic group order
    return sorted(by_root.values(), key=lambda s: min(s))


def kfold_split(groups: list[set[str]], k: int, seed: int) -> GroupedSplit:
    """Shuffle groups with a seeded RNG and deal them round-robin into k folds."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(groups) < k:
        raise ValueError(f"need at least {k} groups, have {len(groups)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(groups))
    folds: list[list[int]] = [[] for _ in range(k)]
    for pos, group_idx in enumerate(perm):
        folds[pos % k].append(int(group_idx))
    return GroupedSplit(groups=list(groups), folds=folds)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _check_pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise ValueError("prediction and truth must be 1-d and equal length")
    if len(pred) == 0:
        raise ValueError("need at least one prediction")
    return pred, truth


def off_by_one_accuracy(pred, truth) -> float:
    """Fraction of predictions within +-1 of the true rating."""
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(np.abs(pred - truth) <= 1))


def exact_accuracy(pred, truth) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(np.mean(pred == truth))


def welch_t(a, b) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 observations")
    va = a.var(ddof=1)
    vb = b.var(ddof=1)
    if va == 0 and vb == 0:
        raise UndefinedStatisticError("both samples have zero variance")
    sa = va / len(a)
    sb = vb / len(b)
    t = (a.mean() - b.mean()) / np.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (len(a) - 1) + sb**2 / (len(b) - 1))
    return float(t), float(df)


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

@dataclass
class AblationConfig:
    modes: tuple = MODES
    sh_counts: tuple = (100, 150, 400)
    min_annotations: tuple = (1,)
    k_folds: int = 10
    seed: int = 0
    group_threshold_mm: float = GROUP_THRESHOLD_MM
    forest: rf.ForestParams = field(default_factory=rf.ForestParams)
    jobs: int = 1


@dataclass
class ReportRow:
    mode: str
    n_sh: int
    min_annot: int
    fold: int
    off_by_one: float
    exact: float


@dataclass
class Report:
    rows: list[ReportRow]

    def summary(self) -> list[dict]:
        out = []
        seen = []
        for row in self.rows:
            key = (row.mode, row.n_sh, row.min_annot)
            if key not in seen:
                seen.append(key)
        for key in seen:
            rows = [r for r in self.rows
                    if (r.mode, r.n_sh, r.min_annot) == key]
            obo = np.array([r.off_by_one for r in rows])
            exact = np.array([r.exact for r in rows])
            out.append({
                "mode": key[0], "n_sh": key[1], "min_annot": key[2],
                "off_by_one_mean": float(obo.mean()),
                "off_by_one_std": float(obo.std()),
                "exact_mean": float(exact.mean()),
                "exact_std": float(exact.std()),
            })
        return out

    def mean_off_by_one(self, mode: str, n_sh: int, min_annot: int) -> float:
        rows = [r.off_by_one for r in self.rows
                if (r.mode, r.n_sh, r.min_annot) == (mode, n_sh, min_annot)]
        if not rows:
            raise KeyError((mode, n_sh, min_annot))
        return float(np.mean(rows))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["mode", "n_sh", "min_annot", "fold", "off_by_one", "exact"])
            for r in self.rows:
                writer.writerow([r.mode, r.n_sh, r.min_annot, r.fold,
                                 f"{r.off_by_one:.9g}", f"{r.exact:.9g}"])

    def format_table(self) -> str:
        lines = [f"{'mode':<16} {'n_sh':>5} {'min_annot':>9} "
                 f"{'off_by_one':>16} {'exact':>16}"]
        for s in self.summary():
            lines.append(
                f"{s['mode']:<16} {s['n_sh']:>5} {s['min_annot']:>9} "
                f"{s['off_by_one_mean']:.3f} +- {s['off_by_one_std']:.3f} "
                f"{s['exact_mean']:>8.3f} +- {s['exact_std']:.3f}")
        return "\n".join(lines)


def _fold_task(args):
    x_train, y_train, x_test, y_test, params = args
    model = rf.train(x_train, y_train, params)
    pred = rf.predict_batch(model, x_test)
    return off_by_one_accuracy(pred, y_test), exact_accuracy(pred, y_test)


def mode_features(mode: str, record_ids: list[str], n_sh: int,
                   shape_coeffs: dict[str, ShCoeffs] | None,
                   appearance: dict[str, FeatureVector] | None) -> np.ndarray:
    rows = []
    for rec_id in record_ids:
        parts = []
        if mode in ("shape_only", "hybrid"):
            if shape_coeffs is None or rec_id not in shape_coeffs:
                raise ConfigurationError(
                    f"mode {mode!r} needs shape coefficients for record {rec_id!r}")
            parts.append(truncate(shape_coeffs[rec_id], n_sh))
        if mode in ("appearance_only", "hybrid"):
            if appearance is None or rec_id not in appearance:
                raise ConfigurationError(
                    f"mode {mode!r} needs appearance features for record {rec_id!r}")
            parts.append(appearance[rec_id].values)
        rows.append(np.concatenate(parts))
    return np.vstack(rows)


def run_ablation(records: list[NoduleRecord],
                 shape_coeffs: dict[str, ShCoeffs] | None,
                 appearance: dict[str, FeatureVector] | None,
                 config: AblationConfig | None = None) -> Report:
    """Grouped k-fold accuracy for every (mode, SH count, annotation filter)."""
    config = config or AblationConfig()
    for mode in config.modes:
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}")
        if mode in ("shape_only", "hybrid") and shape_coeffs is None:
            raise ConfigurationError(f"mode {mode!r} requested without shape features")
        if mode in ("appearance_only", "hybrid") and appearance is None:
            raise ConfigurationError(f"mode {mode!r} requested without appearance features")

    by_id = {r.id: r for r in records}
    groups_all = group_nodules(records, config.group_threshold_mm)
    rows: list[ReportRow] = []
    tasks = []
    task_meta = []
    for min_annot in config.min_annotations:
        groups = [g for g in groups_all
                  if len({by_id[rid].annotator for rid in g}) >= min_annot]
        if len(groups) < config.k_folds:
            raise ConfigurationError(
                f"min_annotations={min_annot} leaves {len(groups)} groups "
                f"for {config.k_folds} folds")
        split = kfold_split(groups, config.k_folds, config.seed)
        fold_ids = []
        for fold in split.folds:
            ids = sorted(rid for gi in fold for rid in split.groups[gi])
            fold_ids.append(ids)
        all_ids = sorted(rid for g in groups for rid in g)
        for n_sh in config.sh_counts:
            for mode in config.modes:
                feats = mode_features(mode, all_ids, n_sh, shape_coeffs, appearance)
                feat_of = {rid: feats[i] for i, rid in enumerate(all_ids)}
                for fold_no, test_ids in enumerate(fold_ids):
                    test_set = set(test_ids)
                    train_ids = [rid for rid in all_ids if rid not in test_set]
                    x_train = np.vstack([feat_of[r] for r in train_ids])
                    y_train = np.array([by_id[r].rating for r in train_ids])
                    x_test = np.vstack([feat_of[r] for r in test_ids])
                    y_test = np.array([by_id[r].rating for r in test_ids])
                    tasks.append((x_train, y_train, x_test, y_test, config.forest))
                    task_meta.append((mode, n_sh, min_annot, fold_no))

    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_fold_task, tasks))
    else:
        results = [_fold_task(t) for t in tasks]
    for (mode, n_sh, min_annot, fold_no), (obo, exact) in zip(task_meta, results):
        rows.append(ReportRow(mode=mode, n_sh=n_sh, min_annot=min_annot,
                              fold=fold_no, off_by_one=obo, exact=exact))
    return Report(rows=rows)
