"""Pipeline configuration: JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigurationError
from .forest import ForestParams
from .spheremap import MapOptions


@dataclass
class PipelineConfig:
    iso_spacing_mm: float = 1.0
    resample_patches: bool = True
    l_max: int = 20
    sh_counts: tuple = (100, 150, 400)
    min_annotations: tuple = (1,)
    roi_margin: float = 1.1
    patch_px: int = 227
    hu_window: tuple = (-1000.0, 400.0)
    n_trees: int = 200
    features_per_split: int | None = None
    min_leaf: int = 1
    max_depth: int | None = None
    k_folds: int = 10
    seed: int = 0
    group_threshold_mm: float = 5.0
    map_step_size: float = 0.05
    map_max_iterations: int = 10000
    map_energy_rel_tol: float = 1e-7
    map_normalize_every: int = 10

    def __post_init__(self) -> None:
        self.sh_counts = tuple(int(n) for n in self.sh_counts)
        self.min_annotations = tuple(int(n) for n in self.min_annotations)
        self.hu_window = tuple(float(v) for v in self.hu_window)
        checks = [
            (self.iso_spacing_mm > 0, "iso_spacing_mm must be positive"),
            (self.l_max >= 1, "l_max must be >= 1"),
            (all(1 <= n <= (self.l_max + 1) ** 2 for n in self.sh_counts),
             f"sh_counts must lie in [1, {(self.l_max + 1) ** 2}] for l_max={self.l_max}"),
            (self.roi_margin >= 1.0, "roi_margin must be >= 1"),
            (self.patch_px >= 8, "patch_px must be >= 8"),
            (self.hu_window[0] < self.hu_window[1], "hu_window must be (lo, hi)"),
            (self.n_trees >= 1, "n_trees must be >= 1"),
            (self.k_folds >= 2, "k_folds must be >= 2"),
            (self.group_threshold_mm > 0, "group_threshold_mm must be positive"),
            (0 < self.map_step_size <= 1, "map_step_size must be in (0, 1]"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigurationError(message)

    @classmethod
    def from_json(cls, path: str | Path) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def replace(self, **overrides) -> "PipelineConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return PipelineConfig(**values)

    def forest_params(self) -> ForestParams:
        return ForestParams(n_trees=self.n_trees,
                            features_per_split=self.features_per_split,
                            min_leaf=self.min_leaf, max_depth=self.max_depth,
                            seed=self.seed)

    def map_options(self) -> MapOptions:
        return MapOptions(step_size=self.map_step_size,
                          max_iterations=self.map_max_iterations,
                          energy_rel_tol=self.map_energy_rel_tol,
                          normalize_every=self.map_normalize_every)
