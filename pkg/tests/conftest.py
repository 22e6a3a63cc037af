import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from nodulekit import cli, synth


@dataclass
class SmallCorpus:
    root: Path
    corpus: Path
    labels: Path
    config: Path
    shape_dir: Path
    coeffs_csv: Path
    patches_dir: Path
    baseline_csv: Path
    n_records: int


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory) -> SmallCorpus:
    """One 10-record corpus with shape, patches and baseline features built."""
    root = tmp_path_factory.mktemp("small_corpus")
    corpus = root / "data"
    synth.generate_corpus(1, seed=11, out_dir=corpus)
    config = root / "config.json"
    config.write_text(json.dumps({
        "l_max": 8, "sh_counts": [10, 25], "k_folds": 5,
        "n_trees": 60, "seed": 5}))
    labels = corpus / "labels.csv"
    shape_dir = root / "shape"
    patches_dir = root / "patches"
    baseline_csv = root / "baseline.csv"
    assert cli.main(["shape", "--config", str(config), "--labels", str(labels),
                     "--out", str(shape_dir), "--jobs", "2"]) == 0
    assert cli.main(["patches", "--config", str(config), "--labels", str(labels),
                     "--out", str(patches_dir), "--jobs", "2"]) == 0
    assert cli.main(["features-baseline", "--labels", str(labels),
                     "--images", str(patches_dir),
                     "--out", str(baseline_csv)]) == 0
    return SmallCorpus(
        root=root, corpus=corpus, labels=labels, config=config,
        shape_dir=shape_dir, coeffs_csv=shape_dir / "coeffs.csv",
        patches_dir=patches_dir, baseline_csv=baseline_csv, n_records=10)
