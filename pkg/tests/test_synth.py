import filecmp
from pathlib import Path

import numpy as np
import pytest

from nodulekit import evaluate as E
from nodulekit import harmonics as H
from nodulekit import synth
from nodulekit.volume import read_volume


def test_counts_and_balance(tmp_path):
    records = synth.generate_corpus(2, seed=7, out_dir=tmp_path / "c")
    assert len(records) == 20  # 10 nodules x 2 segmentations
    ratings = sorted(r.rating for r in records)
    assert ratings == sorted([1, 2, 3, 4, 5] * 4)
    assert len({r.id for r in records}) == 20
    back = E.read_labels_csv(tmp_path / "c" / "labels.csv")
    assert [r.id for r in back] == [r.id for r in records]


def test_deterministic_bytes(tmp_path):
    synth.generate_corpus(1, seed=3, out_dir=tmp_path / "a")
    synth.generate_corpus(1, seed=3, out_dir=tmp_path / "b")
    files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert files_a == files_b
    for name in files_a:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name,
                           shallow=False), name


def test_different_seeds_differ(tmp_path):
    synth.generate_corpus(1, seed=1, out_dir=tmp_path / "a")
    synth.generate_corpus(1, seed=2, out_dir=tmp_path / "b")
    assert not filecmp.cmp(tmp_path / "a" / "vol_n000.raw",
                           tmp_path / "b" / "vol_n000.raw", shallow=False)


def test_paired_segmentations_group_together(tmp_path):
    records = synth.generate_corpus(2, seed=5, out_dir=tmp_path / "c")
    groups = E.group_nodules(records)
    assert len(groups) == 10
    for group in groups:
        assert len(group) == 2
        stems = {rid.rsplit("_", 1)[0] for rid in group}
        assert len(stems) == 1  # both segmentations of the same nodule


def test_masks_are_binary_and_volumes_intensity(tmp_path):
    synth.generate_corpus(1, seed=9, out_dir=tmp_path / "c")
    mask = read_volume(tmp_path / "c" / "mask_n000_a.mhd")
    vol = read_volume(tmp_path / "c" / "vol_n000.mhd")
    assert mask.kind == "mask"
    assert vol.kind == "intensity"
    assert vol.data.dtype == np.int16


def test_spikiness_raises_high_degree_energy(small_corpus):
    records = E.read_labels_csv(small_corpus.labels)
    coeffs = H.read_coeffs_csv(small_corpus.coeffs_csv)
    by_rating = {}
    for r in records:
        total = H.cross_channel_degree_energy(coeffs[r.id])
        by_rating.setdefault(r.rating, []).append(total[4:].mean())
    assert np.mean(by_rating[5]) > np.mean(by_rating[1])
