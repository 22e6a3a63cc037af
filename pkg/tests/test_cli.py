import filecmp

import numpy as np
import pytest

from nodulekit import cli
from nodulekit import evaluate as E
from nodulekit import harmonics as H
from nodulekit.volume import Volume, read_volume, write_volume


class TestShapeCommand:
    def test_all_records_written(self, small_corpus):
        coeffs = H.read_coeffs_csv(small_corpus.coeffs_csv)
        assert len(coeffs) == small_corpus.n_records
        for c in coeffs.values():
            assert c.l_max == 8

    def test_missing_labels_exit_2(self, tmp_path):
        assert cli.main(["shape", "--labels", str(tmp_path / "nope.csv"),
                         "--out", str(tmp_path / "o")]) == 2

    def test_bad_record_skipped(self, small_corpus, tmp_path):
        # copy the corpus, blank one mask -> that record is skipped, exit 0
        import shutil
        data = tmp_path / "data"
        shutil.copytree(small_corpus.corpus, data)
        victim = read_volume(data / "mask_n000_a.mhd")
        write_volume(Volume(dims=victim.dims, spacing=victim.spacing,
                            origin=victim.origin,
                            data=np.zeros(victim.dims, dtype=np.uint8),
                            kind="mask"), data / "mask_n000_a.mhd")
        code = cli.main(["shape", "--config", str(small_corpus.config),
                         "--labels", str(data / "labels.csv"),
                         "--out", str(tmp_path / "out"), "--jobs", "1"])
        assert code == 0
        coeffs = H.read_coeffs_csv(tmp_path / "out" / "coeffs.csv")
        assert len(coeffs) == small_corpus.n_records - 1
        assert "n000_a" not in coeffs

    def test_torus_mask_skipped(self, small_corpus, tmp_path):
        # a genus-one mask fails the topology precondition and is skipped
        import shutil
        data = tmp_path / "data"
        shutil.copytree(small_corpus.corpus, data)
        victim = read_volume(data / "mask_n001_b.mhd")
        n = min(victim.dims)
        idx = [np.arange(d) - (d - 1) / 2 for d in victim.dims]
        x, y, z = np.meshgrid(*(i * s for i, s in zip(idx, victim.spacing)),
                              indexing="ij")
        ring = np.sqrt(x**2 + y**2)
        torus = ((ring - 6.0) ** 2 + z**2 <= 2.5**2).astype(np.uint8)
        assert torus.any()
        write_volume(Volume(dims=victim.dims, spacing=victim.spacing,
                            origin=victim.origin, data=torus, kind="mask"),
                     data / "mask_n001_b.mhd")
        code = cli.main(["shape", "--config", str(small_corpus.config),
                         "--labels", str(data / "labels.csv"),
                         "--out", str(tmp_path / "out"), "--jobs", "1"])
        assert code == 0
        coeffs = H.read_coeffs_csv(tmp_path / "out" / "coeffs.csv")
        assert len(coeffs) == small_corpus.n_records - 1
        assert "n001_b" not in coeffs

    def test_excessive_failures_exit_3(self, small_corpus, tmp_path):
        import shutil
        data = tmp_path / "data"
        shutil.copytree(small_corpus.corpus, data)
        for name in ("mask_n000_a.mhd", "mask_n000_b.mhd", "mask_n001_a.mhd"):
            victim = read_volume(data / name)
            write_volume(Volume(dims=victim.dims, spacing=victim.spacing,
                                origin=victim.origin,
                                data=np.zeros(victim.dims, dtype=np.uint8),
                                kind="mask"), data / name)
        code = cli.main(["shape", "--config", str(small_corpus.config),
                         "--labels", str(data / "labels.csv"),
                         "--out", str(tmp_path / "out"), "--jobs", "1"])
        assert code == 3

    def test_energy_trace_written(self, small_corpus, tmp_path):
        code = cli.main(["shape", "--config", str(small_corpus.config),
                         "--labels", str(small_corpus.labels),
                         "--out", str(tmp_path / "traced"), "--jobs", "2",
                         "--energy-trace"])
        assert code == 0
        trace_file = tmp_path / "traced" / "trace_n000_a.csv"
        lines = trace_file.read_text().splitlines()
        assert lines[0] == "iteration,energy,mass_center_norm"
        energies = [float(line.split(",")[1]) for line in lines[1:]]
        assert all(b <= a + 1e-12 for a, b in zip(energies, energies[1:]))


class TestPatchesCommand:
    def test_images_and_sidecars(self, small_corpus):
        pngs = sorted(small_corpus.patches_dir.glob("*_rgb.png"))
        sidecars = sorted(small_corpus.patches_dir.glob("*_rgb.json"))
        assert len(pngs) == small_corpus.n_records
        assert len(sidecars) == small_corpus.n_records

    def test_rerun_bit_identical(self, small_corpus, tmp_path):
        code = cli.main(["patches", "--config", str(small_corpus.config),
                         "--labels", str(small_corpus.labels),
                         "--out", str(tmp_path / "again"), "--jobs", "1"])
        assert code == 0
        for png in small_corpus.patches_dir.glob("*_rgb.png"):
            assert filecmp.cmp(png, tmp_path / "again" / png.name, shallow=False)


class TestTrainPredict:
    def test_train_predict_training_set(self, small_corpus, tmp_path):
        forest_path = tmp_path / "forest.json"
        args = ["--config", str(small_corpus.config),
                "--labels", str(small_corpus.labels),
                "--mode", "hybrid", "--n-sh", "10",
                "--shape-coeffs", str(small_corpus.coeffs_csv),
                "--appearance", str(small_corpus.baseline_csv)]
        assert cli.main(["train", *args, "--out", str(forest_path)]) == 0
        pred_path = tmp_path / "pred.csv"
        assert cli.main(["predict", *args, "--forest", str(forest_path),
                         "--out", str(pred_path)]) == 0
        rows = pred_path.read_text().splitlines()
        assert rows[0] == "id,rating"
        pred = {line.split(",")[0]: int(line.split(",")[1]) for line in rows[1:]}
        records = E.read_labels_csv(small_corpus.labels)
        obo = E.off_by_one_accuracy([pred[r.id] for r in records],
                                    [r.rating for r in records])
        assert obo == 1.0

    def test_dimension_mismatch_exit_4(self, small_corpus, tmp_path):
        forest_path = tmp_path / "forest.json"
        base = ["--config", str(small_corpus.config),
                "--labels", str(small_corpus.labels),
                "--shape-coeffs", str(small_corpus.coeffs_csv),
                "--appearance", str(small_corpus.baseline_csv)]
        assert cli.main(["train", *base, "--mode", "hybrid", "--n-sh", "10",
                         "--out", str(forest_path)]) == 0
        code = cli.main(["predict", *base, "--mode", "hybrid", "--n-sh", "25",
                         "--forest", str(forest_path),
                         "--out", str(tmp_path / "pred.csv")])
        assert code == 4

    def test_train_missing_source_exit_4(self, small_corpus, tmp_path):
        code = cli.main(["train", "--labels", str(small_corpus.labels),
                         "--mode", "appearance_only",
                         "--out", str(tmp_path / "f.json")])
        assert code == 4


class TestEvalCommand:
    def test_report_rows_per_combo(self, small_corpus, tmp_path):
        report_path = tmp_path / "report.csv"
        code = cli.main(["eval", "--config", str(small_corpus.config),
                         "--labels", str(small_corpus.labels),
                         "--shape-coeffs", str(small_corpus.coeffs_csv),
                         "--appearance", str(small_corpus.baseline_csv),
                         "--out", str(report_path), "--jobs", "2"])
        assert code == 0
        lines = report_path.read_text().splitlines()
        assert lines[0] == "mode,n_sh,min_annot,fold,off_by_one,exact"
        # 3 modes x 2 sh counts x 1 min_annot x 5 folds
        assert len(lines) == 1 + 30

    def test_appearance_mode_without_source_exit_4(self, small_corpus, tmp_path):
        code = cli.main(["eval", "--config", str(small_corpus.config),
                         "--labels", str(small_corpus.labels),
                         "--shape-coeffs", str(small_corpus.coeffs_csv),
                         "--modes", "appearance_only",
                         "--out", str(tmp_path / "r.csv")])
        assert code == 4

    def test_bad_config_exit_4(self, small_corpus, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"k_folds": 1}')
        code = cli.main(["eval", "--config", str(bad),
                         "--labels", str(small_corpus.labels),
                         "--shape-coeffs", str(small_corpus.coeffs_csv),
                         "--out", str(tmp_path / "r.csv")])
        assert code == 4


def test_synth_cli_counts(tmp_path):
    assert cli.main(["synth", "--per-class", "1", "--seed", "4",
                     "--out", str(tmp_path / "c")]) == 0
    records = E.read_labels_csv(tmp_path / "c" / "labels.csv")
    assert len(records) == 10
