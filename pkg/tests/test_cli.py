"""End-to-end command-line runs against a small corpus and config."""

import csv
import dataclasses
import json
import math

import numpy as np
import pytest
from PIL import Image

from artifact.cli import VARIANTS, main
from artifact.data import write_texture_corpus
from artifact.denoisers import param_count
from artifact.metrics import REPORT_COLUMNS
from artifact.runconfig import load_run_config

RUN_INI = """\
[model]
backbone = swin  ; inline comments are part of the grammar
time_injection = concat_token
patch_size = 2
window_size = 2
embed_dim = 8
depths = 1
num_heads = 2
image_size = 32
in_channels = 3

[schedule]
timesteps = 10

[train]
learning_rate = 0.001
batch_size = 4
total_steps = 6
checkpoint_every = 3
seed = 0

[data]
train_fraction = 1.0
val_fraction = 0.0
"""


def pixels(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def stems(directory) -> list:
    return sorted(p.stem for p in directory.glob("*.png"))


@pytest.fixture(scope="module")
def cli_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_texture_corpus(root / "corpus", 8, size=32, seed=11)
    (root / "run.ini").write_text(RUN_INI)
    return root


@pytest.fixture(scope="module")
def trained(cli_root):
    out = cli_root / "trained"
    rc = main(["train", "--config", str(cli_root / "run.ini"),
               "--data", str(cli_root / "corpus"), "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def synthesized(cli_root):
    out = cli_root / "synth"
    rc = main(["synthesize", "--input", str(cli_root / "corpus"),
               "--out", str(out), "--kind", "ink", "--intensity", "0.9",
               "--seed", "5"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def restored(cli_root, trained, synthesized):
    out = cli_root / "restored"
    rc = main(["restore", "--config", str(cli_root / "run.ini"),
               "--checkpoint", str(trained / "model.bin"),
               "--input", str(synthesized / "corrupted"),
               "--mask", str(synthesized / "masks"),
               "--out", str(out), "--snapshots", "10,5,0"])
    assert rc == 0
    return out


class TestCorpusCommand:
    def test_writes_requested_patches(self, tmp_path):
        rc = main(["corpus", "--out", str(tmp_path / "c"), "--count", "3",
                   "--size", "32"])
        assert rc == 0
        assert stems(tmp_path / "c") == ["tex_00000", "tex_00001", "tex_00002"]

    def test_same_seed_same_pixels(self, tmp_path):
        main(["corpus", "--out", str(tmp_path / "a"), "--count", "2",
              "--size", "32", "--seed", "4"])
        main(["corpus", "--out", str(tmp_path / "b"), "--count", "2",
              "--size", "32", "--seed", "4"])
        for name in stems(tmp_path / "a"):
            assert np.array_equal(pixels(tmp_path / "a" / f"{name}.png"),
                                  pixels(tmp_path / "b" / f"{name}.png"))


class TestTrainCommand:
    def test_writes_checkpoints_and_loss_csv(self, trained):
        assert (trained / "model.bin").is_file()
        assert (trained / "ckpt_step000003.bin").is_file()
        assert (trained / "ckpt_step000006.bin").is_file()
        with open(trained / "loss.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["step", "loss"]
        assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4", "5", "6"]
        assert all(math.isfinite(float(r[1])) for r in rows[1:])

    def test_rerun_reproduces_loss_csv(self, cli_root, trained):
        out = cli_root / "trained_again"
        rc = main(["train", "--config", str(cli_root / "run.ini"),
                   "--data", str(cli_root / "corpus"), "--out", str(out)])
        assert rc == 0
        assert (out / "loss.csv").read_bytes() == \
            (trained / "loss.csv").read_bytes()

    def test_missing_data_root_exits_2(self, cli_root, tmp_path, capsys):
        rc = main(["train", "--config", str(cli_root / "run.ini"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        err = capsys.readouterr().err
        assert "data" in err and "root" in err

    def test_unknown_config_key_exits_2(self, cli_root, tmp_path):
        rc = main(["train", "--config", str(cli_root / "run.ini"),
                   "--data", str(cli_root / "corpus"),
                   "--out", str(tmp_path / "o"),
                   "--override", "nosuch.key=1"])
        assert rc == 2

    def test_malformed_override_exits_2(self, cli_root, tmp_path):
        rc = main(["train", "--config", str(cli_root / "run.ini"),
                   "--data", str(cli_root / "corpus"),
                   "--out", str(tmp_path / "o"), "--override", "junk"])
        assert rc == 2

    def test_missing_config_file_exits_2(self, cli_root, tmp_path):
        rc = main(["train", "--config", str(tmp_path / "absent.ini"),
                   "--data", str(cli_root / "corpus"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_divergent_run_exits_3_with_dump(self, cli_root, tmp_path):
        out = tmp_path / "diverged"
        rc = main(["train", "--config", str(cli_root / "run.ini"),
                   "--data", str(cli_root / "corpus"), "--out", str(out),
                   "--override", "train.learning_rate=1e25"])
        assert rc == 3
        dump = json.loads((out / "diverged.json").read_text())
        assert dump["step"] == 2
        assert not math.isfinite(dump["loss"])
        with open(out / "loss.csv", newline="") as fh:
            assert len(list(csv.reader(fh))) == 2  # header + step 1

    def test_missing_required_flag_exits_2(self):
        assert main(["train"]) == 2

    def test_help_exits_0(self):
        assert main(["--help"]) == 0


class TestSynthesizeCommand:
    def test_outputs_paired_files(self, synthesized):
        assert stems(synthesized / "corrupted") == \
            stems(synthesized / "masks")
        assert len(stems(synthesized / "corrupted")) == 8

    def test_masks_nonempty_and_changes_confined(self, cli_root, synthesized):
        for stem in stems(synthesized / "masks"):
            mask = pixels(synthesized / "masks" / f"{stem}.png") >= 128
            clean = pixels(cli_root / "corpus" / f"{stem}.png")
            corrupted = pixels(synthesized / "corrupted" / f"{stem}.png")
            changed = (clean != corrupted).any(axis=2)
            assert mask.any()
            assert not (changed & ~mask).any()
            assert (changed & mask).any()

    def test_rerun_is_deterministic(self, cli_root, synthesized, tmp_path):
        out = tmp_path / "synth2"
        rc = main(["synthesize", "--input", str(cli_root / "corpus"),
                   "--out", str(out), "--kind", "ink", "--intensity", "0.9",
                   "--seed", "5"])
        assert rc == 0
        for stem in stems(synthesized / "corrupted"):
            assert np.array_equal(
                pixels(out / "corrupted" / f"{stem}.png"),
                pixels(synthesized / "corrupted" / f"{stem}.png"))
            assert np.array_equal(
                pixels(out / "masks" / f"{stem}.png"),
                pixels(synthesized / "masks" / f"{stem}.png"))

    def test_single_file_input(self, cli_root, tmp_path):
        rc = main(["synthesize",
                   "--input", str(cli_root / "corpus" / "tex_00000.png"),
                   "--out", str(tmp_path / "one"), "--kind", "bubble"])
        assert rc == 0
        assert stems(tmp_path / "one" / "corrupted") == ["tex_00000"]


class TestRestoreCommand:
    def test_outputs_and_snapshots(self, restored, synthesized):
        assert stems(restored / "restored") == \
            stems(synthesized / "corrupted")
        for stem in stems(restored / "restored"):
            snap_dir = restored / "snapshots" / stem
            assert sorted(p.name for p in snap_dir.iterdir()) == \
                ["snap_t0.png", "snap_t10.png", "snap_t5.png"]

    def test_preserves_pixels_outside_mask(self, restored, synthesized):
        for stem in stems(restored / "restored"):
            mask = pixels(synthesized / "masks" / f"{stem}.png") >= 128
            before = pixels(synthesized / "corrupted" / f"{stem}.png")
            after = pixels(restored / "restored" / f"{stem}.png")
            assert np.array_equal(before[~mask], after[~mask])

    def test_all_black_mask_returns_input_unchanged(self, cli_root, trained,
                                                    tmp_path):
        mask_path = tmp_path / "empty_mask.png"
        Image.new("L", (32, 32), 0).save(mask_path)
        source = cli_root / "corpus" / "tex_00001.png"
        out = tmp_path / "identity"
        rc = main(["restore", "--config", str(cli_root / "run.ini"),
                   "--checkpoint", str(trained / "model.bin"),
                   "--input", str(source), "--mask", str(mask_path),
                   "--out", str(out), "--snapshots", "5"])
        assert rc == 0
        assert np.array_equal(pixels(out / "restored" / "tex_00001.png"),
                              pixels(source))

    def test_rerun_is_deterministic(self, cli_root, trained, synthesized,
                                    restored, tmp_path):
        out = tmp_path / "restored2"
        rc = main(["restore", "--config", str(cli_root / "run.ini"),
                   "--checkpoint", str(trained / "model.bin"),
                   "--input", str(synthesized / "corrupted"),
                   "--mask", str(synthesized / "masks"),
                   "--out", str(out), "--snapshots", "10,5,0"])
        assert rc == 0
        for stem in stems(restored / "restored"):
            assert np.array_equal(
                pixels(out / "restored" / f"{stem}.png"),
                pixels(restored / "restored" / f"{stem}.png"))

    def test_detect_flag_derives_masks(self, cli_root, trained, synthesized,
                                       tmp_path):
        out = tmp_path / "detected"
        rc = main(["restore", "--config", str(cli_root / "run.ini"),
                   "--checkpoint", str(trained / "model.bin"),
                   "--input", str(synthesized / "corrupted"), "--detect",
                   "--out", str(out), "--snapshots", "5"])
        assert rc == 0
        assert len(stems(out / "masks")) == 8

    def test_missing_checkpoint_exits_2(self, cli_root, synthesized,
                                        tmp_path):
        rc = main(["restore", "--checkpoint", str(tmp_path / "absent.bin"),
                   "--input", str(synthesized / "corrupted"),
                   "--mask", str(synthesized / "masks"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_requires_mask_or_detect(self, cli_root, trained, synthesized,
                                     tmp_path, capsys):
        rc = main(["restore", "--config", str(cli_root / "run.ini"),
                   "--checkpoint", str(trained / "model.bin"),
                   "--input", str(synthesized / "corrupted"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "--mask" in capsys.readouterr().err

    def test_mask_dir_missing_stem_exits_2(self, cli_root, trained,
                                           synthesized, tmp_path):
        empty = tmp_path / "no_masks"
        empty.mkdir()
        rc = main(["restore", "--config", str(cli_root / "run.ini"),
                   "--checkpoint", str(trained / "model.bin"),
                   "--input", str(synthesized / "corrupted"),
                   "--mask", str(empty), "--out", str(tmp_path / "o")])
        assert rc == 2


@pytest.fixture(scope="module")
def report_dir(cli_root, synthesized, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    rc = main(["evaluate", "--clean", str(cli_root / "corpus"),
               "--restored", str(synthesized / "corrupted"),
               "--mask", str(synthesized / "masks"), "--out", str(out)])
    assert rc == 0
    return out


class TestEvaluateCommand:
    def test_report_csv_layout(self, report_dir):
        with open(report_dir / "report.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["id"] + list(REPORT_COLUMNS)
        assert len(rows) == 1 + 8 + 1
        assert rows[-1][0] == "mean"
        assert [r[0] for r in rows[1:-1]] == sorted(r[0] for r in rows[1:-1])

    def test_mean_row_matches_hand_average(self, report_dir):
        with open(report_dir / "report.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        for j, _ in enumerate(REPORT_COLUMNS, start=1):
            values = [float(r[j]) for r in rows[1:-1]]
            expected = sum(values) / len(values)
            assert float(rows[-1][j]) == pytest.approx(expected, rel=1e-12)

    def test_identity_pairs_hit_fixed_points(self, cli_root, tmp_path):
        clean = cli_root / "corpus"
        masks = tmp_path / "masks"
        masks.mkdir()
        for stem in stems(clean)[:2]:
            mask = Image.new("L", (32, 32), 0)
            mask.paste(255, (8, 8, 20, 20))
            mask.save(masks / f"{stem}.png")
        pair = tmp_path / "pair"
        pair.mkdir()
        for stem in stems(clean)[:2]:
            Image.open(clean / f"{stem}.png").save(pair / f"{stem}.png")
        out = tmp_path / "report"
        rc = main(["evaluate", "--clean", str(clean), "--restored",
                   str(pair), "--mask", str(masks), "--out", str(out)])
        assert rc == 2  # corpus has 8 stems, pair dir only 2

        small = tmp_path / "clean2"
        small.mkdir()
        for stem in stems(pair):
            Image.open(pair / f"{stem}.png").save(small / f"{stem}.png")
        rc = main(["evaluate", "--clean", str(small), "--restored",
                   str(pair), "--mask", str(masks), "--out", str(out)])
        assert rc == 0
        with open(out / "report.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        by_col = dict(zip(rows[0], zip(*rows[1:-1])))
        assert set(by_col["l2_region_x1e4"]) == {"0.0"}
        assert set(by_col["mse"]) == {"0.0"}
        assert set(by_col["ssim"]) == {"1.0"}
        assert set(by_col["psnr"]) == {"inf"}
        assert set(by_col["fsim"]) == {"1.0"}
        assert set(by_col["sre"]) == {"inf"}

    def test_unpaired_ids_exit_2(self, cli_root, synthesized, tmp_path,
                                 capsys):
        partial = tmp_path / "partial"
        partial.mkdir()
        names = stems(synthesized / "corrupted")
        for stem in names[:-1]:
            Image.open(synthesized / "corrupted" / f"{stem}.png").save(
                partial / f"{stem}.png")
        rc = main(["evaluate", "--clean", str(cli_root / "corpus"),
                   "--restored", str(partial),
                   "--mask", str(synthesized / "masks"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert names[-1] in capsys.readouterr().err

    def test_json_aggregate_matches_csv(self, report_dir):
        report = json.loads((report_dir / "report.json").read_text())
        with open(report_dir / "report.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        mean_row = dict(zip(rows[0], rows[-1]))
        for column in REPORT_COLUMNS:
            assert report["aggregate"][column] == \
                pytest.approx(float(mean_row[column]), rel=1e-12)
        assert len(report["per_image"]) == 8


@pytest.fixture(scope="module")
def ablation(cli_root, tmp_path_factory):
    out = tmp_path_factory.mktemp("ablate")
    rc = main(["ablate", "--config", str(cli_root / "run.ini"),
               "--data", str(cli_root / "corpus"), "--out", str(out),
               "--override", "data.train_fraction=0.75",
               "--override", "data.val_fraction=0.25"])
    assert rc == 0
    return out


class TestAblateCommand:
    def test_table_layout(self, ablation):
        with open(ablation / "ablation.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["variant"] + list(REPORT_COLUMNS) \
            + ["params", "flops", "inference_seconds"]
        assert [r[0] for r in rows[1:]] == ["swin_concat", "swin_add", "unet"]
        assert all(len(r) == 10 for r in rows)

    def test_params_column_matches_library(self, cli_root, ablation):
        base = load_run_config(str(cli_root / "run.ini")).denoiser
        with open(ablation / "ablation.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            expected = param_count(dataclasses.replace(base,
                                                       **VARIANTS[row[0]]))
            assert int(row[rows[0].index("params")]) == expected

    def test_metric_cells_are_finite(self, ablation):
        with open(ablation / "ablation.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        for row in rows[1:]:
            for cell in row[1:]:
                assert math.isfinite(float(cell))

    def test_per_variant_json_written(self, ablation):
        for name in VARIANTS:
            report = json.loads((ablation / f"{name}.json").read_text())
            assert report["complexity"]["mean_inference_seconds"] > 0
            assert report["complexity"]["params"] > 0

    def test_unknown_variant_exits_2(self, cli_root, tmp_path):
        rc = main(["ablate", "--config", str(cli_root / "run.ini"),
                   "--data", str(cli_root / "corpus"),
                   "--out", str(tmp_path / "o"), "--variants", "vgg"])
        assert rc == 2

    def test_variant_subset(self, cli_root, tmp_path):
        out = tmp_path / "solo"
        rc = main(["ablate", "--config", str(cli_root / "run.ini"),
                   "--data", str(cli_root / "corpus"), "--out", str(out),
                   "--override", "data.train_fraction=0.75",
                   "--override", "data.val_fraction=0.25",
                   "--variants", "unet"])
        assert rc == 0
        with open(out / "ablation.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert [r[0] for r in rows[1:]] == ["unet"]
