import csv
import hashlib
import json
import shutil
from pathlib import Path

import pytest

from ukanformer import cli
from ukanformer.gradcheck import GradResult

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = ["--set", "synth.n_scenes=3", "--set", "synth.scene_size=32", "--set", "synth.radius_min=4",
         "--set", "synth.radius_max=7", "--set", "synth.blobs_min=2", "--set", "synth.blobs_max=3",
         "--set", "synth.iou_band=[]", "--set", "data.tile_size=16", "--set", "data.test_fraction=0.34",
         "--set", "model.encoder_channels=[4,8]", "--set", "model.tokkan_dims=[8,8]",
         "--set", "train.epochs=1", "--set", "train.lr0=0.05"]


def tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--seed", "3"] + SMALL) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    rc = cli.main(["train", "--manifest", str(synth_dir / "manifest.csv"), "--out", str(out),
                   "--seed", "3"] + SMALL)
    assert rc == 0
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestSynth:
    def test_outputs(self, synth_dir):
        rows = read_rows(synth_dir / "manifest.csv")
        assert rows and {r["split"] for r in rows} == {"train", "test"}
        for r in rows:
            assert (synth_dir / r["image_path"]).exists() and (synth_dir / r["mask_path"]).exists()
            assert (synth_dir / "tiles/masks/clean" / f"{r['tile_id']}.png").exists()
        assert len(read_rows(synth_dir / "noise_report.csv")) == 3
        cfg = json.loads((synth_dir / "config.json").read_text())
        assert cfg["seed"] == 3 and cfg["synth"]["seed"] == 3

    def test_zero_noise(self, tmp_path):
        assert cli.main(["synth", "--config", str(CONFIGS / "zero_noise.json"), "--out", str(tmp_path)]) == 0
        assert all(float(r["noisy_vs_clean_iou"]) == 1.0 for r in read_rows(tmp_path / "noise_report.csv"))

    def test_deterministic_tree(self, tmp_path):
        for d in ("a", "b"):
            assert cli.main(["synth", "--out", str(tmp_path / d), "--seed", "5"] + SMALL) == 0
        assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")

    def test_default_noise_in_band(self, tmp_path, capsys):
        assert cli.main(["synth", "--out", str(tmp_path), "--set", "data.tile_size=64"]) == 0
        ious = [float(r["noisy_vs_clean_iou"]) for r in read_rows(tmp_path / "noise_report.csv")]
        assert len(ious) == 20 and 0.60 <= sum(ious) / 20 <= 0.85

    def test_band_violation_exit_1(self, tmp_path):
        args = ["synth", "--out", str(tmp_path)] + SMALL + ["--set", "synth.iou_band=[0.99,1.0]"]
        assert cli.main(args) == 1

    @pytest.mark.parametrize("override", ["synth.dilate_px=-1", "synth.bogus=1", "nosection.x=1", "novalue"])
    def test_bad_config_exit_2(self, tmp_path, override):
        assert cli.main(["synth", "--out", str(tmp_path), "--set", override]) == 2

    def test_unreadable_config_exit_2(self, tmp_path):
        (tmp_path / "c.json").write_text("{not json")
        assert cli.main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "c.json")]) == 2

    def test_usage_exit_2(self):
        assert cli.main(["synth"]) == 2
        assert cli.main(["frobnicate"]) == 2


class TestTile:
    def test_tiles_user_scenes(self, synth_dir, tmp_path):
        with open(tmp_path / "scenes.csv", "w") as fh:
            fh.write("scene_id,image_path,mask_path,clean_mask_path\n")
            for i in range(2):
                sid = f"scene{i:03d}"
                for suffix in ("", "_noisy", "_clean"):
                    shutil.copy(synth_dir / "scenes" / f"{sid}{suffix}.png", tmp_path / f"{sid}{suffix}.png")
                fh.write(f"{sid},{sid}.png,{sid}_noisy.png,{sid}_clean.png\n")
        out = tmp_path / "out"
        assert cli.main(["tile", "--scenes", str(tmp_path / "scenes.csv"), "--out", str(out),
                         "--set", "data.tile_size=16", "--set", "data.test_fraction=0.5"]) == 0
        rows = read_rows(out / "manifest.csv")
        assert len(rows) == 2 * 9  # 32px scene, 16px tiles, stride 12 -> origins 0, 12, 16
        assert json.loads((out / "inputs.json").read_text())

    def test_missing_scene_list(self, tmp_path):
        assert cli.main(["tile", "--scenes", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


class TestTrainEval:
    def test_train_outputs(self, trained):
        for name in ("history.csv", "final.ukf", "config.json", "inputs.json"):
            assert (trained / name).exists()

    def test_echoed_config_reproduces(self, synth_dir, trained, tmp_path):
        rc = cli.main(["train", "--config", str(trained / "config.json"),
                       "--manifest", str(synth_dir / "manifest.csv"), "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "final.ukf").read_bytes() == (trained / "final.ukf").read_bytes()
        assert (tmp_path / "config.json").read_text() == (trained / "config.json").read_text()

    @pytest.mark.parametrize("reference", ["clean", "noisy"])
    def test_eval_checkpoint(self, synth_dir, trained, tmp_path, reference):
        rc = cli.main(["eval", "--manifest", str(synth_dir / "manifest.csv"), "--checkpoint",
                       str(trained / "final.ukf"), "--reference", reference, "--out", str(tmp_path)])
        assert rc == 0
        summary = json.loads((tmp_path / "metrics.json").read_text())
        assert summary["reference"] == reference
        assert 0.0 <= summary["accuracy"] <= 100.0

    def test_eval_perfect_predictions(self, synth_dir, tmp_path):
        pred = tmp_path / "pred"
        pred.mkdir()
        for r in read_rows(synth_dir / "manifest.csv"):
            if r["split"] == "test":
                shutil.copy(synth_dir / "tiles/masks/clean" / f"{r['tile_id']}.png", pred)
        rc = cli.main(["eval", "--manifest", str(synth_dir / "manifest.csv"), "--predictions", str(pred),
                       "--reference", "clean", "--out", str(tmp_path / "e")])
        assert rc == 0
        summary = json.loads((tmp_path / "e" / "metrics.json").read_text())
        assert summary["mean_iou"] == 100.0 and summary["accuracy"] == 100.0

    def test_predict_writes_masks(self, synth_dir, trained, tmp_path):
        rc = cli.main(["predict", "--manifest", str(synth_dir / "manifest.csv"), "--checkpoint",
                       str(trained / "final.ukf"), "--out", str(tmp_path)])
        assert rc == 0
        tests = [r["tile_id"] for r in read_rows(synth_dir / "manifest.csv") if r["split"] == "test"]
        assert sorted(p.stem for p in tmp_path.glob("*.png")) == sorted(tests)

    def test_missing_checkpoint_exit_2(self, synth_dir, tmp_path):
        rc = cli.main(["eval", "--manifest", str(synth_dir / "manifest.csv"), "--checkpoint",
                       str(tmp_path / "none.ukf"), "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_manifest_exit_2(self, tmp_path):
        assert cli.main(["train", "--manifest", str(tmp_path / "m.csv"), "--out", str(tmp_path)]) == 2

    def test_ablate(self, synth_dir, tmp_path):
        rc = cli.main(["ablate", "--manifest", str(synth_dir / "manifest.csv"), "--out", str(tmp_path),
                       "--seed", "3"] + SMALL)
        assert rc == 0
        rows = list(csv.reader(open(tmp_path / "ablation.csv")))
        assert [r[0] for r in rows] == ["variant", "gl_trans", "plain_conv", "delta"]
        gl, plain, delta = (float(r[1]) for r in rows[1:])
        assert delta == pytest.approx(gl - plain, abs=2e-4)
        for d in ("gl_trans", "plain_conv"):
            assert (tmp_path / d / "metrics.json").exists()


class TestGradcheck:
    def test_passes(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        assert "FAIL" not in capsys.readouterr().out

    def test_failure_exit_1(self, monkeypatch):
        import ukanformer.gradcheck as gc

        monkeypatch.setattr(gc, "run_suite", lambda seed=0: [GradResult("bad", 1.0, 1e-4, 0.0)])
        assert cli.main(["gradcheck"]) == 1
