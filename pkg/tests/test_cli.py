import json

import numpy as np
import pytest

from vfxseg.cli import RunConfig, main
from vfxseg.core import load_image, load_mask, load_ver, save_image
from vfxseg.data import make_disk_dataset


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("clicorpus")
    make_disk_dataset(root, 24, size=16, seed=2)
    return root


@pytest.fixture(scope="module")
def dataset_out(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    rc = main([
        "make-dataset", "--root", str(corpus), "--out", str(out),
        "--effect", "black_background", "--seed", "7", "--allow-scaled",
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def trained(dataset_out, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "run.cfg"
    cfg.write_text(
        "effect = black_background\n"
        "variant = V4\n"
        "seed = 13\n"
        "total_iters = 4\n"
        "image_size = 16\n"
        "base_width = 4\n"
        "n_res_blocks = 1\n"
        "n_critic = 2\n"
        "checkpoint_every = 2\n"
        f"manifest_a = {dataset_out / 'msra_train_A.json'}\n"
        f"manifest_b = {dataset_out / 'samples_black_background' / 'samples.json'}\n"
        f"out_dir = {out}\n"
    )
    rc = main(["train", "--config", str(cfg)])
    assert rc == 0
    return out


class TestRunConfig:
    def test_canonical_echo_is_fixed_point(self):
        text = (
            "# a comment\n"
            "seed = 5\n"
            "effect = color_selectivo\n"
            "learning_rate = 0.0002\n"
        )
        cfg = RunConfig.parse(text)
        canon = cfg.canonical()
        again = RunConfig.parse(canon).canonical()
        assert canon == again
        assert "seed = 5" in canon

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            RunConfig.parse("bogus = 1\n")

    def test_invalid_effect_or_variant(self):
        with pytest.raises(ValueError):
            RunConfig.parse("effect = sepia\n")
        with pytest.raises(ValueError):
            RunConfig.parse("variant = V7\n")


class TestMakeDataset:
    def test_emits_four_manifests_and_provenance(self, dataset_out):
        assert (dataset_out / "msra_train_A.json").exists()
        assert (dataset_out / "msra_train_B_source.json").exists()
        assert (dataset_out / "msra_test.json").exists()
        assert (dataset_out / "samples_black_background" / "samples.json").exists()
        prov = json.loads((dataset_out / "provenance.json").read_text())
        assert prov["command"] == "make-dataset"
        assert prov["seed"] == 7
        assert "vfxseg" in prov["versions"]

    def test_rerun_identical_manifests(self, corpus, dataset_out, tmp_path):
        rc = main([
            "make-dataset", "--root", str(corpus), "--out", str(tmp_path),
            "--effect", "black_background", "--seed", "7", "--allow-scaled",
        ])
        assert rc == 0
        for rel in ("msra_train_A.json", "msra_test.json",
                    "samples_black_background/samples.json"):
            assert (tmp_path / rel).read_bytes() == (dataset_out / rel).read_bytes()

    def test_missing_masks_exit_nonzero(self, tmp_path, capsys):
        (tmp_path / "images").mkdir()
        save_image(np.full((8, 8, 3), 0.4, dtype=np.float32),
                   tmp_path / "images" / "lonely.png")
        rc = main([
            "make-dataset", "--root", str(tmp_path), "--out", str(tmp_path / "o"),
            "--effect", "defocus", "--seed", "1", "--allow-scaled",
        ])
        assert rc != 0
        assert "lonely" in capsys.readouterr().err


class TestFetchCli:
    def test_fixture_fetch(self, tmp_path):
        from vfxseg.core import save_image as si

        fx = tmp_path / "fx"
        fx.mkdir()
        rng = np.random.default_rng(1)
        photos = []
        for i in range(3):
            si(rng.random((5, 5, 3)).astype(np.float32), fx / f"p{i}.png")
            photos.append({"id": i, "url": f"u{i}", "file": f"p{i}.png"})
        (fx / "fixture.json").write_text(json.dumps({"photos": photos}))
        out = tmp_path / "dl"
        rc = main(["fetch", "--tag", "black background", "--count", "3",
                   "--out", str(out), "--fixture", str(fx)])
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["entries"]) == 3
        rc = main(["fetch", "--tag", "black background", "--count", "3",
                   "--out", str(out), "--fixture", str(fx), "--resume"])
        assert rc == 0

    def test_missing_credential(self, tmp_path, monkeypatch, capsys):
        from vfxseg.web import CREDENTIAL_ENV

        monkeypatch.delenv(CREDENTIAL_ENV, raising=False)
        rc = main(["fetch", "--tag", "x", "--count", "1", "--out", str(tmp_path)])
        assert rc != 0
        assert "API key" in capsys.readouterr().err


class TestTrainCli:
    def test_log_and_checkpoints(self, trained):
        log = (trained / "loss_log.csv").read_text().splitlines()
        assert log[0] == "iter,l_g,l_d,gp"
        assert len(log) == 5
        assert (trained / "ckpt_000004.pt").exists()
        prov = json.loads((trained / "provenance.json").read_text())
        assert prov["command"] == "train"
        assert prov["config"].startswith("base_width")

    def test_resume_continues_iteration_numbering(self, trained, dataset_out, tmp_path):
        cfg = tmp_path / "resume.cfg"
        cfg.write_text(
            "effect = black_background\nvariant = V4\nseed = 13\n"
            "total_iters = 6\nimage_size = 16\nbase_width = 4\n"
            "n_res_blocks = 1\nn_critic = 2\ncheckpoint_every = 0\n"
            f"manifest_a = {dataset_out / 'msra_train_A.json'}\n"
            f"manifest_b = {dataset_out / 'samples_black_background' / 'samples.json'}\n"
            f"out_dir = {trained}\n"
        )
        rc = main(["train", "--config", str(cfg),
                   "--resume", str(trained / "ckpt_000004.pt")])
        assert rc == 0
        rows = (trained / "loss_log.csv").read_text().splitlines()
        iters = [int(r.split(",")[0]) for r in rows[1:]]
        assert iters == [1, 2, 3, 4, 5, 6]

    def test_invalid_variant_usage_error(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("variant = V9\n")
        rc = main(["train", "--config", str(cfg)])
        assert rc == 2
        assert "variant" in capsys.readouterr().err


class TestPipelineCommands:
    def test_predict_edit_binarize_evaluate_curves(self, corpus, trained, tmp_path):
        images = corpus / "images"
        vers = tmp_path / "vers"
        rc = main(["predict", "--checkpoint", str(trained / "ckpt_000004.pt"),
                   "--images", str(images), "--out", str(vers)])
        assert rc == 0
        ver_files = sorted(vers.glob("*.ver"))
        assert len(ver_files) == 24
        ver = load_ver(ver_files[0])
        assert ver.shape == (16, 16)

        edits = tmp_path / "edits"
        rc = main(["edit", "--images", str(images), "--vers", str(vers),
                   "--effect", "black_background", "--out", str(edits)])
        assert rc == 0
        stem = ver_files[0].stem
        triplet = [edits / f"{stem}_input.png", edits / f"{stem}_ver.png",
                   edits / f"{stem}_edit.png"]
        assert all(p.exists() for p in triplet)
        # the edited image is the clamped blend of input and black
        img = load_image(triplet[0])
        edit = load_image(triplet[2])
        assert edit.shape == img.shape

        masks = tmp_path / "masks"
        rc = main(["binarize", "--images", str(images), "--vers", str(vers),
                   "--out", str(masks), "--n-superpixels", "30"])
        assert rc == 0
        mask_files = sorted(masks.glob("*.png"))
        assert len(mask_files) == 24
        sidecar = json.loads((masks / f"{stem}.json").read_text())
        assert sidecar["theta2"] == 0.99
        m = load_mask(mask_files[0])
        assert m.shape == (16, 16)

        report = tmp_path / "report.json"
        rc = main(["evaluate", "--pred", str(corpus / "masks"),
                   "--gt", str(corpus / "masks"), "--out", str(report)])
        assert rc == 0
        raw = json.loads(report.read_text())
        assert raw["mean_iou"] == 1.0

        curve = tmp_path / "curve.csv"
        rc = main(["curves", "--report", str(report), "--out", str(curve)])
        assert rc == 0
        assert curve.read_text().splitlines()[0] == "rank,iou"

    def test_evaluate_on_binarized_predictions(self, corpus, trained, tmp_path):
        # untrained-ish checkpoint: just verify the wiring end to end
        vers = tmp_path / "v"
        main(["predict", "--checkpoint", str(trained / "ckpt_000004.pt"),
              "--images", str(corpus / "images"), "--out", str(vers)])
        masks = tmp_path / "m"
        main(["binarize", "--images", str(corpus / "images"), "--vers", str(vers),
              "--out", str(masks), "--n-superpixels", "30"])
        report = tmp_path / "r.json"
        rc = main(["evaluate", "--pred", str(masks), "--gt", str(corpus / "masks"),
                   "--out", str(report)])
        assert rc == 0
        raw = json.loads(report.read_text())
        assert 0.0 <= raw["mean_iou"] <= 1.0
