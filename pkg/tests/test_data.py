import json

import numpy as np
import pytest

from vfxseg import data as dt
from vfxseg.core import load_image, save_image
from vfxseg.effects import EffectKind
from vfxseg.training import Hyperparams


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    dt.make_disk_dataset(root, 40, size=16, seed=1)
    return root


class TestSplit:
    def test_sizes_and_disjointness(self, corpus, tmp_path):
        out = tmp_path / "m"
        manifests = dt.split_msra(corpus, seed=3, out_dir=out, allow_scaled=True)
        a = manifests["train_A"]
        b = manifests["train_B_source"]
        t = manifests["test"]
        assert len(t.entries) == 2      # 5% of 40
        assert len(a.entries) == 19
        assert len(b.entries) == 19
        ids = [m.image_ids() for m in (a, b, t)]
        assert not (ids[0] & ids[1])
        assert not (ids[0] & ids[2])
        assert not (ids[1] & ids[2])
        assert a.role == "domainA_inputs"
        assert b.role == "domainB_samples"
        assert t.role == "test"

    def test_full_scale_counts(self):
        # proportional formula reproduces the full-scale 4750/4750/500 split
        n = 10_000
        n_test = round(0.05 * n)
        rest = n - n_test
        assert (rest + 1) // 2 == 4750 and rest - (rest + 1) // 2 == 4750
        assert n_test == 500

    def test_deterministic_manifests(self, corpus, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        dt.split_msra(corpus, seed=9, out_dir=out1, allow_scaled=True)
        dt.split_msra(corpus, seed=9, out_dir=out2, allow_scaled=True)
        for name in ("msra_train_A.json", "msra_train_B_source.json", "msra_test.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_different_seed_different_split(self, corpus, tmp_path):
        m1 = dt.split_msra(corpus, seed=1, out_dir=tmp_path / "s1", allow_scaled=True)
        m2 = dt.split_msra(corpus, seed=2, out_dir=tmp_path / "s2", allow_scaled=True)
        assert m1["test"].image_ids() != m2["test"].image_ids()

    def test_insufficient_without_scaling(self, corpus, tmp_path):
        with pytest.raises(dt.InsufficientImages):
            dt.split_msra(corpus, seed=0, out_dir=tmp_path)

    def test_manifest_round_trip_and_verify(self, corpus, tmp_path):
        manifests = dt.split_msra(corpus, seed=4, out_dir=tmp_path, allow_scaled=True)
        loaded = dt.DatasetManifest.load(tmp_path / "msra_test.json")
        assert loaded.to_json() == manifests["test"].to_json()
        loaded.verify()
        first = loaded.image_path(loaded.entries[0])
        original = first.read_bytes()
        try:
            first.write_bytes(b"corrupted")
            with pytest.raises(Exception):
                loaded.verify()
        finally:
            first.write_bytes(original)


class TestEffectSamples:
    def test_black_background_exact_zero_background(self, corpus, tmp_path):
        manifests = dt.split_msra(corpus, seed=5, out_dir=tmp_path / "m",
                                  allow_scaled=True)
        src = manifests["train_B_source"]
        out = dt.build_effect_samples(src, EffectKind.BLACK_BACKGROUND,
                                      tmp_path / "bb")
        assert len(out.entries) == len(src.entries)
        assert all(e.mask is None for e in out.entries)
        assert all(e.tag == "black_background" for e in out.entries)
        from vfxseg.core import load_mask

        for e, se in zip(out.entries[:3], src.entries[:3]):
            sample = load_image(out.image_path(e))
            mask = load_mask(src.mask_path(se))
            assert np.all(sample[~mask] == 0.0)

    def test_color_selectivo_gray_background(self, corpus, tmp_path):
        manifests = dt.split_msra(corpus, seed=6, out_dir=tmp_path / "m",
                                  allow_scaled=True)
        src = manifests["train_B_source"]
        out = dt.build_effect_samples(src, EffectKind.COLOR_SELECTIVO,
                                      tmp_path / "cs")
        from vfxseg.core import load_mask

        for e, se in zip(out.entries[:3], src.entries[:3]):
            sample = load_image(out.image_path(e))
            mask = load_mask(src.mask_path(se))
            ground = sample[~mask]
            spread = np.abs(ground - ground.mean(axis=1, keepdims=True)).max()
            assert spread <= 2e-3 + 1.0 / 255.0  # 2 eps plus quantization

    def test_missing_mask(self, tmp_path):
        img_dir = tmp_path / "images"
        img_dir.mkdir()
        save_image(np.full((8, 8, 3), 0.5, dtype=np.float32), img_dir / "x.png")
        m = dt.DatasetManifest(
            name="n", role="domainB_samples", created="t",
            entries=[dt.ManifestEntry(path="images/x.png",
                                      sha256=dt.sha256_file(img_dir / "x.png"))],
        )
        m.base_dir = tmp_path
        with pytest.raises(dt.MissingMask):
            dt.build_effect_samples(m, EffectKind.BLACK_BACKGROUND, tmp_path / "o")


class TestUnpairedLoader:
    def make_two_image_manifest(self, d, prefix):
        d.mkdir(parents=True, exist_ok=True)
        entries = []
        rng = np.random.default_rng(0)
        for i in range(2):
            p = d / f"{prefix}{i}.png"
            save_image(rng.random((8, 8, 3)).astype(np.float32), p)
            entries.append(dt.ManifestEntry(path=p.name, sha256=dt.sha256_file(p)))
        m = dt.DatasetManifest(name=prefix, role="domainA_inputs",
                               created="t", entries=entries)
        m.base_dir = d
        return m

    def test_uniform_draws(self, tmp_path):
        ma = self.make_two_image_manifest(tmp_path / "a", "a")
        mb = self.make_two_image_manifest(tmp_path / "b", "b")
        loader = dt.UnpairedLoader(ma, mb, image_size=8, seed=0)
        counts = np.zeros(2)
        for _ in range(1000):
            ia, _ = loader.draw_indices()
            counts[ia] += 1
        assert abs(counts[0] - 500) <= 70

    def test_streams_independent(self, tmp_path):
        ma = self.make_two_image_manifest(tmp_path / "a", "a")
        mb = self.make_two_image_manifest(tmp_path / "b", "b")
        loader = dt.UnpairedLoader(ma, mb, image_size=8, seed=1)
        seq = [loader.draw_indices() for _ in range(10_000)]
        a = np.array([s[0] for s in seq], dtype=float)
        b = np.array([s[1] for s in seq], dtype=float)
        corr = np.corrcoef(a, b)[0, 1]
        assert abs(corr) < 0.05

    def test_shapes_and_range(self, corpus, tmp_path):
        manifests = dt.split_msra(corpus, seed=7, out_dir=tmp_path,
                                  allow_scaled=True)
        hp = Hyperparams(image_size=12, total_iters=1)
        loader = dt.load_unpaired(manifests["train_A"],
                                  manifests["train_B_source"], hp, seed=2)
        img, sample = loader.draw()
        for t in (img, sample):
            assert t.shape == (12, 12, 3)
            assert t.dtype == np.float32
            assert t.min() >= 0.0 and t.max() <= 1.0

    def test_decode_failures_counted_and_skipped(self, tmp_path):
        ma = self.make_two_image_manifest(tmp_path / "a", "a")
        mb = self.make_two_image_manifest(tmp_path / "b", "b")
        (tmp_path / "a" / "a0.png").write_bytes(b"broken")
        loader = dt.UnpairedLoader(ma, mb, image_size=8, seed=3)
        for _ in range(50):
            img, _ = loader.draw()
            assert img.shape == (8, 8, 3)
        assert loader.decode_failures > 0

    def test_resize_policy(self, tmp_path):
        from PIL import Image

        arr = np.zeros((20, 40, 3), dtype=np.uint8)
        arr[:, 20:] = 255
        p = tmp_path / "wide.png"
        Image.fromarray(arr).save(p)
        out = dt.load_image_sized(p, 10)
        assert out.shape == (10, 10, 3)
        # center crop of the wide image straddles the black/white boundary
        assert out[:, 0].mean() < 0.5 < out[:, -1].mean()


class TestDiskDataset:
    def test_deterministic(self, tmp_path):
        dt.make_disk_dataset(tmp_path / "d1", 3, size=16, seed=8)
        dt.make_disk_dataset(tmp_path / "d2", 3, size=16, seed=8)
        for i in range(3):
            f1 = (tmp_path / "d1" / "images" / f"disk_{i:05d}.png").read_bytes()
            f2 = (tmp_path / "d2" / "images" / f"disk_{i:05d}.png").read_bytes()
            assert f1 == f2

    def test_bright_disk_on_dark_ground(self, tmp_path):
        dt.make_disk_dataset(tmp_path, 2, size=32, seed=9)
        from vfxseg.core import load_mask

        img = load_image(tmp_path / "images" / "disk_00000.png")
        mask = load_mask(tmp_path / "masks" / "disk_00000.png")
        assert mask.any() and not mask.all()
        assert img[mask].mean() > img[~mask].mean() + 0.2


def test_manifest_schema_fields(tmp_path):
    save_image(np.full((4, 4, 3), 0.2, dtype=np.float32), tmp_path / "i.png")
    m = dt.DatasetManifest(
        name="x", role="test", created="prov",
        entries=[dt.ManifestEntry(path="i.png", sha256=dt.sha256_file(tmp_path / "i.png"),
                                  tag="demo")],
    )
    m.save(tmp_path / "m.json")
    raw = json.loads((tmp_path / "m.json").read_text())
    assert set(raw) == {"name", "role", "created", "resample", "entries"}
    assert raw["resample"] == "bilinear"
    assert set(raw["entries"][0]) == {"path", "sha256", "tag"}
