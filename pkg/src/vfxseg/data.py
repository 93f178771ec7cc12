"""Dataset construction: splits, effect-sample synthesis, unpaired batches.

A dataset is described by a manifest JSON file:

    {"name": ..., "role": "domainA_inputs" | "domainB_samples" | "test",
     "created": ..., "resample": "bilinear",
     "entries": [{"path": ..., "mask": ..., "tag": ..., "sha256": ...}]}

Entry paths are stored relative to the manifest's directory so a dataset
tree can be relocated; `created` is a deterministic provenance string
(seeded operations must reproduce manifests bit-for-bit).
"""

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    ImageTensor,
    MissingFile,
    VfxsegError,
    load_image,
    load_mask,
    save_image,
    save_mask,
)
from .effects import EffectKind, synthesize_sample

log = logging.getLogger(__name__)

ROLES = ("domainA_inputs", "domainB_samples", "test")
IMG_SUFFIXES = (".png", ".jpg", ".jpeg")


class InsufficientImages(VfxsegError):
    pass


class MissingMask(VfxsegError):
    pass


class DecodeFailure(VfxsegError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ManifestEntry:
    path: str
    sha256: str
    mask: str | None = None
    tag: str | None = None

    def to_json(self) -> dict:
        d = {"path": self.path, "sha256": self.sha256}
        if self.mask is not None:
            d["mask"] = self.mask
        if self.tag is not None:
            d["tag"] = self.tag
        return d


@dataclass
class DatasetManifest:
    name: str
    role: str
    created: str
    entries: list
    resample: str = "bilinear"
    base_dir: Path = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")

    def image_path(self, entry: ManifestEntry) -> Path:
        return (self.base_dir / entry.path) if self.base_dir else Path(entry.path)

    def mask_path(self, entry: ManifestEntry) -> Path | None:
        if entry.mask is None:
            return None
        return (self.base_dir / entry.mask) if self.base_dir else Path(entry.mask)

    def image_ids(self) -> set:
        return {Path(e.path).stem for e in self.entries}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "role": self.role,
            "created": self.created,
            "resample": self.resample,
            "entries": [e.to_json() for e in self.entries],
        }

    def save(self, path) -> Path:
        """Atomic write (tmp file + rename); paths must already be relative."""
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        os.replace(tmp, path)
        self.base_dir = path.parent
        return path

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise MissingFile(str(path))
        raw = json.loads(path.read_text())
        entries = [
            ManifestEntry(
                path=e["path"],
                sha256=e["sha256"],
                mask=e.get("mask"),
                tag=e.get("tag"),
            )
            for e in raw["entries"]
        ]
        m = cls(
            name=raw["name"],
            role=raw["role"],
            created=raw["created"],
            entries=entries,
            resample=raw.get("resample", "bilinear"),
        )
        m.base_dir = path.parent
        return m

    def verify(self) -> None:
        """Check that every referenced file exists and matches its checksum."""
        for e in self.entries:
            p = self.image_path(e)
            if not p.exists():
                raise MissingFile(str(p))
            actual = sha256_file(p)
            if actual != e.sha256:
                raise VfxsegError(f"checksum mismatch for {p}")


def _relpath(path: Path, base: Path) -> str:
    return os.path.relpath(os.path.abspath(path), os.path.abspath(base))


def discover_pairs(root) -> list:
    """(stem, image_path, mask_path|None) tuples under a dataset root.

    Supports `root/images + root/masks` or a flat MSRA-style directory of
    stem.jpg images with stem.png masks.
    """
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    pairs = []
    if img_dir.is_dir():
        for p in sorted(img_dir.iterdir()):
            if p.suffix.lower() not in IMG_SUFFIXES:
                continue
            mask = None
            if mask_dir.is_dir():
                for suf in (".png", ".PNG"):
                    cand = mask_dir / (p.stem + suf)
                    if cand.exists():
                        mask = cand
                        break
            pairs.append((p.stem, p, mask))
    else:
        for p in sorted(root.iterdir()):
            if p.suffix.lower() not in (".jpg", ".jpeg"):
                continue
            cand = root / (p.stem + ".png")
            pairs.append((p.stem, p, cand if cand.exists() else None))
    return pairs


def _entry_for(img: Path, mask: Path | None, base: Path, tag=None) -> ManifestEntry:
    return ManifestEntry(
        path=_relpath(img, base),
        sha256=sha256_file(img),
        mask=_relpath(mask, base) if mask else None,
        tag=tag,
    )


def split_msra(root, seed, out_dir=None, allow_scaled: bool = False,
               name: str = "msra"):
    """Deterministic three-way split of an image+mask corpus.

    With n images: 5% test (500 of 10,000), the remainder halved into
    domain-A inputs and domain-B effect sources, pairwise disjoint.
    Fewer than 10,000 pairs raises InsufficientImages unless
    allow_scaled is set, in which case the ratios scale down.
    """
    root = Path(root)
    pairs = discover_pairs(root)
    missing = [stem for stem, _, mask in pairs if mask is None]
    if missing:
        raise MissingMask(
            f"{len(missing)} image(s) lack masks, first: {missing[0]}"
        )
    n = len(pairs)
    if n < 10000 and not allow_scaled:
        raise InsufficientImages(
            f"{root} holds {n} image+mask pairs; 10,000 required "
            "(enable proportional scaling for smaller corpora)"
        )
    if n < 4:
        raise InsufficientImages(f"{root} holds only {n} usable pairs")
    out_dir = Path(out_dir) if out_dir else root
    out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    order = rng.permutation(n)
    n_test = max(1, round(0.05 * n))
    rest = n - n_test
    n_a = (rest + 1) // 2
    idx_test = order[:n_test]
    idx_a = order[n_test:n_test + n_a]
    idx_b = order[n_test + n_a:]

    created = f"split(seed={int(seed)},n={n})"

    def manifest(role, idxs, suffix):
        entries = [
            _entry_for(pairs[i][1], pairs[i][2], out_dir) for i in sorted(idxs)
        ]
        m = DatasetManifest(
            name=f"{name}-{suffix}", role=role, created=created, entries=entries
        )
        m.save(out_dir / f"{name}_{suffix}.json")
        return m

    return {
        "train_A": manifest("domainA_inputs", idx_a, "train_A"),
        "train_B_source": manifest("domainB_samples", idx_b, "train_B_source"),
        "test": manifest("test", idx_test, "test"),
    }


def build_effect_samples(manifest_bsource: DatasetManifest, effect: EffectKind,
                         out_dir) -> DatasetManifest:
    """Synthesize the effect-sample domain from masked source images.

    The output manifest references the synthesized images only; masks are
    deliberately not propagated.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in manifest_bsource.entries:
        mask_path = manifest_bsource.mask_path(e)
        if mask_path is None:
            raise MissingMask(f"entry {e.path} has no mask")
        img = load_image(manifest_bsource.image_path(e))
        mask = load_mask(mask_path)
        sample = synthesize_sample(img, mask, effect)
        out_path = out_dir / (Path(e.path).stem + ".png")
        save_image(sample, out_path)
        entries.append(_entry_for(out_path, None, out_dir, tag=effect.value))
    m = DatasetManifest(
        name=f"{manifest_bsource.name}-{effect.value}",
        role="domainB_samples",
        created=f"effect_samples({effect.value})",
        entries=entries,
    )
    m.save(out_dir / "samples.json")
    return m


def resize_short_side_crop(pil_img: Image.Image, size: int) -> Image.Image:
    """Bilinear resize so the short side equals size, then center crop."""
    w, h = pil_img.size
    scale = size / min(w, h)
    new_w, new_h = max(size, round(w * scale)), max(size, round(h * scale))
    resized = pil_img.resize((new_w, new_h), Image.BILINEAR)
    left = (new_w - size) // 2
    top = (new_h - size) // 2
    return resized.crop((left, top, left + size, top + size))


def load_image_sized(path, size: int) -> ImageTensor:
    """Decode, resize short side to `size`, center crop; float32 in [0, 1]."""
    try:
        with Image.open(path) as pil:
            if pil.mode != "RGB":
                pil = pil.convert("RGB")
            pil = resize_short_side_crop(pil, size)
            arr = np.asarray(pil, dtype=np.uint8)
    except OSError as e:
        raise DecodeFailure(f"{path}: {e}") from e
    return arr.astype(np.float32) / 255.0


class UnpairedLoader:
    """Infinite stream of (input, effect-sample) pairs.

    Indices into the two manifests are drawn independently and uniformly
    with replacement, so no pairing between the domains can arise.
    Decoded images are cached in memory; undecodable entries are logged,
    counted, and resampled.
    """

    def __init__(self, manifest_a: DatasetManifest, manifest_b: DatasetManifest,
                 image_size: int, seed=None):
        if not manifest_a.entries or not manifest_b.entries:
            raise InsufficientImages("both manifests must be non-empty")
        self.manifest_a = manifest_a
        self.manifest_b = manifest_b
        self.image_size = image_size
        self.rng = np.random.default_rng(
            None if seed is None else int(seed) & 0xFFFFFFFFFFFFFFFF
        )
        self.decode_failures = 0
        self._cache = {}

    def _fetch(self, manifest, idx):
        path = manifest.image_path(manifest.entries[idx])
        key = str(path)
        if key not in self._cache:
            self._cache[key] = load_image_sized(path, self.image_size)
        return self._cache[key]

    def _draw(self, manifest):
        for _ in range(10 * len(manifest.entries)):
            idx = int(self.rng.integers(len(manifest.entries)))
            try:
                return idx, self._fetch(manifest, idx)
            except DecodeFailure as e:
                self.decode_failures += 1
                log.warning("skipping undecodable image: %s", e)
        raise DecodeFailure("too many consecutive decode failures")

    def draw(self):
        _, img_a = self._draw(self.manifest_a)
        _, img_b = self._draw(self.manifest_b)
        return img_a, img_b

    def draw_indices(self):
        """(index_a, index_b) of one draw; used for independence checks."""
        ia, _ = self._draw(self.manifest_a)
        ib, _ = self._draw(self.manifest_b)
        return ia, ib

    def __iter__(self):
        while True:
            yield self.draw()


def load_unpaired(manifest_a, manifest_b, hp, seed=None) -> UnpairedLoader:
    """Loader for unpaired training; hp needs an `image_size` attribute."""
    size = hp.image_size if hasattr(hp, "image_size") else int(hp)
    return UnpairedLoader(manifest_a, manifest_b, size, seed=seed)


# synthetic disk corpus for toy-scale runs

def disk_image(rng: np.random.Generator, size: int = 64):
    """One bright flat-colored disk on a dark textured background.

    The texture is spatially correlated (smoothed noise), like natural
    low-frequency background structure.
    """
    from scipy import ndimage

    base = rng.uniform(0.05, 0.25, size=3)
    noise = rng.normal(0.0, 0.06, size=(size, size, 3))
    noise = ndimage.gaussian_filter(noise, sigma=(1.5, 1.5, 0))
    img = np.clip(base[None, None, :] + noise, 0.0, 0.45)
    radius = rng.uniform(0.12 * size, 0.30 * size)
    margin = radius * 0.7
    cy = rng.uniform(margin, size - margin)
    cx = rng.uniform(margin, size - margin)
    yy, xx = np.mgrid[0:size, 0:size]
    mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    color = rng.uniform(0.55, 1.0, size=3)
    img[mask] = color[None, :]
    return img.astype(np.float32), mask


def make_disk_dataset(root, n_images: int, size: int = 64, seed=0) -> list:
    """Write a synthetic disk corpus as root/images + root/masks PNGs."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    stems = []
    for i in range(n_images):
        img, mask = disk_image(rng, size)
        stem = f"disk_{i:05d}"
        save_image(img, root / "images" / f"{stem}.png")
        save_mask(mask, root / "masks" / f"{stem}.png")
        stems.append(stem)
    return stems
