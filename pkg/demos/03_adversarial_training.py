"""Adversarial training of the effect-strength generator, at demo scale.

Trains the skip-connection generator (variant V4) against a full-image
critic on the black-background effect for a few hundred iterations, then
predicts a coefficient map for a held-out scene and composes the edit.

By default this runs a quick 300-iteration session (a few minutes on
CPU); pass an iteration count to go longer, e.g.

    python3 demos/03_adversarial_training.py 2000
"""

import csv
import sys
from pathlib import Path

import numpy as np

from vfxseg import (
    build_effect_samples,
    make_disk_dataset,
    predict_ver,
    save_image,
    save_ver,
    split_msra,
    train,
)
from vfxseg.data import disk_image
from vfxseg.effects import EffectKind, apply_effect, compose
from vfxseg.models import GeneratorSpec
from vfxseg.training import Hyperparams

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 300
out_dir = Path(__file__).parent / "output" / "training"
corpus = out_dir / "corpus"

make_disk_dataset(corpus, 120, size=64, seed=7)
manifests = split_msra(corpus, seed=7, out_dir=out_dir / "manifests", allow_scaled=True)
samples = build_effect_samples(
    manifests["train_B_source"], EffectKind.BLACK_BACKGROUND, out_dir / "samples"
)
print(f"domains: {len(manifests['train_A'].entries)} inputs, "
      f"{len(samples.entries)} effect samples (unpaired)")

hp = Hyperparams(image_size=64, total_iters=iters, n_critic=5)
spec = GeneratorSpec(variant="V4", input_size=64, base_width=16, n_res_blocks=3)
print(f"training V4 ({spec.base_width} base channels, {spec.n_res_blocks} "
      f"residual blocks) for {iters} iterations...")
ckpt = train(manifests["train_A"], samples, EffectKind.BLACK_BACKGROUND,
             spec, hp, seed=7, out_dir=out_dir / "run", checkpoint_every=max(iters // 2, 1))

with open(out_dir / "run" / "loss_log.csv") as f:
    rows = list(csv.reader(f))[1:]
print(f"loss log: {len(rows)} rows; "
      f"l_g {float(rows[0][1]):+.2f} -> {float(rows[-1][1]):+.2f}, "
      f"l_d {float(rows[0][2]):+.2f} -> {float(rows[-1][2]):+.2f}")

# held-out scene, never used in training
rng = np.random.default_rng(99)
img, _ = disk_image(rng, 64)
ver = predict_ver(ckpt, img)
print(f"predicted coefficient map: range [{ver.min():+.2f}, {ver.max():+.2f}]")

save_image(img, out_dir / "heldout_input.png")
save_ver(ver, out_dir / "heldout.ver")
vis = np.repeat(((ver + 1) / 2)[..., None], 3, axis=2).astype(np.float32)
save_image(vis, out_dir / "heldout_ver.png")
edited = compose(img, apply_effect(img, EffectKind.BLACK_BACKGROUND), ver)
save_image(edited, out_dir / "heldout_edit.png")
print(f"triplet written to {out_dir}: input, map visualization, edit")
print("(at demo scale the map is rough; the toy acceptance run uses "
      "2,000 iterations and a wider model)")
