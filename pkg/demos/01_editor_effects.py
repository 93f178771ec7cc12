"""The editor: local effects and coefficient-map compositing.

Builds a synthetic scene, applies the three local effects, then blends
each effect back through different coefficient maps to show how the
per-pixel map controls where the effect lands.

Run:  python3 demos/01_editor_effects.py
Outputs land in demos/output/editor/.
"""

from pathlib import Path

import numpy as np

from vfxseg import apply_effect, compose, save_image
from vfxseg.data import disk_image
from vfxseg.effects import EffectKind, hard_ver_from_mask

out_dir = Path(__file__).parent / "output" / "editor"
out_dir.mkdir(parents=True, exist_ok=True)

rng = np.random.default_rng(7)
img, mask = disk_image(rng, size=128)
save_image(img, out_dir / "input.png")
print(f"input scene: bright disk on textured ground -> {out_dir/'input.png'}")

# The three local operations act on the whole frame...
for kind in EffectKind:
    effect_img = apply_effect(img, kind)
    save_image(effect_img, out_dir / f"effect_{kind.value}.png")
    print(f"  {kind.value:16s} full-frame effect written")

# ...and the coefficient map decides, per pixel, how much of the original
# survives: +1 keeps the input, 0 yields the pure effect, negative values
# push past the effect and clamp.
ver_hard = hard_ver_from_mask(mask)            # figure +0.999, ground -0.999
yy, xx = np.mgrid[0:128, 0:128]
ver_ramp = ((xx / 127.0) * 1.98 - 0.99).astype(np.float32)  # left -1 .. right +1

for kind in EffectKind:
    effect_img = apply_effect(img, kind)
    save_image(compose(img, effect_img, ver_hard), out_dir / f"edit_{kind.value}_mask.png")
    save_image(compose(img, effect_img, ver_ramp), out_dir / f"edit_{kind.value}_ramp.png")

print("composites written: *_mask.png keeps the disk and applies the")
print("effect to the ground; *_ramp.png sweeps the blend left to right.")
print(f"see {out_dir}")
