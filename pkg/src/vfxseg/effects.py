"""The editor: local visual-effect operations and differentiable compositing.

Three local effects are supported:

* ``BLACK_BACKGROUND`` zeroes every pixel,
* ``COLOR_SELECTIVO`` converts to grayscale (BT.601 luma),
* ``DEFOCUS`` applies an 11 x 11 mean filter with reflective padding.

The effect image is blended back with the original through a per-pixel
coefficient map: ``edit = clamp(v * (img - effect) + effect, 0, 1)`` with
v in (-1, 1). At v = alpha in (0, 1) this is exactly the convex alpha
blend ``alpha * img + (1 - alpha) * effect``.

Numpy functions here are the reference implementations over H x W x 3
arrays; `*_batch` twins operate on torch B x C x H x W tensors and carry
gradients for the training loop.
"""

from enum import Enum

import numpy as np
from scipy import ndimage

from .core import DimensionMismatch, ImageTensor, VerMap, validate_image

LUMA_WEIGHTS = (0.299, 0.587, 0.114)  # ITU-R BT.601
DEFOCUS_KERNEL = 11
HARD_NU_EPS = 1e-3


class EffectKind(Enum):
    BLACK_BACKGROUND = "black_background"
    COLOR_SELECTIVO = "color_selectivo"
    DEFOCUS = "defocus"


def apply_effect(img: ImageTensor, kind: EffectKind) -> ImageTensor:
    """Apply the local operation of `kind` to the whole image."""
    img = validate_image(img)
    if kind is EffectKind.BLACK_BACKGROUND:
        return np.zeros_like(img)
    if kind is EffectKind.COLOR_SELECTIVO:
        luma = img @ np.asarray(LUMA_WEIGHTS, dtype=np.float32)
        return np.repeat(luma[..., None], 3, axis=2)
    if kind is EffectKind.DEFOCUS:
        out = np.empty_like(img)
        for c in range(3):
            # scipy 'mirror' == torch 'reflect': no edge repetition.
            # float64 accumulation keeps constant regions bit-exact.
            out[..., c] = ndimage.uniform_filter(
                img[..., c].astype(np.float64), size=DEFOCUS_KERNEL, mode="mirror"
            ).astype(np.float32)
        return out
    raise ValueError(f"unknown effect kind {kind!r}")


def _check_aligned(img, other, name):
    if img.shape[:2] != other.shape[:2]:
        raise DimensionMismatch(
            f"{name} shape {other.shape[:2]} does not match image {img.shape[:2]}"
        )


def compose(img: ImageTensor, effect_img: ImageTensor, ver: VerMap) -> ImageTensor:
    """Blend img and effect_img through the coefficient map ver in (-1, 1).

    edit = clamp(ver * (img - effect) + effect, 0, 1), ver broadcast
    across channels. The model learns the residual: ver = 1 restores img,
    ver = 0 yields the pure effect image.
    """
    img = validate_image(img)
    effect_img = validate_image(effect_img)
    _check_aligned(img, effect_img, "effect image")
    ver = np.asarray(ver, dtype=np.float32)
    if ver.ndim != 2:
        raise DimensionMismatch(f"ver must be H x W, got shape {ver.shape}")
    _check_aligned(img, ver, "ver map")
    out = ver[..., None] * (img - effect_img) + effect_img
    return np.clip(out, 0.0, 1.0)


def compose_alpha(img: ImageTensor, effect_img: ImageTensor, alpha: np.ndarray) -> ImageTensor:
    """Convex per-pixel blend alpha * img + (1 - alpha) * effect, alpha in (0, 1)."""
    img = validate_image(img)
    effect_img = validate_image(effect_img)
    _check_aligned(img, effect_img, "effect image")
    alpha = np.asarray(alpha, dtype=np.float32)
    if alpha.ndim != 2:
        raise DimensionMismatch(f"alpha must be H x W, got shape {alpha.shape}")
    _check_aligned(img, alpha, "alpha map")
    a = alpha[..., None]
    return a * img + (1.0 - a) * effect_img


def hard_ver_from_mask(mask: np.ndarray, eps: float = HARD_NU_EPS) -> VerMap:
    """Near-binary coefficient map: +(1-eps) on figure, -(1-eps) on ground."""
    mask = np.asarray(mask, dtype=bool)
    return np.where(mask, 1.0 - eps, -(1.0 - eps)).astype(np.float32)


def synthesize_sample(img: ImageTensor, gt: np.ndarray, kind: EffectKind,
                      eps: float = HARD_NU_EPS) -> ImageTensor:
    """Build an effect sample from an image and its ground-truth mask.

    The figure layer is kept and the ground layer receives the effect,
    blended with the near-binary alpha (1 + hard_ver) / 2, i.e. 1 - eps/2
    on figure pixels and eps/2 on ground pixels.
    """
    img = validate_image(img)
    gt = np.asarray(gt)
    if gt.ndim != 2:
        raise DimensionMismatch(f"mask must be H x W, got shape {gt.shape}")
    _check_aligned(img, gt, "mask")
    effect_img = apply_effect(img, kind)
    alpha = (1.0 + hard_ver_from_mask(gt, eps)) / 2.0
    return compose_alpha(img, effect_img, alpha)


# torch twins, used inside the adversarial loop (B x C x H x W)

def apply_effect_batch(img, kind: EffectKind):
    """Torch counterpart of apply_effect on a B x 3 x H x W tensor."""
    import torch
    import torch.nn.functional as F

    if kind is EffectKind.BLACK_BACKGROUND:
        return torch.zeros_like(img)
    if kind is EffectKind.COLOR_SELECTIVO:
        w = img.new_tensor(LUMA_WEIGHTS).view(1, 3, 1, 1)
        luma = (img * w).sum(dim=1, keepdim=True)
        return luma.expand_as(img)
    if kind is EffectKind.DEFOCUS:
        pad = DEFOCUS_KERNEL // 2
        padded = F.pad(img, (pad, pad, pad, pad), mode="reflect")
        return F.avg_pool2d(padded, DEFOCUS_KERNEL, stride=1)
    raise ValueError(f"unknown effect kind {kind!r}")


def compose_batch(img, effect_img, ver):
    """Torch counterpart of compose; ver is B x 1 x H x W and carries grad.

    clamp saturates with zero gradient outside [0, 1].
    """
    return (ver * (img - effect_img) + effect_img).clamp(0.0, 1.0)
