"""Shared value types, deterministic seeding, and bit-exact raster I/O.

Images are H x W x 3 float32 arrays in [0, 1]. Visual-effect maps ("ver")
are H x W float32 arrays strictly inside (-1, 1). Masks are H x W bool
arrays with True marking the figure.
"""

import random
import struct

import numpy as np
from PIL import Image

VER_MAGIC = b"VER1"

Seed = int
ImageTensor = np.ndarray  # H x W x 3 float32 in [0, 1]
VerMap = np.ndarray       # H x W float32 in (-1, 1)
BinaryMask = np.ndarray   # H x W bool


class VfxsegError(Exception):
    """Base class for errors raised by this package."""


class MissingFile(VfxsegError):
    pass


class UnsupportedFormat(VfxsegError):
    pass


class IoFailure(VfxsegError):
    pass


class BadMagic(VfxsegError):
    pass


class TruncatedFile(VfxsegError):
    pass


class ValueOutOfRange(VfxsegError):
    pass


class DimensionMismatch(VfxsegError):
    pass


def set_global_seed(seed: Seed) -> None:
    """Seed every RNG the pipeline draws from (python, numpy, torch).

    Must be called before any worker or training loop starts; all
    downstream randomness (splits, parameter init, buffer coin flips,
    interpolation draws) then derives from this one value.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    random.seed(seed)
    np.random.seed(seed & 0xFFFFFFFF)
    import torch

    torch.manual_seed(seed)


def derive_seed(seed: Seed, stream: str) -> Seed:
    """Deterministic per-stream sub-seed (e.g. "buffer", "interp", "data")."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _stream_key(stream)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _stream_key(stream: str) -> int:
    key = 0
    for ch in stream.encode("utf-8"):
        key = (key * 131 + ch) & 0xFFFFFFFFFFFFFFFF
    return key


def validate_image(img: ImageTensor) -> ImageTensor:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionMismatch(f"expected H x W x 3 image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionMismatch(f"degenerate image shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueOutOfRange("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueOutOfRange("image values outside [0, 1]")
    return img.astype(np.float32, copy=False)


def validate_ver(ver: VerMap) -> VerMap:
    ver = np.asarray(ver)
    if ver.ndim != 2 or ver.shape[0] < 1 or ver.shape[1] < 1:
        raise DimensionMismatch(f"expected H x W ver map, got shape {ver.shape}")
    if not np.all(np.isfinite(ver)):
        raise ValueOutOfRange("ver map contains non-finite values")
    if np.abs(ver).max(initial=0.0) >= 1.0:
        raise ValueOutOfRange("ver values must lie strictly inside (-1, 1)")
    return ver.astype(np.float32, copy=False)


def load_image(path) -> ImageTensor:
    """Load an 8-bit PNG/JPEG as float32 in [0, 1] (v / 255).

    Grayscale inputs are broadcast to 3 channels; an alpha channel is dropped.
    """
    try:
        pil = Image.open(path)
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    except Exception as e:
        raise UnsupportedFormat(f"{path}: {e}") from e
    with pil:
        if pil.format not in (None, "PNG", "JPEG"):
            raise UnsupportedFormat(f"{path}: format {pil.format} not supported")
        if pil.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise UnsupportedFormat(f"{path}: only 8-bit images are supported")
        if pil.mode != "RGB":
            pil = pil.convert("RGB")
        arr = np.asarray(pil, dtype=np.uint8)
    return (arr.astype(np.float32) / 255.0)


def save_image(img: ImageTensor, path) -> None:
    """Write an 8-bit PNG with v -> round(255 v), half rounding up."""
    img = validate_image(img)
    quantized = np.floor(img.astype(np.float64) * 255.0 + 0.5).astype(np.uint8)
    try:
        Image.fromarray(quantized, mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise IoFailure(f"{path}: {e}") from e


def load_mask(path) -> BinaryMask:
    """Load a single-channel 8-bit PNG mask; pixels > 127 count as figure."""
    try:
        pil = Image.open(path)
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    except Exception as e:
        raise UnsupportedFormat(f"{path}: {e}") from e
    with pil:
        if pil.format not in (None, "PNG"):
            raise UnsupportedFormat(f"{path}: mask must be PNG, got {pil.format}")
        if pil.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            raise UnsupportedFormat(f"{path}: only 8-bit masks are supported")
        if pil.mode != "L":
            pil = pil.convert("L")
        arr = np.asarray(pil, dtype=np.uint8)
    return arr > 127


def save_mask(mask: BinaryMask, path) -> None:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise DimensionMismatch(f"expected H x W mask, got shape {mask.shape}")
    data = np.where(mask.astype(bool), np.uint8(255), np.uint8(0))
    try:
        Image.fromarray(data, mode="L").save(path, format="PNG")
    except OSError as e:
        raise IoFailure(f"{path}: {e}") from e


def save_ver(ver: VerMap, path) -> None:
    """Write the VER1 binary raster.

    Layout: magic "VER1", u16 height, u16 width (little endian), then
    row-major little-endian float32 values. Round-trips bit-exactly.
    """
    ver = validate_ver(ver)
    h, w = ver.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise ValueOutOfRange(f"ver dims {h}x{w} exceed the u16 header range")
    header = struct.pack("<4sHH", VER_MAGIC, h, w)
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(ver.astype("<f4", copy=False).tobytes(order="C"))
    except OSError as e:
        raise IoFailure(f"{path}: {e}") from e


def load_ver(path) -> VerMap:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except FileNotFoundError as e:
        raise MissingFile(str(path)) from e
    except OSError as e:
        raise IoFailure(f"{path}: {e}") from e
    if len(blob) < 8:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, h, w = struct.unpack("<4sHH", blob[:8])
    if magic != VER_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if h < 1 or w < 1:
        raise TruncatedFile(f"{path}: degenerate dims {h}x{w} in header")
    expected = 8 + 4 * h * w
    if len(blob) != expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(blob)}")
    ver = np.frombuffer(blob, dtype="<f4", offset=8).reshape(h, w)
    if not np.all(np.isfinite(ver)) or (ver.size and np.abs(ver).max() >= 1.0):
        raise ValueOutOfRange(f"{path}: ver values outside (-1, 1)")
    return ver.astype(np.float32)
