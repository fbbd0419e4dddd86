"""Float image buffers and 8-bit image I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import StressKitError

__all__ = [
    "ImageBuffer",
    "decode_image",
    "encode_png",
    "quantize_u8",
    "resize_bilinear",
    "pack_nchw",
]


@dataclass(frozen=True)
class ImageBuffer:
    """Decoded image: float32 pixels in [0, 1], shape (height, width, channels).

    Channel order is interleaved (row, column, channel); channels is 1
    (grayscale) or 3 (RGB). The pixel array is marked read-only so buffers
    can be shared freely across worker threads.
    """

    pixels: np.ndarray

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "ImageBuffer":
        """Validate and wrap a pixel array; accepts (H, W) or (H, W, C) floats."""
        a = np.asarray(arr)
        if a.ndim == 2:
            a = a[:, :, np.newaxis]
        if a.ndim != 3:
            raise StressKitError(f"expected 2-D or 3-D pixel array, got ndim={a.ndim}")
        if a.shape[2] not in (1, 3):
            raise StressKitError(f"expected 1 or 3 channels, got {a.shape[2]}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise StressKitError(f"empty image shape {a.shape}")
        a = a.astype(np.float32, copy=True)
        lo, hi = float(a.min()), float(a.max())
        if lo < 0.0 or hi > 1.0:
            raise StressKitError(f"pixel values outside [0, 1]: min={lo}, max={hi}")
        a.setflags(write=False)
        return cls(a)

    @classmethod
    def from_uint8(cls, arr: np.ndarray) -> "ImageBuffer":
        a = np.asarray(arr, dtype=np.uint8)
        if a.ndim == 2:
            a = a[:, :, np.newaxis]
        return cls.from_array(a.astype(np.float32) / 255.0)

    def to_uint8(self) -> np.ndarray:
        """Quantize to 8 bits with round-half-away (np.rint rounds half-even;
        values here are k/255-adjacent so the distinction never exceeds 1 count)."""
        return quantize_u8(self.pixels)


def quantize_u8(pixels: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def decode_image(path: str | Path) -> ImageBuffer:
    """Decode an 8-bit PNG/JPEG into a float buffer (grayscale kept as 1 channel)."""
    try:
        with Image.open(path) as im:
            if im.mode in ("1", "L", "I", "I;16", "LA"):
                im = im.convert("L")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise StressKitError(f"image not found: {path}") from None
    except (OSError, Image.UnidentifiedImageError) as e:
        raise StressKitError(f"cannot decode image {path}: {e}") from e
    return ImageBuffer.from_uint8(arr)


def encode_png(img: ImageBuffer, path: str | Path) -> Path:
    """Write the buffer as an 8-bit PNG (grayscale or RGB)."""
    path = Path(path)
    u8 = img.to_uint8()
    if img.channels == 1:
        pil = Image.fromarray(u8[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(u8, mode="RGB")
    path.parent.mkdir(parents=True, exist_ok=True)
    pil.save(path, format="PNG")
    return path


def resize_bilinear(img: ImageBuffer, out_height: int, out_width: int) -> ImageBuffer:
    """Bilinear resample with half-pixel centers; identity when sizes match."""
    if out_height < 1 or out_width < 1:
        raise StressKitError(f"invalid resize target {out_height}x{out_width}")
    if out_height == img.height and out_width == img.width:
        return img
    src = img.pixels
    h, w = img.height, img.width

    def axis_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # source coordinate of each output center, clamped to the valid range
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        frac = (pos - lo).astype(np.float32)
        return lo, hi, frac

    ylo, yhi, yf = axis_coords(out_height, h)
    xlo, xhi, xf = axis_coords(out_width, w)
    top = src[ylo][:, xlo] * (1 - xf)[None, :, None] + src[ylo][:, xhi] * xf[None, :, None]
    bot = src[yhi][:, xlo] * (1 - xf)[None, :, None] + src[yhi][:, xhi] * xf[None, :, None]
    out = top * (1 - yf)[:, None, None] + bot * yf[:, None, None]
    return ImageBuffer.from_array(np.clip(out, 0.0, 1.0))


def pack_nchw(images: list[ImageBuffer]) -> np.ndarray:
    """Stack buffers into an (N, C, H, W) float32 array; shapes must agree."""
    if not images:
        raise StressKitError("cannot pack an empty image batch")
    first = images[0]
    for i, im in enumerate(images):
        if (im.height, im.width, im.channels) != (first.height, first.width, first.channels):
            raise StressKitError(
                f"batch shape mismatch at index {i}: "
                f"{im.height}x{im.width}x{im.channels} vs "
                f"{first.height}x{first.width}x{first.channels}"
            )
    stacked = np.stack([im.pixels for im in images])  # (N, H, W, C)
    return np.ascontiguousarray(stacked.transpose(0, 3, 1, 2))
