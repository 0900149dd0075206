"""Grayscale rasters and the resampling / blur operators of the degradation model.

Images are 2-D float64 arrays with intensities in [0, 1], shape (height, width).
All operators here are pure functions; nothing mutates its input.

Conventions fixed for the whole package:
  * resampling uses half-pixel centers (output pixel i samples source
    coordinate (i + 0.5) * in/out - 0.5),
  * the bicubic kernel is cubic convolution with a = -0.5 (Catmull-Rom),
  * borders are handled by replication.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d


class RasterError(ValueError):
    """Bad image data or an invalid geometry request."""


def as_image(arr) -> np.ndarray:
    """Coerce to a 2-D float64 image array, validating shape and finiteness."""
    img = np.asarray(arr, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise RasterError(f"expected a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise RasterError("image contains non-finite values")
    return img


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# separable resampling
# ---------------------------------------------------------------------------

def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    """Keys cubic convolution weights with a = -0.5 at |distance| = t."""
    a = -0.5
    t = np.abs(t)
    w = np.where(
        t <= 1.0,
        (a + 2.0) * t**3 - (a + 3.0) * t**2 + 1.0,
        np.where(t < 2.0, a * (t**3 - 5.0 * t**2 + 8.0 * t - 4.0), 0.0),
    )
    return w


def _resample_axis(arr: np.ndarray, out_n: int, axis: int, kind: str) -> np.ndarray:
    """Resample one axis to out_n samples. kind is 'linear' or 'cubic'."""
    in_n = arr.shape[axis]
    if out_n == in_n:
        return arr
    # half-pixel center mapping
    x = (np.arange(out_n) + 0.5) * (in_n / out_n) - 0.5
    base = np.floor(x).astype(np.int64)
    frac = x - base
    if kind == "linear":
        offsets = np.array([0, 1])
        weights = np.stack([1.0 - frac, frac], axis=-1)
    else:
        offsets = np.array([-1, 0, 1, 2])
        dist = frac[:, None] - offsets[None, :]
        weights = _cubic_kernel(dist)
        weights /= weights.sum(axis=1, keepdims=True)
    idx = np.clip(base[:, None] + offsets[None, :], 0, in_n - 1)

    moved = np.moveaxis(arr, axis, 0)
    gathered = moved[idx]                     # (out_n, taps, ...)
    shaped = weights.reshape(weights.shape + (1,) * (moved.ndim - 1))
    out = (gathered * shaped).sum(axis=1)
    return np.moveaxis(out, 0, axis)


def _resize(img: np.ndarray, out_w: int, out_h: int, kind: str) -> np.ndarray:
    if out_w < 1 or out_h < 1:
        raise RasterError(f"target size {out_w}x{out_h} must be at least 1x1")
    if (out_w, out_h) == (img.shape[1], img.shape[0]):
        return img.copy()
    out = _resample_axis(img, out_h, 0, kind)
    out = _resample_axis(out, out_w, 1, kind)
    return out


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize. Output values are convex combinations of the input."""
    return _resize(as_image(img), out_w, out_h, "linear")


def resize_bicubic(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bicubic (Catmull-Rom) resize, clamped to [0, 1] against overshoot."""
    return clamp01(_resize(as_image(img), out_w, out_h, "cubic"))


def resize_bicubic_unclamped(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bicubic resize as a plain linear operator (no clamping).

    Needed where the resize acts on signed residuals rather than images.
    """
    return _resize(np.asarray(img, dtype=np.float64), out_w, out_h, "cubic")


# ---------------------------------------------------------------------------
# Gaussian blur
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlurKernel:
    """1-D separable Gaussian: radius = ceil(3*sigma), taps normalized to 1."""

    sigma: float
    radius: int
    taps: np.ndarray

    @classmethod
    def make(cls, sigma: float) -> "BlurKernel":
        if sigma <= 0:
            raise RasterError(f"sigma must be positive, got {sigma}")
        radius = int(math.ceil(3.0 * sigma))
        k = np.arange(-radius, radius + 1, dtype=np.float64)
        taps = np.exp(-(k**2) / (2.0 * sigma**2))
        taps /= taps.sum()
        return cls(sigma=sigma, radius=radius, taps=taps)


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with replicated borders.

    Linear: works unchanged on signed residual planes, not just [0,1] images.
    """
    kern = BlurKernel.make(sigma)
    arr = np.asarray(img, dtype=np.float64)
    out = correlate1d(arr, kern.taps, axis=0, mode="nearest")
    out = correlate1d(out, kern.taps, axis=1, mode="nearest")
    return out


# ---------------------------------------------------------------------------
# degradation-model operators
# ---------------------------------------------------------------------------

def antialias_sigma(in_w: int, in_h: int, out_w: int, out_h: int) -> float:
    """Default blur strength before downsampling: half the reduction factor."""
    return 0.5 * max(in_w / out_w, in_h / out_h)


def degrade(img: np.ndarray, out_w: int, out_h: int, sigma: float) -> np.ndarray:
    """Blur-then-downsample (the D*B product). sigma = 0 skips the blur."""
    img = as_image(img)
    h, w = img.shape
    if out_w > w or out_h > h:
        raise RasterError(f"degrade target {out_w}x{out_h} exceeds source {w}x{h}")
    blurred = gaussian_blur(img, sigma) if sigma > 0 else img
    return resize_bicubic(blurred, out_w, out_h)


def degrade_linear(img: np.ndarray, out_w: int, out_h: int, sigma: float) -> np.ndarray:
    """degrade() without the final clamp, for use inside linear recurrences."""
    arr = np.asarray(img, dtype=np.float64)
    blurred = gaussian_blur(arr, sigma) if sigma > 0 else arr
    return resize_bicubic_unclamped(blurred, out_w, out_h)


def upsample(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bicubic upscale (the U operator). Target must not shrink the image."""
    img = as_image(img)
    h, w = img.shape
    if out_w < w or out_h < h:
        raise RasterError(f"upsample target {out_w}x{out_h} smaller than source {w}x{h}")
    return resize_bicubic(img, out_w, out_h)


def upsample_linear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """upsample() without the clamp, for signed residual planes."""
    return resize_bicubic_unclamped(img, out_w, out_h)


# ---------------------------------------------------------------------------
# image I/O: 8-bit PGM (P5) mandatory, PNG optional via Pillow
# ---------------------------------------------------------------------------

# ITU-R BT.601 luma weights for color conversion
_LUMA = (0.299, 0.587, 0.114)


def _read_pgm_tokens(data: bytes, count: int):
    """Yield header tokens, skipping '#' comments; return (tokens, offset)."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise RasterError("truncated PGM header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    return tokens, i


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) into a [0,1] float image."""
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise RasterError(f"{path}: not a binary PGM (P5) file")
    tokens, offset = _read_pgm_tokens(data, 4)
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise RasterError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise RasterError(f"{path}: invalid PGM dimensions or maxval")
    offset += 1  # single whitespace after maxval
    nbytes = width * height * (2 if maxval > 255 else 1)
    raw = data[offset : offset + nbytes]
    if len(raw) != nbytes:
        raise RasterError(f"{path}: truncated PGM pixel data")
    dtype = ">u2" if maxval > 255 else np.uint8
    pixels = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return pixels.astype(np.float64) / float(maxval)


def write_pgm(path, img: np.ndarray) -> None:
    """Write a [0,1] image as 8-bit binary PGM (values mapped by round(v*255))."""
    img = as_image(img)
    quant = np.rint(clamp01(img) * 255.0).astype(np.uint8)
    h, w = quant.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quant.tobytes())


def rgb_to_luma(rgb: np.ndarray) -> np.ndarray:
    """Convert an (h, w, 3) array in [0,1] to luma with BT.601 weights."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return _LUMA[0] * r + _LUMA[1] * g + _LUMA[2] * b


def read_png(path) -> np.ndarray:
    try:
        from PIL import Image as PilImage
    except ImportError as exc:  # pragma: no cover
        raise RasterError("PNG support requires Pillow (pip install iris-sr[png])") from exc
    with PilImage.open(path) as im:
        if im.mode in ("L", "I;16", "I"):
            arr = np.asarray(im, dtype=np.float64)
            peak = 65535.0 if im.mode != "L" else 255.0
            return arr / peak
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return rgb_to_luma(rgb)


def write_png(path, img: np.ndarray) -> None:
    try:
        from PIL import Image as PilImage
    except ImportError as exc:  # pragma: no cover
        raise RasterError("PNG support requires Pillow (pip install iris-sr[png])") from exc
    quant = np.rint(clamp01(as_image(img)) * 255.0).astype(np.uint8)
    PilImage.fromarray(quant, mode="L").save(path)


def load_image(path) -> np.ndarray:
    p = str(path)
    if p.lower().endswith(".png"):
        return read_png(path)
    return read_pgm(path)


def save_image(path, img: np.ndarray) -> None:
    p = str(path)
    if p.lower().endswith(".png"):
        write_png(path, img)
    else:
        write_pgm(path, img)
