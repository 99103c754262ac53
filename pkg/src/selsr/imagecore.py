"""Image carrier, I/O, resampling, patch grids, and derivative features.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and every
sample in [0, 1]. All downstream stages (segmentation, separation, matting,
SR) consume this representation; per-patch features are the responses of
four 1-D derivative filters stacked over the patch footprint.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import correlate1d

from .errors import FormatError, SamplingError

# First/second-order derivative taps, applied by correlation (no flip):
# horizontal response at x is  I[x+1] - I[x-1]  for FILTER_D1.
FILTER_D1 = np.array([-1.0, 0.0, 1.0])
FILTER_D2 = np.array([1.0, 0.0, -2.0, 0.0, 1.0])

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# BT.601 luma weights; also used for the chroma round trip in superres.
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class RasterImage:
    """H x W x C pixel array in [0, 1], C in {1, 3}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"image must be (H, W, 1|3), got shape {arr.shape}")
        if arr.size == 0:
            raise ValueError("image must be non-empty")
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite samples")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image samples must lie in [0, 1]")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def luminance(self) -> np.ndarray:
        """Single-channel (H, W) view; RGB is reduced with BT.601 weights."""
        if self.channels == 1:
            return self.data[:, :, 0]
        return self.data @ _LUMA


def rgb_to_ycbcr(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 RGB -> (Y, Cb, Cr), chroma centered at 0.5."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 0.5
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 0.5
    return y, cb, cr


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """Inverse of rgb_to_ycbcr, clipped to [0, 1]."""
    cb = cb - 0.5
    cr = cr - 0.5
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


@dataclass
class PatchGrid:
    """Fully-inside patch origins over a source image.

    patch_size is odd (centered derivative filters); with stride <
    patch_size adjacent patches overlap by patch_size - stride pixels.
    """

    patch_size: int
    stride: int
    origins: np.ndarray  # (N, 2) int, (row, col) top-left corners
    source_shape: tuple[int, int]

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be a positive odd integer, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        self.origins = np.asarray(self.origins, dtype=np.int64).reshape(-1, 2)
        h, w = self.source_shape
        ps = self.patch_size
        if len(self.origins) and (
            self.origins.min() < 0
            or (self.origins[:, 0] + ps > h).any()
            or (self.origins[:, 1] + ps > w).any()
        ):
            raise ValueError("patch grid extends outside image bounds")

    def __len__(self) -> int:
        return len(self.origins)


def make_grid(height: int, width: int, patch_size: int, stride: int = 1) -> PatchGrid:
    """Row-major grid of every fully-inside patch origin."""
    if patch_size > height or patch_size > width:
        raise ValueError(
            f"patch_size {patch_size} exceeds image dims ({height}, {width})"
        )
    rows = np.arange(0, height - patch_size + 1, stride)
    cols = np.arange(0, width - patch_size + 1, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    origins = np.stack([rr.ravel(), cc.ravel()], axis=1)
    return PatchGrid(patch_size, stride, origins, (height, width))


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def load_image(path) -> RasterImage:
    """Load an 8-bit PNG, binary PPM (P6) or PGM (P5), normalized to [0, 1].

    Grayscale files yield channels=1. Palette and alpha-carrying PNGs are
    converted to plain RGB (alpha dropped). 16-bit depth is rejected.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if not (blob.startswith(_PNG_MAGIC) or blob[:2] in (b"P5", b"P6")):
        raise FormatError(f"{path}: unsupported format (PNG, binary PPM/PGM only)")
    try:
        im = Image.open(io.BytesIO(blob))
        im.load()
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise FormatError(f"{path}: cannot decode: {exc}") from exc
    if im.mode in ("I", "I;16", "I;16B", "I;16L", "I;16N", "F"):
        raise FormatError(f"{path}: 16-bit depth not supported (8-bit only)")
    if im.mode in ("1", "L;1"):
        im = im.convert("L")
    elif im.mode in ("LA",):
        im = im.convert("L")
    elif im.mode not in ("L", "RGB"):
        im = im.convert("RGB")
    arr = np.asarray(im, dtype=np.float64) / 255.0
    return RasterImage(arr)


def save_image(img: RasterImage, path) -> None:
    """Write as 8-bit PNG or binary PPM/PGM depending on file suffix."""
    arr = np.rint(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)
    if img.channels == 1:
        pil = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(arr, mode="RGB")
    name = str(path)
    if name.lower().endswith((".ppm", ".pgm")):
        pil.save(name, format="PPM")
    elif name.lower().endswith(".png"):
        pil.save(name, format="PNG")
    else:
        raise FormatError(f"{path}: unsupported output suffix (png, ppm, pgm)")


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def downsample(img: RasterImage, factor: int) -> RasterImage:
    """Block-mean decimation by an integer factor.

    The image is pre-cropped (bottom/right) to the largest factor-divisible
    size; each output pixel is the mean of its factor x factor block.
    """
    if factor < 2:
        raise ValueError(f"downsample factor must be >= 2, got {factor}")
    h = (img.height // factor) * factor
    w = (img.width // factor) * factor
    if h == 0 or w == 0:
        raise ValueError("image smaller than one block at this factor")
    a = img.data[:h, :w]
    blocks = a.reshape(h // factor, factor, w // factor, factor, img.channels)
    return RasterImage(np.clip(blocks.mean(axis=(1, 3)), 0.0, 1.0))


def _cubic_kernel(s: np.ndarray) -> np.ndarray:
    # Keys cubic convolution, a = -0.5 (the common bicubic kernel).
    s = np.abs(s)
    out = np.zeros_like(s)
    m1 = s <= 1.0
    out[m1] = (1.5 * s[m1] - 2.5) * s[m1] * s[m1] + 1.0
    m2 = (s > 1.0) & (s < 2.0)
    out[m2] = ((-0.5 * s[m2] + 2.5) * s[m2] - 4.0) * s[m2] + 2.0
    return out


def _resize_axis(arr: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    in_len = arr.shape[axis]
    scale = in_len / out_len
    x = (np.arange(out_len) + 0.5) * scale - 0.5
    x0 = np.floor(x).astype(np.int64)
    t = x - x0
    taps = np.stack([x0 - 1, x0, x0 + 1, x0 + 2], axis=1)
    taps = np.clip(taps, 0, in_len - 1)  # replicate border
    offs = np.stack([t + 1.0, t, 1.0 - t, 2.0 - t], axis=1)
    weights = _cubic_kernel(offs)
    moved = np.moveaxis(arr, axis, 0)
    out = np.einsum("oi...,oi->o...", moved[taps], weights)
    return np.moveaxis(out, 0, axis)


def resize_bicubic_array(arr: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Unclamped separable Catmull-Rom resize of a raw (H, W[, C]) array."""
    if out_height < 1 or out_width < 1:
        raise ValueError("output dims must be positive")
    a = _resize_axis(np.asarray(arr, dtype=np.float64), out_height, axis=0)
    return _resize_axis(a, out_width, axis=1)


def resize_bicubic(img: RasterImage, out_height: int, out_width: int) -> RasterImage:
    """Separable Catmull-Rom resize to arbitrary dims, clamped to [0, 1]."""
    return RasterImage(np.clip(resize_bicubic_array(img.data, out_height, out_width), 0.0, 1.0))


def upsample_bicubic(img: RasterImage, factor: int) -> RasterImage:
    """Bicubic upsampling by an integer factor."""
    if factor < 2:
        raise ValueError(f"upsample factor must be >= 2, got {factor}")
    return resize_bicubic(img, img.height * factor, img.width * factor)


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------

def filter_responses(luma: np.ndarray) -> np.ndarray:
    """(4, H, W) first/second derivative responses, replicate border."""
    if luma.ndim != 2:
        raise ValueError("filter_responses expects a 2-D luminance array")
    r1 = correlate1d(luma, FILTER_D1, axis=1, mode="nearest")
    r2 = correlate1d(luma, FILTER_D1, axis=0, mode="nearest")
    r3 = correlate1d(luma, FILTER_D2, axis=1, mode="nearest")
    r4 = correlate1d(luma, FILTER_D2, axis=0, mode="nearest")
    return np.stack([r1, r2, r3, r4])


def extract_features(img: RasterImage, grid: PatchGrid) -> np.ndarray:
    """Per-patch feature vectors, one row per grid origin.

    Each row stacks the four filter responses cropped to the patch
    footprint: length 4 * patch_size**2. RGB input is reduced to
    luminance first.
    """
    if grid.source_shape != (img.height, img.width):
        raise ValueError("grid was built for different image dims")
    resp = filter_responses(img.luminance())
    return gather_patch_rows(resp, grid.origins, grid.patch_size)


def gather_patch_rows(resp: np.ndarray, origins: np.ndarray, ps: int) -> np.ndarray:
    n = len(origins)
    out = np.empty((n, 4 * ps * ps))
    dr, dc = np.meshgrid(np.arange(ps), np.arange(ps), indexing="ij")
    rows = origins[:, 0, None, None] + dr  # (n, ps, ps)
    cols = origins[:, 1, None, None] + dc
    for f in range(4):
        out[:, f * ps * ps:(f + 1) * ps * ps] = resp[f][rows, cols].reshape(n, -1)
    return out


# ---------------------------------------------------------------------------
# Training patch sampling
# ---------------------------------------------------------------------------

@dataclass
class TrainingSample:
    """One coupled training pair: low-res features + mean-removed hi patch.

    ``origin`` is the high-res (row, col) of the footprint's top-left
    corner, kept for bookkeeping; the pair unpacks like a 2-tuple.
    """

    features: np.ndarray
    high_patch: np.ndarray
    origin: tuple[int, int] = (0, 0)

    def __iter__(self):  # unpacks like a (features, high_patch) tuple
        yield self.features
        yield self.high_patch


def sample_training_patches(
    hi: RasterImage,
    mask: np.ndarray,
    factor: int,
    count: int,
    patch_size: int,
    role: str,
    rng_seed: int,
) -> list[TrainingSample]:
    """Sample coupled (feature, high patch) pairs from one role's region.

    The low-res image is the block-mean downsampling of ``hi``; features are
    taken from its bicubic upsampling back to target scale, over the
    (patch_size*factor)^2 footprint of each sampled low-res location. Only
    locations whose high-res footprint is at least 80% inside the requested
    role's mask region are eligible. High patches have their mean (DC)
    removed. Fixed seed gives bitwise identical output.
    """
    if role not in ("fg", "bg"):
        raise ValueError(f"role must be 'fg' or 'bg', got {role!r}")
    if count <= 0:
        raise ValueError(f"count must be positive, got {count}")
    mask = np.asarray(mask)
    if mask.shape[:2] != (hi.height, hi.width):
        raise ValueError(
            f"mask dims {mask.shape[:2]} do not match image dims {(hi.height, hi.width)}"
        )
    mask = mask.astype(bool).reshape(hi.height, hi.width)

    lo = downsample(RasterImage(hi.luminance()), factor)
    hh, ww = lo.height * factor, lo.width * factor  # pre-cropped hi dims
    hi_luma = hi.luminance()[:hh, :ww]
    region = mask[:hh, :ww] if role == "fg" else ~mask[:hh, :ww]

    fp = patch_size * factor  # high-res footprint side
    if fp % 2 == 0:
        raise ValueError(
            f"patch_size * factor must be odd for centered features, got {fp}"
        )
    if fp > hh or fp > ww:
        raise ValueError("image too small for one patch footprint")

    # Fraction of the footprint covered by the role region, all origins at once.
    integ = np.zeros((hh + 1, ww + 1))
    integ[1:, 1:] = region.astype(np.float64).cumsum(0).cumsum(1)
    r = np.arange(lo.height - patch_size + 1) * factor
    c = np.arange(lo.width - patch_size + 1) * factor
    rr, cc = np.meshgrid(r, c, indexing="ij")
    cover = (
        integ[rr + fp, cc + fp] - integ[rr, cc + fp]
        - integ[rr + fp, cc] + integ[rr, cc]
    ) / float(fp * fp)
    good = np.argwhere(cover >= 0.8)
    if len(good) == 0:
        raise SamplingError(
            f"no low-res patch location has >= 80% of its footprint in the "
            f"'{role}' region"
        )

    rng = np.random.default_rng(rng_seed)
    picks = good[rng.integers(0, len(good), size=count)]

    mid = upsample_bicubic(lo, factor)
    resp = filter_responses(mid.data[:, :, 0])
    origins_hi = picks * factor
    feats = gather_patch_rows(resp, origins_hi, fp)

    samples = []
    for k in range(count):
        r0, c0 = origins_hi[k]
        patch = hi_luma[r0:r0 + fp, c0:c0 + fp].ravel()
        samples.append(TrainingSample(feats[k], patch - patch.mean(), (int(r0), int(c0))))
    return samples
