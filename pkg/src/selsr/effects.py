"""Foreground/background post-processing effects on matted images.

Every effect leaves pixels with alpha = 1 untouched: the effect output B
replaces the image only where alpha < 0.5, and the result is the forward
compositing  out = alpha * img + (1 - alpha) * B. Effects are
resolution-agnostic; callers typically apply them to the SR output with
the matte at the same scale.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate, map_coordinates

from . import imagecore
from .imagecore import RasterImage

ZOOM_SAMPLES = 16

EMBOSS_KERNEL = np.array([
    [-2.0, -1.0, 0.0],
    [-1.0, 1.0, 1.0],
    [0.0, 1.0, 2.0],
])


def _alpha_of(matte, shape) -> np.ndarray:
    alpha = matte if isinstance(matte, np.ndarray) else matte.alpha
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != shape:
        raise ValueError(f"matte dims {alpha.shape} do not match image dims {shape}")
    return alpha


def _composite_with_bg_effect(img: RasterImage, alpha: np.ndarray,
                              effected: np.ndarray) -> RasterImage:
    a3 = alpha[:, :, None]
    bg = np.where(a3 < 0.5, effected, img.data)
    return RasterImage(np.clip(a3 * img.data + (1.0 - a3) * bg, 0.0, 1.0))


def zoom_blur(img: RasterImage, matte, strength: float,
              center: tuple[float, float] | None = None) -> RasterImage:
    """Radial streak toward ``center`` on the background region.

    Each background pixel becomes the average of ZOOM_SAMPLES bilinear
    samples along the segment from the pixel toward the center, spanning a
    fraction ``strength`` of the distance. strength 0 is the identity.
    """
    if strength < 0:
        raise ValueError(f"strength must be >= 0, got {strength}")
    alpha = _alpha_of(matte, (img.height, img.width))
    if center is None:
        center = ((img.height - 1) / 2.0, (img.width - 1) / 2.0)

    rr, cc = np.meshgrid(np.arange(img.height, dtype=np.float64),
                         np.arange(img.width, dtype=np.float64), indexing="ij")
    acc = np.zeros_like(img.data)
    for i in range(ZOOM_SAMPLES):
        t = strength * i / ZOOM_SAMPLES
        sr = rr + (center[0] - rr) * t
        sc = cc + (center[1] - cc) * t
        for ch in range(img.channels):
            acc[:, :, ch] += map_coordinates(img.data[:, :, ch], [sr, sc],
                                             order=1, mode="nearest")
    return _composite_with_bg_effect(img, alpha, acc / ZOOM_SAMPLES)


def _background_array(background, img: RasterImage) -> np.ndarray:
    if isinstance(background, RasterImage):
        if (background.height, background.width) != (img.height, img.width):
            background = imagecore.resize_bicubic(background, img.height, img.width)
        bg = background.data
        if bg.shape[2] == 1 and img.channels == 3:
            bg = np.repeat(bg, 3, axis=2)
        elif bg.shape[2] == 3 and img.channels == 1:
            bg = (bg @ np.array([0.299, 0.587, 0.114]))[:, :, None]
        return bg
    color = np.atleast_1d(np.asarray(background, dtype=np.float64))
    if color.size == 1:
        color = np.full(img.channels, color.item())
    if color.size != img.channels:
        raise ValueError(f"background color needs {img.channels} components")
    return np.broadcast_to(color, img.data.shape)


def object_popup(img: RasterImage, matte, background) -> RasterImage:
    """Forward compositing out = alpha*img + (1-alpha)*background.

    ``background`` is a solid gray value, an RGB tuple, or a RasterImage
    (resized bicubically when dims differ).
    """
    alpha = _alpha_of(matte, (img.height, img.width))[:, :, None]
    bg = _background_array(background, img)
    return RasterImage(np.clip(alpha * img.data + (1.0 - alpha) * bg, 0.0, 1.0))


def compose(fg_img: RasterImage, matte, scene: RasterImage,
            offset: tuple[int, int] = (0, 0)) -> RasterImage:
    """Alpha-composite the matted object into a scene at a pixel offset."""
    alpha = _alpha_of(matte, (fg_img.height, fg_img.width))[:, :, None]
    r0, c0 = offset
    r1, c1 = r0 + fg_img.height, c0 + fg_img.width
    if r0 < 0 or c0 < 0 or r1 > scene.height or c1 > scene.width:
        raise ValueError(
            f"placement {offset}+{(fg_img.height, fg_img.width)} outside "
            f"scene dims {(scene.height, scene.width)}"
        )
    scene_data = scene.data
    fg_data = fg_img.data
    if scene.channels != fg_img.channels:  # promote gray to RGB
        if scene.channels == 1:
            scene_data = np.repeat(scene_data, 3, axis=2)
        if fg_img.channels == 1:
            fg_data = np.repeat(fg_data, 3, axis=2)
    out = scene_data.copy()
    window = out[r0:r1, c0:c1]
    out[r0:r1, c0:c1] = alpha * fg_data + (1.0 - alpha) * window
    return RasterImage(np.clip(out, 0.0, 1.0))


def emboss_background(img: RasterImage, matte) -> RasterImage:
    """3x3 emboss on the background region, foreground composited back."""
    alpha = _alpha_of(matte, (img.height, img.width))
    effected = np.stack([
        correlate(img.data[:, :, ch], EMBOSS_KERNEL, mode="nearest")
        for ch in range(img.channels)
    ], axis=2)
    return _composite_with_bg_effect(img, alpha, np.clip(effected, 0.0, 1.0))
