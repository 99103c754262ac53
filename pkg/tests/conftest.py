"""Shared synthetic-data helpers for the test suite."""

import numpy as np
import pytest

from selsr import imagecore
from selsr.imagecore import RasterImage


def grating_class(seed, n_waves=3):
    """A texture 'class': fixed orientations/frequencies/amplitudes."""
    rng = np.random.default_rng(seed)
    return [(rng.uniform(0, np.pi), rng.uniform(0.08, 0.14), rng.uniform(0.5, 1.0))
            for _ in range(n_waves)]


def draw_texture(spec, h, w, seed):
    """One instance of a texture class: same gratings, random phases."""
    rng = np.random.default_rng(seed)
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    img = np.zeros((h, w))
    for theta, f, amp in spec:
        phi = rng.uniform(0, 2 * np.pi)
        img += amp * np.sin(2 * np.pi * f * (np.cos(theta) * rr + np.sin(theta) * cc) + phi)
    span = max(img.max() - img.min(), 1e-9)
    return RasterImage(0.1 + 0.8 * (img - img.min()) / span)


def consistent_coupled_dictionary(n_atoms, seed, patch_size=3, mag=3):
    """A coupled dictionary whose feature atoms are exactly the pipeline's
    view of its high-res atoms (downsample -> bicubic -> filters on a lone
    patch canvas), normalized with co-scaled high block."""
    from scipy.ndimage import gaussian_filter

    from selsr.dictlearn import CoupledDictionary

    fp = patch_size * mag
    rng = np.random.default_rng(seed)
    highs = np.stack([
        gaussian_filter(rng.normal(size=(fp, fp)), 0.3, mode="nearest")
        for _ in range(n_atoms)
    ])
    highs -= highs.mean(axis=(1, 2), keepdims=True)
    highs /= np.linalg.norm(highs, axis=(1, 2), keepdims=True)

    feats = []
    for a in highs:
        lo = a.reshape(patch_size, mag, patch_size, mag).mean(axis=(1, 3))
        mid = imagecore.resize_bicubic_array(lo, fp, fp)
        feats.append(imagecore.filter_responses(mid).reshape(-1))
    D_low = np.stack(feats, axis=1)
    gamma = np.maximum(np.linalg.norm(D_low, axis=0), 1e-12)
    return CoupledDictionary(
        class_name="consistent", role="fg",
        D_low=D_low / gamma,
        D_high=highs.reshape(n_atoms, -1).T / gamma,
        scaling=4.0, patch_size=patch_size, magnification=mag,
    )


def build_e2e_dataset(root, n_train=2, hi=72, seed=0):
    """Tiny on-disk dataset for CLI end-to-end runs.

    Each image is an fg-textured rectangle on a bg-textured canvas; masks
    are binary PNGs, and a TSV manifest lists (image, mask, class) rows.
    Returns (manifest_path, eval_image_path, fg_spec) for follow-up runs.
    """
    root.mkdir(parents=True, exist_ok=True)
    fg_spec = grating_class(11, n_waves=2)
    bg_spec = grating_class(22, n_waves=2)
    lines = []
    for i in range(n_train):
        fg_tex = draw_texture(fg_spec, hi, hi, seed=seed * 100 + i)
        bg_tex = draw_texture(bg_spec, hi, hi, seed=seed * 100 + 50 + i)
        mask = np.zeros((hi, hi), dtype=bool)
        q = hi // 4
        mask[q:hi - q, q:hi - q] = True
        img = np.where(mask, fg_tex.data[:, :, 0], bg_tex.data[:, :, 0])
        img_path = root / f"train_{i}.png"
        mask_path = root / f"mask_{i}.png"
        imagecore.save_image(RasterImage(img), img_path)
        imagecore.save_image(RasterImage(mask.astype(np.float64)), mask_path)
        lines.append(f"{img_path}\t{mask_path}\tblob")
    manifest = root / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")

    fg_tex = draw_texture(fg_spec, hi, hi, seed=seed * 100 + 90)
    bg_tex = draw_texture(bg_spec, hi, hi, seed=seed * 100 + 91)
    mask = np.zeros((hi, hi), dtype=bool)
    q = hi // 4
    mask[q:hi - q, q:hi - q] = True
    scene_hi = np.where(mask, fg_tex.data[:, :, 0], bg_tex.data[:, :, 0])
    low = imagecore.downsample(RasterImage(scene_hi), 3)
    eval_path = root / "eval_low.png"
    imagecore.save_image(low, eval_path)
    return manifest, eval_path, fg_spec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
