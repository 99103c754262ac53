import numpy as np
import pytest

from selsr.errors import ConstraintError
from selsr.imagecore import RasterImage
from selsr.matting import (AlphaMatte, MattingParams, Trimap,
                           matting_laplacian, solve_matte, trimap_from_map)


def two_tone_image(rng, h=16, w=16, split=8, noise=0.01):
    img = np.zeros((h, w, 3))
    img[:, split:] = 1.0
    return RasterImage(np.clip(img + rng.normal(scale=noise, size=img.shape), 0, 1))


def dense_solution(img, tri, params=None):
    params = params or MattingParams()
    L = matting_laplacian(img, params).toarray()
    known = tri.known.ravel().astype(np.float64)
    A = L + params.constraint_weight * np.diag(known)
    b = params.constraint_weight * (tri.value.ravel() * known)
    return np.clip(np.linalg.solve(A, b).reshape(tri.known.shape), 0.0, 1.0)


# ---------------------------------------------------------------------------
# trimap
# ---------------------------------------------------------------------------

def test_trimap_all_fg_fully_known():
    tri = trimap_from_map(np.ones((8, 8), bool), None, band=3)
    assert tri.known.all()
    assert np.all(tri.value == 1.0)


def test_trimap_half_split_band_width():
    fg = np.zeros((10, 12), bool)
    fg[:, 6:] = True
    tri = trimap_from_map(fg, None, band=2)
    unknown_cols = sorted(set(np.nonzero(~tri.known)[1].tolist()))
    assert unknown_cols == [4, 5, 6, 7]  # 4-pixel strip around the boundary
    assert tri.known[:, :4].all() and tri.known[:, 8:].all()
    assert np.all(tri.value[:, :4] == 0.0)
    assert np.all(tri.value[:, 8:] == 1.0)


def test_trimap_zero_band_no_unknown():
    fg = np.zeros((6, 6), bool)
    fg[:3] = True
    tri = trimap_from_map(fg, None, band=0)
    assert tri.known.all()


def test_trimap_negative_band():
    with pytest.raises(ValueError):
        trimap_from_map(np.ones((4, 4), bool), None, band=-1)


# ---------------------------------------------------------------------------
# laplacian
# ---------------------------------------------------------------------------

def test_laplacian_row_sums_zero(rng):
    img = RasterImage(rng.uniform(size=(8, 8, 3)))
    L = matting_laplacian(img)
    assert np.abs(np.asarray(L.sum(axis=1))).max() < 1e-9


def test_laplacian_psd_small(rng):
    img = RasterImage(rng.uniform(size=(8, 8, 3)))
    L = matting_laplacian(img).toarray()
    assert np.linalg.eigvalsh(L).min() >= -1e-8


def test_laplacian_symmetric(rng):
    img = RasterImage(rng.uniform(size=(9, 7, 3)))
    L = matting_laplacian(img)
    assert abs(L - L.T).max() < 1e-12


def test_laplacian_constant_in_null_space(rng):
    img = RasterImage(np.full((8, 8, 3), 0.3))
    L = matting_laplacian(img)
    x = np.full(64, 0.7)
    assert abs(x @ (L @ x)) < 1e-9


def test_laplacian_grayscale_supported(rng):
    img = RasterImage(rng.uniform(size=(8, 8)))
    L = matting_laplacian(img)
    assert np.abs(np.asarray(L.sum(axis=1))).max() < 1e-9


def test_laplacian_too_small_image():
    with pytest.raises(ValueError):
        matting_laplacian(RasterImage(np.zeros((2, 2))))


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def test_fully_constrained_recovers_scribbles(rng):
    img = two_tone_image(rng, h=8, w=8, split=4)
    value = np.zeros((8, 8))
    value[:, 4:] = 1.0
    tri = Trimap(np.ones((8, 8), bool), value)
    matte = solve_matte(img, tri)
    assert np.abs(matte.alpha - value).max() <= 0.02  # 1/lam_c leakage


def test_two_tone_matches_dense_solve(rng):
    img = two_tone_image(rng)
    fg = np.zeros((16, 16), bool)
    fg[:, 8:] = True
    tri = trimap_from_map(fg, None, band=3)
    params = MattingParams(tol=1e-8)
    matte = solve_matte(img, tri, params)
    assert matte.converged
    dense = dense_solution(img, tri, params)
    assert np.abs(matte.alpha - dense).max() < 1e-4
    # clean color boundary: alpha is near-binary outside a 1-px transition
    assert np.all(matte.alpha[:, :6] <= 0.05)
    assert np.all(matte.alpha[:, 10:] >= 0.95)


def test_complement_symmetry(rng):
    img = two_tone_image(rng)
    fg = np.zeros((16, 16), bool)
    fg[:, 8:] = True
    tri = trimap_from_map(fg, None, band=3)
    flipped = Trimap(tri.known.copy(), np.where(tri.known, 1.0 - tri.value, 0.0))
    params = MattingParams(tol=1e-8)
    a = solve_matte(img, tri, params)
    b = solve_matte(img, flipped, params)
    dense_a = dense_solution(img, tri, params)
    dense_b = dense_solution(img, flipped, params)
    assert np.abs((1.0 - dense_a) - dense_b).max() < 1e-10  # exact for the system
    assert np.abs((1.0 - a.alpha) - b.alpha).max() < 1e-4


def test_alpha_in_unit_interval(rng):
    img = RasterImage(rng.uniform(size=(12, 12, 3)))
    fg = np.zeros((12, 12), bool)
    fg[3:9, 3:9] = True
    matte = solve_matte(img, trimap_from_map(fg, None, band=1))
    assert matte.alpha.min() >= 0.0 and matte.alpha.max() <= 1.0


def test_known_pixel_fidelity(rng):
    img = RasterImage(rng.uniform(size=(12, 12, 3)))
    fg = np.zeros((12, 12), bool)
    fg[:6] = True
    tri = trimap_from_map(fg, None, band=2)
    matte = solve_matte(img, tri)
    known = tri.known
    assert np.abs(matte.alpha[known] - tri.value[known]).max() <= 0.02


def test_energy_optimality_vs_perturbations(rng):
    img = two_tone_image(rng, h=10, w=10, split=5)
    fg = np.zeros((10, 10), bool)
    fg[:, 5:] = True
    tri = trimap_from_map(fg, None, band=2)
    params = MattingParams()
    matte = solve_matte(img, tri, params)
    L = matting_laplacian(img, params)
    known = tri.known.ravel().astype(np.float64)

    def energy(a):
        return float(a @ (L @ a)
                     + params.constraint_weight * ((a - tri.value.ravel()) ** 2
                                                   * known).sum())

    base = energy(matte.alpha.ravel())
    for _ in range(100):
        z = matte.alpha.ravel() + rng.normal(scale=0.01, size=100)
        assert base <= energy(z) + 1e-9


def test_missing_constraints_error(rng):
    img = RasterImage(rng.uniform(size=(8, 8, 3)))
    with pytest.raises(ConstraintError):
        solve_matte(img, Trimap(np.ones((8, 8), bool), np.ones((8, 8))))
    with pytest.raises(ConstraintError):
        solve_matte(img, Trimap(np.ones((8, 8), bool), np.zeros((8, 8))))


def test_matte_png_export(tmp_path, rng):
    from selsr.imagecore import load_image
    from selsr.matting import save_matte_png
    matte = AlphaMatte(rng.uniform(size=(8, 8)))
    save_matte_png(matte, tmp_path / "m.png")
    img = load_image(tmp_path / "m.png")
    assert img.channels == 1
    assert np.abs(img.data[:, :, 0] - matte.alpha).max() <= 0.5 / 255 + 1e-12
