"""Closed-form matting refinement of a binary figure-ground map.

The map supplies scribbles: pixels far from any fg/bg boundary are clamped
to their label, a band around the boundary is left unknown, and the alpha
matte solves (L + lam_c * diag(known)) a = lam_c * s where L is the
matting Laplacian built from local color statistics. The solve uses
Jacobi-preconditioned conjugate gradient; tiny instances cross-check
against dense direct solves in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import as_strided
from scipy.ndimage import distance_transform_edt
from scipy.sparse.linalg import LinearOperator, cg

from . import imagecore
from .errors import ConstraintError
from .imagecore import RasterImage

_WINDOW_CHUNK = 4096


@dataclass
class MattingParams:
    window_radius: int = 1
    epsilon: float = 1e-5
    constraint_weight: float = 100.0
    tol: float = 1e-6
    max_iter: int = 2000

    def __post_init__(self):
        if self.window_radius < 1 or self.epsilon <= 0 or self.constraint_weight <= 0:
            raise ValueError("invalid matting parameters")


@dataclass
class Trimap:
    """Per-pixel constraints: known pixels carry a scribble value in [0,1]."""

    known: np.ndarray  # (H, W) bool
    value: np.ndarray  # (H, W) float, meaningful where known

    def __post_init__(self):
        self.known = np.asarray(self.known, dtype=bool)
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.known.shape != self.value.shape:
            raise ValueError("known/value shape mismatch")


@dataclass
class AlphaMatte:
    alpha: np.ndarray  # (H, W) in [0, 1]
    converged: bool = True
    residual: float = 0.0


def trimap_from_map(fg_map, seg=None, band: int = 4) -> Trimap:
    """Scribbles from a binary map: unknown within ``band`` of the boundary.

    A pixel is unknown iff an opposite-label pixel lies within Euclidean
    distance ``band``; everything else is clamped to its label. fg_map may
    be a FigureGroundMap or a boolean array.
    """
    if band < 0:
        raise ValueError(f"band must be >= 0, got {band}")
    fg = fg_map if isinstance(fg_map, np.ndarray) else fg_map.pixel_labels
    fg = np.asarray(fg, dtype=bool)
    if seg is not None and seg.shape != fg.shape:
        raise ValueError("segment map dims do not match the figure-ground map")

    if fg.all() or (~fg).all():
        unknown = np.zeros_like(fg)  # no boundary at all
    else:
        dist_to_fg = distance_transform_edt(~fg)
        dist_to_bg = distance_transform_edt(fg)
        unknown = np.where(fg, dist_to_bg <= band, dist_to_fg <= band)
    known = ~unknown
    return Trimap(known, np.where(known, fg.astype(np.float64), 0.0))


def matting_laplacian(img: RasterImage, params: MattingParams | None = None) -> sp.csr_matrix:
    """Sparse symmetric matting Laplacian over pixels.

    For every full (2r+1)^2 window the entry (i, j) accumulates
    delta_ij - (1/|w|) (1 + (c_i - mu)^T (Sigma + eps/|w| I)^-1 (c_j - mu)).
    Row sums are zero by construction and the result is PSD.
    """
    params = params or MattingParams()
    r = params.window_radius
    win = 2 * r + 1
    h, w, ch = img.data.shape
    if h < win or w < win:
        raise ValueError(f"image smaller than the {win}x{win} matting window")

    area = win * win
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    shape = (h - win + 1, w - win + 1, win, win)
    strides = (idx.strides[0], idx.strides[1]) + idx.strides
    win_idx = as_strided(idx, shape=shape, strides=strides).reshape(-1, area)

    flat = img.data.reshape(-1, ch)
    eye_a = np.eye(area)
    eye_c = np.eye(ch)
    rows, cols, vals = [], [], []
    for start in range(0, len(win_idx), _WINDOW_CHUNK):
        widx = win_idx[start:start + _WINDOW_CHUNK]
        win_pix = flat[widx]  # (nw, area, ch)
        mu = win_pix.mean(axis=1, keepdims=True)
        X = win_pix - mu
        cov = np.einsum("nwc,nwd->ncd", X, X) / area
        inv = np.linalg.inv(cov + (params.epsilon / area) * eye_c)
        V = np.einsum("nwc,ncd,nvd->nwv", X, inv, X)
        Lw = eye_a[None, :, :] - (1.0 + V) / area
        rows.append(np.repeat(widx, area, axis=1).ravel())
        cols.append(np.tile(widx, (1, area)).ravel())
        vals.append(Lw.ravel())

    L = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(h * w, h * w),
    ).tocsr()
    return (L + L.T) * 0.5


def solve_matte(img: RasterImage, tri: Trimap, params: MattingParams | None = None) -> AlphaMatte:
    """Solve the constrained matting system by preconditioned CG.

    Raises ConstraintError unless the trimap pins at least one foreground
    and one background pixel. A non-converged solve is still returned,
    flagged via ``converged``/``residual``.
    """
    params = params or MattingParams()
    h, w = img.height, img.width
    if tri.known.shape != (h, w):
        raise ValueError("trimap dims do not match image dims")
    kv = tri.value[tri.known]
    if not (tri.known.any() and (kv >= 0.5).any()):
        raise ConstraintError("trimap has no known foreground pixels")
    if not (kv < 0.5).any():
        raise ConstraintError("trimap has no known background pixels")

    L = matting_laplacian(img, params)
    lam = params.constraint_weight
    known = tri.known.ravel().astype(np.float64)
    A = (L + sp.diags(lam * known)).tocsr()
    b = lam * (tri.value.ravel() * known)

    diag = A.diagonal()
    inv_diag = np.where(diag > 0, 1.0 / np.maximum(diag, 1e-300), 1.0)
    M = LinearOperator(A.shape, matvec=lambda v: inv_diag * v)
    x0 = tri.value.ravel() * known
    alpha, info = cg(A, b, x0=x0, rtol=params.tol, atol=0.0,
                     maxiter=params.max_iter, M=M)
    residual = float(np.linalg.norm(b - A @ alpha))
    return AlphaMatte(
        np.clip(alpha.reshape(h, w), 0.0, 1.0),
        converged=(info == 0),
        residual=residual,
    )


def save_matte_png(matte: AlphaMatte, path) -> None:
    """8-bit grayscale PNG export."""
    imagecore.save_image(RasterImage(matte.alpha), path)
