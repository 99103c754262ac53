"""Synthetic data and independent reference solvers for desk-scale checks.

Every numerical kernel in the pipeline has an oracle here that reaches the
same answer by a deliberately different route: the l1,2 projection by
bisection instead of the sorted prefix rule, the lasso by projected
gradient on the nonnegative split instead of coordinate descent, the
grouped multitask solve by a penalized proximal method with the penalty
level bisected to match the ball radius, and over-segmentation by a
plain-python union-find re-implementation. Planted scenes tile regions
with sparse combinations of role-specific atoms so that separation
accuracy has an exact ground truth.

``run_all`` drives the whole table (also exposed as the CLI subcommand
``selsr synthbench run-all``).
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter1d

from . import gmtl as gmtllib
from . import matting as mattinglib
from .dictlearn import CoupledDictionary
from .imagecore import RasterImage, filter_responses
from .segmentation import SegmentMap, SegmentationParams
from .sparse import kkt_violation, lasso, lasso_objective


# ---------------------------------------------------------------------------
# Projection oracle: bisection on the shrink level
# ---------------------------------------------------------------------------

def oracle_l12_projection(x: np.ndarray, groups, tau: float, steps: int = 200) -> np.ndarray:
    """Project onto the l1,2 ball by bisecting sum_g max(0, ||x_g|| - lam) = tau.

    Independent of the production sort-based path; 200 bisection steps give
    far better than 1e-9 accuracy on the shrink level.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    garr = gmtllib._group_arrays(groups)
    norms = np.array([np.linalg.norm(x[g]) for g in garr])
    if norms.sum() <= tau:
        return x.copy()
    lo, hi = 0.0, float(norms.max())
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if np.maximum(norms - mid, 0.0).sum() > tau:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    out = np.zeros_like(x)
    for g, nu in zip(garr, norms):
        if nu > lam:
            out[g] = x[g] * ((nu - lam) / nu)
    return out


# ---------------------------------------------------------------------------
# Lasso oracle: projected gradient on the nonnegative split
# ---------------------------------------------------------------------------

def oracle_lasso(y: np.ndarray, D: np.ndarray, lambda_int: float,
                 iterations: int = 1_000_000) -> np.ndarray:
    """Reference lasso solution, avoiding coordinate descent entirely.

    Splits a = u - v with u, v >= 0, which turns the objective into a
    smooth box-constrained quadratic, and runs accelerated projected
    gradient at a fixed 1/L step. Slow, simple, accurate; meant for tiny
    sizes.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    D = np.asarray(D, dtype=np.float64)
    n = D.shape[1]
    G = D.T @ D
    b = D.T @ y
    lip = 2.0 * max(float(np.linalg.eigvalsh(G).max()), 1e-12)
    step = 1.0 / lip

    w = np.zeros(2 * n)   # [u; v]
    z = w.copy()
    t = 1.0
    for _ in range(iterations):
        q = G @ (z[:n] - z[n:]) - b
        w_new = np.empty(2 * n)
        w_new[:n] = z[:n] - step * (q + lambda_int)
        w_new[n:] = z[n:] - step * (lambda_int - q)
        np.maximum(w_new, 0.0, out=w_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = w_new + ((t - 1.0) / t_new) * (w_new - w)
        t = t_new
        w = w_new
    return w[:n] - w[n:]


# ---------------------------------------------------------------------------
# GMTL oracle: penalized proximal gradient, penalty bisected to the radius
# ---------------------------------------------------------------------------

def _prox_group_rows(W: np.ndarray, garr, thr: float) -> np.ndarray:
    out = W.copy()
    for g in garr:
        nu = np.linalg.norm(W[g])
        out[g] = W[g] * (max(0.0, nu - thr) / nu) if nu > 0 else 0.0
    return out


def _penalized_gmtl(Ymat, D, garr, lam, iters):
    G = D.T @ D
    DtY = D.T @ Ymat
    lip = 2.0 * max(float(np.linalg.eigvalsh(G).max()), 1e-12)
    step = 1.0 / lip
    W = np.zeros((D.shape[1], Ymat.shape[1]))
    Z = W.copy()
    t = 1.0
    for _ in range(iters):
        W_new = _prox_group_rows(Z - step * 2.0 * (G @ Z - DtY), garr, step * lam)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        Z = W_new + ((t - 1.0) / t_new) * (W_new - W)
        t = t_new
        W = W_new
    return W


def oracle_gmtl(Y, D: np.ndarray, groups, C: float,
                iters: int = 2000, bisect_steps: int = 60) -> np.ndarray:
    """Reference solution of the radius-C constrained grouped multitask
    problem via its penalized form.

    The group-penalty level is bisected until the penalized minimizer's
    l1,2 norm matches C (the constrained and penalized problems trace the
    same solution path); the unpenalized least-squares solution is returned
    directly when it is already feasible.
    """
    Ymat = Y.Y if isinstance(Y, gmtllib.TaskBatch) else np.asarray(Y, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    garr = gmtllib._group_arrays(groups)

    W0 = _penalized_gmtl(Ymat, D, garr, 0.0, iters)
    if gmtllib.group_norm_sum(W0, garr) <= C + 1e-12:
        return W0
    hi = 2.0 * float(np.abs(D.T @ Ymat).max()) + 1e-6  # lam >= sup-norm kills W
    lo = 0.0
    W = W0
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        W = _penalized_gmtl(Ymat, D, garr, mid, iters)
        if gmtllib.group_norm_sum(W, garr) > C:
            lo = mid
        else:
            hi = mid
    W = _penalized_gmtl(Ymat, D, garr, hi, iters)
    return gmtllib.project_l12_ball(W, garr, C)


# ---------------------------------------------------------------------------
# Planted scenes
# ---------------------------------------------------------------------------

TILE = 8          # planted tile side; scenes are built on a TILE-aligned grid
TILE_MARGIN = 2   # atoms vanish on this frame so filters never mix tiles
PATCH = 7         # odd feature footprint fully inside one tile


def make_tile_atoms(n_atoms: int, seed: int, tile: int = TILE,
                    margin: int = TILE_MARGIN, amplitude: float = 0.35) -> np.ndarray:
    """Random unit-ish tile atoms, zero on the margin frame.

    The zero frame keeps the derivative filters of neighboring tiles from
    seeing each other, so tile-aligned patch features are exactly linear in
    the planted coefficients.
    """
    rng = np.random.default_rng(seed)
    inner = tile - 2 * margin
    atoms = np.zeros((n_atoms, tile, tile))
    core = rng.normal(size=(n_atoms, inner, inner))
    core -= core.mean(axis=(1, 2), keepdims=True)
    core /= np.linalg.norm(core, axis=(1, 2), keepdims=True)
    atoms[:, margin:margin + inner, margin:margin + inner] = amplitude * core
    return atoms


def _atom_features(atoms: np.ndarray, patch: int = PATCH) -> np.ndarray:
    """Feature vector of each atom as seen by a tile-aligned patch."""
    pad = 2
    feats = []
    for a in atoms:
        canvas = np.zeros((a.shape[0] + 2 * pad, a.shape[1] + 2 * pad))
        canvas[pad:pad + a.shape[0], pad:pad + a.shape[1]] = a
        resp = filter_responses(canvas)
        crop = resp[:, pad:pad + patch, pad:pad + patch]
        feats.append(crop.reshape(-1))
    return np.stack(feats, axis=1)  # (p, n)


def scene_dictionaries(fg_atoms: np.ndarray, bg_atoms: np.ndarray,
                       class_name: str = "planted") -> tuple[CoupledDictionary, CoupledDictionary]:
    """Coupled dictionaries whose feature atoms match the planted tiles."""
    out = []
    for role, atoms in (("fg", fg_atoms), ("bg", bg_atoms)):
        D_low = _atom_features(atoms)
        norms = np.maximum(np.linalg.norm(D_low, axis=0), 1e-12)
        D_high = atoms.reshape(len(atoms), -1).T / norms
        out.append(CoupledDictionary(
            class_name=class_name, role=role,
            D_low=D_low / norms, D_high=D_high,
            scaling=1.0, patch_size=PATCH, magnification=1,
        ))
    return out[0], out[1]


def half_layout(h: int, w: int, split_col: int) -> list:
    return [(0, 0, h, split_col, "fg"), (0, split_col, h, w, "bg")]


def quadrant_layout(h: int, w: int) -> list:
    h2, w2 = h // 2, w // 2
    return [(0, 0, h2, w2, "fg"), (0, w2, h2, w, "bg"),
            (h2, 0, h, w2, "bg"), (h2, w2, h, w, "fg")]


def _check_layout(layout) -> tuple[int, int]:
    h = max(r1 for _, _, r1, _, _ in layout)
    w = max(c1 for _, _, _, c1, _ in layout)
    covered = np.zeros((h, w), dtype=np.int32)
    for r0, c0, r1, c1, role in layout:
        if role not in ("fg", "bg"):
            raise ValueError(f"bad layout role {role!r}")
        if min(r0, c0) < 0 or r1 <= r0 or c1 <= c0:
            raise ValueError(f"bad layout rect {(r0, c0, r1, c1)}")
        covered[r0:r1, c0:c1] += 1
    if (covered > 1).any():
        raise ValueError("layout rectangles overlap")
    if (covered == 0).any():
        raise ValueError("layout does not cover the canvas")
    for r0, c0, r1, c1, _ in layout:
        if any(v % TILE for v in (r0, c0, r1, c1)):
            raise ValueError(f"layout rect {(r0, c0, r1, c1)} not aligned to tile size {TILE}")
    return h, w


def make_planted_scene(fg_atoms: np.ndarray, bg_atoms: np.ndarray, layout,
                       noise_sigma: float, seed: int,
                       max_active: int = 2) -> tuple[RasterImage, np.ndarray]:
    """Tile each layout rect with sparse combinations of its role's atoms.

    Returns the scene image and the exact boolean foreground mask. Layout
    rects are (r0, c0, r1, c1, role), tile-aligned, disjoint, covering the
    canvas.
    """
    h, w = _check_layout(layout)
    rng = np.random.default_rng(seed)
    canvas = np.full((h, w), 0.5)
    mask = np.zeros((h, w), dtype=bool)
    for r0, c0, r1, c1, role in layout:
        atoms = fg_atoms if role == "fg" else bg_atoms
        if role == "fg":
            mask[r0:r1, c0:c1] = True
        for tr in range(r0, r1, TILE):
            for tc in range(c0, c1, TILE):
                k = int(rng.integers(1, max_active + 1))
                picks = rng.choice(len(atoms), size=k, replace=False)
                coefs = rng.uniform(0.5, 1.0, size=k) * rng.choice([-1.0, 1.0], size=k)
                tile = np.einsum("k,kij->ij", coefs, atoms[picks])
                canvas[tr:tr + TILE, tc:tc + TILE] += tile
    if noise_sigma > 0:
        canvas = canvas + rng.normal(scale=noise_sigma, size=canvas.shape)
    return RasterImage(np.clip(canvas, 0.0, 1.0)), mask


def layout_segments(layout, block: int = 2 * TILE) -> SegmentMap:
    """Over-segmentation of a layout: each rect split into aligned blocks.

    Mirrors what a well-behaved over-segmenter would produce on a planted
    scene (segments never straddle the fg/bg boundary), so separation tests
    measure the grouped decision, not segmentation quality.
    """
    h, w = _check_layout(layout)
    labels = np.zeros((h, w), dtype=np.int32)
    g = 0
    for r0, c0, r1, c1, _ in layout:
        for br in range(r0, r1, block):
            for bc in range(c0, c1, block):
                labels[br:min(br + block, r1), bc:min(bc + block, c1)] = g
                g += 1
    return SegmentMap(labels, g)


def planted_patch_config() -> gmtllib.PatchConfig:
    """Patch grid aligned with the planted tiles (one patch per tile)."""
    return gmtllib.PatchConfig(patch_size=PATCH, stride=TILE)


# ---------------------------------------------------------------------------
# Reference over-segmentation (independent union-find implementation)
# ---------------------------------------------------------------------------

def reference_oversegment(img: RasterImage, params: SegmentationParams | None = None) -> SegmentMap:
    """Plain-python re-implementation of the over-segmentation contract.

    Same edge construction order, merge criterion, 4-connectivity cleanup,
    small-component absorption, and scan-order relabeling as the production
    path, written independently (dict-based union-find, explicit loops).
    Quadratically slower; for oracle use at small sizes only.
    """
    params = params or SegmentationParams()
    h, w = img.height, img.width
    min_size = params.min_segment_size
    if min_size is None:
        min_size = max(1, (h * w) // 1000)

    a = img.data
    if params.smoothing_sigma > 0:
        a = gaussian_filter1d(a, params.smoothing_sigma, axis=0, mode="nearest")
        a = gaussian_filter1d(a, params.smoothing_sigma, axis=1, mode="nearest")
    color = a.reshape(h * w, -1)

    def pid(r, c):
        return r * w + c

    edges = []
    for r in range(h):            # right
        for c in range(w - 1):
            edges.append((pid(r, c), pid(r, c + 1)))
    for r in range(h - 1):        # down
        for c in range(w):
            edges.append((pid(r, c), pid(r + 1, c)))
    for r in range(h - 1):        # down-right
        for c in range(w - 1):
            edges.append((pid(r, c), pid(r + 1, c + 1)))
    for r in range(h - 1):        # down-left
        for c in range(1, w):
            edges.append((pid(r, c), pid(r + 1, c - 1)))
    weights = [float(np.sqrt(((color[a_] - color[b_]) ** 2).sum())) for a_, b_ in edges]
    order = sorted(range(len(edges)), key=lambda e: (weights[e], e))

    parent = list(range(h * w))
    size = [1] * (h * w)
    internal = [0.0] * (h * w)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    k = params.threshold_k
    for e in order:
        ra, rb = find(edges[e][0]), find(edges[e][1])
        if ra == rb:
            continue
        wgt = weights[e]
        if wgt <= min(internal[ra] + k / size[ra], internal[rb] + k / size[rb]):
            parent[rb] = ra
            size[ra] += size[rb]
            internal[ra] = wgt

    labels8 = [[find(pid(r, c)) for c in range(w)] for r in range(h)]

    # 4-connected split by flood fill
    comp = [[-1] * w for _ in range(h)]
    ncomp = 0
    for r in range(h):
        for c in range(w):
            if comp[r][c] >= 0:
                continue
            stack = [(r, c)]
            comp[r][c] = ncomp
            while stack:
                rr, cc = stack.pop()
                for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                    r2, c2 = rr + dr, cc + dc
                    if 0 <= r2 < h and 0 <= c2 < w and comp[r2][c2] < 0 \
                            and labels8[r2][c2] == labels8[rr][cc]:
                        comp[r2][c2] = ncomp
                        stack.append((r2, c2))
            ncomp += 1

    sizes = [0] * ncomp
    csum = [np.zeros(color.shape[1]) for _ in range(ncomp)]
    for r in range(h):
        for c in range(w):
            g = comp[r][c]
            sizes[g] += 1
            csum[g] = csum[g] + color[pid(r, c)]
    neigh = [set() for _ in range(ncomp)]
    for r in range(h):
        for c in range(w):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 < h and c2 < w and comp[r][c] != comp[r2][c2]:
                    neigh[comp[r][c]].add(comp[r2][c2])
                    neigh[comp[r2][c2]].add(comp[r][c])

    merged = list(range(ncomp))

    def resolve(g):
        while merged[g] != g:
            g = merged[g]
        return g

    while True:
        alive = [g for g in range(ncomp) if merged[g] == g]
        small = [g for g in alive if sizes[g] < min_size and neigh[g]]
        if not small:
            break
        g = min(small, key=lambda s: (sizes[s], s))
        mg = csum[g] / sizes[g]
        best, best_d = -1, np.inf
        for nb in sorted(neigh[g]):
            d = float(np.linalg.norm(mg - csum[nb] / sizes[nb]))
            if d < best_d:
                best, best_d = nb, d
        merged[g] = best
        sizes[best] += sizes[g]
        csum[best] = csum[best] + csum[g]
        neigh[best] |= neigh[g]
        neigh[best].discard(best)
        neigh[best].discard(g)
        for nb in neigh[g]:
            if nb != best:
                neigh[nb].discard(g)
                neigh[nb].add(best)
        neigh[g] = set()

    relabel = {}
    out = np.zeros((h, w), dtype=np.int32)
    for r in range(h):
        for c in range(w):
            g = resolve(comp[r][c])
            if g not in relabel:
                relabel[g] = len(relabel)
            out[r, c] = relabel[g]
    return SegmentMap(out, len(relabel))


# ---------------------------------------------------------------------------
# run-all harness
# ---------------------------------------------------------------------------

def _bench_projection(rng):
    worst = 0.0
    for _ in range(60):
        n_groups = int(rng.integers(2, 9))
        sizes = rng.integers(1, 9, size=n_groups)
        n = int(sizes.sum())
        splits = np.split(np.arange(n), np.cumsum(sizes)[:-1])
        x = rng.normal(size=n) * rng.uniform(0.5, 3.0)
        tau = float(rng.uniform(0.1, 2.0))
        got = gmtllib.project_l12_ball(x, splits, tau)
        want = oracle_l12_projection(x, splits, tau)
        worst = max(worst, float(np.linalg.norm(got - want)))
        again = gmtllib.project_l12_ball(got, splits, tau)
        worst = max(worst, float(np.linalg.norm(again - got)))
    return worst < 1e-7, f"max deviation {worst:.2e}"


def _bench_lasso(rng):
    worst_kkt, worst_rel = 0.0, 0.0
    for _ in range(60):
        p = int(rng.integers(4, 17))
        n = int(rng.integers(p, 33))
        D = rng.normal(size=(p, n))
        D /= np.linalg.norm(D, axis=0)
        y = rng.normal(size=p)
        lam = float(rng.uniform(0.05, 0.3))
        code = lasso(y, D, lam, tol=1e-8, max_iter=5000)
        worst_kkt = max(worst_kkt, kkt_violation(y, D, code.coefficients, lam))
        ref = oracle_lasso(y, D, lam, iterations=20000)
        f_ref = lasso_objective(y, D, ref, lam)
        worst_rel = max(worst_rel, abs(code.objective_value - f_ref) / max(f_ref, 1e-12))
    return (worst_kkt < 1e-5 and worst_rel < 1e-6), \
        f"max KKT {worst_kkt:.2e}, max objective gap {worst_rel:.2e}"


def _bench_gmtl(rng):
    feasible = True
    converged = 0
    for _ in range(50):
        p, n, K, G = 24, 64, 9, 4
        D = rng.normal(size=(p, n))
        D /= np.linalg.norm(D, axis=0)
        Y = rng.normal(size=(p, K))
        splits = np.split(np.arange(n), G)
        C = float(rng.uniform(0.5, 4.0))
        sol = gmtllib.gmtl_solve(Y, D, splits, gmtllib.GmtlConfig(C=C))
        feasible &= gmtllib.group_norm_sum(sol.Omega, splits) <= C + 1e-8
        converged += sol.converged
    return (feasible and converged >= 45), f"{converged}/50 converged, feasible={feasible}"


def _bench_matting(rng):
    ok = True
    details = []
    img = RasterImage(rng.uniform(size=(8, 8, 3)))
    L = mattinglib.matting_laplacian(img)
    rowsum = float(np.abs(np.asarray(L.sum(axis=1))).max())
    eigmin = float(np.linalg.eigvalsh(L.toarray()).min())
    ok &= rowsum < 1e-9 and eigmin > -1e-8
    details.append(f"rowsum {rowsum:.1e}, eigmin {eigmin:.1e}")
    img16 = RasterImage(rng.uniform(size=(16, 16, 3)))
    tri = mattinglib.Trimap(
        known=np.pad(np.zeros((8, 16), dtype=bool), ((4, 4), (0, 0)), constant_values=True),
        value=np.pad(np.zeros((8, 16)), ((4, 4), (0, 0)))
    )
    tri.value[12:, :] = 1.0
    params = mattinglib.MattingParams(tol=1e-8)
    m = mattinglib.solve_matte(img16, tri, params)
    L16 = mattinglib.matting_laplacian(img16, params)
    A = L16.toarray() + params.constraint_weight * np.diag(tri.known.ravel().astype(float))
    dense = np.clip(np.linalg.solve(
        A, params.constraint_weight * (tri.value * tri.known).ravel()
    ).reshape(16, 16), 0, 1)
    gap = float(np.abs(m.alpha - dense).max())
    ok &= gap < 1e-4
    details.append(f"cg-vs-dense {gap:.1e}")
    return ok, "; ".join(details)


def _bench_separation(rng):
    fg_atoms = make_tile_atoms(12, seed=101)
    bg_atoms = make_tile_atoms(12, seed=202)
    fg, bg = scene_dictionaries(fg_atoms, bg_atoms)
    hits = []
    for i in range(2):
        layout = quadrant_layout(64, 64)
        scene, mask = make_planted_scene(fg_atoms, bg_atoms, layout, 0.02, seed=300 + i)
        seg = layout_segments(layout)
        fmap = gmtllib.separate_figure_ground(
            scene, seg, [fg, bg], "planted",
            gmtllib.GmtlConfig(C=0.6), planted_patch_config())
        hits.append(float((fmap.pixel_labels == mask).mean()))
    acc = min(hits)
    return acc >= 0.9, f"min pixel accuracy {acc:.3f}"


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Run the oracle/property table; returns (name, passed, detail) rows."""
    rng = np.random.default_rng(seed)
    return [
        ("l12-projection vs bisection oracle", *_bench_projection(rng)),
        ("lasso KKT + split-QP oracle", *_bench_lasso(rng)),
        ("gmtl feasibility + convergence", *_bench_gmtl(rng)),
        ("matting laplacian + cg vs dense", *_bench_matting(rng)),
        ("planted-scene separation", *_bench_separation(rng)),
    ]
