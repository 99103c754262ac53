"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. Every tolerance is pinned here, not deferred to fixtures.
"""

import time

import numpy as np

from selsr import gmtl, imagecore, matting, segmentation, synthbench
from selsr.cli import main as cli_main
from selsr.dictlearn import TrainingConfig, train_coupled_dictionary
from selsr.imagecore import RasterImage, downsample, upsample_bicubic
from selsr.sparse import kkt_violation, lasso, lasso_objective
from selsr.superres import SrConfig, psnr, super_resolve_region

from conftest import build_e2e_dataset, draw_texture, grating_class
from test_dictlearn import planted_samples, recovery_hits


def report(num: int, name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} — {detail}")
    assert ok, f"criterion {num} ({name}): {detail}"


def test_criterion_1_projection_oracle():
    rng = np.random.default_rng(10)
    t0 = time.perf_counter()
    worst_gap = worst_feas = worst_idem = 0.0
    for _ in range(100):
        n_groups = int(rng.integers(1, 9))
        sizes = rng.integers(1, 9, size=n_groups)
        n = int(sizes.sum())
        if n > 64:
            sizes = sizes[:4]
            n = int(sizes.sum())
        groups = np.split(np.arange(n), np.cumsum(sizes)[:-1])
        x = rng.normal(size=n) * rng.uniform(0.5, 4.0)
        tau = float(rng.uniform(0.05, 2.0))
        got = gmtl.project_l12_ball(x, groups, tau)
        want = synthbench.oracle_l12_projection(x, groups, tau)
        worst_gap = max(worst_gap, float(np.linalg.norm(got - want)))
        worst_feas = max(worst_feas, gmtl.group_norm_sum(got, groups) - tau)
        again = gmtl.project_l12_ball(got, groups, tau)
        worst_idem = max(worst_idem, float(np.linalg.norm(again - got)))
    elapsed = time.perf_counter() - t0
    ok = worst_gap < 1e-7 and worst_feas < 1e-8 and worst_idem < 1e-12 \
        and elapsed < 1.0
    report(1, "l12 projection vs oracle", ok,
           f"max gap {worst_gap:.2e}, feasibility slack {worst_feas:.2e}, "
           f"idempotence {worst_idem:.2e}, {elapsed:.2f}s for 100 instances")


def test_criterion_2_lasso_kkt_and_oracle():
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    worst_kkt = worst_rel = 0.0
    for _ in range(100):
        p = int(rng.integers(4, 33))
        n = int(rng.integers(p, 65))
        D = rng.normal(size=(p, n))
        D /= np.linalg.norm(D, axis=0)
        y = rng.normal(size=p)
        lam = float(rng.uniform(0.05, 0.3))
        code = lasso(y, D, lam, tol=1e-6, max_iter=5000)
        worst_kkt = max(worst_kkt, kkt_violation(y, D, code.coefficients, lam))
        ref = synthbench.oracle_lasso(y, D, lam, iterations=4000)
        f_ref = lasso_objective(y, D, ref, lam)
        worst_rel = max(worst_rel,
                        abs(code.objective_value - f_ref) / max(f_ref, 1e-12))
    elapsed = time.perf_counter() - t0
    ok = worst_kkt < 1e-5 and worst_rel < 1e-6 and elapsed < 30.0
    report(2, "lasso KKT + oracle objective", ok,
           f"max KKT {worst_kkt:.2e}, max rel objective gap {worst_rel:.2e}, "
           f"{elapsed:.1f}s for 100 instances")


def test_criterion_3_gmtl_convergence_budget():
    rng = np.random.default_rng(30)
    converged = 0
    feasible = True
    for _ in range(50):
        D = rng.normal(size=(24, 64))
        D /= np.linalg.norm(D, axis=0)
        Y = rng.normal(size=(24, 9))
        groups = np.split(np.arange(64), 4)
        C = float(rng.uniform(0.5, 4.0))
        sol = gmtl.gmtl_solve(Y, D, groups,
                              gmtl.GmtlConfig(C=C, max_iter=200, tol=1e-6))
        converged += int(sol.converged)
        feasible &= gmtl.group_norm_sum(sol.Omega, groups) <= C + 1e-8
    ok = converged >= 45 and feasible
    report(3, "gmtl convergence within 200 iterations", ok,
           f"{converged}/50 converged (need >= 45), feasible on all: {feasible}")


def test_criterion_4_gmtl_beats_voting_on_planted_scenes():
    t0 = time.perf_counter()
    fg_atoms = synthbench.make_tile_atoms(32, seed=101, amplitude=0.5)
    bg_atoms = synthbench.make_tile_atoms(32, seed=202, amplitude=0.5)
    fgd, bgd = synthbench.scene_dictionaries(fg_atoms, bg_atoms)
    pc = synthbench.planted_patch_config()
    acc_gmtl, acc_vote = [], []
    for i in range(20):
        layout = (synthbench.quadrant_layout(64, 64) if i % 2
                  else synthbench.half_layout(64, 64, 32))
        scene, mask = synthbench.make_planted_scene(
            fg_atoms, bg_atoms, layout, noise_sigma=0.09, seed=900 + i)
        seg = synthbench.layout_segments(layout, block=24)
        fmap = gmtl.separate_figure_ground(
            scene, seg, [fgd, bgd], "planted",
            gmtl.GmtlConfig(C=0.5, max_iter=400), pc)
        vmap = gmtl.lasso_vote_baseline(scene, seg, [fgd, bgd], "planted",
                                        0.05, pc)
        acc_gmtl.append(float((fmap.pixel_labels == mask).mean()))
        acc_vote.append(float((vmap.pixel_labels == mask).mean()))
    elapsed = time.perf_counter() - t0
    mg, mv = float(np.mean(acc_gmtl)), float(np.mean(acc_vote))
    ok = mg >= mv and mg >= 0.9 and elapsed < 120.0
    report(4, "gmtl >= voting baseline on planted scenes", ok,
           f"gmtl mean acc {mg:.4f} vs voting {mv:.4f} (need gmtl >= voting "
           f"and >= 0.9), {elapsed:.1f}s for 20 scenes")


def test_criterion_5_matting_correctness():
    rng = np.random.default_rng(50)
    worst_gap = 0.0
    params = matting.MattingParams(tol=1e-8)
    for _ in range(10):
        img = RasterImage(rng.uniform(size=(16, 16, 3)))
        fg = np.zeros((16, 16), dtype=bool)
        r0, c0 = rng.integers(2, 8, size=2)
        fg[r0:r0 + 8, c0:c0 + 8] = True
        tri = matting.trimap_from_map(fg, None, band=2)
        m = matting.solve_matte(img, tri, params)
        L = matting.matting_laplacian(img, params).toarray()
        known = tri.known.ravel().astype(np.float64)
        A = L + params.constraint_weight * np.diag(known)
        b = params.constraint_weight * (tri.value.ravel() * known)
        dense = np.clip(np.linalg.solve(A, b).reshape(16, 16), 0.0, 1.0)
        worst_gap = max(worst_gap, float(np.abs(m.alpha - dense).max()))
    img8 = RasterImage(rng.uniform(size=(8, 8, 3)))
    L8 = matting.matting_laplacian(img8)
    rowsum = float(np.abs(np.asarray(L8.sum(axis=1))).max())
    eigmin = float(np.linalg.eigvalsh(L8.toarray()).min())
    ok = worst_gap < 1e-4 and rowsum < 1e-9 and eigmin >= -1e-8
    report(5, "matting cg vs dense + laplacian properties", ok,
           f"max cg-dense gap {worst_gap:.2e} (<1e-4), row sums {rowsum:.1e} "
           f"(<1e-9), min eig {eigmin:.1e} (>=-1e-8)")


def test_criterion_6_dictionary_learning():
    descents = 0
    min_hits = 16
    for seed in range(10):
        samples, true, p_high = planted_samples(100 + seed)
        cfg = TrainingConfig(n_atoms=16, patches_per_role=len(samples),
                             lambda_int=0.15, epochs=8, minibatch=256,
                             rng_seed=seed)
        d = train_coupled_dictionary(samples, cfg)
        descents += int(d.history.final_objective < d.history.initial_objective)
        min_hits = min(min_hits, recovery_hits(d, true, p_high))
    ok = descents == 10 and min_hits >= 14
    report(6, "dictionary learning descent + planted recovery", ok,
           f"objective decreased on {descents}/10 seeds, worst recovery "
           f"{min_hits}/16 atoms (need >= 14)")


def test_criterion_7_selective_sr_gain():
    t0 = time.perf_counter()
    gains = []
    outside_ok = True
    for i in range(10):
        spec = grating_class(600 + i)
        hi_train = draw_texture(spec, 96, 96, seed=1)
        hi_eval = draw_texture(spec, 96, 96, seed=2)
        samples = imagecore.sample_training_patches(
            hi_train, np.ones((96, 96), dtype=bool), 3, 1500, 3, "fg",
            rng_seed=10 + i)
        d = train_coupled_dictionary(samples, TrainingConfig(
            n_atoms=48, patches_per_role=1500, lambda_int=0.05, epochs=3,
            minibatch=128, rng_seed=i))
        low = downsample(hi_eval, 3)
        matte = np.zeros((32, 32))
        matte[:, :16] = 1.0  # half-plane matte: checks selectivity too
        sr = super_resolve_region(low, matte, d, SrConfig(lambda_int=0.05))
        bic = upsample_bicubic(low, 3)
        region = np.repeat(np.repeat(matte >= 0.5, 3, 0), 3, 1)
        gains.append(psnr(sr, hi_eval, region) - psnr(bic, hi_eval, region))
        outside_ok &= np.array_equal(sr.data[~region], bic.data[~region])
    elapsed = time.perf_counter() - t0
    min_gain = float(min(gains))
    ok = min_gain >= 0.5 and outside_ok and elapsed < 300.0
    report(7, "selective SR gain over bicubic", ok,
           f"min masked-region gain {min_gain:+.2f} dB (need >= +0.5), "
           f"outside-matte bitwise bicubic: {outside_ok}, "
           f"{elapsed:.1f}s for 10 scenes")


def test_criterion_8_end_to_end_determinism(tmp_path):
    manifest, eval_img, _ = build_e2e_dataset(tmp_path / "data", n_train=2,
                                              hi=72, seed=3)
    train_flags = ["--atoms", "32", "--samples-per-role", "600", "--epochs",
                   "2", "--minibatch", "128", "--seed", "42"]
    sep_flags = ["--k", "0.015", "--min-size", "40", "--seed", "42"]
    artifacts = {}
    for run in ("a", "b"):
        dicts = tmp_path / f"dicts_{run}"
        sep = tmp_path / f"sep_{run}"
        sr = tmp_path / f"sr_{run}"
        assert cli_main(["train", str(manifest), "--out-dir", str(dicts)]
                        + train_flags) == 0
        assert cli_main(["separate", str(eval_img), "blob", "--dict-dir",
                         str(dicts), "--out-dir", str(sep)] + sep_flags) == 0
        assert cli_main(["superres", str(eval_img), "--matte",
                         str(sep / "matte.png"), "--fg-dict",
                         str(dicts / "blob_fg.ssrdict"), "--out-dir", str(sr),
                         "--seed", "42"]) == 0
        artifacts[run] = {
            "fg_dict": (dicts / "blob_fg.ssrdict").read_bytes(),
            "bg_dict": (dicts / "blob_bg.ssrdict").read_bytes(),
            "segments": (sep / "segments.ssrseg").read_bytes(),
            "fgmap": (sep / "fgmap.png").read_bytes(),
            "fgmap_csv": (sep / "fgmap.csv").read_bytes(),
            "matte": (sep / "matte.png").read_bytes(),
            "sr": (sr / "sr.png").read_bytes(),
        }
    mismatched = [k for k in artifacts["a"]
                  if artifacts["a"][k] != artifacts["b"][k]]
    ok = not mismatched
    report(8, "end-to-end bitwise determinism", ok,
           "all artifacts identical across runs" if ok
           else f"mismatched: {mismatched}")


def test_criterion_9_segmentation_sanity():
    const = segmentation.oversegment(
        RasterImage(np.full((16, 16), 0.5)),
        segmentation.SegmentationParams(min_segment_size=1))
    half = np.zeros((20, 20))
    half[:, 10:] = 1.0
    half_seg = segmentation.oversegment(
        RasterImage(half),
        segmentation.SegmentationParams(smoothing_sigma=0, threshold_k=0.05,
                                        min_segment_size=1))
    rng = np.random.default_rng(77)
    quad = np.zeros((64, 64))
    quad[:32, :32], quad[:32, 32:], quad[32:, :32], quad[32:, 32:] = \
        0.2, 0.45, 0.7, 0.95
    img = RasterImage(np.clip(quad + rng.normal(scale=0.02, size=quad.shape),
                              0, 1))
    params = segmentation.SegmentationParams(smoothing_sigma=0.4,
                                             threshold_k=50 / 255,
                                             min_segment_size=20)
    seg = segmentation.oversegment(img, params)
    ref = synthbench.reference_oversegment(img, params)
    agreement = float((seg.labels == ref.labels).mean())
    ok = (const.count == 1 and half_seg.count == 2 and seg.count == 4
          and seg.count == ref.count and agreement >= 0.99)
    report(9, "segmentation sanity + reference agreement", ok,
           f"constant: {const.count} segment(s), half-split: {half_seg.count}, "
           f"quadrants: {seg.count} (reference {ref.count}), "
           f"label agreement {agreement:.4f} (need >= 0.99)")
