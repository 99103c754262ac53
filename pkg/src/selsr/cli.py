"""Command-line surface: train, separate, superres, effect, dict-stats,
synthbench.

Option precedence is CLI flag > --config TOML file > built-in default; the
config file may set keys at top level or under a per-command table. All
randomness flows from --seed, so every command is bitwise reproducible.
Exit code 0 means every requested output was written.
"""

from __future__ import annotations

import argparse
import csv
import sys
import zlib
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import effects as effectslib
from . import gmtl as gmtllib
from . import imagecore
from . import matting as mattinglib
from . import segmentation as seglib
from . import superres as srlib
from . import synthbench
from .dictlearn import (TrainingConfig, dictionary_stats, load_dictionary,
                        save_dictionary, train_coupled_dictionary)
from .errors import SamplingError, SelsrError
from .imagecore import RasterImage


def _child_seed(master: int, *parts) -> int:
    keys = [int(master)] + [zlib.crc32(str(p).encode()) for p in parts]
    return int(np.random.SeedSequence(keys).generate_state(1)[0])


class _Options:
    """CLI > config-file > default resolution for one subcommand."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.cmd = args.command
        self.table = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            with open(cfg_path, "rb") as fh:
                self.table = tomllib.load(fh)

    def get(self, key: str, default):
        cli = getattr(self.args, key.replace("-", "_"), None)
        if cli is not None:
            return cli
        sub = self.table.get(self.cmd, {})
        if isinstance(sub, dict) and key in sub:
            return sub[key]
        if key in self.table and not isinstance(self.table[key], dict):
            return self.table[key]
        return default


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master RNG seed (default 42)")
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out-dir", default=None, help="output directory (default .)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for per-segment solves (default 1)")


def _outdir(opt: _Options) -> Path:
    out = Path(opt.get("out-dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_mask(path) -> np.ndarray:
    return imagecore.load_image(path).luminance() > 0.5


def _load_role_dicts(opt: _Options, class_name: str):
    """Locate the (class, fg) and (class, bg) dictionaries."""
    fg_path = opt.get("fg-dict", None)
    bg_path = opt.get("bg-dict", None)
    dict_dir = opt.get("dict-dir", None)
    if fg_path is None and dict_dir is not None:
        fg_path = Path(dict_dir) / f"{class_name}_fg.ssrdict"
    if bg_path is None and dict_dir is not None:
        bg_path = Path(dict_dir) / f"{class_name}_bg.ssrdict"
    if fg_path is None or bg_path is None:
        raise ValueError(
            f"dictionaries for ({class_name!r}, 'fg') and ({class_name!r}, 'bg') "
            f"required: pass --fg-dict/--bg-dict or --dict-dir"
        )
    fg, bg = load_dictionary(fg_path), load_dictionary(bg_path)
    for d, want in ((fg, "fg"), (bg, "bg")):
        if d.role != want:
            raise ValueError(f"{want} dictionary file has role {d.role!r}")
    return fg, bg


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _read_manifest(path) -> list[tuple[str, str, str]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(
                    f"{path}:{ln}: expected 'image<TAB>mask<TAB>class', got {line!r}"
                )
            rows.append((parts[0], parts[1], parts[2]))
    if not rows:
        raise ValueError(f"{path}: empty manifest")
    return rows


def _gather_role_samples(rows, role, factor, patch_size, total, seed):
    quota = [total // len(rows)] * len(rows)
    for i in range(total % len(rows)):
        quota[i] += 1
    samples, usable = [], []
    for i, (img_path, mask_path, _) in enumerate(rows):
        if quota[i] == 0:
            continue
        hi = imagecore.load_image(img_path)
        mask = _load_mask(mask_path)
        if mask.shape != (hi.height, hi.width):
            raise ValueError(
                f"mask {mask_path} dims {mask.shape} do not match image "
                f"{img_path} dims {(hi.height, hi.width)}"
            )
        try:
            samples.extend(imagecore.sample_training_patches(
                hi, mask, factor, quota[i], patch_size, role,
                _child_seed(seed, role, i)))
            usable.append((hi, mask, i))
        except SamplingError as exc:
            print(f"note: skipping {img_path} for role {role}: {exc}", file=sys.stderr)
    if len(samples) < total and usable:
        hi, mask, i = usable[0]
        samples.extend(imagecore.sample_training_patches(
            hi, mask, factor, total - len(samples), patch_size, role,
            _child_seed(seed, role, "topup", i)))
    if not samples:
        raise SamplingError(f"no image provided any '{role}' patches")
    return samples


def cmd_train(opt: _Options) -> int:
    manifest = _read_manifest(opt.args.manifest)
    out = _outdir(opt)
    seed = int(opt.get("seed", 42))
    cfg = TrainingConfig(
        n_atoms=int(opt.get("atoms", 1024)),
        patches_per_role=int(opt.get("samples-per-role", 50000)),
        lambda_int=float(opt.get("lambda", 0.15)),
        epochs=int(opt.get("epochs", 10)),
        minibatch=int(opt.get("minibatch", 256)),
        patch_size=int(opt.get("patch-size", 3)),
        magnification=int(opt.get("magnification", 3)),
        rng_seed=seed,
    )
    by_class: dict[str, list] = {}
    for row in manifest:
        by_class.setdefault(row[2], []).append(row)

    for class_name, rows in by_class.items():
        for role in ("fg", "bg"):
            samples = _gather_role_samples(
                rows, role, cfg.magnification, cfg.patch_size,
                cfg.patches_per_role, _child_seed(seed, class_name))
            role_cfg = TrainingConfig(**{
                **cfg.__dict__, "rng_seed": _child_seed(seed, class_name, role, "train")})
            d = train_coupled_dictionary(samples, role_cfg, class_name, role)
            for ep, obj in enumerate(d.history.epoch_objectives, 1):
                print(f"[{class_name}/{role}] epoch {ep}: objective {obj:.6f}")
            path = out / f"{class_name}_{role}.ssrdict"
            save_dictionary(d, path)
            print(f"wrote {path} ({d.n_atoms} atoms)")
    return 0


# ---------------------------------------------------------------------------
# separate
# ---------------------------------------------------------------------------

def _run_separation(opt: _Options, img: RasterImage, class_name: str):
    fg_dict, bg_dict = _load_role_dicts(opt, class_name)
    mag = fg_dict.magnification
    mid = imagecore.upsample_bicubic(img, mag)

    seg_params = seglib.SegmentationParams(
        smoothing_sigma=float(opt.get("sigma", 0.8)),
        threshold_k=float(opt.get("k", 100.0 / 255.0)),
        min_segment_size=(int(opt.get("min-size", 0)) or None),
    )
    seg = seglib.oversegment(mid, seg_params)

    ball = opt.get("ball-radius", None)
    gmtl_cfg = gmtllib.GmtlConfig(
        C=(float(ball) if ball is not None else None),
        eta=(float(opt.get("eta", 0)) or None),
        max_iter=int(opt.get("max-iter", 200)),
        tol=float(opt.get("tol", 1e-6)),
    )
    patch_cfg = gmtllib.PatchConfig(
        patch_size=fg_dict.patch_size * mag,
        stride=int(opt.get("stride", mag)),
        max_per_segment=(int(opt.get("max-patches-per-segment", 0)) or None),
        seed=int(opt.get("seed", 42)),
    )
    fmap = gmtllib.separate_figure_ground(
        mid, seg, [fg_dict, bg_dict], class_name, gmtl_cfg, patch_cfg,
        threads=int(opt.get("threads", 1)))

    band = int(opt.get("band", 4))
    tri = mattinglib.trimap_from_map(fmap, seg.labels, band)
    if fmap.pixel_labels.all() or not fmap.pixel_labels.any():
        # uniform map: no boundary to refine, matte is the map itself
        print("note: figure-ground map is uniform; skipping matting",
              file=sys.stderr)
        matte = mattinglib.AlphaMatte(fmap.pixel_labels.astype(np.float64))
    else:
        matte = mattinglib.solve_matte(mid, tri, mattinglib.MattingParams(
            tol=float(opt.get("matting-tol", 1e-6)),
            max_iter=int(opt.get("matting-max-iter", 2000)),
        ))
    return mid, seg, fmap, matte, (fg_dict, bg_dict), patch_cfg


def cmd_separate(opt: _Options) -> int:
    img = imagecore.load_image(opt.args.image)
    class_name = opt.args.class_name
    out = _outdir(opt)
    mid, seg, fmap, matte, dicts, patch_cfg = _run_separation(opt, img, class_name)

    seglib.save_segment_png(seg, out / "segments.png")
    seglib.save_segment_labels(seg, out / "segments.ssrseg")
    gmtllib.save_figure_ground_png(fmap, out / "fgmap.png")
    gmtllib.save_figure_ground_csv(fmap, out / "fgmap.csv")
    mattinglib.save_matte_png(matte, out / "matte.png")
    print(f"{seg.count} segments, {int(fmap.labels.sum())} labeled fg; "
          f"matting {'converged' if matte.converged else 'did NOT converge'}")
    if opt.get("baseline", False):
        vote = gmtllib.lasso_vote_baseline(
            mid, seg, list(dicts), class_name,
            lambda_int=float(opt.get("lambda", 0.1)), patch_cfg=patch_cfg)
        gmtllib.save_figure_ground_png(vote, out / "baseline.png")
        gmtllib.save_figure_ground_csv(vote, out / "baseline.csv")
    print(f"outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# superres
# ---------------------------------------------------------------------------

def cmd_superres(opt: _Options) -> int:
    low = imagecore.load_image(opt.args.image)
    fg_path = opt.get("fg-dict", None)
    if fg_path is None and opt.get("dict-dir", None) and opt.get("class-name", None):
        fg_path = Path(opt.get("dict-dir", None)) / f"{opt.get('class-name', None)}_fg.ssrdict"
    if fg_path is None:
        raise ValueError("--fg-dict (or --dict-dir with --class-name) required")
    fg_dict = load_dictionary(fg_path)

    mag_flag = opt.get("magnification", None)
    if mag_flag is not None and int(mag_flag) != fg_dict.magnification:
        raise ValueError(
            f"--magnification {mag_flag} does not match dictionary "
            f"magnification {fg_dict.magnification}"
        )
    mag = fg_dict.magnification

    matte_path = opt.get("matte", None)
    if matte_path is not None:
        alpha = imagecore.load_image(matte_path).luminance()
    else:
        class_name = opt.get("class-name", None)
        if class_name is None:
            raise ValueError("--matte or (--class-name with dictionaries) required")
        _, _, _, matte, _, _ = _run_separation(opt, low, class_name)
        alpha = matte.alpha
    if alpha.shape == (low.height * mag, low.width * mag):
        alpha = alpha.reshape(low.height, mag, low.width, mag).mean(axis=(1, 3))
    elif alpha.shape != (low.height, low.width):
        raise ValueError(
            f"matte dims {alpha.shape} match neither low-res nor target dims"
        )

    cfg = srlib.SrConfig(
        magnification=mag,
        patch_size=fg_dict.patch_size,
        stride=int(opt.get("stride", 1)),
        lambda_int=float(opt.get("lambda", 0.1)),
        fg_threshold=float(opt.get("fg-threshold", 0.5)),
        backprojection_iters=int(opt.get("backprojection", 0)),
    )
    sr = srlib.super_resolve_region(low, alpha, fg_dict, cfg)
    out = _outdir(opt)
    imagecore.save_image(sr, out / "sr.png")
    print(f"wrote {out / 'sr.png'} ({sr.width}x{sr.height})")

    gt_path = opt.get("ground-truth", None)
    if gt_path is not None:
        gt = imagecore.load_image(gt_path)
        gt = RasterImage(gt.data[:sr.height, :sr.width])
        if gt.channels != sr.channels:
            gt = RasterImage(gt.luminance()) if sr.channels == 1 else gt
        bicubic = imagecore.upsample_bicubic(low, mag)
        print(f"PSNR vs ground truth: SR {srlib.psnr(sr, gt):.2f} dB, "
              f"bicubic {srlib.psnr(bicubic, gt):.2f} dB")
    return 0


# ---------------------------------------------------------------------------
# effect / dict-stats / synthbench
# ---------------------------------------------------------------------------

def _parse_pair(text: str) -> tuple[float, float]:
    a, b = (float(v) for v in text.split(","))
    return a, b


def cmd_effect(opt: _Options) -> int:
    img = imagecore.load_image(opt.args.image)
    alpha = imagecore.load_image(opt.args.matte).luminance()
    name = opt.args.name
    out = _outdir(opt)
    if name == "zoom-blur":
        center = opt.get("center", None)
        result = effectslib.zoom_blur(
            img, alpha, float(opt.get("strength", 0.5)),
            _parse_pair(center) if center else None)
    elif name == "popup":
        bg_spec = str(opt.get("background", "0.0"))
        if Path(bg_spec).exists():
            background = imagecore.load_image(bg_spec)
        else:
            vals = [float(v) for v in bg_spec.split(",")]
            background = vals[0] if len(vals) == 1 else np.array(vals)
        result = effectslib.object_popup(img, alpha, background)
    elif name == "compose":
        scene_path = opt.get("scene", None)
        if scene_path is None:
            raise ValueError("compose requires --scene")
        offset = opt.get("offset", "0,0")
        r, c = _parse_pair(offset)
        result = effectslib.compose(img, alpha, imagecore.load_image(scene_path),
                                    (int(r), int(c)))
    elif name == "emboss":
        result = effectslib.emboss_background(img, alpha)
    else:  # argparse choices guard this; belt and suspenders
        raise ValueError(f"unknown effect {name!r}; valid: zoom-blur, popup, compose, emboss")
    path = out / "effect.png"
    imagecore.save_image(result, path)
    print(f"wrote {path}")
    return 0


def cmd_dict_stats(opt: _Options) -> int:
    fg = load_dictionary(opt.args.fg_dict)
    bg = load_dictionary(opt.args.bg_dict)
    stats = dictionary_stats(fg, bg,
                             clusters=int(opt.get("clusters", 20)),
                             rng_seed=int(opt.get("seed", 42)))
    out = _outdir(opt)
    csv_path = out / "dict_stats.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "fg_count", "bg_count"])
        for i in range(stats.cluster_count):
            w.writerow([i, int(stats.fg_counts[i]), int(stats.bg_counts[i])])

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    x = np.arange(stats.cluster_count)
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(x - 0.2, stats.fg_counts, width=0.4, label="foreground")
    ax.bar(x + 0.2, stats.bg_counts, width=0.4, label="background")
    ax.set_xlabel("atom cluster")
    ax.set_ylabel("atoms")
    ax.legend()
    fig.tight_layout()
    png_path = out / "dict_stats.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    print(f"wrote {csv_path} and {png_path}")
    return 0


def cmd_synthbench(opt: _Options) -> int:
    if opt.args.action != "run-all":
        raise ValueError(f"unknown synthbench action {opt.args.action!r}; valid: run-all")
    rows = synthbench.run_all(int(opt.get("seed", 42)))
    width = max(len(name) for name, _, _ in rows)
    failures = 0
    for name, passed, detail in rows:
        status = "PASS" if passed else "FAIL"
        failures += not passed
        print(f"{status}  {name:<{width}}  {detail}")
    print(f"{len(rows) - failures}/{len(rows)} checks passed")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selsr",
        description="Selective super-resolution: train dictionaries, separate "
                    "figure from ground, super-resolve the object region, and "
                    "apply background effects.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train coupled fg/bg dictionaries per class")
    p.add_argument("manifest", help="UTF-8 lines: image<TAB>mask<TAB>class")
    p.add_argument("--atoms", type=int, default=None, help="atoms per dictionary (default 1024)")
    p.add_argument("--samples-per-role", type=int, default=None,
                   help="training patches per role (default 50000)")
    p.add_argument("--lambda-int", dest="lambda", type=float, default=None,
                   help="l1 weight for sparse coding (default 0.15)")
    p.add_argument("--epochs", type=int, default=None, help="training epochs (default 10)")
    p.add_argument("--minibatch", type=int, default=None, help="minibatch size (default 256)")
    p.add_argument("--patch-size", type=int, default=None, help="low-res patch side (default 3)")
    p.add_argument("--magnification", type=int, default=None, help="SR factor (default 3)")
    _add_shared(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("separate", help="figure-ground separation + matting")
    p.add_argument("image", help="low-resolution input image")
    p.add_argument("class_name", help="object class of the dictionaries")
    p.add_argument("--dict-dir", default=None, help="directory with <class>_<role>.ssrdict files")
    p.add_argument("--fg-dict", default=None, help="explicit fg dictionary file")
    p.add_argument("--bg-dict", default=None, help="explicit bg dictionary file")
    p.add_argument("--sigma", type=float, default=None, help="segmentation smoothing (default 0.8)")
    p.add_argument("--k", type=float, default=None, help="segmentation threshold (default 100/255)")
    p.add_argument("--min-size", type=int, default=None,
                   help="min segment size (default pixels/1000)")
    p.add_argument("--ball-radius", type=float, default=None,
                   help="GMTL l1,2 budget C (default 0.1*K*sqrt(mean group size))")
    p.add_argument("--eta", type=float, default=None,
                   help="GMTL step size (default 0.9/sigma_max)")
    p.add_argument("--max-iter", type=int, default=None, help="GMTL iterations (default 200)")
    p.add_argument("--tol", type=float, default=None, help="GMTL relative tolerance (default 1e-6)")
    p.add_argument("--stride", type=int, default=None,
                   help="patch stride at feature scale (default magnification)")
    p.add_argument("--max-patches-per-segment", type=int, default=None,
                   help="cap task count per segment (default unlimited)")
    p.add_argument("--band", type=int, default=None, help="unknown trimap band (default 4)")
    p.add_argument("--baseline", action="store_true", default=None,
                   help="also write the patch-wise lasso voting map")
    _add_shared(p)
    p.set_defaults(func=cmd_separate)

    p = sub.add_parser("superres", help="selective SR of the matted region")
    p.add_argument("image", help="low-resolution input image")
    p.add_argument("--matte", default=None, help="alpha matte PNG (low-res or target scale)")
    p.add_argument("--fg-dict", default=None, help="foreground dictionary file")
    p.add_argument("--dict-dir", default=None, help="directory with dictionaries")
    p.add_argument("--class-name", default=None,
                   help="class for inline separation when --matte is absent")
    p.add_argument("--bg-dict", default=None, help="bg dictionary (inline separation)")
    p.add_argument("--magnification", type=int, default=None,
                   help="must match the dictionary when given")
    p.add_argument("--stride", type=int, default=None, help="low-res patch stride (default 1)")
    p.add_argument("--lambda-int", dest="lambda", type=float, default=None,
                   help="l1 weight for patch coding (default 0.1)")
    p.add_argument("--fg-threshold", type=float, default=None,
                   help="alpha coverage threshold (default 0.5)")
    p.add_argument("--backprojection", type=int, default=None,
                   help="iterative backprojection steps (default 0, disabled)")
    p.add_argument("--ground-truth", default=None, help="report PSNR against this image")
    p.add_argument("--band", type=int, default=None, help=argparse.SUPPRESS)
    _add_shared(p)
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("effect", help="background/foreground visual effects")
    p.add_argument("name", choices=["zoom-blur", "popup", "compose", "emboss"],
                   help="effect to apply")
    p.add_argument("image", help="input image (typically the SR output)")
    p.add_argument("matte", help="alpha matte PNG at the same scale")
    p.add_argument("--strength", type=float, default=None, help="zoom-blur strength (default 0.5)")
    p.add_argument("--center", default=None, help="zoom-blur center 'row,col' (default image center)")
    p.add_argument("--background", default=None,
                   help="popup background: gray value, 'r,g,b', or image path (default 0.0)")
    p.add_argument("--scene", default=None, help="compose target scene image")
    p.add_argument("--offset", default=None, help="compose offset 'row,col' (default 0,0)")
    _add_shared(p)
    p.set_defaults(func=cmd_effect)

    p = sub.add_parser("dict-stats", help="cluster fg/bg atoms and plot counts")
    p.add_argument("fg_dict", help="foreground dictionary file")
    p.add_argument("bg_dict", help="background dictionary file")
    p.add_argument("--clusters", type=int, default=None, help="cluster count (default 20)")
    _add_shared(p)
    p.set_defaults(func=cmd_dict_stats)

    p = sub.add_parser("synthbench", help="oracle/property verification table")
    p.add_argument("action", choices=["run-all"], help="what to run")
    _add_shared(p)
    p.set_defaults(func=cmd_synthbench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(_Options(args))
    except (SelsrError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
