"""Command-line front door: render stills and tracks, edit textures, swap
hair, export point clouds, fit textures to images, and benchmark the
rasterizers.

Exit codes: 0 ok, 2 usage, 3 asset/validation failure, 4 numeric failure.
Every failure prints a single ``error: ...`` line to stderr.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time

import numpy as np

from . import assets, engine
from .errors import AssetError, NumericError
from .gaussgen import GaussianCloud
from .gradients import FitConfig, FitTarget, ParamSet, fit_textures, history_to_csv
from .shading import DEFAULT_OCCLUSION
from .splatter import DEFAULT_CONFIG, rasterize, rasterize_reference

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ASSET = 3
EXIT_NUMERIC = 4


class _Parser(argparse.ArgumentParser):
    """Argparse with the single-line error contract."""

    def error(self, message):
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _configs(args):
    if args.config:
        return assets.load_config(args.config)
    return DEFAULT_CONFIG, DEFAULT_OCCLUSION


def _default_track(bundle, size):
    return assets.SceneTrack(
        cameras=[engine.default_camera(bundle.rig, size)],
        params=[bundle.params],
        lighting=[bundle.lighting],
        resolution=size,
    )


def cmd_render(args) -> int:
    bundle = assets.load_bundle(args.bundle)
    raster, occlusion = _configs(args)
    if args.scene:
        track = assets.load_scene(
            args.scene, default_params=bundle.params,
            default_lighting=bundle.lighting, size=args.size,
        )
    else:
        track = _default_track(bundle, args.size)
    avatar = engine.Avatar(bundle, raster, occlusion)
    frames = engine.render_track(avatar, track, use_cache=args.cache, jobs=max(1, args.jobs))

    os.makedirs(args.out, exist_ok=True)
    for i, frame in enumerate(frames):
        assets.save_png(os.path.join(args.out, f"frame_{i:04d}.png"), frame.image)
        if args.dump_buffers:
            assets.dump_buffers(os.path.join(args.out, f"buffers_{i:04d}"), frame.buffers)
    print(f"wrote {len(frames)} frame(s) to {args.out}")
    return EXIT_OK


def cmd_edit(args) -> int:
    bundle = assets.load_bundle(args.bundle)
    patch = assets.load_png(args.patch)
    engine.apply_texture_edit(bundle.textures, patch, args.rect)
    assets.save_bundle(bundle, args.out)
    print(f"pasted {os.path.basename(args.patch)} into {args.out}")
    return EXIT_OK


def cmd_swap_hair(args) -> int:
    bundle = assets.load_bundle(args.bundle)
    donor = assets.load_bundle(args.donor)
    assets.save_bundle(engine.swap_hair(bundle, donor), args.out)
    print(f"wrote {args.out} with hair from {os.path.basename(args.donor)}")
    return EXIT_OK


def cmd_export_ply(args) -> int:
    bundle = assets.load_bundle(args.bundle)
    raster, occlusion = _configs(args)
    cloud = engine.Avatar(bundle, raster, occlusion).build_cloud(bundle.params)
    assets.export_ply(cloud, args.out)
    print(f"wrote {len(cloud)} gaussians to {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    bundle = assets.load_bundle(args.bundle)
    track = assets.load_scene(
        args.scene, default_params=bundle.params, default_lighting=bundle.lighting
    )
    files = sorted(glob.glob(os.path.join(args.targets, "frame_*.png")))
    if len(files) != len(track):
        raise AssetError(
            f"scene has {len(track)} frame(s) but {args.targets} holds "
            f"{len(files)} target image(s)"
        )
    targets = [
        FitTarget(image=assets.load_png(path), cam=cam, pose=pose)
        for path, cam, pose in zip(files, track.cameras, track.params)
    ]
    init = ParamSet.from_parts(bundle.textures, bundle.lighting)
    best, history = fit_textures(
        targets, bundle.rig, init, FitConfig(iters=args.iters),
        hair=(bundle.decoder, bundle.triplane), bg=engine.DEFAULT_BACKGROUND,
    )
    bundle.textures = best.textures()
    bundle.lighting = best.lighting()
    assets.save_bundle(bundle, args.out)
    if args.history:
        history_to_csv(history, args.history)
    print(
        f"fit {len(history)} iteration(s): loss {history[0].total:.6g} -> "
        f"{min(r.total for r in history):.6g}, wrote {args.out}"
    )
    return EXIT_OK


def _resample_cloud(cloud: GaussianCloud, n: int, rng) -> GaussianCloud:
    """Benchmark cloud of exactly n points: seeded resample plus position
    jitter so duplicates do not collapse onto identical pixels."""
    idx = rng.integers(0, len(cloud), n)
    out = GaussianCloud(
        mu=cloud.mu[idx] + rng.normal(scale=2e-3, size=(n, 3)),
        normal=cloud.normal[idx].copy(),
        color=cloud.color[idx].copy(),
        scale=cloud.scale[idx].copy(),
        quat=cloud.quat[idx].copy(),
        opacity=cloud.opacity[idx].copy(),
        group=cloud.group[idx].copy(),
    )
    return out


def cmd_bench(args) -> int:
    bundle = assets.load_bundle(args.bundle)
    raster, occlusion = _configs(args)
    try:
        sizes = [int(tok) for tok in args.sizes.split(",") if tok.strip()]
    except ValueError:
        raise AssetError(f"--sizes must be comma-separated integers, got {args.sizes!r}")
    if not sizes or min(sizes) < 1:
        raise AssetError(f"--sizes must be positive, got {args.sizes!r}")

    base = engine.Avatar(bundle, raster, occlusion).build_cloud(bundle.params)
    cam = engine.default_camera(bundle.rig, args.size)
    rng = np.random.default_rng(args.seed)

    # one tiny warmup render per rasterizer so compilation stays out of timings
    small = _resample_cloud(base, min(256, len(base)), rng)
    rasterize(small, cam, raster)
    rasterize_reference(small, cam, raster)

    rows = []
    for n in sizes:
        cloud = _resample_cloud(base, n, rng)
        for name, fn in (("tile", rasterize), ("reference", rasterize_reference)):
            times = []
            for _ in range(args.reps):
                start = time.perf_counter()
                fn(cloud, cam, raster)
                times.append((time.perf_counter() - start) * 1e3)
            rows.append(
                {"rasterizer": name, "points": n, "median_ms": float(np.median(times))}
            )

    if args.as_json:
        report = json.dumps(
            {"image_size": args.size, "reps": args.reps, "results": rows}, indent=2
        )
    else:
        lines = ["rasterizer,points,median_ms"]
        lines += [f"{r['rasterizer']},{r['points']},{r['median_ms']:.3f}" for r in rows]
        report = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
    else:
        print(report)
    return EXIT_OK


def cmd_make_desk_rig(args) -> int:
    bundle = assets.make_desk_bundle(seed=args.seed, t_tex=args.t_tex, n_hair=args.n_hair)
    assets.save_bundle(bundle, args.out)
    print(f"wrote desk avatar bundle to {args.out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="gausshead", description="Editable Gaussian head avatars.")
    parser.add_argument("--seed", type=int, default=0, help="seed for randomized steps")
    parser.add_argument("--jobs", type=int, default=1, help="parallel frames per track")
    parser.add_argument("--config", help="TOML file with [raster]/[occlusion] tables")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add_render(name, help_, scene_required):
        p = sub.add_parser(name, help=help_)
        p.add_argument("bundle", help="avatar bundle file")
        p.add_argument("scene", nargs=None if scene_required else "?",
                       help="JSON scene of frames")
        p.add_argument("-o", "--out", required=True, help="output directory")
        p.add_argument("--size", type=int, default=512,
                       help="image size when the scene does not set one")
        p.add_argument("--dump-buffers", action="store_true",
                       help="write per-frame buffer dumps beside the PNGs")
        p.add_argument("--cache", dest="cache", action="store_true", default=True,
                       help="reuse cached point attributes across frames (default)")
        p.add_argument("--no-cache", dest="cache", action="store_false",
                       help="regenerate all attributes every frame")
        p.set_defaults(func=cmd_render)

    add_render("render", "render a scene (or one default frame) to PNGs", False)
    add_render("animate", "render a parameter track to an image sequence", True)

    p = sub.add_parser("edit", help="paste a PNG patch into the albedo map")
    p.add_argument("bundle")
    p.add_argument("patch", help="image pasted over the uv rectangle")
    p.add_argument("--rect", type=float, nargs=4, required=True,
                   metavar=("U0", "V0", "U1", "V1"))
    p.add_argument("-o", "--out", required=True, help="output bundle")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("swap-hair", help="replace hair with another bundle's")
    p.add_argument("bundle", help="keeps face, textures, pose, lighting")
    p.add_argument("donor", help="provides the hair decoder and feature planes")
    p.add_argument("-o", "--out", required=True, help="output bundle")
    p.set_defaults(func=cmd_swap_hair)

    p = sub.add_parser("export-ply", help="export the gaussian cloud as PLY")
    p.add_argument("bundle")
    p.add_argument("-o", "--out", required=True, help="output .ply path")
    p.set_defaults(func=cmd_export_ply)

    p = sub.add_parser("fit", help="fit textures and lighting to target images")
    p.add_argument("bundle", help="initial textures, rig, and hair")
    p.add_argument("scene", help="scene whose frames match the targets")
    p.add_argument("targets", help="directory of frame_*.png target images")
    p.add_argument("-o", "--out", required=True, help="output bundle")
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--history", help="write the loss history CSV here")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="time the tile and reference rasterizers")
    p.add_argument("bundle")
    p.add_argument("--sizes", default="10000,50000",
                   help="comma-separated cloud sizes")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--size", type=int, default=512, help="render resolution")
    p.add_argument("--json", dest="as_json", action="store_true",
                   help="emit a JSON report instead of CSV")
    p.add_argument("-o", "--out", help="write the report to a file")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-desk-rig", help="write the procedural demo bundle")
    p.add_argument("-o", "--out", required=True, help="output bundle")
    p.add_argument("--t-tex", type=int, default=256, help="texture resolution")
    p.add_argument("--n-hair", type=int, default=1024, help="hair point count")
    p.set_defaults(func=cmd_make_desk_rig)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage error or --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AssetError as exc:  # includes ValidationError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSET
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSET


if __name__ == "__main__":
    raise SystemExit(main())
