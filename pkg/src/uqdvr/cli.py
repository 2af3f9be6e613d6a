"""Command-line interface: the full pipeline as reproducible subcommands."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import presets, render, volcore
from .classify import load_tf1d, load_tf2d
from .density import KdeConfig, build_distribution_volume, downsample_hixel, quantile_volumes_multi
from .render import Camera, RenderJob, diff_image, load_image_f32, raycast, render_quartile_views, save_image
from .synth import NoiseSpec, load_ensemble, make_ensemble, sample_field, save_ensemble
from .volcore import (
    DistributionVolume,
    MeanFieldModel,
    ScalarGrid,
    VolumeError,
    load_raw,
    load_volume,
    save_dvol,
    save_qvol,
    save_raw,
)


def _stage(msg: str) -> None:
    print(msg, file=sys.stderr)


def parse_dims(text: str) -> tuple[int, int, int]:
    parts = text.replace("x", ",").split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims need three values, got {text!r}")
    return tuple(int(p) for p in parts)


def parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().replace("x", ",").split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"size needs WxH, got {text!r}")
    return int(parts[0]), int(parts[1])


def parse_noise(text: str, members: int, seed: int) -> NoiseSpec:
    kind, _, rest = text.partition(":")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not val:
                raise argparse.ArgumentTypeError(f"bad noise option {item!r}")
            kwargs[key.strip()] = float(val)
    try:
        return NoiseSpec(kind=kind.strip(), members=members, seed=seed, **kwargs)
    except (TypeError, VolumeError) as e:
        raise argparse.ArgumentTypeError(f"bad noise spec {text!r}: {e}") from e


def parse_camera(text: str, volume, width: int, height: int) -> Camera:
    if text.startswith("preset:"):
        return presets.preset_camera(text.split(":", 1)[1], volume, width, height)
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 10:
        raise VolumeError("camera needs 10 values: eye, look-at, up, fov")
    return Camera(tuple(vals[0:3]), tuple(vals[3:6]), tuple(vals[6:9]),
                  vals[9], width, height)


def resolve_tf1d(text: str):
    if text.startswith("preset:"):
        return presets.preset_tf1d(text.split(":", 1)[1])
    return load_tf1d(text)


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("UQDVR_THREADS")
    return int(env) if env else 1


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args) -> int:
    gt = sample_field(args.field, args.dims)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_raw(gt, out / "gt.f32raw", "f32")
    spec = parse_noise(args.noise, args.members, args.seed)
    _stage(f"gen: field={args.field} dims={args.dims} members={spec.members}")
    ens = make_ensemble(gt, spec)
    save_ensemble(ens, out, spec, field=args.field)
    return 0


def cmd_estimate(args) -> int:
    threads = _threads(args)
    cfg = KdeConfig(lattice=args.kde_lattice)
    if args.brick is not None:
        if args.volume is None or args.dims is None:
            raise VolumeError("hixel estimation needs --volume and --dims")
        hi = load_raw(args.volume, args.dims, args.encoding)
        _stage(f"estimate: hixel {args.model} brick={args.brick}")
        vol, mean_grid = downsample_hixel(hi, args.brick, args.model, qval=args.qval,
                                          k=args.k, seed=args.seed, config=cfg,
                                          threads=threads)
        save_raw(mean_grid, Path(args.out).with_suffix(".mean.f32raw"), "f32")
    else:
        if args.ensemble is None:
            raise VolumeError("estimation needs --ensemble or --volume with --brick")
        ens = load_ensemble(args.ensemble)
        _stage(f"estimate: {args.model} from M={ens.member_count} ensemble")
        vol = build_distribution_volume(ens, args.model, qval=args.qval, k=args.k,
                                        seed=args.seed, config=cfg, threads=threads)
    if isinstance(vol.model, volcore.QuantileModel):
        save_qvol(vol, args.out)
    else:
        save_dvol(vol, args.out)
    return 0


def _volume_for_render(args) -> DistributionVolume:
    return load_volume(args.volume, dims=args.dims, encoding=args.encoding)


def _job_from_args(args, volume) -> RenderJob:
    width, height = args.size
    cam = parse_camera(args.camera, volume, width, height)
    tf = resolve_tf1d(args.tf) if args.tf else None
    tf2 = load_tf2d(args.tf2d) if args.tf2d else None
    mean_grid = None
    if args.mean_volume:
        mg = load_raw(args.mean_volume, volume.dims, "f32",
                      volume.spacing, volume.origin)
        mean_grid = mg
    return RenderJob(volume, args.scheme, cam, tf=tf, tf2=tf2, step=args.step,
                     seed=args.seed, mean_grid=mean_grid,
                     mc_samples=args.mc_samples, tf2d_samples=args.tf2d_samples)


def cmd_render(args) -> int:
    volume = _volume_for_render(args)
    job = _job_from_args(args, volume)
    _stage(f"render: scheme={args.scheme} size={args.size[0]}x{args.size[1]}")
    img = raycast(job, threads=_threads(args))
    save_image(img, args.out)
    return 0


def cmd_quartiles(args) -> int:
    volume = _volume_for_render(args)
    args.scheme = "quantile-range"
    job = _job_from_args(args, volume)
    _stage("quartiles: lower / middle / upper")
    views = render_quartile_views(volume, job, threads=_threads(args))
    out = Path(args.out)
    for name, img in zip(("lower", "middle", "upper"), views):
        save_image(img, out.with_suffix(f".{name}{out.suffix or '.ppm'}"))
    return 0


def cmd_diff(args) -> int:
    img = load_image_f32(args.img)
    ref = load_image_f32(args.ref)
    diff, rmse = diff_image(img, ref, scale=args.scale)
    if args.out:
        save_image(diff, args.out)
    print(f"rmse={rmse:.6g}")
    return 0


# ---------------------------------------------------------------------------
# Experiment pipeline


def _resolve_manifest_camera(manifest, volume, width, height) -> Camera:
    cam = manifest.get("camera", "preset:tangle")
    if isinstance(cam, str):
        return parse_camera(cam, volume, width, height)
    return parse_camera(",".join(str(v) for v in cam), volume, width, height)


def _resolve_manifest_tf(manifest):
    tf = manifest.get("tf", "preset:tangle")
    return resolve_tf1d(tf)


def _mean_volume(grid: ScalarGrid) -> DistributionVolume:
    return DistributionVolume(grid.dims, grid.spacing, grid.origin,
                              MeanFieldModel(grid.values))


def run_experiment(manifest: dict, outdir, threads: int = 1) -> list[dict]:
    """Execute a manifest end to end; returns the result rows and writes
    images plus results.csv (scheme, q, M, rmse) under outdir."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    mode = manifest.get("mode", "ensemble")
    field = manifest["field"]
    dims = tuple(manifest["dims"])
    width, height = manifest.get("size", [256, 256])
    step = manifest.get("step", 0.5)
    seed = manifest.get("seed", 0)
    qvals = [float(q) for q in manifest.get("qvals", [])]
    models = list(manifest.get("models", []))
    qschemes = list(manifest.get("quantile_schemes", ["quantile-mean"]))
    cfg = KdeConfig(bandwidth=manifest.get("kde_bandwidth", "auto"),
                    lattice=int(manifest.get("kde_lattice", 512)))

    gt = sample_field(field, dims)
    tf = _resolve_manifest_tf(manifest)

    rows: list[dict] = []

    def render_to(tag, volume, scheme, camera):
        job = RenderJob(volume, scheme, camera, tf=tf, step=step, seed=seed)
        img = raycast(job, threads=threads)
        save_image(img, outdir / f"{tag}.ppm")
        return img

    if mode == "ensemble":
        gt_vol = _mean_volume(gt)
        camera = _resolve_manifest_camera(manifest, gt_vol, width, height)
        _stage("experiment: rendering ground truth")
        ref = render_to("ground_truth", gt_vol, "mean", camera)
        noise_cfg = dict(manifest.get("noise", {"kind": "bimodal"}))
        kind = noise_cfg.pop("kind")
        for m in manifest.get("members", [50]):
            spec = NoiseSpec(kind=kind, members=int(m), seed=seed, **noise_cfg)
            _stage(f"experiment: M={m} ensemble")
            ens = make_ensemble(gt, spec)
            for model in models:
                scheme = {"mean": "mean", "uniform": "uniform", "gaussian": "gaussian",
                          "gmm-ordered": "gmm-ordered", "gmm-mc": "gmm-mc"}[model]
                vkind = "gmm" if model.startswith("gmm") else model
                vol = build_distribution_volume(ens, vkind, k=manifest.get("k", 4),
                                                seed=seed, config=cfg, threads=threads)
                _stage(f"experiment: render {scheme} M={m}")
                img = render_to(f"{scheme}_m{m}", vol, scheme, camera)
                _, rmse = diff_image(img, ref)
                rows.append({"scheme": scheme, "q": "", "M": m, "rmse": rmse})
            if qvals:
                _stage(f"experiment: quantile volumes M={m}")
                qvols = quantile_volumes_multi(ens, qvals, config=cfg, threads=threads)
                for qv in qvals:
                    q = int(round(1.0 / qv))
                    for scheme in qschemes:
                        _stage(f"experiment: render {scheme} q={q} M={m}")
                        img = render_to(f"{scheme}_q{q}_m{m}", qvols[qv], scheme, camera)
                        _, rmse = diff_image(img, ref)
                        rows.append({"scheme": scheme, "q": q, "M": m, "rmse": rmse})
    elif mode == "hixel":
        brick = tuple(manifest.get("brick", [4, 4, 4]))
        hi_vol = _mean_volume(gt)
        camera = _resolve_manifest_camera(manifest, hi_vol, width, height)
        _stage("experiment: rendering full-resolution reference")
        ref = render_to("full_resolution", hi_vol, "mean", camera)
        m = brick[0] * brick[1] * brick[2]
        for model in models:
            vol, mean_grid = downsample_hixel(gt, brick, model, k=manifest.get("k", 4),
                                              seed=seed, config=cfg, threads=threads)
            scheme = model
            _stage(f"experiment: render hixel {scheme}")
            img = render_to(f"hixel_{scheme}", vol, scheme, camera)
            _, rmse = diff_image(img, ref)
            rows.append({"scheme": scheme, "q": "", "M": m, "rmse": rmse})
        for qv in qvals:
            vol, _ = downsample_hixel(gt, brick, "quantile", qval=qv, seed=seed,
                                      config=cfg, threads=threads)
            q = int(round(1.0 / qv))
            for scheme in qschemes:
                _stage(f"experiment: render hixel {scheme} q={q}")
                img = render_to(f"hixel_{scheme}_q{q}", vol, scheme, camera)
                _, rmse = diff_image(img, ref)
                rows.append({"scheme": scheme, "q": q, "M": m, "rmse": rmse})
    else:
        raise VolumeError(f"unknown experiment mode {mode!r}")

    with open(outdir / "results.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["scheme", "q", "M", "rmse"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row, "rmse": f"{row['rmse']:.8f}"})
    return rows


def cmd_experiment(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    rows = run_experiment(manifest, args.out, threads=_threads(args))
    for row in rows:
        print(f"scheme={row['scheme']} q={row['q']} M={row['M']} rmse={row['rmse']:.6f}")
    return 0


# ---------------------------------------------------------------------------
# Argument wiring


def _add_common_render_args(p):
    p.add_argument("--volume", required=True, help="QVOL1/DVOL1/raw volume file")
    p.add_argument("--dims", type=parse_dims, default=None,
                   help="dims for raw volume input")
    p.add_argument("--encoding", default="f32", choices=sorted(volcore.RAW_ENCODINGS))
    p.add_argument("--tf", default=None, help="TF1D path or preset:NAME")
    p.add_argument("--tf2d", default=None, help="TF2D table path")
    p.add_argument("--mean-volume", default=None,
                   help="companion mean raw f32 volume (tf2d scheme)")
    p.add_argument("--camera", default="preset:tangle",
                   help="'ex,ey,ez,ax,ay,az,ux,uy,uz,fov' or preset:NAME")
    p.add_argument("--size", type=parse_size, default=(256, 256), help="image WxH")
    p.add_argument("--step", type=float, default=0.5,
                   help="step as a fraction of voxel spacing")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mc-samples", type=int, default=64)
    p.add_argument("--tf2d-samples", type=int, default=1024)
    p.add_argument("--out", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uqdvr",
                                 description="Uncertainty-aware DVR with quantile interpolation")
    ap.add_argument("--threads", type=int, default=None,
                    help="worker threads (or env UQDVR_THREADS); output is identical for any value")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic field and noisy ensemble")
    g.add_argument("--field", required=True,
                   help="tangle | teardrop | nested-spheres | linear(a,b,c) | constant(c)")
    g.add_argument("--dims", type=parse_dims, required=True)
    g.add_argument("--members", type=int, default=50)
    g.add_argument("--noise", default="bimodal",
                   help="kind[:k=v,...] with kind in gaussian|uniform|bimodal")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    e = sub.add_parser("estimate", help="fit per-voxel models from an ensemble or bricks")
    e.add_argument("--ensemble", default=None, help="ensemble directory from gen")
    e.add_argument("--volume", default=None, help="raw volume for hixel downsampling")
    e.add_argument("--dims", type=parse_dims, default=None)
    e.add_argument("--encoding", default="f32", choices=sorted(volcore.RAW_ENCODINGS))
    e.add_argument("--brick", type=parse_dims, default=None)
    e.add_argument("--model", required=True,
                   choices=["mean", "uniform", "gaussian", "gmm", "quantile", "samples"])
    e.add_argument("--qval", type=float, default=None)
    e.add_argument("--k", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--kde-lattice", type=int, default=512)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_estimate)

    r = sub.add_parser("render", help="raycast a volume with a chosen scheme")
    r.add_argument("--scheme", required=True, choices=render.SCHEMES)
    _add_common_render_args(r)
    r.set_defaults(func=cmd_render)

    q = sub.add_parser("quartiles", help="lower/middle/upper quartile views")
    _add_common_render_args(q)
    q.set_defaults(func=cmd_quartiles)

    d = sub.add_parser("diff", help="difference image and RMSE between f32 sidecars")
    d.add_argument("--img", required=True)
    d.add_argument("--ref", required=True)
    d.add_argument("--scale", type=float, default=None)
    d.add_argument("--out", default=None)
    d.set_defaults(func=cmd_diff)

    x = sub.add_parser("experiment", help="run a JSON experiment manifest")
    x.add_argument("--manifest", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except VolumeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
