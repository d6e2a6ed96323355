"""Command-line front end: synthesize, render, optimize, relight and edit scenes.

Every scene directory holds a ``manifest.json`` naming its grid, light,
cameras and (optionally) images. Exit codes: 0 success, 2 input error,
3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .camera import load_cameras, psnr, read_pfm, save_cameras, write_pfm, write_png
from .field import GridFormatError, decode_appearance, load_grid, save_grid
from .inverse import (OptimizationDiverged, OptimizeConfig, TrainView, optimize, render_views_psnr,
                      write_history)
from .lighting import EnvFormatError, compute_visibility_field, load_env_sg, save_env_sg
from .phase import ConfigurationError, PhaseWeights
from .renderer import RenderSettings, render_image
from .scenes import PRESETS, UnknownPresetError, make_preset, relight_env

log = logging.getLogger("microflake")

MANIFEST_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    """Bad user input: missing files, unknown ids, malformed manifests."""


# -- manifest ------------------------------------------------------------------

def write_manifest(out, grid_file, env_file, cameras_file, images=None, settings=None, extra=None):
    m = {"version": MANIFEST_VERSION, "grid": grid_file, "env": env_file, "cameras": cameras_file,
         "images": list(images or []), "settings": dict(settings or {})}
    m.update(extra or {})
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(m, indent=2) + "\n")
    return path


def read_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"manifest {path} is not valid JSON: {exc}") from exc
    if m.get("version") != MANIFEST_VERSION:
        raise InputError(f"manifest {path} has version {m.get('version')!r}, expected {MANIFEST_VERSION}")
    root = path.parent
    for key in ("grid", "env", "cameras"):
        if key not in m:
            raise InputError(f"manifest {path} lacks the {key!r} entry")
    files = [m["grid"], m["env"], m["cameras"]] + list(m.get("images", []))
    for f in files:
        if not (root / f).is_file():
            raise InputError(f"file referenced by manifest is missing: {root / f}")
    m["root"] = root
    return m


def load_scene(m):
    root = m["root"]
    grid, decoder = load_grid(root / m["grid"])
    env = load_env_sg(root / m["env"])
    cams = load_cameras(root / m["cameras"])
    return grid, decoder, env, cams


# -- helpers ---------------------------------------------------------------------

def _settings(args, manifest=None, **kw):
    base = dict(manifest.get("settings", {})) if manifest else {}
    cfg = _load_config(args)
    for key in ("steps_per_ray", "visibility_mode"):
        if key in cfg:
            base[key] = cfg[key]
    base.update(kw)
    return RenderSettings(threads=args.threads, deterministic=args.deterministic, **base)


def _load_config(args):
    if not args.config:
        return {}
    p = Path(args.config)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"config {p} is not valid JSON: {exc}") from exc


def _select_cameras(cams, which):
    if which in (None, "all"):
        return list(enumerate(cams))
    try:
        i = int(which)
    except ValueError:
        raise InputError(f"camera id {which!r} is not an integer or 'all'") from None
    if not 0 <= i < len(cams):
        raise InputError(f"camera id {i} out of range (scene has {len(cams)} cameras)")
    return [(i, cams[i])]


def _write_views(out, images, prefix="view"):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, img in images:
        write_pfm(out / f"{prefix}_{i:03d}.pfm", img)
        write_png(out / f"{prefix}_{i:03d}.png", img)
        names.append(f"{prefix}_{i:03d}.pfm")
    return names


def _render_all(grid, decoder, env, cams, settings):
    vis = compute_visibility_field(grid, settings.specular_directions(env))
    return [(i, render_image(grid, decoder, c, env, vis, settings)) for i, c in cams]


def _floats(text, n, what):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise InputError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise InputError(f"{what} must be {n} comma-separated numbers, got {len(vals)}")
    return vals


# -- commands --------------------------------------------------------------------

def cmd_make_synthetic(args):
    if args.preset not in PRESETS:
        raise UnknownPresetError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
    grid, decoder, env, cams = make_preset(args.preset, n_views=args.views, resolution=args.resolution,
                                           image_size=args.image_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = _settings(args, steps_per_ray=args.steps)
    save_grid(grid, decoder, out / "grid.bin")
    save_env_sg(env, out / "env.sg")
    save_env_sg(relight_env(len(env)), out / "relight_env.sg")
    save_cameras(cams, out / "cameras.json")
    # render what was written, so a later `render` of this directory reproduces the views
    grid, decoder = load_grid(out / "grid.bin")
    env = load_env_sg(out / "env.sg")
    images = _render_all(grid, decoder, env, list(enumerate(cams)), settings)
    names = _write_views(out / "views", images)
    write_manifest(out, "grid.bin", "env.sg", "cameras.json", [f"views/{n}" for n in names],
                   {"steps_per_ray": settings.steps_per_ray, "visibility_mode": settings.visibility_mode},
                   {"preset": args.preset, "seed": args.seed})
    print(f"wrote {len(images)} views of preset {args.preset} to {out}")
    return EXIT_OK


def cmd_render(args):
    m = read_manifest(args.manifest)
    grid, decoder, env, cams = load_scene(m)
    sel = _select_cameras(cams, args.camera)
    images = _render_all(grid, decoder, env, sel, _settings(args, m))
    _write_views(args.out, images)
    print(f"rendered {len(images)} view(s) to {args.out}")
    return EXIT_OK


def cmd_optimize(args):
    m = read_manifest(args.manifest)
    _, _, env, cams = load_scene(m)
    if not m.get("images"):
        raise InputError("manifest lists no training images")
    if len(m["images"]) != len(cams):
        raise InputError(f"manifest has {len(m['images'])} images for {len(cams)} cameras")
    views = [TrainView(c, read_pfm(m["root"] / f)) for c, f in zip(cams, m["images"])]
    cfg_dict = _load_config(args)
    cfg_dict.setdefault("steps_per_ray", m.get("settings", {}).get("steps_per_ray", OptimizeConfig.steps_per_ray))
    cfg_dict.setdefault("visibility_mode", m.get("settings", {}).get("visibility_mode", "sg-fit"))
    cfg_dict.setdefault("seed", args.seed)
    if args.iterations is not None:
        cfg_dict["iterations"] = args.iterations
    if args.fixed_light:
        cfg_dict["learn_light"] = False
    if args.checkpoint_every is not None:
        cfg_dict["checkpoint_every"] = args.checkpoint_every
    try:
        cfg = OptimizeConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid optimize config: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")

    def progress(it, b):
        if it % 100 == 0:
            log.info("iter %d  L_c %.3e  total %.3e", it, b.L_c, b.total)

    grid, decoder, env_fit, vis, history = optimize(
        views, cfg, env_init=env, checkpoint_dir=out / "checkpoints",
        resume=args.resume, callback=progress)
    write_history(history, out / "history.csv")
    save_grid(grid, decoder, out / "grid.bin")
    save_env_sg(env_fit, out / "env.sg")
    save_cameras(cams, out / "cameras.json")
    settings = cfg.render_settings(threads=args.threads, deterministic=args.deterministic)
    final = render_views_psnr(grid, decoder, env_fit, vis, views, settings)
    write_manifest(out, "grid.bin", "env.sg", "cameras.json", [],
                   {"steps_per_ray": cfg.steps_per_ray, "visibility_mode": cfg.visibility_mode},
                   {"training_psnr": final, "source": str(Path(m["root"]).resolve())})
    (out / "summary.json").write_text(json.dumps({"training_psnr": final,
                                                  "iterations": cfg.iterations}, indent=2) + "\n")
    print(f"final training PSNR {final:.3f} dB; fitted scene in {out}")
    return EXIT_OK


def cmd_relight(args):
    m = read_manifest(args.manifest)
    grid, decoder, _, cams = load_scene(m)
    env_path = Path(args.env)
    if not env_path.is_file():
        raise InputError(f"environment file not found: {env_path}")
    env = load_env_sg(env_path)
    sel = _select_cameras(cams, args.camera)
    images = _render_all(grid, decoder, env, sel, _settings(args, m))
    _write_views(args.out, images)
    if args.reference:
        ref = read_manifest(args.reference)
        rgrid, rdec, _, _ = load_scene(ref)
        refs = _render_all(rgrid, rdec, env, sel, _settings(args, ref))
        vals = [psnr(a, b) for (_, a), (_, b) in zip(images, refs)]
        print(f"relighting PSNR vs reference: {np.mean(vals):.3f} dB")
    print(f"relit {len(images)} view(s) to {args.out}")
    return EXIT_OK


def cmd_edit(args):
    m = read_manifest(args.manifest)
    grid, decoder, env, cams = load_scene(m)
    kw = {}
    if args.weights:
        wd, ws = _floats(args.weights, 2, "--weights")
        try:
            kw["weights"] = PhaseWeights(wd, ws)
        except ConfigurationError as exc:
            raise InputError(str(exc)) from exc
    if args.albedo or args.albedo_remap:
        if args.albedo:
            mat, off = np.zeros((3, 3)), np.array(_floats(args.albedo, 3, "--albedo"))
        else:
            v = _floats(args.albedo_remap, 12, "--albedo-remap")
            mat, off = np.array(v[:9]).reshape(3, 3), np.array(v[9:])
        albedo, _ = decode_appearance(decoder, grid.latent.reshape(-1, grid.latent_dim))
        mapped = albedo @ mat.T + off
        if np.any(mapped < 0.0) or np.any(mapped > 1.0):
            log.warning("albedo remap leaves [0, 1] for some voxels; values are clamped")
        kw["albedo_remap"] = (mat, off)
    sel = _select_cameras(cams, args.camera)
    images = _render_all(grid, decoder, env, sel, _settings(args, m, **kw))
    _write_views(args.out, images)
    print(f"edited render of {len(images)} view(s) written to {args.out}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every random choice")
    common.add_argument("--threads", type=int, default=1, help="render worker cap")
    common.add_argument("--deterministic", action="store_true", help="fixed-order reductions (always on)")
    common.add_argument("--config", help="JSON config (optimize schedule, render settings)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="microflake", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("make-synthetic", parents=[common], help="write a ground-truth scene and its views")
    s.add_argument("preset", help=f"one of: {', '.join(PRESETS)}")
    s.add_argument("out", help="output directory")
    s.add_argument("--views", type=int, default=24, help="cameras on the ring")
    s.add_argument("--resolution", type=int, default=16, help="voxels per side of the truth grid")
    s.add_argument("--image-size", type=int, default=32, help="square image side in pixels")
    s.add_argument("--steps", type=int, default=OptimizeConfig.steps_per_ray, help="samples per ray")
    s.set_defaults(func=cmd_make_synthetic)

    s = sub.add_parser("render", parents=[common], help="render a scene's cameras")
    s.add_argument("manifest", help="scene directory or its manifest.json")
    s.add_argument("out", help="output directory")
    s.add_argument("--camera", default="all", help="camera index, or all")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("optimize", parents=[common], help="fit a scene to a manifest's images")
    s.add_argument("manifest", help="scene directory or its manifest.json")
    s.add_argument("out", help="output directory")
    s.add_argument("--iterations", type=int, help="overrides the config")
    s.add_argument("--fixed-light", action="store_true", help="keep the manifest's light fixed")
    s.add_argument("--checkpoint-every", type=int, help="write a checkpoint every N iterations")
    s.add_argument("--resume", help="checkpoint file to continue from")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("relight", parents=[common], help="render a scene under a new SG light")
    s.add_argument("manifest", help="scene directory or its manifest.json")
    s.add_argument("env", help="SG light file")
    s.add_argument("out", help="output directory")
    s.add_argument("--camera", default="all", help="camera index, or all")
    s.add_argument("--reference", help="manifest of a scene to compare against under the same light")
    s.set_defaults(func=cmd_relight)

    s = sub.add_parser("edit", parents=[common], help="render with an albedo remap or new phase weights")
    s.add_argument("manifest", help="scene directory or its manifest.json")
    s.add_argument("out", help="output directory")
    s.add_argument("--camera", default="all", help="camera index, or all")
    s.add_argument("--albedo", help="constant albedo r,g,b")
    s.add_argument("--albedo-remap", help="affine remap: 9 matrix entries (row-major) then 3 offsets")
    s.add_argument("--weights", help="phase weights w_diffuse,w_specular")
    s.set_defaults(func=cmd_edit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except OptimizationDiverged as exc:
        print(f"error: {exc}; diagnostic checkpoint: {exc.checkpoint}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, UnknownPresetError, GridFormatError, EnvFormatError, ConfigurationError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
