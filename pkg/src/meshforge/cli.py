"""Command-line entry point wiring the modules into end-to-end workflows."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, MeshforgeError
from .evaluate import evaluate_dem
from .geoframe import build_frame, validate_frame
from .imaging import read_pgm16, write_pgm16
from .mesh import (
    DemGrid,
    dem_from_mesh,
    mesh_from_dem,
    read_esri_ascii,
    read_ply,
    write_esri_ascii,
    write_ply,
)
from .refine import RefineConfig, refine_hierarchical
from .rfm import GeoPoint, PixelCoord, read_rpc_text, write_rpc_text
from .raycast import validate_ray_straightness
from .synthio import SceneSpec, ViewSpec, generate_scene

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


@dataclass
class ProjectConfig:
    """Validated refine-run description loaded from a JSON file."""

    images: list
    rpcs: list
    anchor: GeoPoint
    output_dir: str
    initial_dem: str | None = None
    initial_mesh: str | None = None
    gsd: float | None = None
    refine: RefineConfig = field(default_factory=RefineConfig)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        for key in ("images", "rpcs", "anchor", "output_dir"):
            if key not in raw:
                raise ConfigError(f"config missing required key '{key}'")
        if len(raw["images"]) != len(raw["rpcs"]):
            raise ConfigError("images and rpcs lists must pair up")
        if len(raw["images"]) < 2:
            raise ConfigError("need at least two views")
        if not (raw.get("initial_dem") or raw.get("initial_mesh")):
            raise ConfigError("config needs initial_dem or initial_mesh")
        anchor = raw["anchor"]
        if len(anchor) != 3:
            raise ConfigError("anchor must be [lat, lon, height]")
        known = {f.name for f in fields(RefineConfig)}
        refine_raw = raw.get("refine", {})
        unknown = set(refine_raw) - known
        if unknown:
            raise ConfigError(f"unknown refine options: {sorted(unknown)}")
        try:
            refine = RefineConfig(**refine_raw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base, p)

        cfg = cls(
            images=[resolve(p) for p in raw["images"]],
            rpcs=[resolve(p) for p in raw["rpcs"]],
            anchor=GeoPoint(*[float(v) for v in anchor]),
            output_dir=resolve(raw["output_dir"]),
            initial_dem=(
                resolve(raw["initial_dem"]) if raw.get("initial_dem") else None
            ),
            initial_mesh=(
                resolve(raw["initial_mesh"])
                if raw.get("initial_mesh")
                else None
            ),
            gsd=raw.get("gsd"),
            refine=refine,
        )
        for p in cfg.images + cfg.rpcs:
            if not os.path.isfile(p):
                raise FileNotFoundError(p)
        for p in (cfg.initial_dem, cfg.initial_mesh):
            if p is not None and not os.path.isfile(p):
                raise FileNotFoundError(p)
        return cfg


def _apply_threads(args):
    value = getattr(args, "threads", None)
    if value is None:
        env = os.environ.get("MESHFORGE_THREADS")
        value = int(env) if env else None
    if value is not None:
        if value < 1:
            raise ConfigError("thread count must be >= 1")
        import numba

        numba.set_num_threads(min(value, numba.config.NUMBA_NUM_THREADS))


def cmd_synth(args):
    with open(args.spec) as fh:
        raw = json.load(fh)
    views = [ViewSpec(**v) for v in raw.pop("views", [])]
    try:
        spec = SceneSpec(views=views, **raw) if views else SceneSpec(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scene spec: {exc}") from exc
    scene = generate_scene(spec, seed=args.seed)
    out = args.out
    os.makedirs(out, exist_ok=True)
    manifest = {
        "anchor": [spec.anchor_lat, spec.anchor_lon, spec.anchor_height],
        "gsd": spec.gsd,
        "extent": spec.extent,
        "seed": args.seed,
        "views": [],
    }
    for k, (img, mdl) in enumerate(zip(scene.images, scene.models)):
        img_path = os.path.join(out, f"view_{k:02d}.pgm")
        rpc_path = os.path.join(out, f"view_{k:02d}.rpc")
        write_pgm16(img_path, img)
        write_rpc_text(rpc_path, mdl)
        manifest["views"].append(
            {"image": os.path.basename(img_path),
             "rpc": os.path.basename(rpc_path),
             "off_nadir_deg": spec.views[k].off_nadir_deg,
             "azimuth_deg": spec.views[k].azimuth_deg,
             "kind": spec.views[k].kind}
        )
    write_esri_ascii(os.path.join(out, "truth_dem.asc"), scene.truth_dem)
    write_ply(os.path.join(out, "truth_mesh.ply"), scene.truth_mesh)
    with open(os.path.join(out, "scene.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {len(scene.images)} views to {out}")
    return EXIT_OK


def cmd_validate(args):
    anchor = GeoPoint(*args.anchor)
    frame = build_frame(anchor)
    scales = [100.0, 500.0, 1000.0, 2000.0, 5000.0]
    frame_rows = validate_frame(frame, scales)
    print("frame report: s, |x'| m, |y'| m, axis angle deg")
    for row in frame_rows:
        print("  %8.1f  %12.4f  %12.4f  %10.5f" % tuple(row))

    heights = [1.0, 10.0, 50.0, 100.0, 500.0, 1000.0]
    straight_rows = []
    for path in args.rpc:
        model = read_rpc_text(path)
        pixel = PixelCoord(model.off_samp, model.off_line)
        rows = validate_ray_straightness(model, frame, pixel, heights)
        angles = [r[1] for r in rows]
        variation = max(angles) - min(angles)
        print(f"{path}: off-nadir angle by plane height")
        for h, ang in rows:
            print("  h=%8.1f m   angle=%12.8f deg" % (h, ang))
            straight_rows.append((path, h, ang))
        print("  variation: %.3e deg" % variation)

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["table", "key", "value1", "value2", "value3"])
            for s, ex, ey, ang in frame_rows:
                writer.writerow(["frame", s, ex, ey, ang])
            for path, h, ang in straight_rows:
                writer.writerow(["straightness", path, h, ang, ""])
    return EXIT_OK


def cmd_mesh_from_dem(args):
    dem = read_esri_ascii(args.dem)
    m = mesh_from_dem(dem, args.decimation)
    write_ply(args.out, m)
    print(f"wrote {len(m.vertices)} vertices, {len(m.faces)} faces")
    return EXIT_OK


def cmd_dem_from_mesh(args):
    m = read_ply(args.mesh)
    template = read_esri_ascii(args.like)
    dem = dem_from_mesh(m, template)
    write_esri_ascii(args.out, dem)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_refine(args):
    cfg = ProjectConfig.from_json(args.config)
    if args.dry_run:
        print("config valid")
        return EXIT_OK
    frame = build_frame(cfg.anchor)
    images = [read_pgm16(p) for p in cfg.images]
    models = [read_rpc_text(p) for p in cfg.rpcs]
    if cfg.initial_dem:
        initial = read_esri_ascii(cfg.initial_dem)
    else:
        initial = read_ply(cfg.initial_mesh)
    log = []
    refined = refine_hierarchical(
        initial, images, models, frame, cfg.refine, gsd=cfg.gsd, log=log
    )
    os.makedirs(cfg.output_dir, exist_ok=True)
    ply_path = os.path.join(cfg.output_dir, "refined_mesh.ply")
    dem_path = os.path.join(cfg.output_dir, "refined_dem.asc")
    csv_path = os.path.join(cfg.output_dir, "energy.csv")
    write_ply(ply_path, refined)
    if cfg.initial_dem:
        template = read_esri_ascii(cfg.initial_dem)
    else:
        from .refine import dem_template_from_mesh

        template = dem_template_from_mesh(
            refined, cfg.gsd if cfg.gsd else 1.0
        )
    template = DemGrid(
        origin_local=template.origin_local,
        cell_size=template.cell_size,
        heights=np.zeros_like(template.heights),
        nodata=template.nodata,
    )
    write_esri_ascii(dem_path, dem_from_mesh(refined, template))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "iteration", "photo", "smooth", "total"])
        for row in log:
            writer.writerow(
                [row["level"], row["iteration"], row["photo"],
                 row["smooth"], row["total"]]
            )
    print(f"wrote {ply_path}, {dem_path}, {csv_path}")
    return EXIT_OK


def cmd_evaluate(args):
    test = read_esri_ascii(args.test)
    truth = read_esri_ascii(args.truth)
    mask = read_esri_ascii(args.mask) if args.mask else None
    report = evaluate_dem(
        test, truth, mask=mask, trunc=args.trunc, align=not args.no_align,
        json_path=args.json, residual_path=args.residuals,
    )
    print(report.to_json())
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="meshforge",
        description="Multi-view photometric terrain mesh refinement",
    )
    parser.add_argument(
        "--threads", type=int, default=None,
        help="worker thread count (default: MESHFORGE_THREADS or hardware)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--spec", required=True, help="scene spec JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="frame and ray-straightness reports")
    p.add_argument("--rpc", nargs="+", required=True)
    p.add_argument("--anchor", nargs=3, type=float, required=True,
                   metavar=("LAT", "LON", "H"))
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("mesh-from-dem", help="triangulate a height grid")
    p.add_argument("--dem", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--decimation", type=int, default=1)
    p.set_defaults(func=cmd_mesh_from_dem)

    p = sub.add_parser("refine", help="run hierarchical refinement")
    p.add_argument("--config", required=True, help="project config JSON")
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("dem-from-mesh", help="rasterize a mesh to a grid")
    p.add_argument("--mesh", required=True)
    p.add_argument("--like", required=True, help="template ESRI ASCII grid")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dem_from_mesh)

    p = sub.add_parser("evaluate", help="compare a DEM against ground truth")
    p.add_argument("--test", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--mask", default=None)
    p.add_argument("--trunc", type=float, default=3.0)
    p.add_argument("--json", default=None)
    p.add_argument("--residuals", default=None)
    p.add_argument("--no-align", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_threads(args)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MeshforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
