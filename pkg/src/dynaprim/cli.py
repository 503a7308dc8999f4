"""Command surface: gen | fit | eval | export.

Run as ``python -m dynaprim <command> ...``.  Exit codes: 0 success,
2 configuration error, 3 numeric failure, 4 I/O problem.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import io
from .config import annotated, build_train_config, load_config
from .errors import BadManifest, ConfigError, InvalidSpec, MissingGT, NumericFailure, UnknownScene
from .geometry import build_mesh, transform_points
from .metrics import PrimitiveSequence, evaluate
from .scenegen import builtin_scene, generate_sequence, spec_from_dict
from .trainer import fit

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
log = logging.getLogger("dynaprim")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynaprim", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=1, help="cap on intra-op threads")
        sp.add_argument("--config", type=Path, default=None, help="JSON run config")
        sp.add_argument("--print-config", action="store_true", help="print the effective config and exit")
        sp.add_argument("--out", type=Path, required=False)

    g = sub.add_parser("gen", help="generate a synthetic articulated dataset")
    common(g)
    g.add_argument("--scene", required=True, help="builtin scene name or path to a JSON scene spec")
    g.add_argument("--frames", type=int, default=40)
    g.add_argument("--points-per-frame", type=int, default=500)
    g.add_argument("--tracking-points", type=int, default=5000)
    g.add_argument("--visibility", choices=["full", "normal-culled"], default="full")

    f = sub.add_parser("fit", help="fit primitives to a dataset directory")
    common(f)
    f.add_argument("dataset", type=Path)
    f.add_argument("--desk-scale", action="store_true", help="divide all iteration counts by 10")

    e = sub.add_parser("eval", help="evaluate a model against dataset ground truth")
    common(e)
    e.add_argument("model", type=Path, nargs="?")
    e.add_argument("dataset", type=Path)
    e.add_argument("--oracle-gt", action="store_true", help="evaluate the ground-truth part poses themselves")
    e.add_argument("--samples", type=int, default=5000)
    e.add_argument("--n-sub", type=int, default=1024)

    x = sub.add_parser("export", help="write per-frame OBJ meshes of a model")
    common(x)
    x.add_argument("model", type=Path)
    x.add_argument("--frames", type=int, default=10, help="number of evenly spaced timestamps")
    x.add_argument("--dataset", type=Path, default=None, help="use this dataset's timestamps instead")
    return p


def _need_out(args) -> Path:
    if args.out is None:
        raise ConfigError(f"{args.command}: --out is required")
    return args.out


def cmd_gen(args) -> int:
    if args.print_config:
        print(json.dumps({"scene": args.scene, "frames": args.frames, "seed": args.seed or 0,
                          "points_per_frame": args.points_per_frame, "visibility": args.visibility}, indent=1))
        return EXIT_OK
    out = _need_out(args)
    seed = args.seed or 0
    if Path(args.scene).suffix == ".json":
        raw = json.loads(Path(args.scene).read_text())
        raw.setdefault("frames", args.frames)
        raw.setdefault("seed", seed)
        spec = spec_from_dict(raw)
    else:
        spec = builtin_scene(args.scene, frames=args.frames, points_per_frame=args.points_per_frame, seed=seed,
                             visibility_mode=args.visibility, tracking_points=args.tracking_points)
    ds = generate_sequence(spec)
    io.export_dataset(ds, out)
    m = ds.manifest
    print(f"{m.scene}: {m.frame_count} frames, {len(m.part_ids)} parts, "
          f"{len(ds.tracking.points)} tracked points -> {out}")
    return EXIT_OK


def _train_config(args):
    raw = load_config(args.config) if args.config else {}
    over = {"seed": args.seed}
    if getattr(args, "desk_scale", False):
        over["desk_scale"] = True
    return build_train_config(raw, **over)


def cmd_fit(args) -> int:
    cfg = _train_config(args)
    if args.print_config:
        print(json.dumps(annotated(cfg), indent=1))
        return EXIT_OK
    out = _need_out(args)
    ds = io.load_dataset(args.dataset)
    model, train_log = fit(ds, cfg)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_model(out, model, {"config": cfg.to_dict(), "timestamps": ds.timestamps.tolist()})
    train_log.write_jsonl(out.with_suffix(".log.jsonl"))
    print(f"fitted {model.K} primitives; final loss {train_log.steps[-1]['total']:.6g} -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.print_config:
        print(json.dumps({"samples": args.samples, "n_sub": args.n_sub, "seed": args.seed or 0}, indent=1))
        return EXIT_OK
    out = _need_out(args)
    ds = io.load_dataset(args.dataset, require_tracking=True)
    gt = PrimitiveSequence.from_manifest(ds.manifest)
    if args.oracle_gt:
        pred = gt
    else:
        if args.model is None:
            raise ConfigError("eval: a model path is required unless --oracle-gt is given")
        pred = PrimitiveSequence.from_model(io.load_model(args.model), ds.timestamps)
    report = evaluate(pred, gt, ds.tracking, args.samples, args.n_sub, args.seed or 0)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1))
    print(f"EPE {report['epe']:.4g}  d.05 {report['delta05']:.3f}  d.10 {report['delta10']:.3f}  "
          f"CD_d {report['cd_d']:.4g}  EMD_d {report['emd_d']:.4g}")
    return EXIT_OK


def export_meshes(model, timestamps, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    R, T = model.world_poses_numpy(timestamps)
    meshes = [build_mesh(s, model.subdivisions) for s in model.shapes()]
    paths = []
    for f in range(len(timestamps)):
        objs = [(f"primitive_{k}", transform_points(m.vertices, R[f, k], T[f, k]), m.faces)
                for k, m in enumerate(meshes)]
        path = out_dir / f"frame_{f:04d}.obj"
        io.write_obj(path, objs)
        paths.append(path)
    return paths


def cmd_export(args) -> int:
    if args.print_config:
        print(json.dumps({"frames": args.frames}, indent=1))
        return EXIT_OK
    out = _need_out(args)
    model = io.load_model(args.model)
    if args.dataset is not None:
        ts = np.asarray(io.load_manifest(args.dataset).timestamps, dtype=float)
    else:
        if args.frames < 1:
            raise ConfigError("--frames must be >= 1")
        ts = np.linspace(0.0, 1.0, args.frames) if args.frames > 1 else np.zeros(1)
    paths = export_meshes(model, ts, out)
    print(f"wrote {len(paths)} OBJ files with {model.K} objects each -> {out}")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "fit": cmd_fit, "eval": cmd_eval, "export": cmd_export}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    torch.set_num_threads(max(1, args.workers))
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UnknownScene, InvalidSpec) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, BadManifest, MissingGT) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
