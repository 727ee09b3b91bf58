"""Command-line surface tying simulation, training, extraction and eval together.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 corrupt
container, 5 shape mismatch. The --threads flag caps the linear-algebra
worker pool and must take effect before numpy loads, so heavy imports happen
inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CORRUPT = 4
EXIT_SHAPE = 5


def _cap_threads(n: int) -> None:
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netfield")
    ap.add_argument("--threads", type=int, default=0,
                    help="cap linear-algebra threads (0 = library default)")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the brute-force simulator")
    sim.add_argument("--scene", default="plane",
                     help="plane | sphere | two-planes-occluded | letter | plane-sphere")
    sim.add_argument("--scan", default="16x16", help="spot grid, e.g. 16x16")
    sim.add_argument("--mode", choices=["confocal", "nonconfocal"],
                     default="confocal")
    sim.add_argument("--bins", type=int, default=128)
    sim.add_argument("--binwidth", type=float, default=100.0,
                     help="bin width in picoseconds")
    sim.add_argument("--occlusion", action="store_true")
    sim.add_argument("--quad", type=int, default=64, help="quadrature per axis")
    sim.add_argument("--config", default=None, help="run-config overrides")
    sim.add_argument("--noise-scale", type=float, default=0.0,
                     help="if > 0, Poisson-resample counts at this intensity")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)
    sim.add_argument("--scene-out", default=None,
                     help="also write the ground-truth volume")

    info = sub.add_parser("info", help="describe a container file")
    info.add_argument("path")

    tr = sub.add_parser("train", help="fit a neural field to measured transients")
    tr.add_argument("--data", required=True)
    tr.add_argument("--config", default=None)
    tr.add_argument("--stage", choices=["one", "two", "both"], default="both")
    tr.add_argument("--checkpoint", default=None, help="warm start / stage two input")
    tr.add_argument("--checkpoint-out", required=True)
    tr.add_argument("--report-out", default=None)
    tr.add_argument("--lossmap-out", default=None,
                    help="per-spot loss map as a graymap (square scans)")
    tr.add_argument("--verbose", action="store_true")

    ex = sub.add_parser("extract", help="turn a checkpoint into volume/mesh/depth")
    ex.add_argument("--checkpoint", required=True)
    ex.add_argument("--dims", type=int, default=32)
    ex.add_argument("--bounds", default=None,
                    help="x0,x1,y0,y1,z0,z1 (default: the field's bounds)")
    ex.add_argument("--iso", type=float, default=None,
                    help="absolute iso threshold (default 30%% of max)")
    ex.add_argument("--volume-out", default=None)
    ex.add_argument("--mesh-out", default=None)
    ex.add_argument("--depth-out", default=None, help="graymap visualization")

    ev = sub.add_parser("eval", help="depth-MAE table for reconstructions")
    ev.add_argument("--ref", required=True, help="reference volume (NTFV)")
    ev.add_argument("--volume", action="append", default=[],
                    metavar="NAME=PATH", help="candidate volume (repeatable)")
    ev.add_argument("--baseline", choices=["bp", "fbp"], default=None)
    ev.add_argument("--data", default=None,
                    help="transients for the backprojection baseline")
    ev.add_argument("--threshold-frac", type=float, default=0.3)
    ev.add_argument("--sweep", action="store_true",
                    help="also evaluate at threshold fractions 0.2/0.4/0.5")
    ev.add_argument("--table-out", default=None)

    fig = sub.add_parser("render-figure", help="max-intensity projection graymap")
    fig.add_argument("--volume", required=True)
    fig.add_argument("--axis", choices=["front", "top"], default="front")
    fig.add_argument("--out", required=True)
    return ap


def _make_scene(cfg, kind):
    from . import oracle

    dims = (cfg["scene.dims"],) * 3
    common = dict(dims=dims, pitch=cfg["scene.pitch"],
                  origin=(cfg["scene.origin_x"], cfg["scene.origin_y"], 0.0),
                  sigma_value=cfg["scene.sigma"], rho_value=cfg["scene.rho"])
    if kind == "plane-sphere":
        a = oracle.make_primitive_scene("plane", z=0.30,
                                        extent=((-0.26, 0.02), (-0.26, 0.26)),
                                        **common)
        b = oracle.make_primitive_scene("sphere", center=(0.13, 0.0, 0.42),
                                        radius=0.09, **common)
        return oracle.merge_scenes(a, b)
    return oracle.make_primitive_scene(kind, **common)


def _cmd_simulate(args) -> int:
    import numpy as np
    from . import containers, oracle
    from .extract import scene_to_volume

    cfg = containers.load_run_config(args.config) if args.config \
        else containers.default_run_config()
    scene = _make_scene(cfg, args.scene)
    nx, _, ny = args.scan.partition("x")
    n = int(nx)
    if ny and int(ny) != n:
        raise containers.ConfigError("only square scan grids are supported")
    offset = None
    if args.mode == "nonconfocal":
        # offset (0, 0) keeps the pairs coincident (degenerate ellipsoids)
        offset = (cfg["scan.offset_x"], cfg["scan.offset_y"])
    scan = oracle.grid_scan(n, cfg["scan.extent"], detection_offset=offset)
    consts = oracle.PhysicsConstants()
    bw = args.binwidth * 1e-12
    if args.mode == "confocal":
        img = oracle.simulate_confocal(scene, scan, args.bins, bw, consts,
                                       occlusion=args.occlusion,
                                       n_theta=args.quad, n_phi=args.quad)
    else:
        img = oracle.simulate_nonconfocal(scene, scan, args.bins, bw, consts,
                                          n_nu=args.quad, n_phi=args.quad)
    if args.noise_scale > 0:
        img = oracle.add_poisson_noise(img, args.noise_scale, args.seed)
    containers.write_transient(img, args.out)
    if args.scene_out:
        containers.write_volume(scene_to_volume(scene), args.scene_out)
    return 0


def _cmd_info(args) -> int:
    from . import containers
    from .field import CHECKPOINT_MAGIC

    with open(args.path, "rb") as fh:
        magic = fh.read(4)
    if magic == containers.TRANSIENT_MAGIC:
        img = containers.read_transient(args.path)
        kind = "confocal" if img.scan.confocal else "nonconfocal"
        print(f"transient {kind} entries={len(img.scan)} bins={img.n_bins} "
              f"binwidth_ps={img.bin_width * 1e12:g} c={img.constants.c:g}")
    elif magic == containers.VOLUME_MAGIC:
        vol = containers.read_volume(args.path)
        print(f"volume dims={vol.dims[0]}x{vol.dims[1]}x{vol.dims[2]} "
              f"pitch={vol.pitch:g} origin={tuple(vol.origin)}")
    elif magic == CHECKPOINT_MAGIC:
        from .field import load_checkpoint
        f = load_checkpoint(args.path)
        print(f"checkpoint width={f.cfg.width} depth={f.cfg.trunk_depth} "
              f"params={f.params.count()}")
    else:
        raise containers.ContainerError(f"unrecognized magic {magic!r}")
    return 0


def _field_from_cfg(cfg):
    import numpy as np
    from .field import EncodingConfig, NetConfig, NeuralField

    enc = EncodingConfig(
        n_freq_pos=cfg["field.n_freq_pos"], n_freq_dir=cfg["field.n_freq_dir"],
        pos_bounds=np.array([[cfg["bounds.x_lo"], cfg["bounds.x_hi"]],
                             [cfg["bounds.y_lo"], cfg["bounds.y_hi"]],
                             [cfg["bounds.z_lo"], cfg["bounds.z_hi"]]]))
    net = NetConfig(encoding=enc, trunk_depth=cfg["field.depth"],
                    width=cfg["field.width"], skip_layer=cfg["field.skip_layer"],
                    rho_width=cfg["field.rho_width"])
    return NeuralField(net, seed=cfg["seed"])


def _cmd_train(args) -> int:
    import numpy as np
    from . import containers
    from .field import load_checkpoint, save_checkpoint
    from .training import (TrainConfig, run_stage_one, run_stage_two,
                           train_two_stage)

    cfg = containers.load_run_config(args.config) if args.config \
        else containers.default_run_config()
    measured = containers.read_transient(args.data)
    tcfg = TrainConfig(
        epochs_stage1=cfg["train.epochs_stage1"],
        epochs_stage2=cfg["train.epochs_stage2"],
        batch_size=cfg["train.batch_size"],
        lr_start=cfg["train.lr_start"], lr_end=cfg["train.lr_end"],
        adam_beta1=cfg["train.adam_beta1"], adam_beta2=cfg["train.adam_beta2"],
        adam_eps=cfg["train.adam_eps"], n_c=cfg["train.n_c"],
        n_f=cfg["train.n_f"], burn_in=cfg["train.burn_in"],
        occlusion_aware=cfg["train.occlusion"], n_march=cfg["train.n_march"],
        epsilon_mix=cfg["train.epsilon_mix"],
        normalize_data=cfg["train.normalize"], seed=cfg["seed"])
    field = load_checkpoint(args.checkpoint) if args.checkpoint \
        else _field_from_cfg(cfg)

    if args.stage == "both":
        report = train_two_stage(field, measured, tcfg)
    elif args.stage == "one":
        report = run_stage_one(field, measured, tcfg)
    else:
        report = run_stage_two(field, measured, tcfg)
    save_checkpoint(field, args.checkpoint_out)
    if args.report_out:
        containers.write_report(report, cfg, args.report_out)
    if args.lossmap_out:
        losses = report.spot_losses[max(report.spot_losses)]
        n = int(np.sqrt(len(losses)))
        if n * n != len(losses):
            raise containers.ConfigError("loss-map export needs a square scan")
        containers.write_pgm(losses.reshape(n, n), args.lossmap_out)
    if args.verbose:
        for stage, epoch, loss in report.epoch_losses:
            print(f"stage {stage} epoch {epoch}: loss {loss:.6g}")
    return 0


def _parse_bounds(text):
    import numpy as np
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 6:
        raise ValueError("bounds need 6 comma-separated numbers")
    return np.array(vals).reshape(3, 2)


def _cmd_extract(args) -> int:
    import numpy as np
    from . import containers
    from .extract import depth_map, marching_cubes, query_volume
    from .field import load_checkpoint

    field = load_checkpoint(args.checkpoint)
    bounds = _parse_bounds(args.bounds) if args.bounds else field.bounds
    dims = (args.dims,) * 3
    vol = query_volume(field, dims, bounds)
    iso = args.iso if args.iso is not None else 0.3 * float(vol.sigma.max())
    if args.volume_out:
        containers.write_volume(vol, args.volume_out)
    if args.mesh_out:
        containers.write_mesh(marching_cubes(vol, iso), args.mesh_out)
    if args.depth_out:
        dm = depth_map(vol, iso)
        img = np.where(np.isfinite(dm.depth), dm.depth, 0.0)
        containers.write_pgm(img, args.depth_out)
    return 0


def _cmd_eval(args) -> int:
    import numpy as np
    from . import containers
    from .extract import backproject, depth_map, depth_mae

    ref = containers.read_volume(args.ref)
    fracs = [args.threshold_frac]
    if args.sweep:
        fracs += [f for f in (0.2, 0.4, 0.5) if f != args.threshold_frac]
    rows = []

    def add_row(name, vol):
        for frac in fracs:
            ref_depth = depth_map(ref, frac * float(ref.sigma.max()))
            thr = frac * float(vol.sigma.max())
            mae, cover = depth_mae(depth_map(vol, thr), ref_depth)
            label = name if frac == args.threshold_frac else f"{name}@{frac:g}"
            rows.append((label, mae, cover))

    for spec_item in args.volume:
        name, _, path = spec_item.partition("=")
        if not path:
            raise containers.ConfigError("--volume expects NAME=PATH")
        add_row(name, containers.read_volume(path))
    if args.baseline:
        if not args.data:
            raise containers.ConfigError("--baseline requires --data")
        measured = containers.read_transient(args.data)
        lo = ref.origin
        hi = ref.origin + np.array(ref.dims) * ref.pitch
        bounds = np.stack([lo, hi], axis=1)
        add_row(args.baseline,
                backproject(measured, ref.dims, bounds,
                            filtered=args.baseline == "fbp"))
    lines = ["method mae_m coverage"]
    for name, mae, cover in rows:
        lines.append(f"{name} {mae:.6f} {cover:.4f}")
    table = "\n".join(lines) + "\n"
    if args.table_out:
        with open(args.table_out, "w") as fh:
            fh.write(table)
    sys.stdout.write(table)
    return 0


def _cmd_render_figure(args) -> int:
    from . import containers
    from .extract import project_max

    vol = containers.read_volume(args.volume)
    containers.write_pgm(project_max(vol, args.axis), args.out)
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "info": _cmd_info,
    "train": _cmd_train,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "render-figure": _cmd_render_figure,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # honor --threads before numpy is imported anywhere
    if "--threads" in argv:
        i = argv.index("--threads")
        try:
            n = int(argv[i + 1])
        except (IndexError, ValueError):
            print("error: --threads expects an integer", file=sys.stderr)
            return EXIT_CONFIG
        if n > 0:
            _cap_threads(n)
    args = _build_parser().parse_args(argv)

    from .errors import ConfigError, ContainerError, ShapeMismatchError

    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContainerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ShapeMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SHAPE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
