"""``magskin`` command line.

Exit codes: 0 success, 1 runtime error (message on stderr), 2 usage error.
Each run writes ``<primary output>.manifest.json`` describing itself.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from ._version import __version__
from .errors import MagskinError

log = logging.getLogger("magskin")
OUT_ENV = "MAGSKIN_OUT"


def _out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "."))


def _default(name: str) -> Path:
    return _out_dir() / name


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _write_manifest(primary: Path, args, outputs: list[Path], started: float) -> Path:
    params = {k: v for k, v in vars(args).items() if k not in ("func", "config", "stdout_text")}
    params = json.loads(json.dumps(params, default=str))
    manifest = {"subcommand": args.command_path, "params": params, "seed": args.seed,
                "tool_version": __version__, "outputs": [str(p) for p in outputs],
                "duration_s": round(time.perf_counter() - started, 6)}
    path = primary.with_name(primary.name + ".manifest.json")
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _readings_csv(readings, extra: list[tuple[str, list]] | None = None) -> str:
    from .daq import CSV_HEADER

    extra = extra or []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_HEADER) + [name for name, _ in extra])
    for k, r in enumerate(readings):
        w.writerow([int(r.timestamp_us)] + [f"{v:.9g}" for v in r.values] + [col[k] for _, col in extra])
    return buf.getvalue()


# ---------------------------------------------------------------- subcommands

def cmd_characterize(args) -> list[Path]:
    from .characterize import table_report
    from .figures import consistency_figure
    from .skins import PRESET_NAMES, preset

    names = PRESET_NAMES if args.presets == "all" else tuple(p.strip() for p in args.presets.split(","))
    for n in names:
        preset(n)  # UnknownPreset before any work
    report = table_report(names, args.instances, args.seed)
    out = Path(args.out or _default("characterize.csv"))
    md = out.with_suffix(".md")
    png = out.with_suffix(".png")
    _write_text(out, report.to_csv())
    _write_text(md, report.to_markdown())
    consistency_figure(report, png)
    return [out, md, png]


def cmd_simulate(args) -> list[Path]:
    from .daq import write_log
    from .figures import trajectory_figure
    from .magnetics import MagnetometerGrid
    from .mechanics import TrajectoryParams, inject_interference, make_trajectory, simulate_sequence
    from .skins import generate_instance, preset

    inst = generate_instance(preset(args.preset), args.seed)
    params = TrajectoryParams(center=tuple(args.center), depth=args.depth, kernel_width=args.kernel_width,
                              slip_velocity=args.slip_velocity, slip_direction=np.deg2rad(args.slip_direction))
    traj = make_trajectory(args.kind, params, args.rate, args.duration)
    readings = simulate_sequence(inst, MagnetometerGrid.default(), traj, args.noise, args.seed)
    if any(args.drift):
        readings = inject_interference(readings, args.drift)
    out = Path(args.out or _default("simulate.log"))
    out.parent.mkdir(parents=True, exist_ok=True)
    write_log(out, readings)
    outputs = [out]
    if args.plot:
        png = out.with_suffix(".png")
        trajectory_figure(np.array([r.timestamp_us for r in readings]),
                          np.stack([r.values for r in readings]), png)
        outputs.append(png)
    return outputs


def cmd_localize(args) -> list[Path]:
    from .daq import read_log
    from .inverse import localize_gauss_newton, localize_grid_oracle, residual
    from .magnetics import MagnetometerGrid
    from .mechanics import ContactState
    from .skins import generate_instance, preset

    inst = generate_instance(preset(args.preset), args.seed)
    grid = MagnetometerGrid.default()
    frames = [r for r, _ in read_log(args.log).decoded()]
    if not frames:
        raise MagskinError(f"{args.log} holds no frames")
    idx = args.frame if args.frame >= 0 else len(frames) + args.frame
    if not 0 <= idx < len(frames):
        raise MagskinError(f"frame {args.frame} out of range for {len(frames)} frames")
    reading = frames[idx]
    init = ContactState(tuple(args.init[:2]), args.init[2], kernel_width=args.kernel_width)
    res = localize_gauss_newton(reading, inst, grid, init, max_iters=args.max_iters)
    rows = [("gauss_newton", res.estimate, res.residual_norm_ut, res.iterations, res.converged)]
    if args.oracle:
        est = localize_grid_oracle(reading, inst, grid, args.xy_step, args.depth_step, args.kernel_width)
        r = np.linalg.norm(residual(reading, inst, grid, est))
        rows.append(("grid_oracle", est, float(r), 0, True))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "frame", "x_mm", "y_mm", "depth_mm", "residual_ut", "iterations", "converged"])
    for name, est, resid, its, conv in rows:
        w.writerow([name, idx, repr(est.center[0]), repr(est.center[1]), repr(est.depth), repr(resid), its,
                    int(conv)])
    out = Path(args.out or _default("localize.csv"))
    _write_text(out, buf.getvalue())
    args.stdout_text = json.dumps({name: {"x_mm": est.center[0], "y_mm": est.center[1], "depth_mm": est.depth,
                                          "residual_ut": resid, "iterations": its, "converged": conv}
                                   for name, est, resid, its, conv in rows}, sort_keys=True)
    return [out]


def _train_config(args):
    from .slip import TrainConfig
    return TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                       clip_norm=args.clip, seed=args.seed, hidden=args.hidden)


def cmd_slip_synth(args) -> list[Path]:
    from .skins import generate_instance, preset
    from .slip import synth_dataset, write_dataset

    inst = generate_instance(preset(args.preset), args.instance_seed if args.instance_seed is not None else args.seed)
    train, test = synth_dataset(args.preset, args.objects, args.train_objects, args.trajs, args.seed, inst)
    out = Path(args.out or _default("slip_data"))
    index = write_dataset(out, {"train": train, "test": test})
    return [index]


def cmd_slip_train(args) -> list[Path]:
    from .figures import loss_curve
    from .slip import read_dataset, train

    model = train(read_dataset(args.data, "train"), _train_config(args))
    out = Path(args.out or _default("slip_model.bin"))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    loss_csv = out.with_suffix(".loss.csv")
    _write_text(loss_csv, "epoch,loss\n" + "".join(f"{k},{v!r}\n" for k, v in enumerate(model.loss_history)))
    png = out.with_suffix(".loss.png")
    loss_curve(model.loss_history, png)
    log.info("training loss %.4g, accuracy %.3f", model.train_loss, model.train_accuracy)
    return [out, loss_csv, png]


def cmd_slip_eval(args) -> list[Path]:
    from .slip import SlipModel, evaluate, read_dataset

    res = evaluate(SlipModel.load(args.model), read_dataset(args.data, args.split))
    out = Path(args.out or _default("slip_eval.csv"))
    _write_text(out, "split,accuracy,tp,fp,tn,fn\n"
                     f"{args.split},{res.accuracy!r},{res.tp},{res.fp},{res.tn},{res.fn}\n")
    return [out]


def cmd_slip_xeval(args) -> list[Path]:
    from .slip import cross_instance_eval

    lines = ["preset,instance_a,instance_b,train_seed,acc_same_instance,acc_swapped_instance,drop"]
    for p in args.presets.split(","):
        r = cross_instance_eval(p.strip(), tuple(args.instance_seeds), args.seed, _train_config(args),
                                n_objects=args.objects, train_objects=args.train_objects,
                                trajs_per_object=args.trajs)
        lines.append(f"{r.preset},{r.instance_seeds[0]},{r.instance_seeds[1]},{r.train_seed},"
                     f"{r.acc_same_instance!r},{r.acc_swapped_instance!r},{r.drop!r}")
    out = Path(args.out or _default("slip_xeval.csv"))
    _write_text(out, "\n".join(lines) + "\n")
    return [out]


def _read_readings_csv(path) -> list:
    from .daq import CSV_HEADER
    from .magnetics import SensorReading

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:16]) != CSV_HEADER:
            raise MagskinError(f"{path}: expected header starting {','.join(CSV_HEADER[:3])},...")
        return [SensorReading(int(row[0]), [float(v) for v in row[1:16]]) for row in reader if row]


def cmd_daq_encode(args) -> list[Path]:
    from .daq import encode_frame, encode_log

    readings = _read_readings_csv(args.input)
    frames = [encode_frame(r, args.first_seq + k) for k, r in enumerate(readings)]
    out = Path(args.out or _default("encoded.log"))
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(encode_log(frames) if not args.raw else b"".join(frames))
    return [out]


def cmd_daq_decode(args) -> list[Path]:
    from .daq import iter_frames

    decoded = list(iter_frames(Path(args.input).read_bytes(), resync=args.resync))
    text = _readings_csv([r for r, _ in decoded], [("seq", [s for _, s in decoded])])
    out = Path(args.out or _default("decoded.csv"))
    _write_text(out, text)
    return [out]


def cmd_daq_replay(args) -> list[Path]:
    from .daq import BaselineState, FrameStream, pump, read_log, replay

    stream = FrameStream(args.queue)
    pump(replay(read_log(args.input), realtime=args.realtime), stream)
    base = BaselineState(args.baseline) if args.baseline else None
    readings, armed = [], []
    for reading, _seq in stream:
        if base is not None:
            reading, ok = base.update(reading)
            armed.append(int(ok))
        readings.append(reading)
    if stream.dropped:
        log.warning("queue overflow: %d frames dropped", stream.dropped)
    extra = [("armed", armed)] if base is not None else []
    out = Path(args.out or _default("replay.csv"))
    _write_text(out, _readings_csv(readings, extra))
    return [out]


def cmd_daq_csv(args) -> list[Path]:
    from .daq import read_log, to_csv

    out = Path(args.out or _default("log.csv"))
    _write_text(out, to_csv(r for r, _ in read_log(args.input).decoded()))
    return [out]


def cmd_moldgen(args) -> list[Path]:
    from .moldgen import MoldParams, generate_mold, parse_contour, write_design

    params = MoldParams(wall=args.wall, clearance=args.clearance, skin_thickness=args.thickness)
    design = generate_mold(parse_contour(Path(args.contour), args.format), params)
    out = Path(args.out or _default("mold"))
    paths = write_design(design, out)
    man = _write_text(out / "design.json", json.dumps(design.manifest(), indent=2, sort_keys=True) + "\n")
    return [man] + list(paths.values())


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="root seed; every random draw derives from it")
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    p.add_argument("--config", type=Path, default=None, help="JSON file of flag defaults; flags override")
    p.add_argument("--out", default=None, help=f"output path (default under ${OUT_ENV} or the working dir)")
    p.add_argument("-v", "--verbose", action="store_true")


def _train_flags(p) -> None:
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--clip", type=float, default=1.0)
    p.add_argument("--hidden", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="magskin", description="Magnetic tactile skin toolkit.")
    ap.add_argument("--version", action="version", version=f"magskin {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("characterize", help="signal strength and consistency table")
    _common(p)
    p.add_argument("--presets", default="all", help="'all' or comma-separated preset names")
    p.add_argument("--instances", type=int, default=5)
    p.set_defaults(func=cmd_characterize, command_path="characterize")

    p = sub.add_parser("simulate", help="simulate a contact trajectory into a daq log")
    _common(p)
    p.add_argument("--preset", default="anyskin")
    p.add_argument("--kind", choices=["press", "hold", "slip", "none"], default="press")
    p.add_argument("--center", type=float, nargs=2, default=[10.0, 10.0], metavar=("X", "Y"))
    p.add_argument("--depth", type=float, default=1.0)
    p.add_argument("--kernel-width", type=float, default=3.0)
    p.add_argument("--slip-velocity", type=float, default=5.0)
    p.add_argument("--slip-direction", type=float, default=0.0, help="degrees")
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=2.0, help="sensor noise sigma in uT")
    p.add_argument("--drift", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("BX", "BY", "BZ"),
                   help="common-mode interference ramp in uT/s")
    p.add_argument("--plot", action="store_true", help="also write a PNG of the trajectory")
    p.set_defaults(func=cmd_simulate, command_path="simulate")

    p = sub.add_parser("localize", help="estimate contact location and depth from one logged frame")
    _common(p)
    p.add_argument("--log", required=True, type=Path)
    p.add_argument("--preset", default="anyskin")
    p.add_argument("--frame", type=int, default=-1)
    p.add_argument("--init", type=float, nargs=3, default=[10.0, 10.0, 0.5], metavar=("X", "Y", "DEPTH"))
    p.add_argument("--kernel-width", type=float, default=3.0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--oracle", action="store_true", help="also run the exhaustive grid search")
    p.add_argument("--xy-step", type=float, default=0.5)
    p.add_argument("--depth-step", type=float, default=0.1)
    p.set_defaults(func=cmd_localize, command_path="localize")

    slip = sub.add_parser("slip", help="slip dataset, training and evaluation")
    ssub = slip.add_subparsers(dest="slip_command", required=True, metavar="ACTION")
    p = ssub.add_parser("synth")
    _common(p)
    p.add_argument("--preset", default="anyskin")
    p.add_argument("--instance-seed", type=int, default=None, help="skin seed (defaults to --seed)")
    p.add_argument("--objects", type=int, default=40)
    p.add_argument("--train-objects", type=int, default=30)
    p.add_argument("--trajs", type=int, default=6)
    p.set_defaults(func=cmd_slip_synth, command_path="slip synth")
    p = ssub.add_parser("train")
    _common(p)
    p.add_argument("--data", required=True, type=Path)
    _train_flags(p)
    p.set_defaults(func=cmd_slip_train, command_path="slip train")
    p = ssub.add_parser("eval")
    _common(p)
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--split", default="test")
    p.set_defaults(func=cmd_slip_eval, command_path="slip eval")
    p = ssub.add_parser("xeval")
    _common(p)
    p.add_argument("--presets", default="anyskin,reskin")
    p.add_argument("--instance-seeds", type=int, nargs=2, default=[0, 1], metavar=("A", "B"))
    p.add_argument("--objects", type=int, default=40)
    p.add_argument("--train-objects", type=int, default=30)
    p.add_argument("--trajs", type=int, default=6)
    _train_flags(p)
    p.set_defaults(func=cmd_slip_xeval, command_path="slip xeval")

    daq = sub.add_parser("daq", help="wire frames and logs")
    dsub = daq.add_subparsers(dest="daq_command", required=True, metavar="ACTION")
    p = dsub.add_parser("encode", help="CSV readings -> log (or raw frames with --raw)")
    _common(p)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--first-seq", type=int, default=0)
    p.add_argument("--raw", action="store_true")
    p.set_defaults(func=cmd_daq_encode, command_path="daq encode")
    p = dsub.add_parser("decode", help="raw back-to-back frames -> CSV")
    _common(p)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--resync", action="store_true", help="skip corrupt frames instead of failing")
    p.set_defaults(func=cmd_daq_decode, command_path="daq decode")
    p = dsub.add_parser("replay", help="stream a log through the bounded queue -> CSV")
    _common(p)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--realtime", action="store_true")
    p.add_argument("--baseline", type=int, default=0, help="baseline window in frames (0 disables)")
    p.add_argument("--queue", type=int, default=1 << 16)
    p.set_defaults(func=cmd_daq_replay, command_path="daq replay")
    p = dsub.add_parser("csv", help="log -> CSV")
    _common(p)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.set_defaults(func=cmd_daq_csv, command_path="daq csv")

    p = sub.add_parser("moldgen", help="fingertip and two-part mold STLs from a 2D outline")
    _common(p)
    p.add_argument("--contour", required=True)
    p.add_argument("--format", choices=["points", "dxf"], default=None)
    p.add_argument("--thickness", type=float, default=2.0)
    p.add_argument("--wall", type=float, default=4.0)
    p.add_argument("--clearance", type=float, default=0.2)
    p.set_defaults(func=cmd_moldgen, command_path="moldgen")
    return ap


def _apply_config(ap: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    args = ap.parse_args(argv)
    if args.config is None:
        return args
    try:
        defaults = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        ap.error(f"cannot read config {args.config}: {e}")
    if not isinstance(defaults, dict):
        ap.error("config must be a JSON object")
    # Re-parse with config values as defaults so explicit flags still win.
    known = set(vars(args))
    unknown = sorted(set(k.replace("-", "_") for k in defaults) - known)
    if unknown:
        ap.error(f"unknown config keys: {', '.join(unknown)}")
    for action in _subparser_chain(ap, args):
        action.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
    return ap.parse_args(argv)


def _subparser_chain(ap, args):
    """The leaf subparser selected by ``args``."""
    parser = ap
    for dest in ("command", "slip_command", "daq_command"):
        name = getattr(args, dest, None)
        if name is None:
            continue
        for action in parser._subparsers._group_actions:
            if name in action.choices:
                parser = action.choices[name]
                break
    return [parser]


def run(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = _apply_config(ap, list(sys.argv[1:] if argv is None else argv))
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads is not None:
        if args.threads < 1:
            print("magskin: error: --threads must be >= 1", file=sys.stderr)
            return 2
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    started = time.perf_counter()
    try:
        outputs = args.func(args)
        _write_manifest(Path(outputs[0]), args, outputs, started)
    except (MagskinError, ValueError, OSError) as e:
        print(f"magskin: error: {e}", file=sys.stderr)
        return 1
    text = getattr(args, "stdout_text", None)
    print(text if text is not None else "\n".join(str(p) for p in outputs))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
