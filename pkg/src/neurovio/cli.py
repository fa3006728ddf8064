"""Command-line entry point: ``neurovio {gen,train,eval,bound,fly,report}``.

Settings resolve as flags > ``--config`` file > built-in defaults, and every
command writes the resolved settings to ``<out>/config.echo`` in the same
``key = value`` format, so the echo can be passed back with ``--config``.
``--assert-*`` flags turn acceptance thresholds into the exit code.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

logger = logging.getLogger("neurovio")

EXIT_ASSERTION = 3


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text in (None, "", "none", "None") else float(text)


def _opt_str(text):
    return None if text in (None, "", "none", "None") else str(text)


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable
    default: object
    help: str = ""

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


GLOBAL = [
    Option("seed", int, 0, "global seed"),
    Option("out", str, "out", "output directory"),
]

COMMANDS: dict[str, list[Option]] = {
    "gen": [
        Option("duration", float, 20.1, "flight duration in seconds (10 frames per second)"),
        Option("corrupt", float, 0.2, "fraction of frames zeroed and flagged"),
        Option("train_fraction", float, 0.8, "leading share of observations used for training"),
        Option("tour", str, "shuttle", "pillar tour: shuttle or random"),
        Option("imu_rate", int, 100, "IMU rate in Hz"),
        Option("camera_rate", int, 10, "camera rate in Hz"),
        Option("height", int, 36, "image rows"),
        Option("width", int, 64, "image columns"),
    ],
    "train": [
        Option("data", str, "data", "dataset directory written by gen"),
        Option("epochs", int, 300, "training epochs"),
        Option("lr", float, 1e-4, "Adam learning rate"),
        Option("loss", str, "sigma", "loss weighting: sigma (learned) or beta (fixed)"),
        Option("beta", float, 500.0, "rotation weight for --loss beta"),
        Option("gamma", float, 0.5, "L1 share of the pose loss"),
        Option("seq_len", int, 8, "truncated backpropagation window"),
        Option("teacher_forcing", float, 0.0, "probability of feeding the true previous pose"),
        Option("visual_aux", float, 1.0, "weight of the auxiliary position readout on visual features"),
        Option("carry_state", _bool, True, "carry the core LSTM state across training windows"),
        Option("resume", _opt_str, None, "checkpoint to continue from"),
        Option("validate", _bool, True, "score the test split after every epoch"),
    ],
    "eval": [
        Option("data", str, "data", "dataset directory (its test/ split if present)"),
        Option("checkpoint", _opt_str, None, "trained checkpoint"),
        Option("estimator", str, "learned", "learned, untrained or passthrough"),
        Option("assert_rmse", _opt_float, None, "fail if translation RMSE exceeds this (m)"),
        Option("assert_rmse_fraction", _opt_float, None,
               "fail if RMSE exceeds this fraction of the bounding-box diagonal"),
        Option("assert_fallback", _bool, False,
               "fail unless IMU-only steps equal corrupted frames and corrupted RMSE >= clean RMSE"),
    ],
    "bound": [
        Option("data", str, "data", "dataset directory (its test/ split if present)"),
        Option("checkpoint", _opt_str, None, "trained checkpoint for the learned estimates"),
        Option("accel_sigma", float, 1.0, "white-acceleration std of the motion model (m/s^2)"),
        Option("pixels", float, 1.0, "measurement error in pixels"),
        Option("altitude", float, 3.0, "altitude at which pixels are converted to meters"),
        Option("self_test", _bool, False, "print the scalar Riccati fixed point and exit"),
        Option("assert_ratio", _opt_float, None, "fail if learned RMSE / KF radial std exceeds this"),
    ],
    "fly": [
        Option("estimator", str, "truth", "truth, kf or learned"),
        Option("checkpoint", _opt_str, None, "checkpoint for the learned estimator"),
        Option("mission", _opt_str, None, "mission file (default: built-in landing mission)"),
        Option("corrupt", float, 0.0, "probability that a camera frame is zeroed"),
        Option("assert_landing", _opt_float, None, "fail if landing error exceeds this (m)"),
        Option("assert_time", _opt_float, None, "fail unless touchdown happens before this time (s)"),
    ],
    "report": [
        Option("inputs", str, "out", "comma-separated run directories to summarize"),
    ],
}


def read_config(path) -> dict[str, str]:
    from .dataio.euroc import read_meta
    return read_meta(path)


def resolve(command: str, ns: argparse.Namespace) -> dict:
    """Merge flags, config file and defaults for ``command``."""
    options = GLOBAL + COMMANDS[command]
    from_file = read_config(ns.config) if ns.config else {}
    known = {o.name for o in options} | {"command"}
    unknown = set(from_file) - known
    if unknown:
        raise SystemExit(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
    if from_file.get("command", command) != command:
        raise SystemExit(f"config was written for {from_file['command']!r}, not {command!r}")
    cfg = {}
    for opt in options:
        flag_value = getattr(ns, opt.name)
        if flag_value is not None:
            cfg[opt.name] = flag_value
        elif opt.name in from_file:
            cfg[opt.name] = opt.type(from_file[opt.name])
        else:
            cfg[opt.name] = opt.default
    return cfg


def write_echo(command: str, cfg: dict, out: Path) -> None:
    lines = [f"command = {command}"]
    for key, value in cfg.items():
        lines.append(f"{key} = {'none' if value is None else value}")
    (out / "config.echo").write_text("\n".join(lines) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neurovio", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, options in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value settings file")
        for opt in GLOBAL + options:
            p.add_argument(opt.flag, dest=opt.name, type=opt.type, default=None,
                           help=f"{opt.help} (default: {opt.default})")
    return parser


# ---------------------------------------------------------------- helpers

def _split_dir(data: Path, name: str) -> Path:
    return data / name if (data / name).is_dir() else data


def _assert(ok: bool, message: str, failures: list) -> None:
    print(("PASS " if ok else "FAIL ") + message)
    if not ok:
        failures.append(message)


# ---------------------------------------------------------------- commands

def cmd_gen(cfg: dict, out: Path) -> int:
    from .dataio import corrupt_frames, save_euroc_layout, split
    from .dataio.render import WorldSpec
    from .dataio.synthetic import FlightSpec, generate_synthetic

    flight = FlightSpec(duration=cfg["duration"], imu_rate=cfg["imu_rate"], camera_rate=cfg["camera_rate"],
                        image_shape=(cfg["height"], cfg["width"], 1), tour=cfg["tour"])
    ds = generate_synthetic(WorldSpec(), flight, cfg["seed"])
    ds = corrupt_frames(ds, cfg["corrupt"], cfg["seed"])
    train, test = split(ds, cfg["train_fraction"])
    save_euroc_layout(ds, out / "full")
    save_euroc_layout(train, out / "train")
    save_euroc_layout(test, out / "test")
    n_frames = len(ds) + 1
    n_bad = sum(o.frame.corrupted for o in ds)
    print(f"wrote {n_frames} frames ({len(ds)} observations, {n_bad} corrupted) to {out}")
    print(f"train: {len(train)} observations, test: {len(test)} observations")
    return 0


def _regressor_from(cfg: dict, train_ds):
    from .estimator import FusionPoseRegressor

    if cfg["resume"]:
        est = FusionPoseRegressor.load(cfg["resume"])
        est.set_params(warm_start=True, learning_rate=cfg["lr"])
        return est
    h, w = train_ds.observations[0].frame.pixels.shape[:2]
    return FusionPoseRegressor(image_shape=(h, w, 1), gamma=cfg["gamma"], loss_mode=cfg["loss"],
                               beta=cfg["beta"], learning_rate=cfg["lr"], sequence_length=cfg["seq_len"],
                               teacher_forcing=cfg["teacher_forcing"], visual_aux_weight=cfg["visual_aux"],
                               carry_state=cfg["carry_state"], random_state=cfg["seed"], warm_start=True)


def cmd_train(cfg: dict, out: Path) -> int:
    from . import plots
    from .dataio import load_euroc_layout

    data = Path(cfg["data"])
    if not data.exists():
        raise FileNotFoundError(f"dataset directory {data} does not exist")
    train_ds = load_euroc_layout(_split_dir(data, "train"))
    test_dir = data / "test"
    val_ds = load_euroc_layout(test_dir) if cfg["validate"] and test_dir.is_dir() else None
    est = _regressor_from(cfg, train_ds)
    est.set_params(epochs=1)
    for _ in range(cfg["epochs"]):
        est.fit(train_ds, validation=val_ds)
        row = est.history_[-1]
        logger.info("epoch %d  loss %.6f  val %.4f m", row["epoch"], row["train_loss"], row["val_trans_rmse_m"])
    est.save(out / "model.ckpt")
    if est.best_params_ is not None:
        est.save(out / "best.ckpt", est.best_params_)
    est.write_log(out / "train_log.csv")
    hist = est.history_
    if hist:
        epochs = [r["epoch"] for r in hist]
        plots.error_curves(out / "loss.svg", epochs, {"training loss": [r["train_loss"] for r in hist]},
                           "epoch", "loss")
        if val_ds is not None:
            plots.error_curves(out / "val_rmse.svg", epochs,
                               {"test translation RMSE": [r["val_trans_rmse_m"] for r in hist]},
                               "epoch", "RMSE [m]")
        first, last = hist[0]["train_loss"], hist[-1]["train_loss"]
        print(f"epochs {hist[0]['epoch']}..{hist[-1]['epoch']}: loss {first:.6f} -> {last:.6f}")
        if val_ds is not None:
            print(f"test translation RMSE {hist[-1]['val_trans_rmse_m']:.4f} m")
    return 0


def _eval_regressor(cfg: dict, ds):
    from .estimator import FusionPoseRegressor
    from .flightsim import PassthroughRegressor

    kind = cfg["estimator"]
    if kind == "passthrough":
        return PassthroughRegressor()
    if kind == "untrained":
        h, w = ds.observations[0].frame.pixels.shape[:2]
        est = FusionPoseRegressor(image_shape=(h, w, 1), random_state=cfg["seed"])
        est._initialize(ds)
        return est
    if kind == "learned":
        if not cfg["checkpoint"]:
            raise SystemExit("eval --estimator learned needs --checkpoint")
        return FusionPoseRegressor.load(cfg["checkpoint"])
    raise SystemExit(f"unknown estimator {kind!r}")


def cmd_eval(cfg: dict, out: Path) -> int:
    from . import plots
    from .dataio import load_euroc_layout
    from .flightsim import evaluate_open_loop

    data = Path(cfg["data"])
    ds = load_euroc_layout(_split_dir(data, "test"))
    report = evaluate_open_loop(ds, _eval_regressor(cfg, ds))
    # the RMSE fraction refers to the whole recorded trajectory when gen wrote it
    full = data / "full"
    diag = (load_euroc_layout(full).ground_truth() if full.is_dir() else report.truth).bounding_box_diagonal()
    text = report.to_text() + f"bbox_diagonal_m = {diag!r}\n"
    (out / "metrics.txt").write_text(text)
    report.estimates.to_csv(out / "estimates.csv")
    flagged = np.array([o.frame.corrupted for o in ds], dtype=bool)
    plots.trajectory_overlay(out / "overlay.svg", report.truth.positions, report.estimates.positions,
                             "open-loop estimate", corrupted=flagged)
    sys.stdout.write(text)

    failures: list = []
    if cfg["assert_rmse"] is not None:
        _assert(report.trans_rmse_m <= cfg["assert_rmse"],
                f"translation RMSE {report.trans_rmse_m:.4f} <= {cfg['assert_rmse']}", failures)
    if cfg["assert_rmse_fraction"] is not None:
        limit = cfg["assert_rmse_fraction"] * diag
        _assert(report.trans_rmse_m < limit, f"translation RMSE {report.trans_rmse_m:.4f} < {limit:.4f}", failures)
    if cfg["assert_fallback"]:
        _assert(report.imu_only_steps == report.n_corrupted,
                f"IMU-only steps {report.imu_only_steps} == corrupted frames {report.n_corrupted}", failures)
        _assert(report.corrupted_trans_rmse_m >= report.clean_trans_rmse_m,
                f"corrupted RMSE {report.corrupted_trans_rmse_m:.4f} >= clean RMSE "
                f"{report.clean_trans_rmse_m:.4f}", failures)
    return EXIT_ASSERTION if failures else 0


def cmd_bound(cfg: dict, out: Path) -> int:
    from . import plots
    from .dataio import load_euroc_layout
    from .dataio.render import WorldSpec
    from .estimator import FusionPoseRegressor
    from .kalman import (KalmanModel, bound_report, constant_velocity_model, pixel_noise_sigma,
                         riccati_steady_state)

    if cfg["self_test"]:
        P, iters = riccati_steady_state(KalmanModel(1.0, 1.0, 1.0, 1.0), tol=1e-12)
        value = float(P[0, 0])
        print(f"scalar Riccati fixed point (A=H=Q=R=1): {value:.12f} after {iters} iterations")
        print(f"golden ratio (1+sqrt(5))/2:             {(1 + 5 ** 0.5) / 2:.12f}")
        (out / "self_test.txt").write_text(f"fixed_point = {value!r}\niterations = {iters}\n")
        return 0 if abs(value - (1 + 5 ** 0.5) / 2) < 1e-9 else EXIT_ASSERTION

    ds = load_euroc_layout(_split_dir(Path(cfg["data"]), "test"))
    truth = ds.ground_truth()
    if cfg["checkpoint"]:
        ml = FusionPoseRegressor.load(cfg["checkpoint"]).predict(ds)
    else:
        ml = truth
    world = WorldSpec.parse(ds.meta.world) if ds.meta.world else WorldSpec()
    width = ds.observations[0].frame.pixels.shape[1]
    sigma = pixel_noise_sigma(world, cfg["altitude"], width, cfg["pixels"])
    dt = float(np.median(np.diff(truth.timestamps)))
    model = constant_velocity_model(dt, cfg["accel_sigma"], sigma)
    report = bound_report(model, truth, ml, seed=cfg["seed"])
    report.to_csv(out / "bound.csv")
    summary = f"measurement sigma (m): {sigma:.6g}\n" + report.summary()
    (out / "bound_summary.txt").write_text(summary)
    steps = np.arange(len(report.timestamps))
    plots.error_curves(out / "bound.svg", steps,
                       {"KF error": report.kf_errors, "learned error": report.ml_errors,
                        "KF steady-state std": np.full(len(steps), report.steady_radial_std)},
                       "step", "position error [m]")
    sys.stdout.write(summary)
    failures: list = []
    if cfg["assert_ratio"] is not None:
        ratio = report.ml_rmse / report.steady_radial_std
        _assert(ratio <= cfg["assert_ratio"], f"learned/KF ratio {ratio:.3f} <= {cfg['assert_ratio']}", failures)
    return EXIT_ASSERTION if failures else 0


def cmd_fly(cfg: dict, out: Path) -> int:
    from . import plots
    from .flightsim import Mission, SensorSpec, fly, landing_mission, make_estimator

    mission = Mission.load(cfg["mission"]) if cfg["mission"] else landing_mission()
    estimator = make_estimator(cfg["estimator"], cfg["checkpoint"], seed=cfg["seed"])
    log = fly(mission, estimator, seed=cfg["seed"], sensors=SensorSpec(corrupt_fraction=cfg["corrupt"]))
    log.to_csv(out / "flight_log.csv")
    mission.save(out / "mission.txt")
    corrupted = log.array[:, -1].astype(bool)
    plots.trajectory_overlay(out / "flight.svg", log.true_positions, log.estimated_positions,
                             f"closed loop ({cfg['estimator']})", corrupted=corrupted, pad=mission.pad)
    lines = [f"estimator = {cfg['estimator']}", f"touchdown = {log.touchdown}",
             f"touchdown_time_s = {log.touchdown_time!r}", f"duration_s = {log.duration!r}",
             f"final_position = {','.join(repr(float(v)) for v in log.final_position)}",
             f"corrupted_frames = {log.corrupted_frames}", f"imu_only_steps = {log.imu_only_steps}"]
    if mission.pad is not None:
        lines.append(f"landing_error_m = {log.landing_error!r}")
    if log.aborted:
        lines.append(f"aborted = {log.aborted}")
    text = "\n".join(lines) + "\n"
    (out / "flight_summary.txt").write_text(text)
    sys.stdout.write(text)

    failures: list = []
    if cfg["assert_landing"] is not None:
        _assert(log.touchdown and log.landing_error < cfg["assert_landing"],
                f"landing error {log.landing_error:.4f} m < {cfg['assert_landing']}", failures)
    if cfg["assert_time"] is not None:
        _assert(log.touchdown and log.touchdown_time < cfg["assert_time"],
                f"touchdown time {log.touchdown_time} s < {cfg['assert_time']}", failures)
    return EXIT_ASSERTION if failures else 0


def cmd_report(cfg: dict, out: Path) -> int:
    sections = []
    for name in [s.strip() for s in cfg["inputs"].split(",") if s.strip()]:
        run = Path(name)
        parts = [f"## {run}\n"]
        for fname in ("metrics.txt", "bound_summary.txt", "flight_summary.txt", "self_test.txt"):
            path = run / fname
            if path.exists():
                parts.append(f"### {fname}\n\n```\n{path.read_text()}```\n")
        log = run / "train_log.csv"
        if log.exists():
            rows = log.read_text().splitlines()
            parts.append(f"### training log\n\n{len(rows) - 1} epochs; first and last rows:\n\n```\n"
                         + "\n".join([rows[0], rows[1], rows[-1]] if len(rows) > 2 else rows) + "\n```\n")
        figures = sorted(p.name for p in run.glob("*.svg"))
        if figures:
            parts.append("### figures\n\n" + "\n".join(f"- {run / f}" for f in figures) + "\n")
        sections.append("\n".join(parts))
    (out / "report.md").write_text("# Run report\n\n" + "\n".join(sections))
    print(f"wrote {out / 'report.md'}")
    return 0


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "bound": cmd_bound,
            "fly": cmd_fly, "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = resolve(args.command, args)
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return 2
    write_echo(args.command, cfg, out)
    try:
        return HANDLERS[args.command](cfg, out)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
