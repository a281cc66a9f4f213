"""Command-line entry point: ``curvprobe <subcommand> ...``.

Every run writes its artifacts plus a ``manifest.json`` to ``--out``;
``curvprobe replay MANIFEST`` re-runs the recorded subcommand with the same
resolved flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import artifacts as A
from .attacks import KINDS, AttackConfig, attack_dataset, jump_dominance, robustness_by_curvedness
from .boundary import TravelParams, epsilon_vs_confidence
from .calibration import calibrate_logits, report_rows
from .data import load_checkpoint, load_dataset, subset
from .directions import MODES, DirectionMode
from .errors import CurvprobeError
from .projection import BASES, GridVizConfig, grid_features, grid_rows, project2d
from .trainer import TrainConfig, dynamics_report, theta1_batch, train
from .trajectory import boundary_distance_report, curvedness_stats, theta1_pairs, trajectories
from .zoo import ArchConfig, build_model, outputs

logger = logging.getLogger("curvprobe")


def _default_seed() -> int:
    raw = os.environ.get("CURVPROBE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise SystemExit(f"curvprobe: error: CURVPROBE_SEED must be an integer, got {raw!r}") from None


def _csv_list(kind):
    def parse(s: str):
        try:
            return [kind(v) for v in s.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _step(s: str):
    if s == "boundary":
        return None
    try:
        v = float(s)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a float or 'boundary'") from None
    if not v > 0:
        raise argparse.ArgumentTypeError("step must be positive")
    return v


def _modes(s: str):
    out = [m for m in s.split(",") if m]
    bad = [m for m in out if m not in MODES]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"unknown modes {bad}; choose from {','.join(MODES)}")
    return out


# -- shared data plumbing ------------------------------------------------------------
def _load_data(args, default_split: str):
    ds = load_dataset(args.data, args.format, args.split or default_split)
    if args.subset is not None and args.subset < len(ds):
        ds = subset(ds, args.subset, args.seed)
    return ds


def _load_model(args):
    ck = load_checkpoint(args.model)
    ck.model.eval()
    return ck.model


def _check_shapes(model, ds):
    if tuple(ds.input_shape) != model.config.input_shape:
        raise CurvprobeError(f"dataset images have shape {ds.input_shape}, "
                             f"model expects {model.config.input_shape}")


# -- subcommands ---------------------------------------------------------------------
def cmd_train(args) -> None:
    out = Path(args.out)
    ds = _load_data(args, "train")
    c, h, _ = ds.input_shape
    config = ArchConfig.for_dataset(args.arch, c, h, ds.num_classes)
    model = build_model(config, args.seed)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, weight_decay=args.wd,
                      optimizer=args.optimizer, schedule=args.schedule, ckpt_every=args.ckpt_every,
                      seed=args.seed, track_n=args.track_n, theta_step=args.theta_step)
    res = train(model, ds, cfg, out)
    A.write_csv(out / "train_history.csv", [{"epoch": i + 1, "train_loss": v} for i, v in enumerate(res.history)],
                ["epoch", "train_loss"])
    rep = dynamics_report(res.log)
    cols = ["sample_id", "final_theta1"] + [f"d{a}_{b}" for a, b in zip(res.log.epochs, res.log.epochs[1:])]
    A.write_csv(out / "dynamics_loss_change.csv", rep["loss_change"], cols)
    A.write_csv(out / "dynamics_loss_scatter.csv", rep["loss_scatter"],
                ["sample_id", "epoch", "loss", "loss_change_to_end", "final_theta1"])
    A.write_csv(out / "dynamics_theta_scatter.csv", rep["theta_scatter"],
                ["sample_id", "epoch", "theta1", "final_theta1"])
    heat = np.array([[r[c] for c in cols[2:]] for r in rep["loss_change"]]).reshape(len(rep["loss_change"]), -1)
    A.heatmap_svg(out / "dynamics_loss_change.svg", heat, "checkpoint interval", "sample (sorted by final theta_1)", 2.0)


def cmd_calibrate(args) -> None:
    out = Path(args.out)
    model = _load_model(args)
    ds = _load_data(args, "test")
    _check_shapes(model, ds)
    logits, _ = outputs(model, ds.images)
    report = calibrate_logits(logits, ds.labels, args.bins)
    rows = report_rows(report)
    A.write_csv(out / "calibration.csv", rows, ["bin", "lo", "hi", "count", "P", "acc", "conf"])
    A.write_csv(out / "calibration_summary.csv", [{"n": report.n, "bins": args.bins, "ECE": report.ece,
                                                  "sECE": report.sece}])
    A.reliability_svg(out / "reliability.svg", rows)
    print(f"ECE={report.ece!r} sECE={report.sece!r} n={report.n}")


def _travel_params(args) -> TravelParams:
    return TravelParams(eps_i=args.eps_i, eps_d=args.eps_d, eps_t=args.eps_t, max_iter=args.max_iter,
                        eps_max=args.eps_max, literal=args.literal)


def cmd_boundary(args) -> None:
    out = Path(args.out)
    model = _load_model(args)
    ds = _load_data(args, "test")
    _check_shapes(model, ds)
    mode = DirectionMode(args.mode, args.eps_r, args.seed)
    res = epsilon_vs_confidence(model, ds.images, ds.labels, mode, _travel_params(args), args.bins,
                                ds.indices, args.jobs)
    A.write_csv(out / "boundary.csv", res["rows"],
                ["sample_id", "label", "confidence", "eps_star", "crossed", "iterations", "error"])
    A.write_csv(out / "boundary_bins.csv", res["bins"], ["bin", "lo", "hi", "count", "mean_eps"])
    ok = [r for r in res["rows"] if r["crossed"] and r["eps_star"] > 0]
    mids = [(b["lo"] + b["hi"]) / 2 for b in res["bins"] if b["count"]]
    means = [b["mean_eps"] for b in res["bins"] if b["count"]]
    A.scatter_svg(out / "boundary.svg", [r["confidence"] for r in ok], [r["eps_star"] for r in ok],
                  "confidence", "boundary length", (mids, means), logy=bool(ok))
    print(f"samples={len(res['rows'])} skipped_misclassified={res['skipped']} crossed={len(ok)}")


def _trajectory_rows(records) -> list[dict]:
    rows = []
    for r in records:
        for n in range(r.n_steps):
            rows.append({"sample_id": r.sample_id, "mode": r.mode, "seed": r.seed, "n": n + 1,
                         "omega": float(r.omega[n]), "theta": float(r.theta[n]) if n < r.theta.size else math.nan,
                         "epsilon": r.epsilon, "repr_distance": r.repr_distance, "theta1": r.theta1,
                         "total_turn": r.total_turn, "confidence": r.confidence, "crossed": r.crossed})
    return rows


def cmd_trajectory(args) -> None:
    out = Path(args.out)
    model = _load_model(args)
    ds = _load_data(args, "test")
    _check_shapes(model, ds)
    params = _travel_params(args)
    runs = {}
    failures = []
    for seed in args.seeds:
        modes = [DirectionMode(m, args.eps_r, seed) for m in args.modes]
        recs, fails = trajectories(model, ds.images, ds.labels, modes, args.n_steps, args.step, params,
                                   ds.indices, args.jobs)
        runs[seed] = recs
        failures += fails
    all_recs = [r for s in args.seeds for r in runs[s]]
    cols = ["sample_id", "mode", "seed", "n", "omega", "theta", "epsilon", "repr_distance", "theta1",
            "total_turn", "confidence", "crossed"]
    A.write_csv(out / "trajectory.csv", _trajectory_rows(all_recs), cols)
    A.write_csv(out / "trajectory_failures.csv", failures, ["sample_id", "mode", "seed", "error"])
    first = runs[args.seeds[0]]
    if len(first) >= 2:
        stats = curvedness_stats(first, early=4)
        A.write_csv(out / "curvedness_correlation.csv", stats["correlation"], ["mode", "n", "pearson"])
        A.write_csv(out / "early_steps.csv", stats["early_steps"])
        A.write_csv(out / "joint.csv", stats["joint"], ["sample_id", "mode", "confidence", "repr_distance", "theta1"])
        A.write_csv(out / "whole_travel.csv", stats["whole"], ["sample_id", "mode", "omega_sum", "omega_norm", "theta"])
        A.histogram_svg(out / "theta_early_hist.svg", {f"theta{k}": [r[f"theta{k}"] for r in stats["early_steps"]]
                                                      for k in range(1, 5)}, "turning angle (rad)")
        A.histogram_svg(out / "omega_early_hist.svg", {f"omega{k}": [r[f"omega{k}"] for r in stats["early_steps"]]
                                                      for k in range(1, 5)}, "step magnitude")
        A.scatter_svg(out / "joint.svg", [r["confidence"] for r in stats["joint"]],
                      [r["repr_distance"] for r in stats["joint"]], "confidence", "representation distance")
    if len(args.seeds) >= 2:
        A.write_csv(out / "theta1_pairs.csv", theta1_pairs(runs[args.seeds[0]], runs[args.seeds[1]]),
                    ["sample_id", "mode", "seed_a", "seed_b", "theta1_a", "theta1_b"])
    if not args.no_distance:
        modes = [DirectionMode(m, args.eps_r, args.seeds[0]) for m in args.modes]
        rep = boundary_distance_report(model, ds.images, ds.labels, modes, args.n_steps, params, ds.indices, args.jobs)
        A.write_csv(out / "boundary_distance.csv", rep["rows"],
                    ["sample_id", "mode", "confidence", "eps_star", "crossed", "repr_distance",
                     "repr_distance_orig", "theta1", "error"])
        A.write_csv(out / "jump_pairs.csv", rep["jump_pairs"],
                    ["sample_id", "eps_fgsm", "eps_rand_jump_fgsm", "theta1_fgsm"])
        A.histogram_svg(out / "distance_hist.svg",
                        {m: [r["repr_distance"] for r in rep["rows"] if r["mode"] == m] for m in args.modes},
                        "distance to boundary in representation space")
    print(f"records={len(all_recs)} failures={len(failures)}")


def cmd_attack(args) -> None:
    out = Path(args.out)
    model = _load_model(args)
    ds = _load_data(args, "test")
    _check_shapes(model, ds)
    th = theta1_batch(model, ds.images, ds.labels, args.theta_step)
    theta = {int(s): float(t) for s, t in zip(ds.indices, th)}
    cfg = AttackConfig(kind=args.kind, eps=args.eps, iters=args.iters, eps_r=args.eps_r, seed=args.seed,
                       travel=_travel_params(args))
    rows = attack_dataset(model, ds.images, ds.labels, cfg, theta, ds.indices, args.jobs)
    cols = ["sample_id", "kind", "eps_budget", "eps_used", "psnr_db", "success", "label_before", "label_after",
            "theta1", "eps_travel", "error"]
    A.write_csv(out / "attacks.csv", rows, cols)
    rob = robustness_by_curvedness(rows, args.theta_bins)
    A.write_csv(out / "robustness.csv", rob["bins"], ["bin", "theta_lo", "theta_hi", "count", "accuracy"])
    A.bar_svg(out / "robustness.svg", [f"{b['theta_lo']:.2f}" for b in rob["bins"]],
              [b["accuracy"] for b in rob["bins"]], "theta_1 bin", "accuracy after attack")
    summary = {"kind": args.kind, "n": rob["n"], "overall_accuracy": rob["overall_accuracy"]}
    if args.kind == "rand_jump_fgsm":
        base = attack_dataset(model, ds.images, ds.labels, AttackConfig("fgsm_travel", travel=cfg.travel), theta,
                              ds.indices, args.jobs)
        by = {r["sample_id"]: r for r in base}
        pairs = [{"sample_id": r["sample_id"], "theta1": r["theta1"], "eps_fgsm": by[r["sample_id"]]["eps_used"],
                  "eps_rand_jump_fgsm": r["eps_used"], "psnr_fgsm": by[r["sample_id"]]["psnr_db"],
                  "psnr_rand_jump_fgsm": r["psnr_db"]} for r in rows if r["sample_id"] in by]
        A.write_csv(out / "attack_jump_pairs.csv", pairs,
                    ["sample_id", "theta1", "eps_fgsm", "eps_rand_jump_fgsm", "psnr_fgsm", "psnr_rand_jump_fgsm"])
        dom = jump_dominance(rows, base)
        summary.update({f"curved_{k}": v for k, v in dom.items()})
    A.write_csv(out / "attack_summary.csv", [summary])
    print(" ".join(f"{k}={v}" for k, v in summary.items()))


def cmd_gridviz(args) -> None:
    out = Path(args.out)
    model = _load_model(args)
    ds = _load_data(args, "test")
    _check_shapes(model, ds)
    if not 0 <= args.image < len(ds):
        raise CurvprobeError(f"--image {args.image} out of range for {len(ds)} samples")
    cfg = GridVizConfig(alpha=args.alpha, n=args.n, basis=args.basis, seed=args.seed, eps_r=args.eps_r)
    g = grid_features(model, ds.images[args.image], int(ds.labels[args.image]), cfg, int(ds.indices[args.image]))
    proj = project2d(g.z, cfg.basis, cfg.seed)
    A.write_csv(out / "grid.csv", grid_rows(proj, cfg.n), ["i", "j", "px", "py"])
    A.write_csv(out / "grid_meta.csv", [{"sample_id": int(ds.indices[args.image]), "alpha": g.alpha, "n": cfg.n,
                                         "basis": cfg.basis, "fallback": proj.fallback}])
    A.grid_svg(out / "grid.svg", proj.points)
    if proj.fallback:
        print("warning: pca basis degenerate, used random_orthonormal", file=sys.stderr)


# -- parser --------------------------------------------------------------------------
def _data_flags(p, required_model: bool = True) -> None:
    if required_model:
        p.add_argument("--model", required=True, help="checkpoint (.cprb)")
    p.add_argument("--data", required=True, help="dataset file or directory")
    p.add_argument("--format", choices=("idx", "cifar"), default="cifar")
    p.add_argument("--split", choices=("train", "test"), default=None)
    p.add_argument("--subset", type=int, default=None, help="seeded random subset size")


def _travel_flags(p) -> None:
    p.add_argument("--eps-i", type=float, default=1e-3)
    p.add_argument("--eps-d", type=float, default=0.9)
    p.add_argument("--eps-t", type=float, default=0.01)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--eps-max", type=float, default=1.0)
    p.add_argument("--literal", action="store_true", help="original while-eps<eps_t loop")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvprobe", description="Curvedness probes for image classifiers.")
    parser.add_argument("--version", action="version", version=f"curvprobe {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    seed = _default_seed()

    def common(p):
        p.add_argument("--seed", type=int, default=seed)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model and log per-sample dynamics")
    p.add_argument("--arch", choices=("cnn", "vit", "linear"), required=True)
    _data_flags(p, required_model=False)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--wd", type=float, default=0.05)
    p.add_argument("--optimizer", choices=("adamw", "sgd"), default="adamw")
    p.add_argument("--schedule", choices=("constant", "cosine"), default="constant")
    p.add_argument("--ckpt-every", type=int, default=10)
    p.add_argument("--track-n", type=int, default=1000)
    p.add_argument("--theta-step", type=float, default=0.002)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="reliability table, ECE and sECE")
    _data_flags(p)
    p.add_argument("--bins", type=int, default=10)
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("boundary", help="boundary length against confidence")
    _data_flags(p)
    p.add_argument("--mode", choices=MODES, default="fgsm")
    p.add_argument("--eps-r", type=float, default=0.05)
    p.add_argument("--bins", type=int, default=10)
    _travel_flags(p)
    common(p)
    p.set_defaults(func=cmd_boundary)

    p = sub.add_parser("trajectory", help="feature-space trajectories and curvedness statistics")
    _data_flags(p)
    p.add_argument("--modes", type=_modes, default=["fgsm"], help="comma-separated direction modes")
    p.add_argument("--n-steps", type=int, default=50)
    p.add_argument("--step", type=_step, default=0.002, help="per-step length, or 'boundary'")
    p.add_argument("--eps-r", type=float, default=0.05)
    p.add_argument("--seeds", type=_csv_list(int), default=None, help="comma-separated direction seeds")
    p.add_argument("--no-distance", action="store_true", help="skip the boundary-distance report")
    _travel_flags(p)
    common(p)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("attack", help="adversarial attacks and robustness by theta_1")
    _data_flags(p)
    p.add_argument("--kind", choices=KINDS, default="ifgsm")
    p.add_argument("--eps", type=float, default=0.002)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--eps-r", type=float, default=0.05)
    p.add_argument("--theta-bins", type=int, default=10)
    p.add_argument("--theta-step", type=float, default=0.002)
    _travel_flags(p)
    common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("gridviz", help="2D projection of features on an input grid")
    _data_flags(p)
    p.add_argument("--image", type=int, required=True, help="index into the loaded split")
    p.add_argument("--alpha", type=float, default=None, help="grid half-extent (default: 2x boundary length)")
    p.add_argument("--n", type=int, default=7)
    p.add_argument("--basis", choices=BASES, default="pca_top2")
    p.add_argument("--eps-r", type=float, default=0.0)
    common(p)
    p.set_defaults(func=cmd_gridviz)

    p = sub.add_parser("replay", help="re-run a subcommand from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output directory (default: the recorded one)")
    p.set_defaults(func=None)
    return parser


COMMANDS = {"train": cmd_train, "calibrate": cmd_calibrate, "boundary": cmd_boundary,
            "trajectory": cmd_trajectory, "attack": cmd_attack, "gridviz": cmd_gridviz}


def _validate(parser, args) -> None:
    for name in ("epochs", "batch", "ckpt_every", "track_n", "bins", "n_steps", "iters", "theta_bins", "n",
                 "jobs", "subset", "max_iter"):
        v = getattr(args, name, None)
        if v is not None and v < (0 if name in ("epochs", "subset", "track_n") else 1):
            parser.error(f"--{name.replace('_', '-')} must be {'>= 0' if name in ('epochs', 'subset', 'track_n') else '>= 1'}")
    if getattr(args, "seeds", "x") is None:
        args.seeds = [args.seed]
    if getattr(args, "n_steps", 2) < 2:
        parser.error("--n-steps must be >= 2")
    for name in ("lr", "wd", "eps", "eps_r"):
        v = getattr(args, name, None)
        if v is not None and v < 0:
            parser.error(f"--{name.replace('_', '-')} must be non-negative")


def _manifest(args, flags: dict, started: float) -> dict:
    paths = {k: str(Path(flags[k]).resolve()) for k in ("data", "model") if flags.get(k)}
    seeds = flags.get("seeds") or [flags.get("seed")]
    return {"subcommand": args.command, "flags": flags, "seeds": seeds, "inputs": paths,
            "out": str(Path(args.out).resolve()), "version": __version__,
            "duration_s": round(time.perf_counter() - started, 3)}


def run(args, started: float) -> None:
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "command", "verbose")}
    COMMANDS[args.command](args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(_manifest(args, flags, started), f, indent=2, sort_keys=True)
        f.write("\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        if args.command == "replay":
            with open(args.manifest, encoding="utf-8") as f:
                man = json.load(f)
            if man.get("subcommand") not in COMMANDS:
                raise CurvprobeError(f"manifest names unknown subcommand {man.get('subcommand')!r}")
            flags = dict(man["flags"])
            if args.out is not None:
                flags["out"] = args.out
            args = argparse.Namespace(command=man["subcommand"], verbose=args.verbose, **flags)
        else:
            _validate(parser, args)
        run(args, started)
    except (CurvprobeError, OSError, ValueError, KeyError) as exc:
        print(f"curvprobe: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
