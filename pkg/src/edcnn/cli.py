"""Command-line interface: ``edcnn {simulate,train,capacity,check,experiment}``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.  Seeds come
from ``--seed``, else the ``EDCNN_SEED`` environment variable, else 42.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from edcnn import __version__

DEFAULT_SEED = 42
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def resolve_seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("EDCNN_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"EDCNN_SEED must be an integer, got {env!r}") from None
    return DEFAULT_SEED


def _echo_config(command: str, cfg: dict) -> None:
    print(f"# {command} config: {json.dumps(cfg, sort_keys=True, default=str)}", flush=True)


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    from edcnn.datagen import gen_sinc_train, write_csv
    seed = resolve_seed(args.seed)
    if args.dim < 1 or args.m < 1:
        raise UsageError("--dim and --m must be positive")
    if args.noise_var < 0:
        raise UsageError("--noise-var must be >= 0")
    _echo_config("simulate", {"dim": args.dim, "m": args.m, "noise_var": args.noise_var,
                              "seed": seed, "out": args.out})
    data = gen_sinc_train(args.dim, args.m, args.noise_var, seed)
    write_csv(data, args.out)
    print(f"wrote {data.m} rows x {data.d} features (+ target) to {args.out}")
    return EXIT_OK


# -- train -------------------------------------------------------------------

_TRAIN_FLAGS = {
    "lr": "learning_rate",
    "beta1": "adam_beta1",
    "beta2": "adam_beta2",
    "adam_eps": "adam_eps",
    "batch_size": "batch_size",
    "epochs": "max_epochs",
    "patience": "early_stop_patience",
    "val_fraction": "val_fraction",
    "init": "init_scheme",
}


def _auto_or(kind):
    def parse(text: str):
        if text == "auto":
            return "auto"
        try:
            return kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected 'auto' or a number, got {text!r}") from None
    return parse


def cmd_train(args) -> int:
    from edcnn.datagen import load_csv
    from edcnn.network import save_params
    from edcnn.trainer import TrainConfig, evaluate_misclassification, train_erm

    base = {}
    if args.config:
        try:
            base = TrainConfig.from_json(args.config).to_dict()
        except (OSError, json.JSONDecodeError) as exc:
            raise RuntimeError(f"cannot read config {args.config}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"config {args.config}: {exc}") from None
    over = {dst: getattr(args, src) for src, dst in _TRAIN_FLAGS.items() if getattr(args, src) is not None}
    over["loss_kind"] = "cross_entropy" if args.task == "classify" else "squared"
    over["filter_len"] = args.s
    if args.depth is not None:
        over["depth_L"] = args.depth
    if args.truncation is not None:
        over["truncation_M"] = args.truncation
    over["seed"] = resolve_seed(args.seed) if (args.seed is not None or "seed" not in base) else base["seed"]
    if args.no_enforce_theorem:
        over["enforce_theorem"] = False
    try:
        cfg = TrainConfig.from_dict({**base, **over})
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    schema = "features_then_label" if args.task == "classify" else "features_then_target"
    data = load_csv(args.data, schema, skip_header=args.skip_header)
    if cfg.enforce_theorem and not 2 <= cfg.filter_len <= data.d:
        raise UsageError(f"--s {cfg.filter_len} violates 2 <= s <= d (d={data.d})")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = Path(args.model) if args.model else out_dir / "model.bin"
    report_path = Path(args.report) if args.report else out_dir / "report.json"
    csv_path = Path(args.epochs_csv) if args.epochs_csv else out_dir / "epochs.csv"
    _echo_config("train", {**cfg.to_dict(), "data": args.data, "m": data.m, "d": data.d,
                           "resolved_depth_L": cfg.resolve_depth(data.m),
                           "resolved_truncation_M": cfg.resolve_truncation(data.m),
                           "model": str(model_path), "report": str(report_path),
                           "epochs_csv": str(csv_path)})
    rep = train_erm(data, cfg)
    save_params(rep.params, model_path)
    rep.write(report_path, csv_path)
    print(f"epochs_run: {rep.epochs_run}  stopped_early: {str(rep.stopped_early).lower()}")
    print(f"final_train_loss: {rep.final_train_loss!r}")
    if args.task == "classify":
        print(f"train_misclassification: {evaluate_misclassification(rep.params, data)!r}")
    return EXIT_OK


# -- capacity ----------------------------------------------------------------

def cmd_capacity(args) -> int:
    from edcnn.capacity import capacity_report
    if not 0.0 < args.theta < 0.5:
        raise UsageError(f"--theta must lie in (0, 1/2), got {args.theta}")
    if args.L < 1 or args.s < 1 or args.dim < 1:
        raise UsageError("--L, --s and --dim must be positive")
    if args.m < 2:
        raise UsageError("--m must be >= 2")
    M = args.M if args.M is not None else max(1.0, math.log(args.m))
    if M < 1:
        raise UsageError("--M must be >= 1")
    _echo_config("capacity", {"L": args.L, "s": args.s, "dim": args.dim, "m": args.m,
                              "theta": args.theta, "M": M, "C0": args.C0, "cstar": args.cstar,
                              "eps": args.eps})
    try:
        rep = capacity_report(args.L, args.s, args.dim, args.m, args.theta, M, args.C0,
                              args.cstar, args.eps)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(rep.to_table())
    if args.json:
        if args.json == "-":
            print(rep.to_json())
        else:
            from edcnn._io import atomic_write_text
            atomic_write_text(args.json, rep.to_json() + "\n")
    return EXIT_OK


# -- check -------------------------------------------------------------------

def _check_conv(rng: np.random.Generator, n: int = 200) -> tuple[bool, str]:
    from edcnn.conv import (contracting_convolve, expansive_convolve,
                            toeplitz_matrix_contracting, toeplitz_matrix_expansive)
    worst_e = worst_c = 0.0
    for _ in range(n):
        s = int(rng.choice([1, 2, 3, 9, 19]))
        D = int(rng.integers(s + 1, 65))
        w = rng.normal(size=s + 1)
        v = rng.normal(size=D)
        worst_e = max(worst_e, float(np.max(np.abs(expansive_convolve(w, v) - toeplitz_matrix_expansive(w, D) @ v))))
        worst_c = max(worst_c, float(np.max(np.abs(contracting_convolve(w, v) - toeplitz_matrix_contracting(w, D) @ v))))
    ok = worst_e <= 1e-12 and worst_c <= 1e-12
    return ok, f"max |conv - T v|: expansive {worst_e:.3g}, contracting {worst_c:.3g} over {n} pairs"


def _check_grad(rng: np.random.Generator, n: int = 20) -> tuple[bool, str]:
    from edcnn.grad import gradient_check
    from edcnn.network import init_params
    worst = {"squared": 0.0, "cross_entropy": 0.0}
    excluded = 0
    for i in range(n):
        s = int(rng.integers(2, 4))
        d = int(rng.integers(s, 11))
        L = int(rng.integers(1, 5))
        seed = int(rng.integers(2 ** 31))
        x = rng.uniform(-1, 1, d)
        for kind in worst:
            K = 1 if kind == "squared" else 3
            p = init_params(d, s, L, K, seed=seed)
            target = float(rng.normal()) if kind == "squared" else int(rng.integers(K))
            err, n_ex = gradient_check(p, x, target, kind, 1e-5)
            worst[kind] = max(worst[kind], err)
            excluded += n_ex
    ok = all(v <= 1e-4 for v in worst.values())
    return ok, (f"max rel. error: squared {worst['squared']:.3g}, cross_entropy "
                f"{worst['cross_entropy']:.3g} over {n} nets ({excluded} kink coordinates excluded)")


def _check_schedule(theta: float, alpha: float, d: int) -> tuple[bool, str]:
    from edcnn.capacity import check_schedule
    grid = [10 ** k for k in range(3, 10)]
    rep = check_schedule(theta, d, grid, lambda m: math.log(m), lambda m: math.ceil(m ** alpha))
    return rep.tail_decreasing, rep.summary()


def cmd_check(args) -> int:
    if not (args.conv or args.grad or args.schedule):
        raise UsageError("select at least one suite: --conv, --grad, --schedule")
    if args.schedule and not 0.0 < args.theta < 0.5:
        raise UsageError(f"--theta must lie in (0, 1/2), got {args.theta}")
    seed = resolve_seed(args.seed)
    _echo_config("check", {"conv": args.conv, "grad": args.grad, "schedule": args.schedule,
                           "seed": seed, "theta": args.theta, "alpha": args.alpha, "dim": args.dim})
    rng = np.random.default_rng(seed)
    failed = False
    suites = []
    if args.conv:
        suites.append(("conv", lambda: _check_conv(rng)))
    if args.grad:
        suites.append(("grad", lambda: _check_grad(rng)))
    if args.schedule:
        suites.append(("schedule", lambda: _check_schedule(args.theta, args.alpha, args.dim)))
    for name, fn in suites:
        ok, detail = fn()
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_RUNTIME if failed else EXIT_OK


# -- experiment --------------------------------------------------------------

def cmd_experiment(args) -> int:
    from edcnn._io import atomic_write_text
    from edcnn.experiments import (ConsistencyRunSpec, DepthSweepSpec, curve_csv,
                                   run_consistency, run_depth_sweep_spec, sweep_csv,
                                   write_manifest)
    try:
        raw = json.loads(Path(args.spec).read_text())
    except OSError as exc:
        raise RuntimeError(f"cannot read spec {args.spec}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec {args.spec} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError("spec must be a JSON object")
    protocol = raw.pop("protocol", "consistency")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    try:
        if protocol == "consistency":
            if "base_seed" not in raw:
                raw["base_seed"] = resolve_seed(args.seed)
            spec = ConsistencyRunSpec.from_dict(raw)
        elif protocol == "depth_sweep":
            if "seed" not in raw:
                raw["seed"] = resolve_seed(args.seed)
            spec = DepthSweepSpec.from_dict(raw)
        else:
            raise ValueError(f"protocol: unknown protocol {protocol!r}")
    except TypeError as exc:
        raise UsageError(f"invalid spec: {exc}") from None
    except ValueError as exc:
        raise UsageError(f"invalid spec field {exc}") from None

    from dataclasses import asdict
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _echo_config("experiment", {"protocol": protocol, **asdict(spec), "out_dir": str(out_dir),
                                "jobs": args.jobs})
    if protocol == "consistency":
        res = run_consistency(spec, jobs=args.jobs)
        atomic_write_text(out_dir / "curve.csv", curve_csv(res.points))
        atomic_write_text(out_dir / "curve_detail.csv", res.detail_csv())
        write_manifest(res.manifest(), out_dir / "manifest.json")
        for p in res.points:
            print(f"d={p.d} m={p.m} mean_rmse={p.mean_rmse:.6g} std_rmse={p.std_rmse:.3g} trials={p.trials}")
        print(f"wrote {out_dir / 'curve.csv'}")
    else:
        table, manifest = run_depth_sweep_spec(spec)
        atomic_write_text(out_dir / "sweep.csv", sweep_csv(table))
        write_manifest(manifest, out_dir / "manifest.json")
        for L, err in table:
            print(f"L={L} error={err:.6g}")
        print(f"wrote {out_dir / 'sweep.csv'}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edcnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"edcnn {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate a noisy sinc regression dataset as CSV")
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--noise-var", type=float, default=0.01)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="fit an eDCNN to a CSV dataset by ERM")
    sp.add_argument("--data", required=True)
    sp.add_argument("--task", choices=["regression", "classify"], default="regression")
    sp.add_argument("--s", type=int, required=True, help="filter length (2 <= s <= d)")
    sp.add_argument("--depth", type=_auto_or(int), help="number of layers or 'auto' (ceil(m^(1/4)))")
    sp.add_argument("--truncation", type=_auto_or(float), help="truncation level M or 'auto' (ln m)")
    sp.add_argument("--config", help="TrainConfig JSON; flags override its fields")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--beta1", type=float)
    sp.add_argument("--beta2", type=float)
    sp.add_argument("--adam-eps", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--patience", type=int)
    sp.add_argument("--val-fraction", type=float)
    sp.add_argument("--init", choices=["uniform_scaled", "constant"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--skip-header", action="store_true")
    sp.add_argument("--no-enforce-theorem", action="store_true",
                    help="allow filter lengths outside 2 <= s <= d")
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--model")
    sp.add_argument("--report")
    sp.add_argument("--epochs-csv")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("capacity", help="print parameter counts and capacity bounds")
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--s", type=int, required=True)
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--m", type=int, required=True)
    sp.add_argument("--theta", type=float, required=True)
    sp.add_argument("--M", type=float)
    sp.add_argument("--C0", type=float, default=1.0)
    sp.add_argument("--cstar", type=float, default=1.0)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--json", nargs="?", const="-", help="also emit JSON (to stdout, or to a path)")
    sp.set_defaults(func=cmd_capacity)

    sp = sub.add_parser("check", help="run verification suites")
    sp.add_argument("--conv", action="store_true", help="Toeplitz equivalence of both convolutions")
    sp.add_argument("--grad", action="store_true", help="backprop against finite differences")
    sp.add_argument("--schedule", action="store_true", help="consistency-ratio decay scan")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--theta", type=float, default=0.05)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--dim", type=int, default=30)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("experiment", help="run a consistency or depth-sweep protocol from JSON")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out-dir", default=".")
    sp.add_argument("--seed", type=int, help="default base seed when the spec has none")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
    sp.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"edcnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"edcnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
