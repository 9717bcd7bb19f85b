"""Experiment protocols: consistency curves over growing sample size and
classification error versus depth.

Seeding is a counter scheme: every random stream of a consistency trial is
drawn from ``SeedSequence([base_seed, d, m, trial, stream])`` with ``stream``
0 for the training set, 1 for the test set and 2 for the trainer.  A trial's
result therefore depends only on its own coordinates, never on execution
order or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from edcnn._io import atomic_write_text
from edcnn.datagen import LabeledDataset, gen_sinc_test, gen_sinc_train
from edcnn.trainer import (
    TrainConfig,
    TrainingDiverged,
    evaluate_misclassification,
    evaluate_rmse,
    train_erm,
)

log = logging.getLogger(__name__)

__all__ = [
    "ConsistencyRunSpec",
    "CurvePoint",
    "TrialResult",
    "ConsistencyResult",
    "trial_seed",
    "run_consistency",
    "run_depth_sweep",
    "emit_curve_csv",
    "curve_csv",
    "sweep_csv",
    "read_curve_csv",
    "write_manifest",
    "DepthSweepSpec",
    "run_depth_sweep_spec",
]

CURVE_HEADER = ("d", "m", "mean_rmse", "std_rmse", "trials")
SWEEP_HEADER = ("L", "error")
STREAM_TRAIN, STREAM_TEST, STREAM_FIT = 0, 1, 2


def trial_seed(base_seed: int, d: int, m: int, trial: int, stream: int) -> int:
    """63-bit seed for one random stream of one trial."""
    ss = np.random.SeedSequence([base_seed, d, m, trial, stream])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


@dataclass
class ConsistencyRunSpec:
    dims: list[int] = field(default_factory=lambda: [30])
    m_grid: list[int] = field(default_factory=lambda: [100, 500, 2000, 8000])
    trials: int = 5
    filter_len: int = 2
    test_size: int = 2000
    noise_var: float = 0.01
    base_seed: int = 42
    train: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.dims or any(int(d) != d or d < 1 for d in self.dims):
            raise ValueError("dims: must be a non-empty list of positive integers")
        if not self.m_grid or any(int(m) != m or m < 1 for m in self.m_grid):
            raise ValueError("m_grid: must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(self.m_grid, self.m_grid[1:])):
            raise ValueError("m_grid: must be strictly increasing")
        if int(self.trials) != self.trials or self.trials < 1:
            raise ValueError("trials: must be a positive integer")
        if self.test_size < 1:
            raise ValueError("test_size: must be a positive integer")
        if not self.noise_var >= 0:
            raise ValueError("noise_var: must be >= 0")
        for key in ("filter_len", "seed", "loss_kind"):
            if key in self.train:
                raise ValueError(f"train.{key}: set by the run spec, not by trainer overrides")
        cfg = self.train_config(1)  # surfaces bad override names early
        small = [d for d in self.dims if d < self.filter_len]
        if small and cfg.enforce_theorem:
            raise ValueError(f"dims: d={small[0]} is below filter_len={self.filter_len}; "
                             "set train.enforce_theorem=false to run outside 2 <= s <= d")

    def train_config(self, seed: int) -> TrainConfig:
        base = {"loss_kind": "squared", "filter_len": self.filter_len, "seed": seed}
        try:
            return TrainConfig.from_dict({**self.train, **base})
        except (TypeError, ValueError) as exc:
            raise ValueError(f"train: {exc}") from None

    @classmethod
    def from_dict(cls, data: dict) -> "ConsistencyRunSpec":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"{unknown[0]}: unknown consistency spec field")
        return cls(**data)


@dataclass(frozen=True)
class TrialResult:
    d: int
    m: int
    trial: int
    rmse: float
    depth_L: int
    truncation_M: float
    epochs_run: int
    final_train_loss: float
    diverged: bool
    seconds: float


@dataclass(frozen=True)
class CurvePoint:
    d: int
    m: int
    mean_rmse: float
    std_rmse: float
    trials: int


@dataclass
class ConsistencyResult:
    points: list[CurvePoint]
    trials: list[TrialResult]
    spec: ConsistencyRunSpec
    wall_seconds: float

    def detail_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d", "m", "trial", "rmse", "depth_L", "truncation_M", "epochs_run",
                    "final_train_loss", "diverged"])
        for t in self.trials:
            w.writerow([t.d, t.m, t.trial, _fmt(t.rmse), t.depth_L, _fmt(t.truncation_M),
                        t.epochs_run, _fmt(t.final_train_loss), int(t.diverged)])
        return buf.getvalue()

    def manifest(self) -> dict:
        per_point: dict[str, float] = {}
        for t in self.trials:
            key = f"d={t.d},m={t.m}"
            per_point[key] = per_point.get(key, 0.0) + t.seconds
        return {
            "protocol": "consistency",
            "spec": asdict(self.spec),
            "seed_scheme": "SeedSequence([base_seed, d, m, trial, stream]); stream 0=train, 1=test, 2=trainer",
            "seeds": {f"d={t.d},m={t.m},trial={t.trial}": {
                "train": trial_seed(self.spec.base_seed, t.d, t.m, t.trial, STREAM_TRAIN),
                "test": trial_seed(self.spec.base_seed, t.d, t.m, t.trial, STREAM_TEST),
                "fit": trial_seed(self.spec.base_seed, t.d, t.m, t.trial, STREAM_FIT),
            } for t in self.trials},
            "diverged_trials": [asdict(t) for t in self.trials if t.diverged],
            "versions": _versions(),
            "wall_seconds_per_point": per_point,
            "wall_seconds_total": self.wall_seconds,
        }


def _versions() -> dict:
    from edcnn import __version__
    return {"edcnn": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _run_trial(spec: ConsistencyRunSpec, d: int, m: int, trial: int) -> TrialResult:
    t0 = time.perf_counter()
    train = gen_sinc_train(d, m, spec.noise_var, trial_seed(spec.base_seed, d, m, trial, STREAM_TRAIN))
    test = gen_sinc_test(d, spec.test_size, trial_seed(spec.base_seed, d, m, trial, STREAM_TEST))
    cfg = spec.train_config(trial_seed(spec.base_seed, d, m, trial, STREAM_FIT))
    try:
        rep = train_erm(train, cfg)
    except TrainingDiverged as exc:
        return TrialResult(d, m, trial, math.nan, cfg.resolve_depth(m), cfg.resolve_truncation(m),
                           exc.epoch, math.nan, True, time.perf_counter() - t0)
    rmse = evaluate_rmse(rep.params, rep.truncation_M, test)
    return TrialResult(d, m, trial, rmse, rep.depth_L, rep.truncation_M, rep.epochs_run,
                       rep.final_train_loss, False, time.perf_counter() - t0)


def _aggregate(d: int, m: int, results: Sequence[TrialResult]) -> CurvePoint:
    vals = sorted(r.rmse for r in results if not r.diverged)
    n = len(vals)
    if n == 0:
        return CurvePoint(d, m, math.nan, math.nan, 0)
    mean = math.fsum(vals) / n
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
    return CurvePoint(d, m, mean, std, n)


def run_consistency(spec: ConsistencyRunSpec, jobs: int = 1) -> ConsistencyResult:
    """Train on growing sample sizes and record truncated test RMSE per (d, m).

    ``std_rmse`` is the sample standard deviation (ddof=1) over the kept trials.
    Diverged trials are excluded from the aggregate with a warning and listed
    in the detail output.
    """
    t0 = time.perf_counter()
    tasks = [(d, m, t) for d in spec.dims for m in spec.m_grid for t in range(spec.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, *zip(*[(spec, *t) for t in tasks])))
    else:
        results = [_run_trial(spec, *t) for t in tasks]
    points = []
    for d in spec.dims:
        for m in spec.m_grid:
            group = [r for r in results if r.d == d and r.m == m]
            bad = [r.trial for r in group if r.diverged]
            if bad:
                warnings.warn(f"d={d}, m={m}: excluding diverged trial(s) {bad} from the average",
                              RuntimeWarning, stacklevel=2)
            points.append(_aggregate(d, m, group))
            log.info("d=%d m=%d mean_rmse=%.6g", d, m, points[-1].mean_rmse)
    return ConsistencyResult(points, results, spec, time.perf_counter() - t0)


def run_depth_sweep(data_train: LabeledDataset, data_test: LabeledDataset, depths: Sequence[int],
                    s: int, cfg: TrainConfig) -> list[tuple[int, float]]:
    """Train one classifier per depth and report its test misclassification rate."""
    if data_train.kind != "classification" or data_test.kind != "classification":
        raise ValueError("depth sweep needs classification datasets")
    if not depths:
        raise ValueError("depths: must be non-empty")
    table = []
    base = cfg.to_dict()
    for L in depths:
        run_cfg = TrainConfig.from_dict({**base, "loss_kind": "cross_entropy", "filter_len": s,
                                         "depth_L": int(L)})
        rep = train_erm(data_train, run_cfg)
        table.append((int(L), evaluate_misclassification(rep.params, data_test)))
    return table


def curve_csv(points: Sequence[CurvePoint]) -> str:
    if not points:
        raise ValueError("table is empty")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for p in points:
        w.writerow([p.d, p.m, _fmt(p.mean_rmse), _fmt(p.std_rmse), p.trials])
    return buf.getvalue()


def sweep_csv(table: Sequence[tuple[int, float]]) -> str:
    if not table:
        raise ValueError("table is empty")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for L, err in table:
        w.writerow([L, _fmt(err)])
    return buf.getvalue()


def emit_curve_csv(table, path) -> None:
    """Write a curve (list of :class:`CurvePoint`) or a depth sweep (list of (L, error))."""
    if not table:
        raise ValueError("table is empty")
    text = curve_csv(table) if isinstance(table[0], CurvePoint) else sweep_csv(table)
    atomic_write_text(path, text)


def read_curve_csv(path) -> list:
    """Inverse of :func:`emit_curve_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = tuple(rows[0]), rows[1:]
    if header == CURVE_HEADER:
        return [CurvePoint(int(r[0]), int(r[1]), float(r[2]), float(r[3]), int(r[4])) for r in body]
    if header == SWEEP_HEADER:
        return [(int(r[0]), float(r[1])) for r in body]
    raise ValueError(f"{path}: unrecognized header {header}")


def write_manifest(manifest: dict, path) -> None:
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


@dataclass
class DepthSweepSpec:
    """Depth sweep driven by a JSON spec.

    ``data`` is either ``{"generator": "two_class", "d", "m", "margin", "seed"}``
    or ``{"train_csv", "test_csv", "skip_header"}``; generated data is split
    ``split.fraction`` / rest with a stratified seeded split.
    """

    depths: list[int] = field(default_factory=lambda: [2, 3, 4])
    filter_len: int = 9
    data: dict[str, Any] = field(default_factory=lambda: {
        "generator": "two_class", "d": 40, "m": 400, "margin": 10.0, "seed": 0})
    split: dict[str, Any] = field(default_factory=lambda: {"fraction": 0.8, "seed": 0})
    train: dict[str, Any] = field(default_factory=dict)
    seed: int = 42

    def __post_init__(self):
        if not self.depths or any(int(L) != L or L < 1 for L in self.depths):
            raise ValueError("depths: must be a non-empty list of positive integers")
        if int(self.filter_len) != self.filter_len or self.filter_len < 1:
            raise ValueError("filter_len: must be a positive integer")
        for key in ("filter_len", "depth_L", "loss_kind"):
            if key in self.train:
                raise ValueError(f"train.{key}: set by the sweep spec, not by trainer overrides")
        self.train_config()
        gen = self.data.get("generator")
        if gen is None and not {"train_csv", "test_csv"} <= set(self.data):
            raise ValueError("data: needs 'generator' or both 'train_csv' and 'test_csv'")
        if gen not in (None, "two_class"):
            raise ValueError(f"data.generator: unknown generator {gen!r}")

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig.from_dict({**self.train, "loss_kind": "cross_entropy",
                                          "filter_len": self.filter_len, "seed": self.seed})
        except (TypeError, ValueError) as exc:
            raise ValueError(f"train: {exc}") from None

    def datasets(self) -> tuple[LabeledDataset, LabeledDataset]:
        from edcnn.datagen import SplitSpec, gen_two_class_signals, load_csv, split
        if self.data.get("generator") == "two_class":
            g = {k: v for k, v in self.data.items() if k != "generator"}
            full = gen_two_class_signals(**g)
            return split(full, SplitSpec(**self.split))
        skip = bool(self.data.get("skip_header", False))
        return (load_csv(self.data["train_csv"], "features_then_label", skip),
                load_csv(self.data["test_csv"], "features_then_label", skip))

    @classmethod
    def from_dict(cls, data: dict) -> "DepthSweepSpec":
        unknown = sorted(set(data) - set(cls.__dataclass_fields__))
        if unknown:
            raise ValueError(f"{unknown[0]}: unknown depth-sweep spec field")
        return cls(**data)


def run_depth_sweep_spec(spec: DepthSweepSpec) -> tuple[list[tuple[int, float]], dict]:
    """Run a sweep from its spec; returns the table and a manifest."""
    t0 = time.perf_counter()
    train, test = spec.datasets()
    table = run_depth_sweep(train, test, spec.depths, spec.filter_len, spec.train_config())
    manifest = {
        "protocol": "depth_sweep",
        "spec": asdict(spec),
        "n_train": train.m,
        "n_test": test.m,
        "versions": _versions(),
        "wall_seconds_total": time.perf_counter() - t0,
    }
    return table, manifest
