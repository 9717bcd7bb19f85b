"""Empirical risk minimization over eDCNNs with mini-batch Adam.

Training minimizes the untruncated empirical risk; truncation at level ``M``
is applied only when predicting and evaluating.  ``"auto"`` depth and
truncation resolve from the sample size: ``L = ceil(m ** 0.25)`` and
``M = max(1, ln m)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Union

import numpy as np

from edcnn._io import atomic_write_text
from edcnn.datagen import LabeledDataset, stratified_indices
from edcnn.grad import batch_loss, batch_loss_and_grad
from edcnn.network import EDCNNParams, check_filter_range, forward_batch, init_params, truncate

log = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingDiverged",
    "Adam",
    "depth_schedule",
    "truncation_schedule",
    "train_erm",
    "predict_truncated",
    "evaluate_rmse",
    "evaluate_misclassification",
]


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


def depth_schedule(m: int) -> int:
    """``ceil(m ** (1/4))``, computed exactly in integers."""
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    m = int(m)
    L = max(1, math.isqrt(math.isqrt(m)))
    while L ** 4 < m:
        L += 1
    while L > 1 and (L - 1) ** 4 >= m:
        L -= 1
    return L


def truncation_schedule(m: int) -> float:
    """``max(1, ln m)``."""
    if int(m) != m or m < 2:
        raise ValueError(f"m must be an integer >= 2, got {m!r}")
    return max(1.0, math.log(m))


@dataclass
class TrainConfig:
    loss_kind: str = "squared"
    filter_len: int = 2
    depth_L: Union[int, str] = "auto"
    truncation_M: Union[float, str] = "auto"
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 100
    early_stop_patience: int = 10
    val_fraction: float = 0.1
    seed: int = 42
    init_scheme: str = "uniform_scaled"
    enforce_theorem: bool = True
    freeze_conv: bool = False

    def __post_init__(self):
        if self.loss_kind not in ("squared", "cross_entropy"):
            raise ValueError(f"loss_kind must be 'squared' or 'cross_entropy', got {self.loss_kind!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.depth_L != "auto" and (int(self.depth_L) != self.depth_L or self.depth_L < 1):
            raise ValueError(f"depth_L must be 'auto' or a positive integer, got {self.depth_L!r}")
        if self.truncation_M != "auto" and not float(self.truncation_M) > 0:
            raise ValueError(f"truncation_M must be 'auto' or positive, got {self.truncation_M!r}")

    def resolve_depth(self, m: int) -> int:
        return depth_schedule(m) if self.depth_L == "auto" else int(self.depth_L)

    def resolve_truncation(self, m: int) -> float:
        return truncation_schedule(max(m, 2)) if self.truncation_M == "auto" else float(self.truncation_M)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown TrainConfig field(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    train_loss: list[float]
    val_loss: list[float]
    params: EDCNNParams
    epochs_run: int
    stopped_early: bool
    best_epoch: int
    depth_L: int
    truncation_M: float
    final_train_loss: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
            "best_epoch": self.best_epoch,
            "depth_L": self.depth_L,
            "filter_len": self.params.s,
            "input_dim": self.params.d,
            "out_rows": self.params.out_rows,
            "truncation_M": self.truncation_M,
            "final_train_loss": self.final_train_loss,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def epoch_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            w.writerow([i, repr(tl), repr(vl)])
        return buf.getvalue()

    def write(self, json_path=None, csv_path=None) -> None:
        if json_path is not None:
            atomic_write_text(json_path, self.to_json() + "\n")
        if csv_path is not None:
            atomic_write_text(csv_path, self.epoch_csv())


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, arrays: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.arrays = arrays
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            a -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _validation_split(m: int, fraction: float, labels, rng: np.random.Generator):
    """Index arrays (train, val).  Stratified by label when labels are given."""
    n_val = int(math.floor(fraction * m))
    if n_val == 0 or n_val >= m:
        return np.arange(m), np.arange(0)
    if labels is None:
        perm = rng.permutation(m)
        return np.sort(perm[n_val:]), np.sort(perm[:n_val])
    tr, va = stratified_indices(np.asarray(labels), 1.0 - n_val / m, rng)
    if va.size == 0 or tr.size == 0:
        return np.arange(m), np.arange(0)
    return tr, va


def train_erm(data: LabeledDataset, cfg: TrainConfig, init: EDCNNParams | None = None) -> TrainReport:
    """Fit an eDCNN by mini-batch Adam on the empirical risk.

    A seeded ``val_fraction`` of the data is held out for early stopping; the
    parameters with the best validation loss are returned.  With no held-out
    set the training loss plays that role.  Deterministic given ``cfg.seed``.
    """
    if data.m == 0:
        raise ValueError("dataset is empty")
    classify = cfg.loss_kind == "cross_entropy"
    if classify and data.kind != "classification":
        raise ValueError("cross-entropy training needs a classification dataset")
    if not classify and data.kind != "regression":
        raise ValueError("squared-loss training needs a regression dataset")
    d, s = data.d, cfg.filter_len
    if cfg.enforce_theorem:
        check_filter_range(s, d)
    L = cfg.resolve_depth(data.m)
    M = cfg.resolve_truncation(data.m)
    K = data.n_classes if classify else 1

    rng = np.random.default_rng(cfg.seed)
    init_seed, split_seed, shuffle_seed = rng.integers(0, 2 ** 63, size=3)
    if init is None:
        params = init_params(d, s, L, K, scheme=cfg.init_scheme, seed=int(init_seed),
                             enforce_theorem=cfg.enforce_theorem)
    else:
        if (init.d, init.s, init.L, init.out_rows) != (d, s, L, K):
            raise ValueError("initial parameters do not match the dataset/config architecture")
        params = init.copy()

    X, y = data.features, data.targets
    tr_idx, va_idx = _validation_split(data.m, cfg.val_fraction, y if classify else None,
                                       np.random.default_rng(split_seed))
    Xtr, ytr = X[tr_idx], y[tr_idx]
    Xva, yva = X[va_idx], y[va_idx]
    has_val = va_idx.size > 0
    shuffle_rng = np.random.default_rng(shuffle_seed)
    # freeze_conv trains the outer weights only, a convex least-squares subproblem
    trainable = [params.out_weights] if cfg.freeze_conv else params.arrays()
    opt = Adam(trainable, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    n = Xtr.shape[0]
    bs = min(cfg.batch_size, n)
    train_hist: list[float] = []
    val_hist: list[float] = []
    best = math.inf
    best_params = params.copy()
    best_epoch = 0
    since_best = 0
    stopped = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        # overflow surfaces as a non-finite epoch loss below
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, bs):
                b = order[start:start + bs]
                _, g = batch_loss_and_grad(params, Xtr[b], ytr[b], cfg.loss_kind)
                opt.step([g.out_weights] if cfg.freeze_conv else g.arrays())
            tl = batch_loss(params, Xtr, ytr, cfg.loss_kind)
        if not math.isfinite(tl):
            raise TrainingDiverged(epoch, tl)
        vl = batch_loss(params, Xva, yva, cfg.loss_kind) if has_val else tl
        train_hist.append(tl)
        val_hist.append(vl)
        if vl < best:
            best, best_epoch, since_best = vl, epoch, 0
            best_params = params.copy()
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                stopped = True
                break
    log.debug("trained L=%d s=%d m=%d: %d epochs, best epoch %d", L, s, data.m, epoch, best_epoch)
    return TrainReport(
        train_loss=train_hist,
        val_loss=val_hist,
        params=best_params,
        epochs_run=len(train_hist),
        stopped_early=stopped,
        best_epoch=best_epoch,
        depth_L=L,
        truncation_M=M,
        final_train_loss=batch_loss(best_params, Xtr, ytr, cfg.loss_kind),
        config=cfg.to_dict(),
    )


def predict_truncated(p: EDCNNParams, M: float, x) -> float:
    """``truncate(M, forward(p, x))`` for a single-output network."""
    x = np.asarray(x, dtype=np.float64)
    out = forward_batch(p, x[None, :] if x.ndim == 1 else x)
    if out.shape[1] != 1:
        raise ValueError("truncated prediction needs a single-output network")
    t = truncate(M, out[:, 0])
    return float(t[0]) if x.ndim == 1 else t


def evaluate_rmse(p: EDCNNParams, M: float, testset: LabeledDataset) -> float:
    """Root-mean-square error of truncated predictions."""
    if testset.m == 0:
        raise ValueError("test set is empty")
    pred = predict_truncated(p, M, testset.features)
    r = pred - testset.targets
    return float(np.sqrt(np.mean(r * r)))


def evaluate_misclassification(p: EDCNNParams, testset: LabeledDataset) -> float:
    """Fraction of samples whose argmax logit differs from the label.

    Ties go to the smallest class index (``np.argmax`` semantics).
    """
    if testset.m == 0:
        raise ValueError("test set is empty")
    if p.out_rows < 2:
        raise ValueError("misclassification needs a classification head with >= 2 rows")
    pred = np.argmax(forward_batch(p, testset.features), axis=1)
    return float(np.mean(pred != testset.targets))
