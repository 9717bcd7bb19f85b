"""Losses and exact gradients for the eDCNN, plus a finite-difference checker.

Reverse-mode accumulation runs through the trace recorded by
:func:`edcnn.network.forward_traced_batch`.  The ReLU derivative at exactly 0
is taken as 0 everywhere, including in the checker.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from edcnn.network import EDCNNParams, forward_batch, forward_traced_batch

LOSS_KINDS = ("squared", "cross_entropy")

__all__ = [
    "GradientSet",
    "LOSS_KINDS",
    "loss_squared",
    "loss_squared_grad",
    "loss_cross_entropy",
    "loss_cross_entropy_grad",
    "batch_loss",
    "batch_loss_and_grad",
    "backprop",
    "finite_diff_gradient",
    "relative_error",
    "gradient_check",
]


@dataclass
class GradientSet:
    """Gradients shaped exactly like the matching :class:`EDCNNParams`."""

    filters: list[np.ndarray]
    biases: list[np.ndarray]
    out_weights: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [*self.filters, *self.biases, self.out_weights]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])


def loss_squared(pred: float, y: float) -> float:
    return (pred - y) ** 2


def loss_squared_grad(pred: float, y: float) -> float:
    return 2.0 * (pred - y)


def _check_labels(labels: np.ndarray, K: int) -> np.ndarray:
    if K < 2:
        raise ValueError(f"cross-entropy needs at least 2 classes, got {K}")
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"label out of range 0..{K - 1}")
    if not np.all(labels == np.round(labels)):
        raise ValueError("labels must be integers")
    return labels.astype(np.int64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss_cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` with max subtraction."""
    logits = np.asarray(logits, dtype=np.float64)
    label = int(_check_labels(np.array([label]), logits.size)[0])
    return float(-_log_softmax(logits)[label])


def loss_cross_entropy_grad(logits, label: int) -> np.ndarray:
    """Gradient w.r.t. the logits: ``softmax(logits) - onehot(label)``."""
    logits = np.asarray(logits, dtype=np.float64)
    label = int(_check_labels(np.array([label]), logits.size)[0])
    g = np.exp(_log_softmax(logits))
    g[label] -= 1.0
    return g


def _loss_terms(out: np.ndarray, targets, loss_kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample losses and d(loss)/d(out) for a batch of network outputs."""
    if loss_kind == "squared":
        if out.shape[1] != 1:
            raise ValueError("squared loss needs a single-output network")
        y = np.asarray(targets, dtype=np.float64).reshape(-1)
        if y.shape[0] != out.shape[0]:
            raise ValueError("targets and inputs differ in length")
        r = out[:, 0] - y
        return r * r, (2.0 * r)[:, None]
    if loss_kind == "cross_entropy":
        labels = _check_labels(np.asarray(targets).reshape(-1), out.shape[1])
        if labels.shape[0] != out.shape[0]:
            raise ValueError("labels and inputs differ in length")
        logp = _log_softmax(out)
        idx = np.arange(out.shape[0])
        dout = np.exp(logp)
        dout[idx, labels] -= 1.0
        return -logp[idx, labels], dout
    raise ValueError(f"unknown loss kind {loss_kind!r}; expected one of {LOSS_KINDS}")


def batch_loss(p: EDCNNParams, X, targets, loss_kind: str) -> float:
    """Mean loss over a batch, no gradient."""
    losses, _ = _loss_terms(forward_batch(p, X), targets, loss_kind)
    return float(losses.mean())


def batch_loss_and_grad(p: EDCNNParams, X, targets, loss_kind: str,
                        reduction: str = "mean") -> tuple[float, GradientSet]:
    """Loss and gradient over a batch; ``reduction`` is ``"mean"`` or ``"sum"``."""
    out, tr = forward_traced_batch(p, X)
    losses, dout = _loss_terms(out, targets, loss_kind)
    if reduction == "mean":
        scale = 1.0 / out.shape[0]
        loss = float(losses.mean())
    elif reduction == "sum":
        scale = 1.0
        loss = float(losses.sum())
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    dout = dout * scale

    g_out = dout.T @ tr.post[-1]
    dh = dout @ p.out_weights
    L = p.L
    g_filters: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    g_biases: list[np.ndarray] = [None] * L  # type: ignore[list-item]
    for k in range(L - 1, -1, -1):
        dz = dh * (tr.pre[k] > 0.0)
        h_prev = tr.post[k]
        D = h_prev.shape[1]
        w = p.filters[k]
        s = w.size - 1
        g_biases[k] = dz.sum(axis=0)
        g_filters[k] = np.array([np.sum(dz[:, j:j + D] * h_prev) for j in range(s + 1)])
        if k > 0:
            dh = np.zeros_like(h_prev)
            for j in range(s + 1):
                dh += w[j] * dz[:, j:j + D]
    return loss, GradientSet(g_filters, g_biases, g_out)


def backprop(p: EDCNNParams, x, target, loss_kind: str) -> tuple[float, GradientSet]:
    """Per-sample loss and its exact gradient with respect to every parameter."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.d,):
        raise ValueError(f"input must have length {p.d}, got shape {x.shape}")
    return batch_loss_and_grad(p, x[None, :], [target], loss_kind, reduction="sum")


def _activation_pattern(p: EDCNNParams, x: np.ndarray) -> np.ndarray:
    _, tr = forward_traced_batch(p, x[None, :])
    return np.concatenate([z[0] > 0.0 for z in tr.pre])


def finite_diff_gradient(p: EDCNNParams, x, target, loss_kind: str, step: float = 1e-5,
                         return_kink_mask: bool = False):
    """Central-difference gradient estimate, one coordinate at a time.

    With ``return_kink_mask`` also returns a boolean flat mask marking
    coordinates whose +/- perturbation changes the ReLU activation pattern;
    finite differences are unreliable there.
    """
    if not step > 0:
        raise ValueError(f"step must be positive, got {step!r}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.d,):
        raise ValueError(f"input must have length {p.d}, got shape {x.shape}")
    theta = p.flat()
    est = np.empty_like(theta)
    kink = np.zeros(theta.size, dtype=bool)
    base = _activation_pattern(p, x) if return_kink_mask else None
    X = x[None, :]
    for i in range(theta.size):
        t = theta.copy()
        t[i] = theta[i] + step
        p_plus = p.with_flat(t)
        t[i] = theta[i] - step
        p_minus = p.with_flat(t)
        est[i] = (batch_loss(p_plus, X, [target], loss_kind)
                  - batch_loss(p_minus, X, [target], loss_kind)) / (2.0 * step)
        if return_kink_mask:
            kink[i] = (np.any(_activation_pattern(p_plus, x) != base)
                       or np.any(_activation_pattern(p_minus, x) != base))
    g = p.with_flat(est)
    gs = GradientSet(g.filters, g.biases, g.out_weights)
    return (gs, kink) if return_kink_mask else gs


def relative_error(a, b) -> np.ndarray:
    """``|a - b| / max(1e-8, |a| + |b|)`` elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def gradient_check(p: EDCNNParams, x, target, loss_kind: str, step: float = 1e-5) -> tuple[float, int]:
    """Max relative error of backprop against central differences, kink coordinates excluded.

    Returns ``(max_rel_err, n_excluded)``.
    """
    _, g = backprop(p, x, target, loss_kind)
    fd, kink = finite_diff_gradient(p, x, target, loss_kind, step, return_kink_mask=True)
    err = relative_error(g.flat(), fd.flat())[~kink]
    return (float(err.max()) if err.size else 0.0), int(kink.sum())
