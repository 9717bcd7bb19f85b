"""Expansive deep convolutional network (eDCNN).

The network has no fully connected hidden layers.  With ``h_0 = x`` of width
``d`` each layer applies

    h_k = relu(w_k * h_{k-1} + b_k),    width(h_k) = d + k*s

where ``*`` is expansive convolution with a shared-length filter ``w_k`` of
``s + 1`` taps, and the output is ``c . h_L``.  For K-class problems ``c`` has K
rows and the output is a vector of logits.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from edcnn._io import atomic_write_bytes
from edcnn.conv import expansive_convolve_batch, toeplitz_matrix_expansive

__all__ = [
    "EDCNNParams",
    "ActivationTrace",
    "relu",
    "relu_vec",
    "truncate",
    "check_filter_range",
    "count_params",
    "count_neurons",
    "init_params",
    "forward",
    "forward_batch",
    "forward_traced",
    "forward_traced_batch",
    "forward_toeplitz",
    "save_params",
    "load_params",
]


def relu(t: float) -> float:
    return t if t > 0.0 else 0.0


def relu_vec(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def truncate(M: float, t):
    """Clip ``t`` to ``[-M, M]`` keeping its sign: ``min(M, |t|) * sgn(t)``.

    Works on scalars and arrays.
    """
    if not M > 0:
        raise ValueError(f"truncation level must be positive, got {M!r}")
    if np.ndim(t) == 0:
        return float(np.clip(t, -M, M))
    return np.clip(np.asarray(t, dtype=np.float64), -M, M)


def check_filter_range(s: int, d: int) -> None:
    """Enforce ``2 <= s <= d``, the filter-length range the consistency theory covers."""
    if not 2 <= s <= d:
        raise ValueError(f"filter length must satisfy 2 <= s <= d, got s={s}, d={d}")


def _check_arch(L: int, s: int, d: int) -> None:
    for name, val in (("L", L), ("s", s), ("d", d)):
        if int(val) != val or val < 1:
            raise ValueError(f"{name} must be a positive integer, got {val!r}")


def count_params(L: int, s: int, d: int) -> int:
    """Free parameters: L filters, all biases and the outer weights."""
    _check_arch(L, s, d)
    return (s + 1) * L + d + L * s + sum(d + k * s for k in range(1, L + 1))


def count_neurons(L: int, s: int, d: int) -> int:
    _check_arch(L, s, d)
    return 1 + d + sum(d + k * s for k in range(1, L + 1))


@dataclass
class EDCNNParams:
    """Trainable state of an eDCNN.

    ``filters[k]`` has ``s + 1`` taps, ``biases[k]`` has width ``d + (k+1)*s``
    and ``out_weights`` has shape ``(out_rows, d + L*s)``.  Construction checks
    shapes only; the ``2 <= s <= d`` range is enforced by :func:`init_params`
    and the trainer.
    """

    d: int
    s: int
    filters: list[np.ndarray]
    biases: list[np.ndarray]
    out_weights: np.ndarray

    def __post_init__(self):
        if self.d < 1 or self.s < 0:
            raise ValueError(f"invalid architecture d={self.d}, s={self.s}")
        if len(self.filters) < 1 or len(self.filters) != len(self.biases):
            raise ValueError("need L >= 1 layers with one filter and one bias each")
        self.filters = [np.asarray(w, dtype=np.float64) for w in self.filters]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        ow = np.asarray(self.out_weights, dtype=np.float64)
        self.out_weights = ow[None, :] if ow.ndim == 1 else ow
        for k, (w, b) in enumerate(zip(self.filters, self.biases), start=1):
            if w.shape != (self.s + 1,):
                raise ValueError(f"layer {k}: filter must have {self.s + 1} taps, got {w.shape}")
            if b.shape != (self.d + k * self.s,):
                raise ValueError(f"layer {k}: bias must have width {self.d + k * self.s}, got {b.shape}")
        if self.out_weights.ndim != 2 or self.out_weights.shape[1] != self.width(self.L):
            raise ValueError(
                f"out_weights must have width {self.width(self.L)}, got {self.out_weights.shape}")

    @property
    def L(self) -> int:
        return len(self.filters)

    @property
    def out_rows(self) -> int:
        return self.out_weights.shape[0]

    def width(self, k: int) -> int:
        return self.d + k * self.s

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in canonical order: filters, biases, out_weights."""
        return [*self.filters, *self.biases, self.out_weights]

    def n_scalars(self) -> int:
        return sum(a.size for a in self.arrays())

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, theta: np.ndarray) -> "EDCNNParams":
        """New parameter set of the same shape filled from a flat vector."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.size != self.n_scalars():
            raise ValueError(f"expected {self.n_scalars()} values, got {theta.size}")
        parts, pos = [], 0
        for a in self.arrays():
            parts.append(theta[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        L = self.L
        return EDCNNParams(self.d, self.s, parts[:L], parts[L:2 * L], parts[2 * L])

    def copy(self) -> "EDCNNParams":
        return EDCNNParams(self.d, self.s, [w.copy() for w in self.filters],
                           [b.copy() for b in self.biases], self.out_weights.copy())


@dataclass
class ActivationTrace:
    """``pre[k-1]`` is ``w_k * h_{k-1} + b_k``; ``post[k]`` is ``h_k`` with ``post[0] = x``.

    Arrays carry a leading batch axis.
    """

    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def init_params(d: int, s: int, L: int, out_rows: int = 1, scheme: str = "uniform_scaled",
                seed: int = 0, value: float = 0.0, enforce_theorem: bool = True) -> EDCNNParams:
    """Build a parameter set.

    ``uniform_scaled`` draws filters from U(-a, a) with ``a = sqrt(6 / (s+1))``
    (fan-in of a convolution output is ``s + 1``), biases from
    U(-1/sqrt(s+1), 1/sqrt(s+1)) and outer weights from U(-1/sqrt(n), 1/sqrt(n))
    with ``n = d + L*s``.  ``constant`` fills every entry with ``value``.
    """
    if enforce_theorem:
        check_filter_range(s, d)
    _check_arch(L, s, d)
    if out_rows < 1:
        raise ValueError("out_rows must be >= 1")
    widths = [d + k * s for k in range(1, L + 1)]
    if scheme == "constant":
        return EDCNNParams(d, s, [np.full(s + 1, value) for _ in range(L)],
                           [np.full(n, value) for n in widths],
                           np.full((out_rows, widths[-1]), value))
    if scheme != "uniform_scaled":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    wa = math.sqrt(6.0 / (s + 1))
    ba = 1.0 / math.sqrt(s + 1)
    filters, biases = [], []
    for n in widths:
        filters.append(rng.uniform(-wa, wa, s + 1))
        biases.append(rng.uniform(-ba, ba, n))
    ca = 1.0 / math.sqrt(widths[-1])
    return EDCNNParams(d, s, filters, biases, rng.uniform(-ca, ca, (out_rows, widths[-1])))


def _as_batch(p: EDCNNParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.d:
        raise ValueError(f"inputs must have shape (batch, {p.d}), got {X.shape}")
    return X


def _as_input(p: EDCNNParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.d,):
        raise ValueError(f"input must have length {p.d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input entries must be finite")
    return x


def forward_traced_batch(p: EDCNNParams, X) -> tuple[np.ndarray, ActivationTrace]:
    X = _as_batch(p, X)
    trace = ActivationTrace(post=[X])
    h = X
    for w, b in zip(p.filters, p.biases):
        z = expansive_convolve_batch(w, h)
        z += b
        trace.pre.append(z)
        h = np.maximum(z, 0.0)
        trace.post.append(h)
    return h @ p.out_weights.T, trace


def forward_batch(p: EDCNNParams, X) -> np.ndarray:
    """Outputs for a batch, shape ``(batch, out_rows)``."""
    X = _as_batch(p, X)
    h = X
    for w, b in zip(p.filters, p.biases):
        z = expansive_convolve_batch(w, h)
        z += b
        h = np.maximum(z, 0.0, out=z)
    return h @ p.out_weights.T


def forward(p: EDCNNParams, x) -> np.ndarray:
    """Output vector of length ``out_rows`` for a single input of length ``d``."""
    return forward_batch(p, _as_input(p, x)[None, :])[0]


def forward_traced(p: EDCNNParams, x) -> tuple[np.ndarray, ActivationTrace]:
    out, tr = forward_traced_batch(p, _as_input(p, x)[None, :])
    return out[0], ActivationTrace([z[0] for z in tr.pre], [h[0] for h in tr.post])


def forward_toeplitz(p: EDCNNParams, x) -> np.ndarray:
    """Reference evaluation with explicit dense Toeplitz matrices (slow)."""
    h = _as_input(p, x)
    for w, b in zip(p.filters, p.biases):
        h = relu_vec(toeplitz_matrix_expansive(w, h.size) @ h + b)
    return p.out_weights @ h


# Binary container, all fields little-endian:
#   magic  b"EDCNN\x00\x01\x00"        8 bytes
#   d, s, L, out_rows                   4 x int64
#   filters   L x (s+1)                 float64, layer order
#   biases    layer k has d+k*s values  float64, layer order
#   out_weights out_rows x (d+L*s)      float64, row-major
# The text container has the same layout: header line "edcnn d s L out_rows"
# followed by one value per line in repr form.
_MAGIC = b"EDCNN\x00\x01\x00"


def save_params(p: EDCNNParams, path, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("text" if path.suffix == ".txt" else "binary")
    values = p.flat()
    if fmt == "binary":
        payload = _MAGIC + struct.pack("<4q", p.d, p.s, p.L, p.out_rows) + values.astype("<f8").tobytes()
        atomic_write_bytes(path, payload)
    elif fmt == "text":
        lines = [f"edcnn {p.d} {p.s} {p.L} {p.out_rows}"] + [repr(float(v)) for v in values]
        atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())
    else:
        raise ValueError(f"unknown model format {fmt!r}")


def load_params(path) -> EDCNNParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw.startswith(_MAGIC):
        d, s, L, K = struct.unpack_from("<4q", raw, len(_MAGIC))
        values = np.frombuffer(raw, dtype="<f8", offset=len(_MAGIC) + 32).astype(np.float64)
    else:
        lines = raw.decode().split()
        if len(lines) < 5 or lines[0] != "edcnn":
            raise ValueError(f"{path}: not an eDCNN model file")
        d, s, L, K = (int(t) for t in lines[1:5])
        values = np.array([float(t) for t in lines[5:]])
    template = init_params(d, s, L, K, scheme="constant", enforce_theorem=False)
    return template.with_flat(values)
