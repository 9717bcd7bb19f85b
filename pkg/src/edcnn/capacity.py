"""Capacity bounds for eDCNN hypothesis spaces and the consistency-rate check.

All logarithms are natural.  The absolute constants of the pseudo-dimension
and covering-number bounds are unknown and exposed as ``C0`` and ``cstar``
(default 1), so only the shape of each bound is meaningful.

Covering and packing numbers are related by M(2e) <= N(e) <= M(e); that
relation is not computed here, it is how the packing bound below turns into
the covering bound.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from edcnn.network import count_neurons, count_params

__all__ = [
    "CapacityReport",
    "ScheduleReport",
    "pseudo_dim_bound",
    "packing_bound",
    "covering_log2_bound",
    "consistency_ratio",
    "check_schedule",
    "capacity_report",
]


def pseudo_dim_bound(L: int, s: int, d: int, C0: float = 1.0) -> float:
    """``C0 * L * n_params * ln(n_neurons)``."""
    if not C0 > 0:
        raise ValueError(f"C0 must be positive, got {C0!r}")
    return C0 * L * count_params(L, s, d) * math.log(count_neurons(L, s, d))


def packing_bound(R: float, eps: float, pdim: float) -> float:
    """Bound on the 2*eps packing number of a [-R, R]-valued class:
    ``2 * ((2eR/eps) * ln(2eR/eps)) ** pdim``.
    """
    if not eps > 0 or eps > R:
        raise ValueError(f"need 0 < eps <= R, got eps={eps!r}, R={R!r}")
    if not pdim >= 0:
        raise ValueError(f"pdim must be >= 0, got {pdim!r}")
    r = 2.0 * math.e * R / eps
    return 2.0 * (r * math.log(r)) ** pdim


def covering_log2_bound(L: int, s: int, d: int, M: float, eps: float, cstar: float = 1.0) -> float:
    """Bound on ``log2 N_1(eps)`` for the truncated class:
    ``cstar * L^2 * (L*s + d) * ln(L*(s+d)) * ln(M/eps)``.
    """
    count_params(L, s, d)  # validates the architecture
    if not eps > 0 or eps > M:
        raise ValueError(f"need 0 < eps <= M, got eps={eps!r}, M={M!r}")
    if not cstar > 0:
        raise ValueError(f"cstar must be positive, got {cstar!r}")
    return cstar * L ** 2 * (L * s + d) * math.log(L * (s + d)) * math.log(M / eps)


def consistency_ratio(m: int, theta: float, M: float, L: int, d: int) -> float:
    """``M^4 L^2 (L+d) ln(L) ln(M^2 m) / m^(1 - 2 theta)``; must vanish as m grows."""
    if not 0.0 < theta < 0.5:
        raise ValueError(f"theta must lie in (0, 1/2), got {theta!r}")
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m!r}")
    if not M >= 1:
        raise ValueError(f"M must be >= 1, got {M!r}")
    if L < 1 or d < 1:
        raise ValueError(f"L and d must be >= 1, got L={L!r}, d={d!r}")
    return (M ** 4 * L ** 2 * (L + d) * math.log(L) * math.log(M * M * m)
            / m ** (1.0 - 2.0 * theta))


@dataclass
class ScheduleReport:
    m_grid: list[int]
    ratios: list[float]
    tail_decreasing: bool
    decay_exponent: float
    theta: float
    d: int

    def summary(self) -> str:
        return (f"decreasing: {str(self.tail_decreasing).lower()}  "
                f"decay exponent: {self.decay_exponent:.4f}  "
                f"ratio[first]={self.ratios[0]:.6g}  ratio[last]={self.ratios[-1]:.6g}")


def check_schedule(theta: float, d: int, m_grid: Sequence[int],
                   M_fn: Callable[[int], float], L_fn: Callable[[int], float],
                   tail: int | None = None) -> ScheduleReport:
    """Evaluate the consistency ratio along ``m_grid`` for the schedules ``M_fn``, ``L_fn``.

    The tail is the last half of the grid (at least 3 points) unless ``tail`` is
    given.  ``decay_exponent`` is minus the slope of a least-squares fit of
    ln(ratio) on ln(m) over the points with positive ratio (0 when none are).
    A ratio that is identically zero counts as non-increasing but not strictly
    decreasing.
    """
    grid = [int(m) for m in m_grid]
    if len(grid) < 3:
        raise ValueError(f"m_grid needs at least 3 points, got {len(grid)}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("m_grid must be strictly increasing")
    ratios = [consistency_ratio(m, theta, M_fn(m), L_fn(m), d) for m in grid]
    n_tail = tail if tail is not None else max(3, len(grid) // 2)
    t = ratios[-n_tail:]
    decreasing = all(b < a for a, b in zip(t, t[1:]))
    pos = [(math.log(m), math.log(r)) for m, r in zip(grid, ratios) if r > 0]
    if len(pos) >= 2:
        xs, ys = np.array(pos).T
        slope = float(np.polyfit(xs, ys, 1)[0])
        exponent = -slope
    else:
        exponent = 0.0
    return ScheduleReport(grid, ratios, decreasing, exponent, theta, d)


@dataclass
class CapacityReport:
    L: int
    s: int
    d: int
    m: int
    theta: float
    M: float
    C0: float
    cstar: float
    n_params: int
    n_neurons: int
    pdim_bound: float
    covering_log2_bound: float
    consistency_ratio: float
    eps: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items()]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v!r}" for k, v in rows)


def capacity_report(L: int, s: int, d: int, m: int, theta: float, M: float | None = None,
                    C0: float = 1.0, cstar: float = 1.0, eps: float | None = None) -> CapacityReport:
    """All bounds for one architecture and sample size.

    ``M`` defaults to ``max(1, ln m)``; the covering bound uses ``eps = 1/m``
    unless given (clipped to ``M``).
    """
    if M is None:
        M = max(1.0, math.log(m))
    if eps is None:
        eps = min(1.0 / m, M)
    return CapacityReport(
        L=L, s=s, d=d, m=m, theta=theta, M=M, C0=C0, cstar=cstar,
        n_params=count_params(L, s, d),
        n_neurons=count_neurons(L, s, d),
        pdim_bound=pseudo_dim_bound(L, s, d, C0),
        covering_log2_bound=covering_log2_bound(L, s, d, M, eps, cstar),
        consistency_ratio=consistency_ratio(m, theta, M, L, d),
        eps=eps,
    )
