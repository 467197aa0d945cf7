"""Phase regions H1..H7 of the (|s|, q) plane and the allowed transitions.

Thresholds use the natural logarithm. With ``theta = gamma * sqrt(n ln n)``
and ``r = sqrt(n ln n)``:

* ``|s| < theta``: H1 if ``q >= n/2``, H2 if ``n/18 <= q < n/2``, else H3;
* ``theta <= |s| < 2n/3``: H4 if ``q >= n/18``, else H5;
* ``|s| >= 2n/3``: H7 if ``q <= r`` and ``|s| <= n - 5r``, else H6.

Rational boundaries (n/2, n/18, 2n/3) are compared in exact integer
arithmetic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from udyn.core import Configuration


class Label(str, enum.Enum):
    H1 = "H1"
    H2 = "H2"
    H3 = "H3"
    H4 = "H4"
    H5 = "H5"
    H6 = "H6"
    H7 = "H7"
    ABS_A = "ABS_A"
    ABS_B = "ABS_B"
    ABS_Q = "ABS_Q"

    def __str__(self) -> str:
        return self.value


LABELS = list(Label)
LOW_BIAS = frozenset({Label.H1, Label.H2, Label.H3})
ABSORBED = frozenset({Label.ABS_A, Label.ABS_B, Label.ABS_Q})
_CODE = {lab: i for i, lab in enumerate(LABELS)}


class Sign(str, enum.Enum):
    ALPHA = "alpha-leading"
    BETA = "beta-leading"
    TIED = "tied"


@dataclass(frozen=True)
class PhaseParameters:
    gamma: float = 1.0
    log_base: str = "e"

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.log_base != "e":
            raise ValueError("only the natural logarithm is supported")


@dataclass(frozen=True)
class Region:
    label: Label
    majority_sign: Sign

    def __str__(self) -> str:
        return self.label.value


def sqrt_nlogn(n: int) -> float:
    return math.sqrt(n * math.log(n))


def bias_threshold(n: int, gamma: float = 1.0) -> float:
    return gamma * sqrt_nlogn(n)


def classify_label(n: int, a: int, b: int, gamma: float = 1.0) -> Label:
    q = n - a - b
    if a == n:
        return Label.ABS_A
    if b == n:
        return Label.ABS_B
    if q == n:
        return Label.ABS_Q
    sigma = abs(a - b)
    r = sqrt_nlogn(n)
    if sigma < gamma * r:
        if 2 * q >= n:
            return Label.H1
        return Label.H2 if 18 * q >= n else Label.H3
    if 3 * sigma < 2 * n:
        return Label.H4 if 18 * q >= n else Label.H5
    if q <= r and sigma <= n - 5 * r:
        return Label.H7
    return Label.H6


def classify(cfg: Configuration, params: PhaseParameters | None = None) -> Region:
    gamma = params.gamma if params is not None else 1.0
    label = classify_label(cfg.n, cfg.a, cfg.b, gamma)
    s = cfg.s
    sign = Sign.ALPHA if s > 0 else Sign.BETA if s < 0 else Sign.TIED
    return Region(label, sign)


def classify_codes(n: int, a, b, gamma: float = 1.0) -> np.ndarray:
    """Vectorized :func:`classify_label`; returns indices into ``LABELS``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    q = n - a - b
    sigma = np.abs(a - b)
    r = sqrt_nlogn(n) if n > 1 else 0.0
    low = sigma < gamma * r
    mid = ~low & (3 * sigma < 2 * n)
    high = ~low & ~mid
    out = np.empty(a.shape, dtype=np.int8)
    out[low & (2 * q >= n)] = _CODE[Label.H1]
    out[low & (2 * q < n) & (18 * q >= n)] = _CODE[Label.H2]
    out[low & (18 * q < n)] = _CODE[Label.H3]
    out[mid & (18 * q >= n)] = _CODE[Label.H4]
    out[mid & (18 * q < n)] = _CODE[Label.H5]
    h7 = high & (q <= r) & (sigma <= n - 5 * r)
    out[h7] = _CODE[Label.H7]
    out[high & ~h7] = _CODE[Label.H6]
    out[a == n] = _CODE[Label.ABS_A]
    out[b == n] = _CODE[Label.ABS_B]
    out[q == n] = _CODE[Label.ABS_Q]
    return out


@dataclass(frozen=True)
class PhaseDigraph:
    arrows: frozenset

    def allows(self, src: Label, dst: Label) -> bool:
        return (Label(src), Label(dst)) in self.arrows

    def matrix(self) -> np.ndarray:
        """Boolean ``len(LABELS) x len(LABELS)`` adjacency indexed by code."""
        m = np.zeros((len(LABELS), len(LABELS)), dtype=bool)
        for s, d in self.arrows:
            m[_CODE[s], _CODE[d]] = True
        return m


_ARROWS = {
    Label.H3: (Label.H1, Label.H2, Label.H4),
    Label.H1: (Label.H2, Label.H4),
    Label.H2: (Label.H4,),
    Label.H4: (Label.H6,),
    Label.H5: (Label.H4, Label.H6),
    Label.H7: (Label.H4, Label.H5, Label.H6),
    Label.H6: (Label.ABS_A, Label.ABS_B),
}


def allowed_digraph() -> PhaseDigraph:
    arrows = {(src, dst) for src, dsts in _ARROWS.items() for dst in dsts}
    arrows |= {(h, h) for h in LABELS[:7]}
    return PhaseDigraph(frozenset(arrows))


@dataclass(frozen=True)
class AuditEntry:
    round: int
    src: Label
    dst: Label
    allowed: bool


def audit_trajectory(traj, params: PhaseParameters | None = None) -> list[AuditEntry]:
    """Label each consecutive pair of a trajectory and check it against the digraph.

    ``traj`` is a sequence of :class:`Configuration` or a ``Trajectory``.
    """
    configs = getattr(traj, "configs", traj)
    if len(configs) == 0:
        raise ValueError("trajectory is empty")
    gamma = params.gamma if params is not None else 1.0
    dg = allowed_digraph()
    labels = [classify_label(c.n, c.a, c.b, gamma) for c in configs]
    return [
        AuditEntry(t + 1, src, dst, dg.allows(src, dst))
        for t, (src, dst) in enumerate(zip(labels, labels[1:]))
    ]
