"""Exact transition kernels of the complete-graph chain for small n.

Rows are obtained by convolving the law of the two surviving-color counts
(independent binomials) with the trinomial law of what the undecided nodes
pull. All pmf terms are evaluated in log space through ``gammaln``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d
from scipy.special import gammaln, xlog1py, xlogy

from udyn.core import Configuration
from udyn.phases import Label, PhaseParameters, classify_label

DEFAULT_CAP = 60


class NumericalFailure(RuntimeError):
    pass


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise ValueError(f"n={n} exceeds the exact-chain cap {cap}")


def binom_pmf(m: int, p: float) -> np.ndarray:
    """Binomial(m, p) pmf over ``0..m``."""
    k = np.arange(m + 1)
    logc = gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
    return np.exp(logc + xlogy(k, p) + xlog1py(m - k, -p))


def trinomial_pmf(m: int, pa: float, pb: float, pq: float) -> np.ndarray:
    """``M[i, j] = P(i to Alpha, j to Beta, m-i-j stay)``; zero where i+j > m."""
    i = np.arange(m + 1)[:, None]
    j = np.arange(m + 1)[None, :]
    r = m - i - j
    valid = r >= 0
    rr = np.where(valid, r, 0)
    logp = (
        gammaln(m + 1) - gammaln(i + 1) - gammaln(j + 1) - gammaln(rr + 1)
        + xlogy(i, pa) + xlogy(j, pb) + xlogy(rr, pq)
    )
    return np.where(valid, np.exp(logp), 0.0)


def one_step_distribution(cfg: Configuration, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Exact law of ``(a', b')`` as an ``(n+1, n+1)`` array indexed ``[a', b']``."""
    n, a, b, q = cfg.n, cfg.a, cfg.b, cfg.q
    _check_cap(n, cap)
    keep = np.outer(binom_pmf(a, (a + q) / n), binom_pmf(b, (b + q) / n))
    undecided = trinomial_pmf(q, a / n, b / n, q / n)
    conv = convolve2d(keep, undecided)
    out = np.zeros((n + 1, n + 1))
    out[: conv.shape[0], : conv.shape[1]] = conv
    return out


def pruned_target(n: int, s_bar: int) -> tuple[int, int]:
    """The configuration ``z(s_bar)``, returned as ``(a, b)``.

    Uses ``q = n/2`` when the parity of ``s_bar`` allows it, otherwise the
    nearest lower ``q`` of matching parity (and never more than ``n - |s_bar|``).
    """
    q = n // 2
    if (n - q + s_bar) % 2:
        q -= 1
    q = min(q, n - abs(s_bar))
    a = (n - q + s_bar) // 2
    return a, n - q - a


def pruned_one_step_distribution(
    cfg: Configuration, params: PhaseParameters | None = None, cap: int = DEFAULT_CAP
) -> np.ndarray:
    """Kernel row of the pruned process.

    From an H2 configuration, every target whose undecided count leaves
    ``[n/18, n/2]`` is redirected to ``z(s')`` with the same bias, so the
    law of ``s'`` is unchanged. Other rows equal the plain kernel.
    """
    n = cfg.n
    if n % 2:
        raise ValueError(f"pruned kernel needs even n, got {n}")
    _check_cap(n, cap)
    gamma = params.gamma if params is not None else 1.0
    dist = one_step_distribution(cfg, cap)
    if classify_label(n, cfg.a, cfg.b, gamma) is not Label.H2:
        return dist
    a_next, b_next = np.nonzero(dist)
    for a2, b2 in zip(a_next, b_next):
        q2 = n - a2 - b2
        if 18 * q2 < n or 2 * q2 > n:
            za, zb = pruned_target(n, int(a2 - b2))
            mass = dist[a2, b2]
            dist[a2, b2] = 0.0
            dist[za, zb] += mass
    return dist


def state_list(n: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(n + 1) for b in range(n + 1 - a)]


@dataclass
class TransitionKernel:
    n: int
    kind: str
    gamma: float | None
    states: list[tuple[int, int]]
    matrix: np.ndarray
    _index: dict = field(default_factory=dict, repr=False)
    _solution: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self._index = {st: i for i, st in enumerate(self.states)}

    def index(self, a: int, b: int) -> int:
        return self._index[(a, b)]

    def row(self, a: int, b: int) -> dict[tuple[int, int], float]:
        r = self.matrix[self.index(a, b)]
        return {self.states[j]: float(r[j]) for j in np.flatnonzero(r)}

    def absorbing_mask(self) -> np.ndarray:
        n = self.n
        return np.array([a == n or b == n or a + b == 0 for a, b in self.states])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["a", "b", "a_next", "b_next", "prob"])
        for i, (a, b) in enumerate(self.states):
            for j in np.flatnonzero(self.matrix[i]):
                a2, b2 = self.states[j]
                w.writerow([a, b, a2, b2, f"{self.matrix[i, j]:.17g}"])
        return buf.getvalue()


def build_kernel(
    n: int, kind: str = "plain", params: PhaseParameters | None = None, cap: int = DEFAULT_CAP
) -> TransitionKernel:
    """Dense kernel over all ``(a, b)`` with ``a + b <= n``."""
    if kind not in ("plain", "pruned"):
        raise ValueError(f"unknown kernel kind {kind!r}")
    _check_cap(n, cap)
    if kind == "pruned" and n % 2:
        raise ValueError(f"pruned kernel needs even n, got {n}")
    states = state_list(n)
    index = {st: i for i, st in enumerate(states)}
    a_idx = np.array([a for a, _ in states])
    b_idx = np.array([b for _, b in states])
    P = np.zeros((len(states), len(states)))
    for i, (a, b) in enumerate(states):
        cfg = Configuration(n, a, b)
        if a == n or b == n or a + b == 0:
            P[i, i] = 1.0
            continue
        if kind == "plain":
            dist = one_step_distribution(cfg, cap)
        else:
            dist = pruned_one_step_distribution(cfg, params, cap)
        P[i] = dist[a_idx, b_idx]
    gamma = (params.gamma if params is not None else 1.0) if kind == "pruned" else None
    k = TransitionKernel(n, kind, gamma, states, P)
    k._index = index
    return k


@dataclass(frozen=True)
class AbsorptionReport:
    p_alpha: float
    p_beta: float
    p_undecided: float
    expected_rounds: float


def _solve(kernel: TransitionKernel):
    if kernel._solution is not None:
        return kernel._solution
    n = kernel.n
    P = kernel.matrix
    absorbing = kernel.absorbing_mask()
    trans = np.flatnonzero(~absorbing)
    targets = [kernel.index(n, 0), kernel.index(0, n), kernel.index(0, 0)]
    if trans.size == 0:
        kernel._solution = (trans, np.zeros((0, 3)), np.zeros(0))
        return kernel._solution
    A = np.eye(trans.size) - P[np.ix_(trans, trans)]
    rhs = np.column_stack([P[trans][:, targets], np.ones(trans.size)])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"absorbing-chain system is singular for n={n}") from exc
    resid = np.max(np.abs(A @ sol - rhs))
    if not np.isfinite(resid) or resid > 1e-10 * max(1.0, np.max(np.abs(sol))):
        raise NumericalFailure(f"absorbing-chain solve residual {resid:.3g} too large")
    kernel._solution = (trans, sol[:, :3], sol[:, 3])
    return kernel._solution


def absorption(kernel: TransitionKernel, start: Configuration) -> AbsorptionReport:
    """Absorption probabilities and expected absorption time from ``start``."""
    n = kernel.n
    if start.n != n:
        raise ValueError(f"start has n={start.n}, kernel has n={n}")
    a, b = start.a, start.b
    if a == n:
        return AbsorptionReport(1.0, 0.0, 0.0, 0.0)
    if b == n:
        return AbsorptionReport(0.0, 1.0, 0.0, 0.0)
    if a + b == 0:
        return AbsorptionReport(0.0, 0.0, 1.0, 0.0)
    trans, probs, times = _solve(kernel)
    pos = int(np.searchsorted(trans, kernel.index(a, b)))
    pa, pb, pq = (float(x) for x in probs[pos])
    return AbsorptionReport(pa, pb, pq, float(times[pos]))
