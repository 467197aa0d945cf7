"""Aggregate U-Dynamics on the complete graph.

A round of the dynamics is sampled exactly from three class-level draws:
each Alpha node keeps its color unless it pulls a Beta node, each Beta node
keeps its color unless it pulls an Alpha node, and every undecided node
adopts whatever color it pulls. Every node pulls uniformly among all ``n``
nodes, itself included.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from udyn.rng import RandomSource, as_source

N_MAX = 1 << 40


@dataclass(frozen=True)
class Configuration:
    """Macrostate ``(n, a, b)``; ``q`` and ``s`` are derived."""

    n: int
    a: int
    b: int

    def __post_init__(self):
        n, a, b = int(self.n), int(self.a), int(self.b)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if not 1 <= n <= N_MAX:
            raise ValueError(f"n must be in [1, 2^40], got {n}")
        if a < 0 or b < 0 or a + b > n:
            raise ValueError(f"invalid configuration a={a}, b={b} for n={n}")

    @property
    def q(self) -> int:
        return self.n - self.a - self.b

    @property
    def s(self) -> int:
        return self.a - self.b

    @classmethod
    def from_sq(cls, n: int, s: int, q: int) -> "Configuration":
        """Build from bias and undecided count; ``n - q + s`` must be even."""
        if (n - q + s) % 2:
            raise ValueError(f"parity mismatch: n={n}, s={s}, q={q}")
        a = (n - q + s) // 2
        return cls(n, a, n - q - a)

    def swapped(self) -> "Configuration":
        return Configuration(self.n, self.b, self.a)

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.n, self.a, self.b)


@dataclass(frozen=True)
class StepDecomposition:
    a_keep: int
    b_keep: int
    q_to_a: int
    q_to_b: int
    q_stay: int

    def next_config(self, n: int) -> Configuration:
        return Configuration(n, self.a_keep + self.q_to_a, self.b_keep + self.q_to_b)


class Outcome(str, enum.Enum):
    ALPHA = "absorbed-alpha"
    BETA = "absorbed-beta"
    UNDECIDED = "absorbed-undecided"
    TIMEOUT = "timeout"


# integer codes used by the vectorized runner
RUNNING, ABS_ALPHA, ABS_BETA, ABS_UNDECIDED = 0, 1, 2, 3
_CODE_TO_OUTCOME = {
    ABS_ALPHA: Outcome.ALPHA,
    ABS_BETA: Outcome.BETA,
    ABS_UNDECIDED: Outcome.UNDECIDED,
    RUNNING: Outcome.TIMEOUT,
}


def expected_next(cfg: Configuration) -> tuple[float, float, float, float]:
    """Conditional expectations of ``(A, B, Q, S)`` after one round."""
    n, a, b, q = cfg.n, cfg.a, cfg.b, cfg.q
    ea = a * (a + 2 * q) / n
    eb = b * (b + 2 * q) / n
    eq = (q * q + 2 * a * b) / n
    return ea, eb, eq, ea - eb


def step_decomposed(cfg: Configuration, rng) -> StepDecomposition:
    """Sample the five per-class transfer counts of one round."""
    gen = as_source(rng).gen
    n, a, b, q = cfg.n, cfg.a, cfg.b, cfg.q
    a_keep = int(gen.binomial(a, (a + q) / n))
    b_keep = int(gen.binomial(b, (b + q) / n))
    # the undecided trinomial as two conditional binomials
    q_to_a = int(gen.binomial(q, a / n))
    rest = q - q_to_a
    q_to_b = int(gen.binomial(rest, b / (b + q))) if b + q else 0
    return StepDecomposition(a_keep, b_keep, q_to_a, q_to_b, rest - q_to_b)


def step(cfg: Configuration, rng) -> Configuration:
    return step_decomposed(cfg, rng).next_config(cfg.n)


def is_absorbing(cfg: Configuration) -> bool:
    return cfg.a == cfg.n or cfg.b == cfg.n or cfg.q == cfg.n


def default_max_rounds(n: int) -> int:
    return max(1, math.ceil(100 * math.log(n))) if n > 1 else 1


@dataclass
class Trajectory:
    configs: list[Configuration]
    outcome: Outcome

    def __len__(self) -> int:
        return len(self.configs)

    @property
    def rounds(self) -> int:
        return len(self.configs) - 1


def run_until_absorbed(cfg: Configuration, rng, max_rounds: int | None = None) -> Trajectory:
    """Iterate ``step`` until an absorbing state or ``max_rounds`` rounds.

    A timeout is reported through ``Trajectory.outcome``, never raised.
    """
    if max_rounds is None:
        max_rounds = default_max_rounds(cfg.n)
    if max_rounds < 1:
        raise ValueError("max_rounds must be >= 1")
    src = as_source(rng)
    traj = [cfg]
    cur = cfg
    for _ in range(max_rounds):
        if is_absorbing(cur):
            break
        cur = step(cur, src)
        traj.append(cur)
    return Trajectory(traj, _outcome_of(cur))


def _outcome_of(cfg: Configuration) -> Outcome:
    if cfg.a == cfg.n:
        return Outcome.ALPHA
    if cfg.b == cfg.n:
        return Outcome.BETA
    if cfg.q == cfg.n:
        return Outcome.UNDECIDED
    return Outcome.TIMEOUT


# ---------------------------------------------------------------------------
# vectorized form: many independent chains sharing one n


def step_many(n: int, a: np.ndarray, b: np.ndarray, gen: np.random.Generator):
    """One round for arrays of configurations; returns ``(a', b')``."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    q = n - a - b
    a_keep = gen.binomial(a, (a + q) / n)
    b_keep = gen.binomial(b, (b + q) / n)
    q_to_a = gen.binomial(q, a / n)
    bq = b + q
    p_b = np.divide(b, bq, out=np.zeros(b.shape, dtype=float), where=bq > 0)
    q_to_b = gen.binomial(q - q_to_a, p_b)
    return a_keep + q_to_a, b_keep + q_to_b


def absorbed_code(n: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    code = np.zeros(np.shape(a), dtype=np.int8)
    code[a == n] = ABS_ALPHA
    code[b == n] = ABS_BETA
    code[(a == 0) & (b == 0)] = ABS_UNDECIDED
    return code


@dataclass
class BatchResult:
    """Final states of a batch of chains run by :func:`run_many`.

    ``rounds[i]`` is the absorption round of chain ``i`` (or the number of
    rounds executed when it timed out, in which case ``code[i] == RUNNING``).
    """

    n: int
    a: np.ndarray
    b: np.ndarray
    rounds: np.ndarray
    code: np.ndarray
    extra: dict = field(default_factory=dict)

    def outcomes(self) -> list[Outcome]:
        return [_CODE_TO_OUTCOME[int(c)] for c in self.code]

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.code == code))


def run_many(
    n: int,
    a0,
    b0,
    gen: np.random.Generator,
    max_rounds: int,
    observer=None,
) -> BatchResult:
    """Run independent chains in lockstep until each absorbs or times out.

    ``observer(t, a_prev, b_prev, a_next, b_next, idx)``, if given, is called
    after every round with the states of the chains that were still active
    (``idx`` holds their positions in the batch).
    """
    a = np.array(a0, dtype=np.int64, ndmin=1).copy()
    b = np.array(b0, dtype=np.int64, ndmin=1).copy()
    a, b = np.broadcast_arrays(a, b)
    a, b = a.copy(), b.copy()
    rounds = np.zeros(a.shape, dtype=np.int64)
    code = absorbed_code(n, a, b)
    idx = np.flatnonzero(code == RUNNING)
    for t in range(1, max_rounds + 1):
        if idx.size == 0:
            break
        pa, pb = a[idx], b[idx]
        na, nb = step_many(n, pa, pb, gen)
        if observer is not None:
            observer(t, pa, pb, na, nb, idx)
        a[idx], b[idx] = na, nb
        rounds[idx] = t
        c = absorbed_code(n, na, nb)
        code[idx] = c
        idx = idx[c == RUNNING]
    return BatchResult(n, a, b, rounds, code)
