"""Chernoff-type tail bounds for sums of independent 0-1 variables.

Every bound is computed as a log value first; the ``log_*`` functions are
the primitive ones and stay finite far below the double-precision range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from udyn.rng import as_source

UNDERFLOW = 1e-300


class BoundDomainError(ValueError):
    """A bound was requested outside its validity domain."""


def log_chernoff_mult(mu: float, delta: float, direction: str = "upper") -> float:
    if not 0 < delta < 1:
        raise BoundDomainError(f"delta must lie in (0, 1), got {delta}")
    if not mu > 0:
        raise BoundDomainError(f"mu must be positive, got {mu}")
    if direction == "upper":
        return -mu * delta * delta / 3
    if direction == "lower":
        return -mu * delta * delta / 2
    raise ValueError(f"direction must be 'upper' or 'lower', got {direction!r}")


def chernoff_mult(mu: float, delta: float, direction: str = "upper") -> float:
    """``P(X >= (1+delta) mu) <= exp(-mu delta^2 / 3)`` (upper),
    ``P(X <= (1-delta) mu) <= exp(-mu delta^2 / 2)`` (lower)."""
    return math.exp(log_chernoff_mult(mu, delta, direction))


def log_chernoff_add(n: int, lam: float) -> float:
    if not lam > 0:
        raise BoundDomainError(f"lambda must be positive, got {lam}")
    if n < 1:
        raise BoundDomainError(f"n must be >= 1, got {n}")
    return -2.0 * lam * lam / n


def chernoff_add(n: int, lam: float) -> float:
    """``P(X >= mu + lam)`` and ``P(X <= mu - lam)`` are each at most ``exp(-2 lam^2 / n)``."""
    return math.exp(log_chernoff_add(n, lam))


def log_reverse_chernoff(mu: float, delta: float, n: int) -> float:
    if not 0 < delta <= 0.5:
        raise BoundDomainError(f"reverse bound needs 0 < delta <= 1/2, got delta={delta}")
    if mu > n / 2:
        raise BoundDomainError(f"reverse bound needs mu <= n/2, got mu={mu} > {n / 2}")
    if delta * delta * mu < 3:
        raise BoundDomainError(
            f"reverse bound needs delta^2 * mu >= 3, got {delta * delta * mu:.6g} < 3"
        )
    return -9.0 * delta * delta * mu


def reverse_chernoff(mu: float, delta: float, n: int) -> float:
    """Lower bound ``exp(-9 delta^2 mu)`` on both ``P(X >= (1+delta) mu)``
    and ``P(X <= (1-delta) mu)``."""
    return math.exp(log_reverse_chernoff(mu, delta, n))


def report_value(log_bound: float) -> float | str:
    """Bound for reports: a float, or ``"exp(<log>)"`` once it underflows."""
    if log_bound < math.log(UNDERFLOW):
        return f"exp({log_bound:.17g})"
    return math.exp(log_bound)


@dataclass(frozen=True)
class TailQuery:
    """Tail event of ``X ~ Binomial(n, p)``.

    ``direction='upper'`` asks for ``P(X >= threshold)``, ``'lower'`` for
    ``P(X <= threshold)``. ``form`` picks the bound to test against:
    ``'additive'``, ``'multiplicative'`` or ``'reverse'``.
    """

    n: int
    p: float
    direction: str
    threshold: float
    form: str = "additive"

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.direction not in ("upper", "lower"):
            raise ValueError(f"bad direction {self.direction!r}")
        if self.form not in ("additive", "multiplicative", "reverse"):
            raise ValueError(f"bad form {self.form!r}")

    @property
    def mu(self) -> float:
        return self.n * self.p

    def log_bound(self) -> float:
        """Log of the bound that applies to this tail.

        Forward bounds whose deviation is not positive are vacuous and give
        ``0.0`` (bound 1).
        """
        mu = self.mu
        dev = self.threshold - mu if self.direction == "upper" else mu - self.threshold
        if self.form == "additive":
            return log_chernoff_add(self.n, dev) if dev > 0 else 0.0
        delta = dev / mu if mu > 0 else 0.0
        if self.form == "multiplicative":
            if delta <= 0:
                return 0.0
            if delta >= 1:
                # the stated form needs delta < 1; the bound at delta -> 1 still dominates
                delta = math.nextafter(1.0, 0.0)
            return log_chernoff_mult(mu, delta, self.direction)
        return log_reverse_chernoff(mu, delta, self.n)


@dataclass(frozen=True)
class TailCheck:
    empirical: float
    bound: float
    consistent: bool
    se: float
    log_bound: float


def empirical_tail_check(query: TailQuery, trials: int, rng) -> TailCheck:
    """Sample ``Binomial(n, p)`` and compare the tail frequency with the bound.

    Forward bounds are consistent when ``empirical <= bound + 3 SE``; the
    reverse bound when ``empirical >= bound - 3 SE``.
    """
    gen = as_source(rng).gen
    x = gen.binomial(query.n, query.p, size=trials)
    if query.direction == "upper":
        hits = np.count_nonzero(x >= query.threshold)
    else:
        hits = np.count_nonzero(x <= query.threshold)
    emp = hits / trials
    se = math.sqrt(emp * (1 - emp) / trials)
    lb = query.log_bound()
    bound = math.exp(lb)
    if query.form == "reverse":
        ok = emp >= bound - 3 * se
    else:
        ok = emp <= bound + 3 * se
    return TailCheck(emp, bound, bool(ok), se, lb)


def claim_failure_exponent(gamma: float = 1.0) -> float:
    """Exponent ``c`` in ``exp(-2 lam^2 / n) = n^{-c}`` for ``lam = gamma sqrt(n ln n) / 72``."""
    return 2.0 * gamma * gamma / 72.0**2


def default_tail_grid() -> list[TailQuery]:
    """Twenty tail queries covering every bound form and direction."""
    grid = []
    for n, p, lam in [(1000, 0.5, 50), (1000, 0.5, 20), (500, 0.1, 15), (2000, 0.3, 40)]:
        grid.append(TailQuery(n, p, "upper", n * p + lam, "additive"))
    for n, p, lam in [(1000, 0.5, 30), (200, 0.7, 10), (5000, 0.05, 25)]:
        grid.append(TailQuery(n, p, "lower", n * p - lam, "additive"))
    for n, p, d in [(1000, 0.05, 0.3), (200, 0.3, 0.2), (10000, 0.01, 0.5), (500, 0.5, 0.1)]:
        grid.append(TailQuery(n, p, "upper", (1 + d) * n * p, "multiplicative"))
    for n, p, d in [(1000, 0.05, 0.3), (200, 0.3, 0.25), (10000, 0.01, 0.4)]:
        grid.append(TailQuery(n, p, "lower", (1 - d) * n * p, "multiplicative"))
    for n, p, d in [(200, 0.3, 0.3), (100, 0.48, 0.25), (1000, 0.1, 0.2)]:
        grid.append(TailQuery(n, p, "upper", (1 + d) * n * p, "reverse"))
    for n, p, d in [(200, 0.3, 0.3), (400, 0.25, 0.2), (1000, 0.1, 0.25)]:
        grid.append(TailQuery(n, p, "lower", (1 - d) * n * p, "reverse"))
    return grid
