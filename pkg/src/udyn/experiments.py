"""Seeded Monte Carlo experiments for the one-round claims and the
multi-round convergence behaviour of the complete-graph dynamics.

Trials are split into fixed-size blocks; block ``k`` of a run with
``(seed, stream)`` always draws from the same generator, so results are
identical whatever the number of worker processes.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from udyn.core import (
    ABS_ALPHA,
    ABS_BETA,
    ABS_UNDECIDED,
    RUNNING,
    Configuration,
    default_max_rounds,
    run_many,
    step_many,
)
from udyn.phases import (
    LABELS,
    Label,
    PhaseParameters,
    allowed_digraph,
    bias_threshold,
    classify_codes,
    classify_label,
    sqrt_nlogn,
)
from udyn.rng import as_source, block_generator

BLOCK = 2048
WHP_THRESHOLD = 0.99
CONFIDENCE = 0.99


# ---------------------------------------------------------------------------
# statistics


def wilson_interval(k: int, n: int, confidence: float = CONFIDENCE) -> tuple[float, float]:
    """Two-sided Wilson score interval for a binomial proportion."""
    if n == 0:
        return 0.0, 1.0
    z = norm.ppf(0.5 + confidence / 2)
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class ExperimentReport:
    id: str
    n: int
    trials: int
    pass_count: int
    pass_rate: float
    ci_lo: float
    ci_hi: float
    seed: int
    wall_ms: float
    threshold: float = WHP_THRESHOLD
    extra: dict = field(default_factory=dict)

    @property
    def confidence_interval(self) -> tuple[float, float]:
        return self.ci_lo, self.ci_hi

    @property
    def wall_time(self) -> float:
        return self.wall_ms / 1000.0

    @property
    def passed(self) -> bool:
        return self.pass_rate >= self.threshold

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        d.pop("threshold")
        return d


ROW_FIELDS = ["id", "n", "trials", "pass_count", "pass_rate", "ci_lo", "ci_hi", "seed", "wall_ms"]


def make_report(id_, n, trials, passes, seed, t0, threshold=WHP_THRESHOLD, **extra) -> ExperimentReport:
    lo, hi = wilson_interval(passes, trials)
    return ExperimentReport(
        id=id_,
        n=n,
        trials=trials,
        pass_count=int(passes),
        pass_rate=passes / trials if trials else 0.0,
        ci_lo=lo,
        ci_hi=hi,
        seed=seed,
        wall_ms=(time.perf_counter() - t0) * 1000.0,
        threshold=threshold,
        extra=extra,
    )


# ---------------------------------------------------------------------------
# block runner


def _block_sizes(trials: int) -> list[int]:
    full, rest = divmod(trials, BLOCK)
    return [BLOCK] * full + ([rest] if rest else [])


def run_blocks(fn: Callable, trials: int, rng, *args, workers: int = 1) -> list:
    """Evaluate ``fn(*args, count, gen)`` per block and return the block results in order.

    ``fn`` must be a module-level function when ``workers > 1``.
    """
    src = as_source(rng)
    jobs = [(fn, args, size, src.seed, src.stream, k) for k, size in enumerate(_block_sizes(trials))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(_run_job, jobs))
    return [_run_job(j) for j in jobs]


def _run_job(job):
    fn, args, size, seed, stream, block = job
    return fn(*args, size, block_generator(seed, stream, block))


# ---------------------------------------------------------------------------
# claims


@dataclass(frozen=True)
class ClaimParams:
    gamma: float = 1.0
    epsilon: float = 0.5
    horizon_factor: float = 20.0


def _orient(cfg: Configuration) -> tuple[int, int]:
    """``(majority count, minority count)``."""
    return (cfg.a, cfg.b) if cfg.a >= cfg.b else (cfg.b, cfg.a)


def _near_config(n: int, s: int, q: int) -> Configuration:
    """Configuration with bias ``s`` and ``q`` undecided.

    On a parity mismatch ``q`` is lowered by one, or ``s`` raised when ``q = 0``.
    """
    s, q = int(s), int(q)
    if (n - q + s) % 2:
        if q > 0:
            q -= 1
        else:
            s += 1
    return Configuration.from_sq(n, s, q)


def _horizon(n: int, p: ClaimParams) -> int:
    return max(1, math.ceil(p.horizon_factor * math.log(n)))


@dataclass(frozen=True)
class ClaimSpec:
    """One claim: guard, default configuration, and vectorized trial evaluator.

    ``evaluate(cfg, params, count, gen)`` returns the number of passing trials
    among ``count``; ``threshold`` is the pass rate the claim is held to.
    """

    id: str
    statement: str
    precondition: Callable
    default_config: Callable
    evaluate: Callable
    horizon: bool = False
    threshold: float = WHP_THRESHOLD

    def check(self, cfg: Configuration, params: ClaimParams) -> str | None:
        """``None`` when the precondition holds, otherwise the reason it fails."""
        return self.precondition(cfg, params)


def _one_step(cfg: Configuration, count: int, gen):
    """Oriented next-round samples ``(A, B, Q)`` with ``A`` the initial majority."""
    maj, mino = _orient(cfg)
    a = np.full(count, maj, dtype=np.int64)
    b = np.full(count, mino, dtype=np.int64)
    A, B = step_many(cfg.n, a, b, gen)
    return A, B, cfg.n - A - B


def _pre_q_lower(cfg, p):
    if 3 * abs(cfg.s) > 2 * cfg.n:
        return "|s| > 2n/3"


def _eval_q_lower(cfg, p, count, gen):
    _, _, Q = _one_step(cfg, count, gen)
    return int(np.count_nonzero(18 * Q >= cfg.n))


def _pre_a_increase(cfg, p):
    if 2 * cfg.q < cfg.n:
        return "q < n/2"
    maj, _ = _orient(cfg)
    if maj < math.log(cfg.n):
        return "majority count < ln n"


def _eval_a_increase(cfg, p, count, gen):
    # the growth bound needs a >= (n - q)/2, so the claim is read for the majority color
    maj, _ = _orient(cfg)
    A, _, _ = _one_step(cfg, count, gen)
    return int(np.count_nonzero(8 * A >= 9 * maj))


def _pre_info(cfg, p):
    c = cfg.a + cfg.b
    if not 1 <= c < 2 * math.log(cfg.n):
        return "a + b outside [1, 2 ln n)"


def _eval_info(cfg, p, count, gen):
    n = cfg.n
    target = 2 * math.log(n)
    hit = np.zeros(count, dtype=bool)

    def watch(t, pa, pb, na, nb, idx):
        hit[idx] |= (na + nb) >= target

    a = np.full(count, cfg.a, dtype=np.int64)
    b = np.full(count, cfg.b, dtype=np.int64)
    _run_until(n, a, b, gen, _horizon(n, p), watch, stop=hit)
    return int(np.count_nonzero(hit))


def _run_until(n, a, b, gen, rounds, observer, stop):
    """Lockstep rounds for chains not yet absorbed and not yet ``stop``-ped."""
    idx = np.flatnonzero(~stop & ~_absorbed(n, a, b))
    for t in range(1, rounds + 1):
        if idx.size == 0:
            break
        pa, pb = a[idx], b[idx]
        na, nb = step_many(n, pa, pb, gen)
        observer(t, pa, pb, na, nb, idx)
        a[idx], b[idx] = na, nb
        idx = idx[~stop[idx] & ~_absorbed(n, na, nb)]


def _absorbed(n, a, b):
    return (a == n) | (b == n) | ((a == 0) & (b == 0))


def _pre_s_increase(cfg, p):
    n = cfg.n
    if abs(cfg.s) < p.gamma * sqrt_nlogn(n):
        return "|s| < gamma sqrt(n ln n)"
    if 18 * cfg.q < n:
        return "q < n/18"


def _eval_s_increase(cfg, p, count, gen):
    A, B, _ = _one_step(cfg, count, gen)
    S = A - B
    s = abs(cfg.s)
    return int(np.count_nonzero((36 * S > 37 * s) & (S < 2 * s)))


def _pre_b_decrease(cfg, p):
    _, mino = _orient(cfg)
    if 3 * abs(cfg.s) < 2 * cfg.n:
        return "|s| < 2n/3"
    if mino < math.log(cfg.n):
        return "minority count < ln n"


def _eval_b_decrease(cfg, p, count, gen):
    _, B, _ = _one_step(cfg, count, gen)
    _, mino = _orient(cfg)
    return int(np.count_nonzero(9 * B <= 8 * mino))


def _pre_s_preserved(cfg, p):
    if 3 * abs(cfg.s) < 2 * cfg.n:
        return "|s| < 2n/3"
    if cfg.q < sqrt_nlogn(cfg.n):
        return "q < sqrt(n ln n)"


def _eval_s_preserved(cfg, p, count, gen):
    A, B, _ = _one_step(cfg, count, gen)
    return int(np.count_nonzero(3 * (A - B) >= 2 * cfg.n))


def _pre_q_preserved(cfg, p):
    _, mino = _orient(cfg)
    if 3 * abs(cfg.s) < 2 * cfg.n:
        return "|s| < 2n/3"
    if mino < 2 * sqrt_nlogn(cfg.n):
        return "minority count < 2 sqrt(n ln n)"


def _eval_q_preserved(cfg, p, count, gen):
    _, _, Q = _one_step(cfg, count, gen)
    return int(np.count_nonzero(Q > sqrt_nlogn(cfg.n)))


def _pre_q_decrease(cfg, p):
    n = cfg.n
    r = sqrt_nlogn(n)
    _, mino = _orient(cfg)
    if not (12 * r <= cfg.q and 3 * cfg.q <= n):
        return "q outside [12 sqrt(n ln n), n/3]"
    if mino > 2 * r:
        return "minority count > 2 sqrt(n ln n)"


def _eval_q_decrease(cfg, p, count, gen):
    _, _, Q = _one_step(cfg, count, gen)
    return int(np.count_nonzero(9 * Q <= 8 * cfg.q))


def _pre_a_wins(cfg, p):
    r = sqrt_nlogn(cfg.n)
    _, mino = _orient(cfg)
    if cfg.q > p.gamma * r:
        return "q > gamma sqrt(n ln n)"
    if mino > 2 * r:
        return "minority count > 2 sqrt(n ln n)"


def _eval_a_wins(cfg, p, count, gen):
    maj, mino = _orient(cfg)
    res = run_many(cfg.n, np.full(count, maj), np.full(count, mino), gen, _horizon(cfg.n, p))
    return res.count(ABS_ALPHA)


def _pre_s_nodec(cfg, p):
    if abs(cfg.s) < p.gamma * sqrt_nlogn(cfg.n):
        return "|s| < gamma sqrt(n ln n)"
    if not 0 < p.epsilon:
        return "epsilon must be positive"


def _eval_s_nodec(cfg, p, count, gen):
    A, B, _ = _one_step(cfg, count, gen)
    return int(np.count_nonzero(A - B >= (p.gamma - p.epsilon) * sqrt_nlogn(cfg.n)))


def _pre_q_bounded(cfg, p):
    if classify_label(cfg.n, cfg.a, cfg.b, p.gamma) is not Label.H2:
        return "configuration not in H2"


def _eval_q_bounded(cfg, p, count, gen):
    _, _, Q = _one_step(cfg, count, gen)
    n = cfg.n
    return int(np.count_nonzero((18 * Q >= n) & (2 * Q <= n)))


def _pre_apxminbias(cfg, p):
    n = cfg.n
    if n % 3:
        return "n not divisible by 3"
    if 3 * cfg.q != n:
        return "q != n/3"
    if cfg.s == 0:
        return "no minority color (s = 0)"


def _eval_apxminbias(cfg, p, count, gen):
    maj, mino = _orient(cfg)
    res = run_many(cfg.n, np.full(count, maj), np.full(count, mino), gen, default_max_rounds(cfg.n))
    return res.count(ABS_BETA)


def apxminbias_config(n: int, mirrored: bool = False) -> Configuration:
    """``q = n/3``, colors ``n/3 +- round(sqrt n)``; Alpha leads unless ``mirrored``."""
    if n % 3:
        raise ValueError(f"n must be divisible by 3, got {n}")
    r = round(math.sqrt(n))
    maj, mino = n // 3 + r, n // 3 - r
    if mino < 0:
        raise ValueError(f"n={n} too small for the construction")
    return Configuration(n, mino, maj) if mirrored else Configuration(n, maj, mino)


def _r(n):
    return sqrt_nlogn(n)


CLAIMS: dict[str, ClaimSpec] = {
    c.id: c
    for c in [
        ClaimSpec(
            "q_lower_bound",
            "|s| <= 2n/3  =>  Q >= n/18",
            _pre_q_lower,
            lambda n, p: Configuration(n, n // 2, n - n // 2),
            _eval_q_lower,
        ),
        ClaimSpec(
            "a_increase",
            "q >= n/2, a >= max(b, ln n)  =>  A >= (1 + 1/8) a",
            _pre_a_increase,
            lambda n, p: _near_config(n, 0, math.ceil(n / 2)),
            _eval_a_increase,
        ),
        ClaimSpec(
            "information_spreading",
            "1 <= a + b < 2 ln n  =>  a + b >= 2 ln n within the horizon",
            _pre_info,
            lambda n, p: Configuration(n, 1, 0),
            _eval_info,
            horizon=True,
        ),
        ClaimSpec(
            "s_increase",
            "s >= gamma sqrt(n ln n), q >= n/18  =>  s(1 + 1/36) < S < 2s",
            _pre_s_increase,
            lambda n, p: _near_config(n, math.ceil(2 * p.gamma * _r(n)), n // 3),
            _eval_s_increase,
        ),
        ClaimSpec(
            "b_decrease",
            "|s| >= 2n/3, b >= ln n  =>  B <= b(1 - 1/9)",
            _pre_b_decrease,
            lambda n, p: Configuration(n, (8 * n) // 10, n // 10),
            _eval_b_decrease,
        ),
        ClaimSpec(
            "s_preserved",
            "|s| >= 2n/3, q >= sqrt(n ln n)  =>  S >= 2n/3",
            _pre_s_preserved,
            lambda n, p: _near_config(n, math.ceil(2 * n / 3), math.ceil(2 * _r(n)) + 1),
            _eval_s_preserved,
        ),
        ClaimSpec(
            "q_preserved",
            "|s| >= 2n/3, b >= 2 sqrt(n ln n)  =>  Q > sqrt(n ln n)",
            _pre_q_preserved,
            lambda n, p: Configuration(
                n, math.ceil(2 * n / 3) + math.ceil(2 * _r(n)), math.ceil(2 * _r(n))
            ),
            _eval_q_preserved,
        ),
        ClaimSpec(
            "q_decrease",
            "12 sqrt(n ln n) <= q <= n/3, b <= 2 sqrt(n ln n)  =>  Q <= q(1 - 1/9)",
            _pre_q_decrease,
            lambda n, p: Configuration(
                n,
                n - math.ceil(12 * _r(n)) - math.floor(2 * _r(n)),
                math.floor(2 * _r(n)),
            ),
            _eval_q_decrease,
        ),
        ClaimSpec(
            "a_wins",
            "q <= gamma sqrt(n ln n), b <= 2 sqrt(n ln n)  =>  a = n within the horizon",
            _pre_a_wins,
            lambda n, p: Configuration(
                n,
                n - math.floor(p.gamma * _r(n)) - math.floor(2 * _r(n)),
                math.floor(2 * _r(n)),
            ),
            _eval_a_wins,
            horizon=True,
        ),
        ClaimSpec(
            "s_does_not_decrease",
            "s >= gamma sqrt(n ln n)  =>  S >= (gamma - eps) sqrt(n ln n)",
            _pre_s_nodec,
            lambda n, p: _near_config(n, math.ceil(p.gamma * _r(n)), 0),
            _eval_s_nodec,
        ),
        ClaimSpec(
            "q_bounded",
            "x in H2  =>  n/18 <= Q <= n/2",
            _pre_q_bounded,
            lambda n, p: _near_config(n, 0, n // 4),
            _eval_q_bounded,
        ),
        ClaimSpec(
            "apxminbias",
            "q = n/3, a = n/3 + sqrt n, b = n/3 - sqrt n  =>  minority wins with constant probability",
            _pre_apxminbias,
            lambda n, p: apxminbias_config(n),
            _eval_apxminbias,
            horizon=True,
            threshold=0.02,
        ),
    ]
}

# claims whose failure probability is exp(-Theta(n))
EXPONENTIAL_CLAIMS = ("q_lower_bound", "q_bounded")


class PreconditionError(ValueError):
    pass


def validate_claim(
    spec: ClaimSpec | str,
    cfg: Configuration | None,
    trials: int,
    rng,
    params: ClaimParams | None = None,
    workers: int = 1,
    n: int | None = None,
) -> ExperimentReport:
    """Run ``trials`` independent evaluations of a claim from ``cfg``.

    ``cfg=None`` uses the claim's default configuration at size ``n``.
    """
    if isinstance(spec, str):
        spec = CLAIMS[spec]
    params = params or ClaimParams()
    if cfg is None:
        if n is None:
            raise ValueError("need either cfg or n")
        cfg = spec.default_config(n, params)
    reason = spec.check(cfg, params)
    if reason is not None:
        raise PreconditionError(f"{spec.id}: precondition violated ({reason}) at {cfg}")
    src = as_source(rng)
    t0 = time.perf_counter()
    counts = run_blocks(_claim_block, trials, src, spec.id, cfg, params, workers=workers)
    return make_report(
        spec.id, cfg.n, trials, sum(counts), src.seed, t0, threshold=spec.threshold,
        a=cfg.a, b=cfg.b,
    )


def _claim_block(claim_id, cfg, params, count, gen):
    return CLAIMS[claim_id].evaluate(cfg, params, count, gen)


# ---------------------------------------------------------------------------
# multi-round experiments


def _absorb_block(n, a, b, max_rounds, count, gen):
    res = run_many(n, np.full(count, a), np.full(count, b), gen, max_rounds)
    return res.rounds, res.code


def absorption_runs(cfg: Configuration, trials: int, rng, max_rounds: int | None = None, workers: int = 1):
    """Absorption rounds and outcome codes (see ``udyn.core``) of ``trials`` runs."""
    if max_rounds is None:
        max_rounds = default_max_rounds(cfg.n)
    parts = run_blocks(_absorb_block, trials, rng, cfg.n, cfg.a, cfg.b, max_rounds, workers=workers)
    rounds = np.concatenate([p[0] for p in parts])
    codes = np.concatenate([p[1] for p in parts])
    return rounds, codes


@dataclass
class ScalingRow:
    n: int
    median_rounds: float
    q90_rounds: float
    trials: int
    absorbed_mono: int
    absorbed_majority: int
    timeouts: int


@dataclass
class ScalingTable:
    rows: list[ScalingRow]
    slope: float
    intercept: float
    r2: float


def fit_log(ns, values) -> tuple[float, float, float]:
    """Least squares ``values ~ slope * ln n + intercept``; returns ``(slope, intercept, R^2)``."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.asarray(values, dtype=float)
    if x.size < 2:
        return float("nan"), float("nan"), float("nan")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def start_config(n: int, kind: str = "balanced", gamma: float = 1.0, bias: int | None = None, q: int = 0) -> Configuration:
    """``balanced``: ``a = b`` (up to parity); ``biased``: ``s = bias`` or ``ceil(gamma sqrt(n ln n))``."""
    if kind == "balanced":
        return _near_config(n, (n - q) % 2, q)
    if kind == "biased":
        s = bias if bias is not None else math.ceil(gamma * sqrt_nlogn(n))
        return _near_config(n, s, q)
    raise ValueError(f"unknown start kind {kind!r}")


def convergence_scaling(
    n_list,
    start_kind: str = "balanced",
    trials: int = 200,
    rng=0,
    gamma: float = 1.0,
    bias: int | None = None,
    q: int = 0,
    max_rounds_factor: float = 100.0,
    workers: int = 1,
) -> ScalingTable:
    """Absorption-time statistics per ``n`` and a fit of the median against ``ln n``."""
    if len(n_list) == 0:
        raise ValueError("n_list is empty")
    src = as_source(rng)
    rows = []
    for k, n in enumerate(n_list):
        cfg = start_config(n, start_kind, gamma, bias, q)
        mr = max(1, math.ceil(max_rounds_factor * math.log(n)))
        rounds, codes = absorption_runs(cfg, trials, src.substream(src.stream * 1000 + k), mr, workers)
        mono = int(np.count_nonzero((codes == ABS_ALPHA) | (codes == ABS_BETA)))
        maj_code = ABS_ALPHA if cfg.a >= cfg.b else ABS_BETA
        done = codes != RUNNING
        r = rounds[done] if done.any() else rounds
        rows.append(
            ScalingRow(
                n=n,
                median_rounds=float(np.median(r)),
                q90_rounds=float(np.quantile(r, 0.9)),
                trials=trials,
                absorbed_mono=mono,
                absorbed_majority=int(np.count_nonzero(codes == maj_code)),
                timeouts=int(np.count_nonzero(~done)),
            )
        )
    slope, intercept, r2 = fit_log([r.n for r in rows], [r.median_rounds for r in rows])
    return ScalingTable(rows, slope, intercept, r2)


def minority_win_probability(n: int, trials: int, rng, mirrored: bool = False, workers: int = 1) -> ExperimentReport:
    """Fraction of runs from the tightness construction absorbed at the initial minority.

    Runs absorbed with every node undecided are counted in
    ``extra['absorbed_undecided']`` and not as minority wins.
    """
    cfg = apxminbias_config(n, mirrored)
    src = as_source(rng)
    t0 = time.perf_counter()
    rounds, codes = absorption_runs(cfg, trials, src, workers=workers)
    minority = ABS_ALPHA if mirrored else ABS_BETA
    wins = int(np.count_nonzero(codes == minority))
    return make_report(
        "apxminbias", n, trials, wins, src.seed, t0, threshold=CLAIMS["apxminbias"].threshold,
        absorbed_undecided=int(np.count_nonzero(codes == ABS_UNDECIDED)),
        timeouts=int(np.count_nonzero(codes == RUNNING)),
        a=cfg.a, b=cfg.b,
    )


@dataclass
class HittingTimes:
    n: int
    rounds: np.ndarray  # -1 marks a timeout
    max_rounds: int

    @property
    def timeouts(self) -> int:
        return int(np.count_nonzero(self.rounds < 0))

    def quantile(self, p: float) -> float:
        r = np.where(self.rounds < 0, self.max_rounds + 1, self.rounds)
        return float(np.quantile(r, p))

    @property
    def median(self) -> float:
        return self.quantile(0.5)


def _symbreak_block(n, a, b, target, max_rounds, count, gen):
    aa = np.full(count, a, dtype=np.int64)
    bb = np.full(count, b, dtype=np.int64)
    hit = np.full(count, -1, dtype=np.int64)
    hit[np.abs(aa - bb) >= target] = 0
    done = hit >= 0

    def watch(t, pa, pb, na, nb, idx):
        new = np.abs(na - nb) >= target
        hit[idx[new]] = t
        done[idx[new]] = True

    _run_until(n, aa, bb, gen, max_rounds, watch, stop=done)
    return hit


def symmetry_breaking_time(
    n: int, start: Configuration, trials: int, rng, max_rounds: int | None = None, workers: int = 1
) -> HittingTimes:
    """First round with ``|s| >= sqrt(n ln n)``, per trial."""
    if start.n != n:
        raise ValueError("start configuration has a different n")
    if max_rounds is None:
        max_rounds = default_max_rounds(n)
    target = sqrt_nlogn(n)
    parts = run_blocks(_symbreak_block, trials, rng, n, start.a, start.b, target, max_rounds, workers=workers)
    return HittingTimes(n, np.concatenate(parts), max_rounds)


_H4 = LABELS.index(Label.H4)


def _h4_block(n, a, b, gamma, max_rounds, count, gen):
    aa = np.full(count, a, dtype=np.int64)
    bb = np.full(count, b, dtype=np.int64)
    in_h4 = classify_codes(n, aa, bb, gamma) == _H4
    runs = in_h4.astype(np.int64)
    stop = ~in_h4

    def watch(t, pa, pb, na, nb, idx):
        still = classify_codes(n, na, nb, gamma) == _H4
        runs[idx[still]] += 1
        stop[idx[~still]] = True

    _run_until(n, aa, bb, gen, max_rounds, watch, stop=stop)
    return runs


def lower_bound_experiment(
    n: int,
    trials: int,
    rng,
    gamma: float = 1.0,
    s0: int | None = None,
    q0: int | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Number of initial consecutive configurations (round 0 included) classified H4.

    Default start: ``s = round(n^(2/3))`` and ``q = n/3``.
    """
    if n ** (2 / 3) < gamma * sqrt_nlogn(n):
        raise ValueError(f"n={n} too small: n^(2/3) < gamma sqrt(n ln n)")
    s = round(n ** (2 / 3)) if s0 is None else s0
    q = n // 3 if q0 is None else q0
    cfg = _near_config(n, s, q)
    parts = run_blocks(_h4_block, trials, rng, n, cfg.a, cfg.b, gamma, default_max_rounds(n), workers=workers)
    return np.concatenate(parts)


@dataclass
class HypothesisEstimate:
    h: float
    c1_hat: float
    prop2_fail_rate: float
    epsilon: float
    m: float
    configs: list = field(default_factory=list)


def _hyp_block(n, a, b, h, eps, count, gen):
    A, B = step_many(n, np.full(count, a), np.full(count, b), gen)
    S = np.abs(A - B)
    small = int(np.count_nonzero(S < h * math.sqrt(n)))
    fail = int(np.count_nonzero(S < (1 + eps) * abs(a - b)))
    return small, fail


def h2_claim_region(cfg: Configuration, gamma: float = 1.0) -> bool:
    """Hypothesis set of the symmetry-breaking claims: ``n/18 <= q <= n/2`` and ``|s| < gamma sqrt(n ln n)``."""
    n = cfg.n
    return 18 * cfg.q >= n and 2 * cfg.q <= n and abs(cfg.s) < bias_threshold(n, gamma)


def estimate_H2_hypotheses(
    n: int,
    h: float,
    epsilon: float,
    sample_configs: int,
    trials_each: int,
    rng,
    gamma: float = 1.0,
    c3: float = 1.0,
    configs: list[Configuration] | None = None,
    workers: int = 1,
) -> HypothesisEstimate:
    """Empirical ``P(|S| < h sqrt n)`` (worst case over configurations) and
    ``P(|S| < (1 + eps)|s|)`` for configurations of the H2 hypothesis set.

    ``configs`` overrides random sampling. ``prop2_fail_rate`` is the maximum
    over configurations with ``|s| >= h sqrt n``, or over all of them when
    none qualifies.
    """
    src = as_source(rng)
    if configs is None:
        theta = bias_threshold(n, gamma)
        q_lo, q_hi = math.ceil(n / 18), n // 2
        configs = []
        for _ in range(sample_configs):
            q = int(src.gen.integers(q_lo, q_hi + 1))
            s = int(src.gen.integers(0, max(1, math.ceil(theta))))
            if (n - q + s) % 2:
                s = s - 1 if s > 0 else s + 1
            if abs(s) >= theta:
                s -= 2
            configs.append(Configuration.from_sq(n, s, q))
    for c in configs:
        if not h2_claim_region(c, gamma):
            raise PreconditionError(f"{c} outside n/18 <= q <= n/2, |s| < gamma sqrt(n ln n)")
    c2 = 2.0 / 72.0**2
    records = []
    for k, c in enumerate(configs):
        parts = run_blocks(_hyp_block, trials_each, src.substream(src.stream * 100003 + k + 1),
                           n, c.a, c.b, h, epsilon, workers=workers)
        small = sum(p[0] for p in parts) / trials_each
        fail = sum(p[1] for p in parts) / trials_each
        records.append(
            {"a": c.a, "b": c.b, "q": c.q, "s": c.s, "p_small": small, "p2_fail": fail,
             "p2_bound": math.exp(-c2 * c.s * c.s / n)}
        )
    c1_hat = max(r["p_small"] for r in records)
    big = [r for r in records if abs(r["s"]) >= h * math.sqrt(n)] or records
    prop2 = max(r["p2_fail"] for r in big)
    return HypothesisEstimate(h, c1_hat, prop2, epsilon, c3 * math.sqrt(n) * math.log(n), records)


# ---------------------------------------------------------------------------
# phase audit


def region_starts(n: int, gamma: float = 1.0) -> dict[Label, Configuration]:
    """One interior starting configuration per region H1..H7."""
    theta = bias_threshold(n, gamma)
    starts = {
        Label.H1: _near_config(n, 0, (3 * n) // 4),
        Label.H2: _near_config(n, 0, n // 4),
        Label.H3: _near_config(n, 0, 0),
        Label.H4: _near_config(n, math.ceil(2 * theta), n // 3),
        Label.H5: _near_config(n, n // 3, 0),
        Label.H6: _near_config(n, (8 * n) // 10, n // 10),
        Label.H7: _near_config(n, (8 * n) // 10, 0),
    }
    for lab, c in starts.items():
        got = classify_label(n, c.a, c.b, gamma)
        if got is not lab:
            raise ValueError(f"n={n} too small: start for {lab} lands in {got}")
    return starts


@dataclass
class AuditSummary:
    n: int
    trajectories: int
    transitions: int
    disallowed: int
    counts: np.ndarray  # counts[src, dst] over LABELS

    @property
    def fraction(self) -> float:
        return self.disallowed / self.transitions if self.transitions else 0.0

    def disallowed_pairs(self) -> dict[tuple[str, str], int]:
        ok = allowed_digraph().matrix()
        out = {}
        for i, j in zip(*np.nonzero(np.where(ok, 0, self.counts))):
            out[(LABELS[i].value, LABELS[j].value)] = int(self.counts[i, j])
        return out


def _audit_block(n, a, b, gamma, max_rounds, count, gen):
    k = len(LABELS)
    counts = np.zeros((k, k), dtype=np.int64)

    def watch(t, pa, pb, na, nb, idx):
        src = classify_codes(n, pa, pb, gamma)
        dst = classify_codes(n, na, nb, gamma)
        np.add.at(counts, (src, dst), 1)

    run_many(n, np.full(count, a), np.full(count, b), gen, max_rounds, observer=watch)
    return counts


def phase_audit(
    n: int,
    trials: int,
    rng,
    gamma: float = 1.0,
    starts: list[Configuration] | None = None,
    max_rounds: int | None = None,
    workers: int = 1,
) -> AuditSummary:
    """Region-transition counts over ``trials`` trajectories spread evenly over ``starts``."""
    if starts is None:
        starts = list(region_starts(n, gamma).values())
    if max_rounds is None:
        max_rounds = default_max_rounds(n)
    src = as_source(rng)
    per, extra = divmod(trials, len(starts))
    k = len(LABELS)
    counts = np.zeros((k, k), dtype=np.int64)
    for i, c in enumerate(starts):
        m = per + (1 if i < extra else 0)
        if m == 0:
            continue
        parts = run_blocks(_audit_block, m, src.substream(src.stream * 1009 + i + 1),
                           n, c.a, c.b, gamma, max_rounds, workers=workers)
        counts += sum(parts)
    ok = allowed_digraph().matrix()
    total = int(counts.sum())
    bad = int(counts[~ok].sum())
    return AuditSummary(n, trials, total, bad, counts)
