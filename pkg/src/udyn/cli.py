"""Command-line entry point: every subcommand writes one self-describing table.

Tables go to ``--out`` (or stdout) as CSV with a ``#``-prefixed JSON metadata
line, or as a JSON object ``{"meta": ..., "rows": [...]}``. The exit status
is 0 only when every check the subcommand performs passes.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from udyn import __version__
from udyn.bounds import BoundDomainError, default_tail_grid, empirical_tail_check, report_value
from udyn.core import Configuration, default_max_rounds, expected_next, run_until_absorbed, step_many
from udyn.exact import DEFAULT_CAP, absorption, build_kernel
from udyn.experiments import (
    CLAIMS,
    ROW_FIELDS,
    ClaimParams,
    PreconditionError,
    convergence_scaling,
    lower_bound_experiment,
    minority_win_probability,
    phase_audit,
    symmetry_breaking_time,
    validate_claim,
)
from udyn.graph import (
    Graph,
    GraphState,
    expected_next_graph,
    mixing_lemma_check,
    random_regular_graph,
    random_set_pairs,
    spectral_lambda,
    step_mean,
)
from udyn.phases import LABELS, PhaseParameters, allowed_digraph, classify_label, sqrt_nlogn
from udyn.rng import RandomSource

SEED_ENV = "UDYN_SEED"


class Result:
    """Rows, column order, named pass/fail checks and extra metadata of one command."""

    def __init__(self, fields, rows, checks=None, meta=None):
        self.fields = list(fields)
        self.rows = rows
        self.checks = checks or {}
        self.meta = meta or {}

    @property
    def ok(self) -> bool:
        return all(self.checks.values())


# ---------------------------------------------------------------------------
# formatting


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else str(f)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def render(result: Result, meta: dict, fmt: str) -> str:
    if fmt == "json":
        doc = {"meta": _jsonable(meta), "rows": [_jsonable({k: r.get(k) for k in result.fields}) for r in result.rows]}
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"
    buf = io.StringIO()
    buf.write("# " + json.dumps(_jsonable(meta), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(result.fields)
    for r in result.rows:
        w.writerow([_cell(r.get(k, "")) for k in result.fields])
    return buf.getvalue()


def write_atomic(path: str, text: str) -> None:
    """Write ``text`` to a temporary file beside ``path`` and rename it into place."""
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".udyn-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# commands


def _config(args) -> Configuration:
    if args.n is None:
        raise ValueError("--n is required")
    if args.a is None and args.b is None:
        args.a = args.n // 2
        args.b = args.n - args.a
    if args.a is None or args.b is None:
        raise ValueError("give both --a and --b, or neither")
    return Configuration(args.n, args.a, args.b)


def cmd_simulate(args, src):
    cfg = _config(args)
    traj = run_until_absorbed(cfg, src, args.max_rounds or default_max_rounds(cfg.n))
    rows = [
        {"round": t, "a": c.a, "b": c.b, "q": c.q, "s": c.s,
         "region": classify_label(c.n, c.a, c.b, args.gamma).value}
        for t, c in enumerate(traj.configs)
    ]
    return Result(["round", "a", "b", "q", "s", "region"], rows,
                  meta={"outcome": traj.outcome.value, "rounds": traj.rounds})


def cmd_expectations(args, src):
    cfg = _config(args)
    trials = args.trials = args.trials or 100_000
    A, B = step_many(cfg.n, np.full(trials, cfg.a), np.full(trials, cfg.b), src.gen)
    Q = cfg.n - A - B
    ea, eb, eq, es = expected_next(cfg)
    rows = []
    checks = {}
    for name, formula, x in [("a", ea, A), ("b", eb, B), ("q", eq, Q), ("s", es, A - B)]:
        mean = float(x.mean())
        se = float(x.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
        z = (mean - formula) / se if se > 0 else (0.0 if mean == formula else float("inf"))
        ok = abs(z) <= args.z_max
        rows.append({"quantity": name, "formula": formula, "mean": mean, "se": se, "z": z, "consistent": ok})
        checks[f"expectation_{name}"] = ok
    return Result(["quantity", "formula", "mean", "se", "z", "consistent"], rows, checks)


def cmd_phases(args, src):
    n = args.n = args.n or 100_000
    args.trials = args.trials or 10_000
    s = phase_audit(n, args.trials, src, args.gamma, max_rounds=args.max_rounds, workers=args.workers)
    ok = allowed_digraph().matrix()
    rows = []
    for i, j in zip(*np.nonzero(s.counts)):
        rows.append({"src": LABELS[i].value, "dst": LABELS[j].value,
                     "count": int(s.counts[i, j]), "allowed": bool(ok[i, j])})
    return Result(
        ["src", "dst", "count", "allowed"], rows,
        {"disallowed_fraction_below_limit": s.fraction < args.limit},
        {"transitions": s.transitions, "disallowed": s.disallowed, "fraction": s.fraction},
    )


def _int_list(text: str) -> list[int]:
    try:
        out = [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def cmd_scaling(args, src):
    ns = args.n_list = args.n_list or ([args.n] if args.n else [2**10, 2**12, 2**14, 2**16])
    args.trials = args.trials or 200
    tab = convergence_scaling(ns, args.start, args.trials, src, args.gamma, args.bias, args.q,
                              args.max_rounds_factor, args.workers)
    fields = ["n", "median_rounds", "q90_rounds", "trials", "absorbed_mono", "absorbed_majority", "timeouts"]
    rows = [vars(r) for r in tab.rows]
    checks = {}
    for r in tab.rows:
        good = r.absorbed_majority if args.start == "biased" else r.absorbed_mono
        checks[f"absorbed_n{r.n}"] = good >= 0.99 * r.trials
    if len(ns) >= 3:
        checks["fit_r2"] = tab.r2 >= args.r2_min
    return Result(fields, rows, checks, {"slope": tab.slope, "intercept": tab.intercept, "r2": tab.r2})


def cmd_claims(args, src):
    ids = list(CLAIMS) if args.id in (None, "all") else [args.id]
    for cid in ids:
        if cid not in CLAIMS:
            raise ValueError(f"unknown claim id {cid!r}; known: {', '.join(CLAIMS)}")
    params = ClaimParams(args.gamma, args.epsilon, args.horizon_factor)
    n = args.n = args.n or 1_000_000
    args.trials = args.trials or 10_000
    rows, checks = [], {}
    for k, cid in enumerate(ids):
        spec = CLAIMS[cid]
        cfg = None
        size = args.horizon_n if (spec.horizon and args.horizon_n) else n
        if args.a is not None or args.b is not None:
            cfg = _config(args)
        rep = validate_claim(spec, cfg, args.trials, src.substream(src.stream * 1000 + k),
                             params, args.workers, n=size)
        row = rep.row()
        row.update(threshold=rep.threshold, passed=rep.passed, a=rep.extra["a"], b=rep.extra["b"])
        rows.append(row)
        checks[cid] = rep.passed
    fields = ROW_FIELDS[:1] + ["a", "b"] + ROW_FIELDS[1:] + ["threshold", "passed"]
    return Result(fields, rows, checks)


def cmd_minority(args, src):
    n = args.n = args.n or 90_000
    args.trials = args.trials or 2000
    rep = minority_win_probability(n, args.trials, src, args.mirrored, args.workers)
    row = rep.row()
    row.update(rep.extra)
    fields = ROW_FIELDS + ["a", "b", "absorbed_undecided", "timeouts"]
    return Result(fields, [row], {"minority_rate_above_threshold": rep.pass_rate > rep.threshold},
                  {"threshold": rep.threshold})


def cmd_lowerbound(args, src):
    n = args.n = args.n or 2**20
    trials = args.trials = args.trials or 200
    runs = lower_bound_experiment(n, trials, src, args.gamma, args.s0, args.q0, args.workers)
    need = math.log2(n) / 8
    frac = float(np.mean(runs >= need))
    row = {"n": n, "trials": trials, "required_rounds": need, "min_rounds": int(runs.min()),
           "median_rounds": float(np.median(runs)), "max_rounds": int(runs.max()), "fraction_ok": frac}
    return Result(list(row), [row], {"rounds_in_H4": frac >= 0.99})


def cmd_symbreak(args, src):
    cfg = _config(args)
    trials = args.trials = args.trials or 500
    ht = symmetry_breaking_time(cfg.n, cfg, trials, src, args.max_rounds, args.workers)
    bound = 12 * math.log(cfg.n)
    row = {"n": cfg.n, "a": cfg.a, "b": cfg.b, "trials": trials, "median_round": ht.median,
           "q90_round": ht.quantile(0.9), "timeouts": ht.timeouts, "target_bias": sqrt_nlogn(cfg.n),
           "median_bound": bound}
    return Result(list(row), [row], {"median_within_bound": ht.median <= bound})


def _pair(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b', got {text!r}")
    return a, b


def cmd_exact(args, src):
    n = args.n = args.n or 36
    if args.start is not None:
        a, b = args.start
    elif args.a is not None and args.b is not None:
        a, b = args.a, args.b
    else:
        a, b = n // 2, n - n // 2
    args.start = (a, b)
    start = Configuration(n, a, b)
    params = PhaseParameters(args.gamma) if args.kind == "pruned" else None
    kernel = build_kernel(n, args.kind, params, cap=args.cap)
    if args.export_kernel:
        write_atomic(args.export_kernel, kernel.to_csv())
    rep = absorption(kernel, start)
    total = rep.p_alpha + rep.p_beta + rep.p_undecided
    row = {"n": n, "a": a, "b": b, "kind": args.kind, "p_alpha": rep.p_alpha, "p_beta": rep.p_beta,
           "p_undecided": rep.p_undecided, "expected_rounds": rep.expected_rounds}
    return Result(list(row), [row], {"probabilities_sum_to_one": abs(total - 1) <= 1e-8})


def cmd_graph(args, src):
    if args.edges:
        with open(args.edges, encoding="utf-8") as fh:
            g = Graph.from_edge_list(fh.read())
    else:
        args.n = args.n or 2000
        g = random_regular_graph(args.n, args.d, src.substream(src.stream * 10 + 1))
    if args.export_edges:
        write_atomic(args.export_edges, g.to_edge_list())
    lam = spectral_lambda(g)
    checks = {}
    rows = []
    if args.pairs:
        res = mixing_lemma_check(g, random_set_pairs(g.n, args.pairs, src.substream(src.stream * 10 + 2)), lam)
        held = sum(d.holds for d in res)
        worst = max(abs(d.value) / d.bound for d in res if d.bound > 0)
        rows.append({"test": "mixing_lemma", "n": g.n, "d": g.d, "lambda": lam, "count": len(res),
                     "passed": held, "statistic": worst})
        checks["mixing_lemma"] = held == len(res)
    if args.steps:
        a = args.a if args.a is not None else g.n // 3
        b = args.b if args.b is not None else g.n // 3
        st = GraphState.from_counts(g.n, a, b, src.substream(src.stream * 10 + 3))
        mean, se = step_mean(g, st, args.steps, src.substream(src.stream * 10 + 4))
        ea, eb, eq, _ = expected_next_graph(g, st)
        for name, m, e, s in zip("abq", mean, (ea, eb, eq), se):
            z = (m - e) / s if s > 0 else (0.0 if m == e else float("inf"))
            rows.append({"test": f"step_mean_{name}", "n": g.n, "d": g.d, "lambda": lam,
                         "count": args.steps, "passed": int(abs(z) <= 3), "statistic": z})
            checks[f"step_mean_{name}"] = abs(z) <= 3
    return Result(["test", "n", "d", "lambda", "count", "passed", "statistic"], rows, checks,
                  {"lambda": lam, "ramanujan": 2 * math.sqrt(g.d - 1)})


def cmd_bounds(args, src):
    trials = args.trials = args.trials or 1_000_000
    rows, checks = [], {}
    for k, q in enumerate(default_tail_grid()):
        c = empirical_tail_check(q, trials, src.substream(src.stream * 100 + k))
        rows.append({"case": k, "form": q.form, "direction": q.direction, "n": q.n, "p": q.p,
                     "threshold": q.threshold, "empirical": c.empirical, "se": c.se,
                     "bound": report_value(c.log_bound), "log_bound": c.log_bound, "consistent": c.consistent})
        checks[f"case_{k}"] = c.consistent
    return Result(list(rows[0]), rows, checks)


COMMANDS = {
    "simulate": (cmd_simulate, "one trajectory with per-round region labels"),
    "expectations": (cmd_expectations, "Monte Carlo one-round means against the closed forms"),
    "phases": (cmd_phases, "region-transition audit against the allowed digraph"),
    "scaling": (cmd_scaling, "absorption time against ln n"),
    "claims": (cmd_claims, "validate one claim or all of them"),
    "minority": (cmd_minority, "minority win rate from the tightness configuration"),
    "lowerbound": (cmd_lowerbound, "rounds spent in H4 from a moderate bias"),
    "symbreak": (cmd_symbreak, "first round with |s| >= sqrt(n ln n)"),
    "exact": (cmd_exact, "exact kernel and absorption probabilities (small n)"),
    "graph": (cmd_graph, "mixing-lemma and one-step checks on a regular graph"),
    "bounds": (cmd_bounds, "Chernoff bounds against empirical binomial tails"),
}


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=_positive, help="number of nodes")
    common.add_argument("--a", type=int, help="initial Alpha count")
    common.add_argument("--b", type=int, help="initial Beta count")
    common.add_argument("--gamma", type=float, default=1.0, help="bias-threshold constant (default 1.0)")
    common.add_argument("--seed", type=int, default=0, help=f"master seed (default 0; ${SEED_ENV} overrides)")
    common.add_argument("--trials", type=_positive, help="number of independent trials")
    common.add_argument("--max-rounds", type=_positive, help="round cap per trajectory")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--workers", type=_positive, default=os.cpu_count() or 1,
                        help="worker processes; results do not depend on this")

    p = argparse.ArgumentParser(prog="udyn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"udyn {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    subs = {name: sub.add_parser(name, parents=[common], help=h, description=h) for name, (_, h) in COMMANDS.items()}

    subs["expectations"].add_argument("--z-max", type=float, default=4.0, help="allowed |z| per quantity")
    subs["phases"].add_argument("--limit", type=float, default=1e-3, help="allowed disallowed-transition fraction")
    sc = subs["scaling"]
    sc.add_argument("--n-list", type=_int_list, help="comma-separated sizes (default 2^10,2^12,2^14,2^16)")
    sc.add_argument("--start", choices=["balanced", "biased"], default="balanced")
    sc.add_argument("--bias", type=int, help="initial bias for --start biased (default ceil(gamma sqrt(n ln n)))")
    sc.add_argument("--q", type=int, default=0, help="initial undecided count")
    sc.add_argument("--max-rounds-factor", type=float, default=100.0, help="round cap as a multiple of ln n")
    sc.add_argument("--r2-min", type=float, default=0.9)
    cl = subs["claims"]
    cl.add_argument("--id", help=f"claim id or 'all' ({', '.join(CLAIMS)})")
    cl.add_argument("--horizon-n", type=_positive, help="size for multi-round claims (default --n)")
    cl.add_argument("--epsilon", type=float, default=0.5)
    cl.add_argument("--horizon-factor", type=float, default=20.0, help="horizon as a multiple of ln n")
    subs["minority"].add_argument("--mirrored", action="store_true", help="put the minority on Alpha")
    lb = subs["lowerbound"]
    lb.add_argument("--s0", type=int, help="initial bias (default round(n^(2/3)))")
    lb.add_argument("--q0", type=int, help="initial undecided count (default n/3)")
    ex = subs["exact"]
    ex.add_argument("--start", type=_pair, help="start configuration as 'a,b'")
    ex.add_argument("--kind", choices=["plain", "pruned"], default="plain")
    ex.add_argument("--cap", type=_positive, default=DEFAULT_CAP, help="largest n accepted")
    ex.add_argument("--export-kernel", help="also write the kernel as CSV to this path")
    gr = subs["graph"]
    gr.add_argument("--d", type=_positive, default=32, help="degree of the generated graph")
    gr.add_argument("--edges", help="read the graph from an edge-list file instead")
    gr.add_argument("--export-edges", help="write the graph's edge list to this path")
    gr.add_argument("--pairs", type=int, default=200, help="random set pairs for the mixing lemma")
    gr.add_argument("--steps", type=int, default=0, help="rounds sampled for the one-step mean check")
    p.set_defaults(_subparsers=subs)
    return p


def _metadata(args, seed: int) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in ("command", "out", "format", "workers", "seed", "_subparsers")}
    return {"command": args.command, "version": __version__, "seed": seed, "parameters": params}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    seed = args.seed
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            seed = int(env)
        except ValueError:
            parser.error(f"{SEED_ENV} must be an integer, got {env!r}")
    args.seed = seed
    handler = COMMANDS[args.command][0]
    try:
        result = handler(args, RandomSource(seed))
    except (ValueError, BoundDomainError, PreconditionError, OSError) as exc:
        args._subparsers[args.command].print_usage(sys.stderr)
        print(f"udyn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    meta = _metadata(args, seed)
    meta.update(result.meta)
    meta["checks"] = result.checks
    text = render(result, meta, args.format)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    for name, ok in result.checks.items():
        if not ok:
            print(f"check failed: {name}", file=sys.stderr)
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
