"""Node-level U-Dynamics on explicit d-regular graphs.

Edge counts between vertex sets use the ordered-pair convention:
``E(S, T) = sum_{u in S, v in T} A[u, v]``. For disjoint sets this is the
usual number of crossing edges; an edge with both endpoints in ``S``
contributes 2 to ``E(S, S)``. With that convention the regularity
identities ``delta(A,B) + delta(A,Q) + delta(A,A) = 0`` hold exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from udyn.rng import as_source

ALPHA, BETA, UNDECIDED = 1, 2, 0

# TRANSITION[own, pulled] -> new state
TRANSITION = np.array(
    [
        [UNDECIDED, ALPHA, BETA],  # undecided adopts what it sees
        [ALPHA, ALPHA, UNDECIDED],  # Alpha drops out on seeing Beta
        [BETA, UNDECIDED, BETA],  # Beta drops out on seeing Alpha
    ],
    dtype=np.int8,
)

DENSE_EIG_MAX = 4000


class Graph:
    """Simple d-regular graph stored as an ``(n, d)`` neighbor table."""

    def __init__(self, neighbors):
        nb = np.asarray(neighbors, dtype=np.int64)
        if nb.ndim != 2:
            raise ValueError("neighbor table must be 2-D (n x d)")
        self.neighbors = nb
        self.n, self.d = nb.shape
        self._check()
        self._adj = None

    def _check(self) -> None:
        n, d = self.n, self.d
        nb = self.neighbors
        if nb.size and (nb.min() < 0 or nb.max() >= n):
            raise ValueError("neighbor index out of range")
        rows = np.repeat(np.arange(n), d)
        if np.any(nb.ravel() == rows):
            raise ValueError("self-loop present")
        srt = np.sort(nb, axis=1)
        if d > 1 and np.any(srt[:, 1:] == srt[:, :-1]):
            raise ValueError("multi-edge present")
        fwd = set(zip(rows.tolist(), nb.ravel().tolist()))
        if any((v, u) not in fwd for u, v in fwd):
            raise ValueError("adjacency is not symmetric")

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        adj = [[] for _ in range(n)]
        for u, v in edges:
            adj[u].append(v)
            adj[v].append(u)
        degs = {len(x) for x in adj}
        if len(degs) > 1:
            raise ValueError(f"graph is not regular: degrees {sorted(degs)}")
        return cls([sorted(x) for x in adj])

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls([[v for v in range(n) if v != u] for u in range(n)])

    def edges(self) -> list[tuple[int, int]]:
        return [(u, int(v)) for u in range(self.n) for v in self.neighbors[u] if u < v]

    def adjacency(self) -> sp.csr_matrix:
        if self._adj is None:
            rows = np.repeat(np.arange(self.n), self.d)
            data = np.ones(rows.size)
            self._adj = sp.csr_matrix((data, (rows, self.neighbors.ravel())), shape=(self.n, self.n))
        return self._adj

    def to_edge_list(self) -> str:
        return "".join(f"{u} {v}\n" for u, v in self.edges())

    @classmethod
    def from_edge_list(cls, text: str, n: int | None = None) -> "Graph":
        edges = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            u, v = line.split()
            edges.append((int(u), int(v)))
        if n is None:
            n = 1 + max(max(e) for e in edges)
        return cls.from_edges(n, edges)


def random_regular_graph(n: int, d: int, rng) -> Graph:
    """Uniform-ish random simple d-regular graph (pairing model with restarts, via networkx)."""
    if n * d % 2:
        raise ValueError(f"n*d must be even (n={n}, d={d})")
    if not 0 <= d < n:
        raise ValueError(f"need 0 <= d < n (n={n}, d={d})")
    g = nx.random_regular_graph(d, n, seed=as_source(rng).gen)
    return Graph([sorted(g.adj[u]) for u in range(n)])


def spectral_lambda(g: Graph) -> float:
    """``max(|lambda_2|, |lambda_n|)`` of the adjacency matrix."""
    ncomp, _ = connected_components(g.adjacency(), directed=False)
    if ncomp != 1:
        raise ValueError(f"graph is disconnected ({ncomp} components)")
    if g.n <= DENSE_EIG_MAX:
        ev = np.linalg.eigvalsh(g.adjacency().toarray())
        return float(max(abs(ev[-2]), abs(ev[0])))
    A = g.adjacency().astype(float)
    top = eigsh(A, k=2, which="LA", return_eigenvectors=False, tol=1e-10)
    bottom = eigsh(A, k=1, which="SA", return_eigenvectors=False, tol=1e-10)
    return float(max(abs(np.sort(top)[0]), abs(bottom[0])))


def _indicator(n: int, nodes) -> np.ndarray:
    x = np.zeros(n)
    idx = np.fromiter(nodes, dtype=np.int64) if not isinstance(nodes, np.ndarray) else nodes
    if idx.dtype == bool:
        x[idx] = 1.0
    else:
        x[np.asarray(idx, dtype=np.int64)] = 1.0
    return x


def edge_count(g: Graph, S, T) -> float:
    """Ordered-pair edge count ``E(S, T)``."""
    xs, xt = _indicator(g.n, S), _indicator(g.n, T)
    return float(xs @ (g.adjacency() @ xt))


@dataclass(frozen=True)
class Discrepancy:
    value: float
    bound: float

    @property
    def holds(self) -> bool:
        return abs(self.value) <= self.bound * (1 + 1e-12) + 1e-9


def discrepancy(g: Graph, S, T, lam: float | None = None) -> Discrepancy:
    """``E(S,T) - d|S||T|/n`` with its mixing-lemma bound ``lam sqrt(|S||T|)``."""
    xs, xt = _indicator(g.n, S), _indicator(g.n, T)
    ns, nt = xs.sum(), xt.sum()
    value = float(xs @ (g.adjacency() @ xt)) - g.d * ns * nt / g.n
    if ns * nt == 0:
        return Discrepancy(value, 0.0)
    if lam is None:
        lam = spectral_lambda(g)
    return Discrepancy(value, lam * math.sqrt(ns * nt))


@dataclass
class GraphState:
    """Per-node states (0 undecided, 1 Alpha, 2 Beta)."""

    assignment: np.ndarray

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int8)
        if self.assignment.size and (self.assignment.min() < 0 or self.assignment.max() > 2):
            raise ValueError("states must be 0 (undecided), 1 (Alpha) or 2 (Beta)")

    @classmethod
    def from_counts(cls, n: int, a: int, b: int, rng=None) -> "GraphState":
        """Random placement of ``a`` Alpha and ``b`` Beta nodes (first nodes if ``rng`` is None)."""
        x = np.zeros(n, dtype=np.int8)
        x[:a] = ALPHA
        x[a : a + b] = BETA
        if rng is not None:
            as_source(rng).gen.shuffle(x)
        return cls(x)

    @property
    def A(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == ALPHA)

    @property
    def B(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == BETA)

    @property
    def Q(self) -> np.ndarray:
        return np.flatnonzero(self.assignment == UNDECIDED)

    @property
    def a(self) -> int:
        return int(np.count_nonzero(self.assignment == ALPHA))

    @property
    def b(self) -> int:
        return int(np.count_nonzero(self.assignment == BETA))

    @property
    def q(self) -> int:
        return int(np.count_nonzero(self.assignment == UNDECIDED))

    @property
    def s(self) -> int:
        return self.a - self.b


def graph_step(g: Graph, st: GraphState, rng) -> GraphState:
    """Synchronous round: every node pulls a uniform neighbor of the pre-round state."""
    x = st.assignment
    if x.shape != (g.n,):
        raise ValueError("state size does not match the graph")
    gen = as_source(rng).gen
    pick = gen.integers(0, g.d, size=g.n)
    pulled = x[g.neighbors[np.arange(g.n), pick]]
    return GraphState(TRANSITION[x, pulled])


def expected_next_graph(g: Graph, st: GraphState) -> tuple[float, float, float, float]:
    """Expected ``(|A'|, |B'|, |Q'|, |S'|)`` from the discrepancy-corrected formulas."""
    n, d = g.n, g.d
    A, B, Q = st.A, st.B, st.Q
    a, b, q = A.size, B.size, Q.size

    def delta(S, T):
        return edge_count(g, S, T) - d * S.size * T.size / n

    d_ab, d_aq, d_bq, d_q = delta(A, B), delta(A, Q), delta(B, Q), delta(Q, Q)
    ea = a * (a + 2 * q) / n + (d_aq - d_ab) / d
    eb = b * (b + 2 * q) / n + (d_bq - d_ab) / d
    eq = (q * q + 2 * a * b) / n + (d_q + 2 * d_ab) / d
    es = (a - b) * (1 + q / n) + (d_aq - d_bq) / d
    return ea, eb, eq, es


def run_graph(g: Graph, st: GraphState, rng, max_rounds: int):
    """Iterate :func:`graph_step`; returns ``(final_state, rounds, absorbed)``."""
    src = as_source(rng)
    n = g.n
    for t in range(max_rounds + 1):
        a, b = st.a, st.b
        if a == n or b == n or a + b == 0:
            return st, t, True
        if t == max_rounds:
            break
        st = graph_step(g, st, src)
    return st, max_rounds, False


def random_set_pairs(n: int, count: int, rng):
    """``count`` pairs of random vertex subsets with uniform sizes in ``[1, n]``."""
    gen = as_source(rng).gen
    out = []
    for _ in range(count):
        ks, kt = gen.integers(1, n + 1, size=2)
        out.append((gen.choice(n, size=ks, replace=False), gen.choice(n, size=kt, replace=False)))
    return out


def mixing_lemma_check(g: Graph, pairs, lam: float | None = None) -> list[Discrepancy]:
    if lam is None:
        lam = spectral_lambda(g)
    return [discrepancy(g, S, T, lam) for S, T in pairs]


def step_mean(g: Graph, st: GraphState, steps: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of ``(|A'|, |B'|, |Q'|)`` over ``steps`` independent rounds from ``st``."""
    src = as_source(rng)
    x = st.assignment
    samples = np.empty((steps, 3))
    chunk = max(1, 2_000_000 // max(g.n, 1))
    rows = np.arange(g.n)
    done = 0
    while done < steps:
        m = min(chunk, steps - done)
        pick = src.gen.integers(0, g.d, size=(m, g.n))
        new = TRANSITION[x[None, :], x[g.neighbors[rows[None, :], pick]]]
        samples[done : done + m, 0] = np.count_nonzero(new == ALPHA, axis=1)
        samples[done : done + m, 1] = np.count_nonzero(new == BETA, axis=1)
        samples[done : done + m, 2] = np.count_nonzero(new == UNDECIDED, axis=1)
        done += m
    return samples.mean(axis=0), samples.std(axis=0, ddof=1) / math.sqrt(steps)
