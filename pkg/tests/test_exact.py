import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from udyn.core import Configuration, expected_next
from udyn.exact import (
    DEFAULT_CAP,
    absorption,
    binom_pmf,
    build_kernel,
    one_step_distribution,
    pruned_one_step_distribution,
    pruned_target,
    trinomial_pmf,
)
from udyn.phases import Label, PhaseParameters, classify_label

# exact regression values from the linear solve at n = 36, start (a, b) = (18, 6)
GOLDEN_N36_P_BETA = 0.0013002071973439479
GOLDEN_N36_ROUNDS = 6.149228176511981


@pytest.fixture(scope="module")
def k36():
    return build_kernel(36)


@pytest.fixture(scope="module")
def k36_pruned():
    return build_kernel(36, "pruned", PhaseParameters(1.0))


def test_pmfs_normalised():
    assert binom_pmf(50, 0.3).sum() == pytest.approx(1, abs=1e-13)
    assert binom_pmf(0, 0.7).tolist() == [1.0]
    assert trinomial_pmf(20, 0.2, 0.5, 0.3).sum() == pytest.approx(1, abs=1e-13)


def test_hand_values():
    d = one_step_distribution(Configuration(2, 1, 1))
    for a2, b2 in [(1, 1), (1, 0), (0, 1), (0, 0)]:
        assert d[a2, b2] == pytest.approx(0.25, abs=1e-15)
    assert d.sum() == pytest.approx(1)
    d3 = one_step_distribution(Configuration(3, 1, 1))
    assert d3[0, 0] * 27 == pytest.approx(1, abs=1e-14)
    d5 = one_step_distribution(Configuration(5, 5, 0))
    assert d5[5, 0] == 1 and d5.sum() == 1


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_against_enumeration(brute_force, n):
    for a in range(n + 1):
        for b in range(n + 1 - a):
            law = brute_force(n, a, b)
            d = one_step_distribution(Configuration(n, a, b))
            for (x, y), p in law.items():
                assert d[x, y] == pytest.approx(float(p), abs=1e-14)
            assert d.sum() == pytest.approx(float(sum(law.values())), abs=1e-13)
            assert sum(law.values()) == Fraction(1)


def test_cap():
    with pytest.raises(ValueError, match="cap"):
        build_kernel(DEFAULT_CAP + 1)
    with pytest.raises(ValueError, match="cap"):
        one_step_distribution(Configuration(10, 5, 5), cap=9)
    assert one_step_distribution(Configuration(61, 30, 30), cap=61).sum() == pytest.approx(1)


def test_small_kernels():
    k1 = build_kernel(1)
    assert len(k1.states) == 3 and k1.absorbing_mask().all()
    k2 = build_kernel(2)
    assert len(k2.states) == 6
    assert k2.row(1, 1) == pytest.approx({(1, 1): 0.25, (1, 0): 0.25, (0, 1): 0.25, (0, 0): 0.25})


def test_kernel_rows_and_expectations():
    k = build_kernel(30)
    P = k.matrix
    assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-9
    a_next = np.array([a for a, _ in k.states])
    b_next = np.array([b for _, b in k.states])
    for i, (a, b) in enumerate(k.states):
        ea, eb, eq, es = expected_next(Configuration(30, a, b))
        assert P[i] @ a_next == pytest.approx(ea, abs=1e-9)
        assert P[i] @ b_next == pytest.approx(eb, abs=1e-9)
        assert P[i] @ (30 - a_next - b_next) == pytest.approx(eq, abs=1e-9)


@given(st.integers(1, 25).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))).flatmap(
    lambda t: st.tuples(st.just(t[0]), st.just(t[1]), st.integers(0, t[0] - t[1]))))
def test_color_swap_equivariance(nab):
    n, a, b = nab
    d = one_step_distribution(Configuration(n, a, b))
    e = one_step_distribution(Configuration(n, b, a))
    assert np.allclose(d, e.T, atol=1e-15, rtol=0)


def test_absorption_trivial(k36):
    r = absorption(k36, Configuration(36, 36, 0))
    assert (r.p_alpha, r.expected_rounds) == (1.0, 0.0)
    r = absorption(k36, Configuration(36, 15, 15))
    assert abs(r.p_alpha - r.p_beta) < 1e-10
    assert r.p_alpha + r.p_beta + r.p_undecided == pytest.approx(1, abs=1e-10)


def test_absorption_golden(k36):
    r = absorption(k36, Configuration(36, 18, 6))
    assert r.p_beta == pytest.approx(GOLDEN_N36_P_BETA, rel=1e-9)
    assert r.expected_rounds == pytest.approx(GOLDEN_N36_ROUNDS, rel=1e-9)
    assert r.p_alpha + r.p_beta + r.p_undecided == pytest.approx(1, abs=1e-8)


def test_absorption_n_mismatch(k36):
    with pytest.raises(ValueError):
        absorption(k36, Configuration(30, 10, 10))


def test_pruned_target():
    assert pruned_target(36, 0) == (9, 9)
    a, b = pruned_target(36, 1)
    assert (a - b, 36 - a - b) == (1, 17)
    a, b = pruned_target(36, 30)
    assert a - b == 30 and 36 - a - b == 6


def test_pruned_requires_even_n():
    with pytest.raises(ValueError, match="even"):
        build_kernel(35, "pruned")


def _s_marginal(dist, n):
    out = np.zeros(2 * n + 1)
    for a in range(n + 1):
        for b in range(n + 1 - a):
            out[a - b + n] += dist[a, b]
    return out


def test_pruned_contract_n36():
    n = 36
    seen_h2 = 0
    for a in range(n + 1):
        for b in range(n + 1 - a):
            cfg = Configuration(n, a, b)
            plain = one_step_distribution(cfg)
            pruned = pruned_one_step_distribution(cfg, PhaseParameters(1.0))
            if classify_label(n, a, b) is not Label.H2:
                assert np.array_equal(plain, pruned)
                continue
            seen_h2 += 1
            assert np.abs(_s_marginal(plain, n) - _s_marginal(pruned, n)).max() < 1e-12
            assert pruned.sum() == pytest.approx(1, abs=1e-12)
            for a2, b2 in zip(*np.nonzero(pruned)):
                q2 = n - a2 - b2
                assert 2 <= q2 <= 18
    assert seen_h2 > 0


def test_kernel_csv_roundtrip():
    k = build_kernel(3)
    lines = k.to_csv().splitlines()
    assert lines[0] == "a,b,a_next,b_next,prob"
    total = {}
    for line in lines[1:]:
        a, b, a2, b2, p = line.split(",")
        total[(int(a), int(b))] = total.get((int(a), int(b)), 0) + float(p)
        assert float(p) == k.matrix[k.index(int(a), int(b)), k.index(int(a2), int(b2))]
    assert all(abs(v - 1) < 1e-12 for v in total.values())
