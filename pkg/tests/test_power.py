import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cizf import oracles, power
from cizf.channel import RandomSource, gram
from cizf.errors import ConvergenceError, InfeasibleError
from cizf.power import SinrCoefficients
from cizf.precoding import build_precoder, target_cizf, target_zf

from conftest import random_instance


def coupled(seed, k=4):
    h, s, r, g = random_instance(RandomSource(seed, 0).generator(), k)
    t, _ = target_cizf(r, g)
    pre = build_precoder(h, r, t)
    return pre, SinrCoefficients.from_precoder(pre)


def test_uniform_identity():
    h = np.eye(4, dtype=complex)
    r = gram(h)
    alloc = power.uniform_power(build_precoder(h, r, target_zf(r)), 4.0)
    np.testing.assert_allclose(alloc.p, np.ones(4))


def test_uniform_two_user_hand():
    h = np.array([[1.0, 0.5], [0.5, 1.0]], dtype=complex)
    r = gram(h)
    pre = build_precoder(h, r, target_zf(r))
    # Tr{T^H R^-1 T} = 2 * 1.25^2 * 1.25 / 0.5625
    trace = 2 * 1.25**2 * 1.25 / 0.5625
    np.testing.assert_allclose(power.uniform_power(pre, 10.0).p, 10.0 / trace, rtol=1e-12)


def test_uniform_budget_binds(instance):
    h, s, r, g = instance
    pre = build_precoder(h, r, target_cizf(r, g)[0])
    alloc = power.uniform_power(pre, 7.5)
    assert alloc.transmit_power(pre.cost) == pytest.approx(7.5, rel=1e-9)
    with pytest.raises(ValueError):
        power.uniform_power(pre, 0.0)


def test_waterfill_examples():
    np.testing.assert_allclose(power.waterfill_throughput([2.0], [4.0], 3.0).p, [0.75])
    np.testing.assert_allclose(power.waterfill_throughput([1, 1], [1, 1], 2.0).p, [1.0, 1.0])
    with pytest.raises(ValueError):
        power.waterfill_throughput([], [], 1.0)


def test_waterfill_against_grid_search(rng):
    for _ in range(5):
        g = rng.exponential(size=4)
        c = rng.exponential(size=4) + 0.1
        wf = power.waterfill_throughput(g, c, 3.0)
        _, best = oracles.grid_search_throughput(np.diag(g), c, 3.0)
        assert abs(power.throughput(np.diag(g), wf.p) - best) < 1e-6


@settings(max_examples=80, deadline=None)
@given(
    g=st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=6),
    c_scale=st.floats(0.1, 10),
    p_tot=st.floats(1e-3, 1e4),
)
def test_waterfill_monotone_water_level(g, c_scale, p_tot):
    g = np.array(g)
    c = c_scale * np.linspace(1, 2, g.size)
    a = power.waterfill_throughput(g, c, p_tot)
    b = power.waterfill_throughput(g, c, 2 * p_tot)
    assert np.all(a.p >= 0)
    assert c @ a.p == pytest.approx(p_tot, rel=1e-9)
    assert np.all(b.p >= a.p * (1 - 1e-9) - 1e-12)


def test_ascent_matches_waterfill_on_diagonal(rng):
    for _ in range(10):
        g = rng.exponential(size=4)
        c = rng.exponential(size=4) + 0.1
        asc = power.ascent_throughput(SinrCoefficients(np.diag(g), c), 5.0)
        wf = power.waterfill_throughput(g, c, 5.0)
        assert power.throughput(np.diag(g), asc.p) == pytest.approx(power.throughput(np.diag(g), wf.p), rel=1e-5)


def test_ascent_identical_rows():
    row = np.array([0.5, 2.0, 1.0, 0.25])
    c = np.array([1.0, 1.0, 2.0, 0.5])
    a = np.tile(row, (4, 1))
    alloc = power.ascent_throughput(SinrCoefficients(a, c), 3.0)
    analytic = 4 * np.log2(1 + 3.0 * np.max(row / c))
    assert power.throughput(a, alloc.p) == pytest.approx(analytic, rel=1e-9)
    assert c @ alloc.p == pytest.approx(3.0, rel=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_ascent_coupled_kkt_and_dominance(seed):
    pre, coeff = coupled(seed)
    p_tot = 10.0 ** (seed - 2)
    alloc = power.ascent_throughput(coeff, p_tot)
    assert oracles.kkt_residual(coeff.a, coeff.cost, alloc.p, p_tot) < 1e-7
    unif = power.uniform_power(pre, p_tot)
    assert power.throughput(coeff.a, alloc.p) >= power.throughput(coeff.a, unif.p) - 1e-12
    _, best = oracles.grid_search_throughput(coeff.a, coeff.cost, p_tot)
    assert power.throughput(coeff.a, alloc.p) >= best * (1 - 1e-4)


def test_ascent_iteration_cap_raises_with_best():
    _, coeff = coupled(3)
    with pytest.raises(ConvergenceError) as info:
        power.ascent_throughput(coeff, 100.0, tol=0.0, max_iter=1)
    assert info.value.best is not None and info.value.residual is not None


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), t=st.floats(0.05, 0.95))
def test_throughput_midpoint_concave(seed, t):
    _, coeff = coupled(seed % 1000)
    gen = np.random.default_rng(seed)
    x = gen.dirichlet(np.ones(4)) * 5.0 / coeff.cost
    y = gen.dirichlet(np.ones(4)) * 5.0 / coeff.cost
    mid = power.throughput(coeff.a, t * x + (1 - t) * y)
    assert mid >= t * power.throughput(coeff.a, x) + (1 - t) * power.throughput(coeff.a, y) - 1e-9


def test_fairness_closed_form():
    alloc = power.maxmin_fairness(SinrCoefficients(np.diag([1.0, 4.0]), np.ones(2)), 1.0)
    np.testing.assert_allclose(alloc.p, [0.8, 0.2])
    sym = power.maxmin_fairness(SinrCoefficients(np.full((3, 3), 0.5) + np.eye(3), np.ones(3)), 3.0)
    np.testing.assert_allclose(sym.p, np.ones(3), rtol=1e-9)


@pytest.mark.parametrize("seed", range(6))
def test_fairness_coupled_matches_bisection(seed):
    pre, coeff = coupled(seed)
    alloc = power.maxmin_fairness(coeff, 4.0)
    ref = oracles.fairness_bisection(coeff.a, coeff.cost, 4.0)
    assert coeff.sinr(alloc).min() == pytest.approx(ref, rel=1e-6)
    assert coeff.cost @ alloc.p == pytest.approx(4.0, rel=1e-9)
    assert coeff.sinr(alloc).min() >= coeff.sinr(power.uniform_power(pre, 4.0)).min() - 1e-12
    double = power.maxmin_fairness(coeff, 8.0)
    np.testing.assert_allclose(double.p, 2 * alloc.p, rtol=1e-9, atol=1e-15)


def test_fairness_unreachable_user():
    with pytest.raises(InfeasibleError):
        power.maxmin_fairness(SinrCoefficients(np.array([[1.0, 0.5], [0.0, 0.0]]), np.ones(2)), 1.0)


def test_coefficient_validation():
    with pytest.raises(ValueError):
        SinrCoefficients(np.array([[-1.0]]), np.ones(1))
    with pytest.raises(ValueError):
        SinrCoefficients(np.eye(2), np.array([1.0, 0.0]))


@pytest.mark.parametrize("policy", power.POLICIES)
def test_allocate_feasible(instance, policy):
    h, s, r, g = instance
    pre = build_precoder(h, r, target_cizf(r, g)[0])
    alloc = power.allocate(pre, 20.0, policy)
    assert np.all(alloc.p >= 0)
    assert alloc.transmit_power(pre.cost) <= 20.0 * (1 + 1e-9)
    assert alloc.transmit_power(pre.cost) == pytest.approx(20.0, rel=1e-6)
    with pytest.raises(ValueError):
        power.allocate(pre, 20.0, "greedy")
