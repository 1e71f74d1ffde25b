"""Independent reference computations and the verification suite.

Each oracle solves a problem by a route that shares no numerical code with
the production path: grid search instead of water-filling or gradient
ascent, vertex enumeration instead of the simplex method, explicit loops
instead of batched einsum, projection matrices instead of Gram-Schmidt.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import metrics, power, precoding, selection
from .channel import MAX_CONDITION, RandomSource, generate_rayleigh, gram

__all__ = [
    "CheckResult",
    "naive_gram",
    "grid_search_throughput",
    "kkt_residual",
    "fairness_bisection",
    "hand_pcizf",
    "brute_force_selection",
    "reference_sus",
    "CHECKS",
    "run_checks",
]

LN2 = math.log(2.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float
    tol: float
    cases: int
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} {self.name}: residual={self.residual:.3e} tol={self.tol:.1e} cases={self.cases}"
        return f"{text} ({self.detail})" if self.detail else text


# ----------------------------------------------------------------- oracles


def naive_gram(h) -> np.ndarray:
    h = np.asarray(h)
    k, n = h.shape
    r = np.zeros((k, k), dtype=complex)
    for i in range(k):
        for j in range(k):
            acc = 0j
            for m in range(n):
                acc += h[i, m] * h[j, m].conjugate()
            r[i, j] = acc
    return r


def _sum_rate_q(b, q):
    # q has shape (..., K); b = a / cost.
    return np.sum(np.log2(1.0 + q @ b.T), axis=-1)


def grid_search_throughput(a, cost, p_tot, points: int = 21, rounds: int = 60):
    """Max of ``sum log2(1 + a @ p)`` on ``cost @ p = P`` by zooming grid search.

    Works in ``q = cost * p`` on the simplex; each round evaluates a full
    grid over the free coordinates around the incumbent and halves the
    window.  Returns ``(p, value)``.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(cost, dtype=float)
    k = c.size
    b = a / c[None, :]
    if k == 1:
        q = np.array([p_tot])
        return q / c, float(_sum_rate_q(b, q))
    center = np.full(k - 1, p_tot / k)
    half = p_tot / 2
    best_q = np.full(k, p_tot / k)
    best_v = float(_sum_rate_q(b, best_q))
    offsets = np.linspace(-1.0, 1.0, points)
    mesh = np.stack(np.meshgrid(*([offsets] * (k - 1)), indexing="ij"), axis=-1).reshape(-1, k - 1)
    for _ in range(rounds):
        free = np.clip(center + half * mesh, 0.0, p_tot)
        last = p_tot - free.sum(axis=1)
        ok = last >= 0
        qs = np.concatenate([free[ok], last[ok, None]], axis=1)
        vals = _sum_rate_q(b, qs)
        i = int(np.argmax(vals))
        if vals[i] >= best_v:
            best_v, best_q = float(vals[i]), qs[i]
        center = best_q[:-1]
        half *= 0.5
    return best_q / c, best_v


def kkt_residual(a, cost, p, p_tot) -> float:
    """Relative KKT violation of a max-throughput allocation.

    With multipliers ``lambda_j = (d f / d p_j) / c_j``, optimality needs a
    common ``lambda`` on the support and nothing larger off it; the budget
    must also bind.
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(cost, dtype=float)
    p = np.asarray(p, dtype=float)
    sinr = a @ p
    grad = (a / (1.0 + sinr)[:, None]).sum(axis=0) / LN2
    lam = grad / c
    support = p > 1e-12 * max(1.0, p_tot / c.min())
    top = lam[support].max()
    on = np.abs(lam[support] - top).max()
    off = max(0.0, float((lam[~support] - top).max())) if np.any(~support) else 0.0
    budget = abs(float(c @ p) - p_tot) / p_tot
    return max(on / top, off / top, budget)


def _min_cost_vertex(a, c, t):
    # min c @ p over {p >= 0, a @ p >= t} by enumerating basic solutions.
    k = c.size
    rows = np.vstack([a, np.eye(k)])
    rhs = np.concatenate([np.full(k, t), np.zeros(k)])
    best = math.inf
    for active in itertools.combinations(range(2 * k), k):
        m = rows[list(active)]
        if abs(np.linalg.det(m)) < 1e-14:
            continue
        p = np.linalg.solve(m, rhs[list(active)])
        if np.all(p >= -1e-12) and np.all(a @ p >= t * (1 - 1e-12)):
            best = min(best, float(c @ p))
    return best


def fairness_bisection(a, cost, p_tot, iters: int = 100) -> float:
    """Largest common SINR target reachable within the budget, by bisection."""
    a = np.asarray(a, dtype=float)
    c = np.asarray(cost, dtype=float)
    lo, hi = 0.0, float(p_tot * np.min(np.max(a / c[None, :], axis=1)))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _min_cost_vertex(a, c, mid) <= p_tot:
            lo = mid
        else:
            hi = mid
    return lo


def _objective(kind, sinr):
    rates = [math.log2(1.0 + float(x)) for x in sinr]
    return sum(rates) if kind == "throughput" else min(rates)


def hand_pcizf(h, s, p_tot, pa="uniform", objective="throughput", tie_rtol=None):
    """Best mask by explicit per-mask construction; returns ``(bits, value)``."""
    r = naive_gram(h)
    g = precoding.ci_matrix(r, s)
    positions = precoding.constructive_positions(g)
    scored = []
    for bits in itertools.product("01", repeat=len(positions)):
        mask = np.zeros(r.shape, dtype=bool)
        for (i, j), b in zip(positions, bits):
            mask[i, j] = b == "1"
        pre = precoding.build_precoder(h, r, precoding.target_masked(r, mask, g))
        alloc = power.allocate(pre, p_tot, pa)
        scored.append(("".join(bits), _objective(objective, metrics.sinr_ci(pre.t, alloc.p))))
    if tie_rtol is None:
        tie_rtol = 1e-12 if pa == "uniform" else 10 * power.ASCENT_TOL
    top = max(v for _, v in scored)
    tied = [(b.count("1"), b, v) for b, v in scored if v >= top - tie_rtol * max(1.0, abs(top))]
    _, bits, value = min(tied)
    return bits, value


def reference_objective(h, s, users, p_tot) -> float:
    """Uniform-power CIZF sum rate of ``users`` via the scalar pipeline."""
    hs = np.asarray(h)[list(users)]
    ss = np.asarray(s)[list(users)]
    r = naive_gram(hs)
    t, _ = precoding.target_cizf(r, precoding.ci_matrix(r, ss))
    if np.linalg.cond(r) > MAX_CONDITION:
        return -math.inf
    w = hs.conj().T @ np.linalg.solve(r, t)
    cost = [float(np.vdot(w[:, j], w[:, j]).real) for j in range(w.shape[1])]
    p = p_tot / sum(cost)
    return _objective("throughput", metrics.sinr_ci(t, np.full(len(cost), p)))


def brute_force_selection(h, s, n_tx, p_tot):
    """First lexicographic combination with the best uniform-power CIZF sum rate."""
    best, best_v = None, -math.inf
    for users in itertools.combinations(range(np.shape(h)[0]), n_tx):
        v = reference_objective(h, s, users, p_tot)
        if v > best_v:
            best, best_v = users, v
    return best, best_v


def reference_sus(h, n_tx, alpha):
    """Semi-orthogonal selection with explicit orthogonal-complement projectors."""
    h = np.asarray(h)
    k_pool, n = h.shape
    chosen: list[int] = []
    pool = list(range(k_pool))

    def residuals(cands):
        if chosen:
            hs = h[chosen]
            proj = np.eye(n) - hs.conj().T @ np.linalg.pinv(hs @ hs.conj().T) @ hs
        else:
            proj = np.eye(n)
        # Row-vector residual: x (I - Hs^H (Hs Hs^H)^+ Hs).
        return {j: h[j] @ proj for j in cands}

    while len(chosen) < n_tx and pool:
        res = residuals(pool)
        k = max(pool, key=lambda j: (np.linalg.norm(res[j]), -j))
        gk = res[k]
        chosen.append(k)
        nk = np.linalg.norm(gk)
        pool = [
            j for j in pool
            if j != k and nk > 0 and abs(np.vdot(gk, h[j])) / (np.linalg.norm(h[j]) * nk) <= alpha
        ]
    while len(chosen) < n_tx:
        rest = [j for j in range(k_pool) if j not in chosen]
        res = residuals(rest)
        chosen.append(max(rest, key=lambda j: (np.linalg.norm(res[j]), -j)))
    return tuple(chosen)


# ------------------------------------------------------------------ checks


def _rng(seed, stream):
    return RandomSource(seed, stream).generator()


def _coupled_instance(gen, k=4):
    h = generate_rayleigh(k, k, gen)
    s = precoding.draw_symbols(k, gen)
    r = gram(h)
    t, _ = precoding.target_cizf(r, precoding.ci_matrix(r, s))
    pre = precoding.build_precoder(h, r, t)
    return np.abs(t) ** 2, pre.cost


def check_gram(n=200, seed=0):
    gen = _rng(seed, 1)
    worst = 0.0
    for _ in range(n):
        k, m = int(gen.integers(1, 7)), int(gen.integers(1, 7))
        h = generate_rayleigh(k, m, gen)
        worst = max(worst, float(np.max(np.abs(gram(h) - naive_gram(h)))))
    return CheckResult("gram_vs_loop", worst < 1e-12, worst, 1e-12, n)


def check_inversion(n=2000, seed=0):
    gen = _rng(seed, 2)
    worst = 0.0
    for _ in range(n):
        k = int(gen.integers(2, 7))
        h = generate_rayleigh(k, k, gen)
        s = precoding.draw_symbols(k, gen)
        r = gram(h)
        t, _ = precoding.target_cizf(r, precoding.ci_matrix(r, s))
        w = precoding.build_precoder(h, r, t).w
        worst = max(worst, float(np.max(np.abs(h @ w - t)) / np.max(np.abs(t))))
    return CheckResult("channel_inversion_HW_eq_T", worst < 1e-9, worst, 1e-9, n)


def check_waterfill(n=100, seed=0):
    gen = _rng(seed, 3)
    worst, offender = 0.0, ""
    for i in range(n):
        g = gen.exponential(size=4) * 10 ** gen.uniform(-1, 1)
        c = gen.exponential(size=4) + 0.05
        p_tot = power.db_to_linear(gen.uniform(-10, 20))
        wf = power.waterfill_throughput(g, c, p_tot)
        _, v = grid_search_throughput(np.diag(g), c, p_tot)
        gap = abs(power.throughput(np.diag(g), wf.p) - v)
        if gap > worst:
            worst, offender = gap, f"instance {i}"
    return CheckResult("waterfilling_vs_grid_search", worst < 1e-6, worst, 1e-6, n, offender)


def check_ascent(n=50, seed=0):
    gen = _rng(seed, 4)
    worst_kkt, worst_grid = 0.0, 0.0
    for _ in range(n):
        a, c = _coupled_instance(gen)
        p_tot = power.db_to_linear(gen.uniform(-10, 20))
        alloc = power.ascent_throughput(power.SinrCoefficients(a, c), p_tot)
        worst_kkt = max(worst_kkt, kkt_residual(a, c, alloc.p, p_tot))
        _, v = grid_search_throughput(a, c, p_tot)
        worst_grid = max(worst_grid, v - power.throughput(a, alloc.p))
    passed = worst_kkt < 1e-7 and worst_grid < 1e-6
    return CheckResult(
        "ascent_kkt_and_grid_search", passed, worst_kkt, 1e-7, n, f"grid shortfall {worst_grid:.2e} tol 1e-06"
    )


def check_ascent_diagonal(n=100, seed=0):
    gen = _rng(seed, 5)
    worst = 0.0
    for _ in range(n):
        g = gen.exponential(size=4) + 0.01
        c = gen.exponential(size=4) + 0.05
        p_tot = power.db_to_linear(gen.uniform(-10, 20))
        asc = power.ascent_throughput(power.SinrCoefficients(np.diag(g), c), p_tot)
        wf = power.waterfill_throughput(g, c, p_tot)
        worst = max(worst, float(np.max(np.abs(asc.p - wf.p)) / max(1.0, np.max(wf.p))))
    return CheckResult("ascent_matches_waterfilling_diagonal", worst < 1e-5, worst, 1e-5, n)


def check_fairness(n=50, seed=0):
    gen = _rng(seed, 6)
    worst_closed, worst_equal, worst_bis = 0.0, 0.0, 0.0
    for _ in range(n):
        g = gen.exponential(size=4) + 0.01
        c = gen.exponential(size=4) + 0.05
        p_tot = power.db_to_linear(gen.uniform(-10, 20))
        alloc = power.maxmin_fairness(power.SinrCoefficients(np.diag(g), c), p_tot)
        sinr = g * alloc.p
        t_star = p_tot / float(np.sum(c / g))
        worst_closed = max(worst_closed, abs(sinr.min() - t_star) / t_star)
        worst_equal = max(worst_equal, (sinr.max() - sinr.min()) / sinr.max())
        a, cc = _coupled_instance(gen)
        alloc = power.maxmin_fairness(power.SinrCoefficients(a, cc), p_tot)
        ref = fairness_bisection(a, cc, p_tot)
        worst_bis = max(worst_bis, abs(float((a @ alloc.p).min()) - ref) / ref)
    passed = worst_closed < 1e-9 and worst_equal < 1e-6 and worst_bis < 1e-6
    detail = f"closed form {worst_closed:.2e}, equal SINR {worst_equal:.2e}, bisection {worst_bis:.2e}"
    return CheckResult("maxmin_fairness_oracles", passed, max(worst_closed, worst_equal, worst_bis), 1e-9, n, detail)


def check_pcizf(n=200, seed=0, max_m=6):
    gen = _rng(seed, 7)
    done, bad, worst = 0, [], 0.0
    policies = ("uniform", "max_throughput")
    while done < n:
        k = int(gen.integers(2, 5))
        h = generate_rayleigh(k, k, gen)
        s = precoding.draw_symbols(k, gen)
        r = gram(h)
        g = precoding.ci_matrix(r, s)
        if len(precoding.constructive_positions(g)) > max_m:
            continue
        pa = policies[done % 2]
        p_tot = power.db_to_linear(gen.uniform(-5, 20))
        res = precoding.pcizf_search(h, r, g, p_tot, pa=pa)
        bits, value = hand_pcizf(h, s, p_tot, pa=pa)
        err = abs(res.value - value) / max(1.0, abs(value))
        worst = max(worst, err)
        if res.bits != bits or err > 1e-8:
            bad.append(done)
        done += 1
    detail = f"mismatched instances {bad[:5]}" if bad else ""
    return CheckResult("pcizf_vs_hand_enumeration", not bad, worst, 1e-8, n, detail)


def check_selection(n=60, seed=0):
    gen = _rng(seed, 8)
    bad, worst = [], 0.0
    for i in range(n):
        n_tx = int(gen.integers(1, 5))
        k_pool = int(gen.integers(n_tx, 9))
        h = generate_rayleigh(k_pool, 4, gen)
        s = precoding.draw_symbols(k_pool, gen)
        p_tot = power.db_to_linear(gen.uniform(-5, 20))
        got = selection.select_optimal(h, s, n_tx, p_tot).users
        users, v = brute_force_selection(h, s, n_tx, p_tot)
        mine = reference_objective(h, s, got, p_tot)
        worst = max(worst, abs(mine - v) / max(1.0, abs(v)))
        if tuple(got) != tuple(users):
            bad.append(i)
    detail = f"mismatched instances {bad[:5]}" if bad else ""
    return CheckResult("optimal_selection_vs_enumeration", not bad, worst, 1e-12, n, detail)


def check_sus(n=100, seed=0):
    gen = _rng(seed, 9)
    bad = [i for i in range(n) if _sus_case(gen)]
    detail = f"mismatched instances {bad[:5]}" if bad else ""
    return CheckResult("sus_vs_projection_reimplementation", not bad, float(len(bad)), 0.0, n, detail)


def _sus_case(gen) -> bool:
    h = generate_rayleigh(12, 4, gen)
    alpha = float(gen.uniform(0.1, 0.9))
    return selection.select_sus(h, 4, alpha).users != reference_sus(h, 4, alpha)


def check_spus(n=1000, seed=0):
    g = np.array([[3.0, 2.0, -1.0], [2.0, 2.5, 0.5], [-1.0, 0.5, 2.0]])
    trace = selection.select_spus(g, 2)
    ok = trace.users == (0, 1) and bool(trace.pruned_mask[0, 1]) and bool(trace.pruned_mask[1, 0])
    gen = _rng(seed, 10)
    violations = 0
    for _ in range(n):
        k = int(gen.integers(4, 13))
        h = generate_rayleigh(k, 4, gen)
        gp = precoding.ci_matrix(gram(h), precoding.draw_symbols(k, gen))
        res = selection.select_spus(gp, 4)
        block = gp[np.ix_(res.users, res.users)]
        if (
            len(set(res.users)) != 4
            or np.any(res.pruned_mask & ~(block > 0))
            or np.any(res.pruned_mask != ((block > 0) & ~np.eye(4, dtype=bool)))
        ):
            violations += 1
    detail = "" if ok else f"hand trace gave {trace.users}"
    return CheckResult("spus_hand_trace_and_mask", ok and violations == 0, float(violations), 0.0, n + 1, detail)


def check_db_gain(n=1, seed=0):
    from .sim import db_gain_at_rate

    snr = np.arange(-10.0, 21.0)
    rate = np.log2(1 + 10 ** (snr / 10))
    shifted = (snr + 2.0, rate)
    err = abs(db_gain_at_rate((snr, rate), shifted, 2.5) - 2.0)
    err = max(err, abs(db_gain_at_rate((snr, rate), (snr, rate), 1.0)))
    # Hand interpolation on a two-segment curve.
    a = (np.array([0.0, 10.0, 20.0]), np.array([0.0, 1.0, 3.0]))
    b = (np.array([0.0, 10.0, 20.0]), np.array([0.0, 0.5, 1.5]))
    err = max(err, abs(db_gain_at_rate(a, b, 1.2) - (17.0 - 11.0)))
    return CheckResult("db_gain_readout", err < 1e-12, err, 1e-12, 3)


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "gram": check_gram,
    "inversion": check_inversion,
    "waterfilling": check_waterfill,
    "ascent": check_ascent,
    "ascent_diagonal": check_ascent_diagonal,
    "fairness": check_fairness,
    "pcizf": check_pcizf,
    "selection": check_selection,
    "sus": check_sus,
    "spus": check_spus,
    "db_gain": check_db_gain,
}


def run_checks(names=None, seed: int = 0, report=print) -> list:
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        res = CHECKS[name](seed=seed)
        results.append(res)
        if report is not None:
            report(f"{res.line()} [{time.perf_counter() - start:.1f}s]")
    return results
