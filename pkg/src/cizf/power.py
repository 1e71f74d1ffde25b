"""Power allocation under a total transmit-power budget.

The transmit power consumed by an allocation ``p`` is ``cost @ p`` where
``cost_j`` is the squared norm of precoder column ``j``.  Received SINRs
are linear in ``p`` (``a @ p`` with ``a_kj = |tau_kj|^2``), so

* max throughput is a concave program with a single linear budget,
* max-min fairness is a linear program.

Most solvers here work in cost-scaled coordinates ``q = cost * p``, in
which the feasible set becomes ``{q >= 0, sum(q) <= P}``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, InfeasibleError

log = logging.getLogger(__name__)

__all__ = [
    "PowerAllocation",
    "SinrCoefficients",
    "POLICIES",
    "db_to_linear",
    "uniform_power",
    "waterfill_throughput",
    "ascent_throughput",
    "ascent_throughput_batch",
    "maxmin_fairness",
    "throughput",
    "allocate",
    "project_budget",
    "project_simplex",
]

POLICIES = ("uniform", "max_throughput", "max_fairness")

ASCENT_TOL = 1e-9
ASCENT_MAX_ITER = 100_000
_POLISH_EVERY = 20
_LN2 = np.log(2.0)
_EPS = np.finfo(float).eps


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 10.0))


@dataclass(frozen=True)
class PowerAllocation:
    """Per-user powers ``p`` computed against a budget ``P_tot``.

    ``residual`` is the certified optimality gap (bits/s/Hz) for iterative
    solutions and ``None`` for closed forms.
    """

    p: np.ndarray
    budget: float
    residual: float | None = None

    def transmit_power(self, cost) -> float:
        return float(np.asarray(cost, dtype=float) @ self.p)


@dataclass(frozen=True)
class SinrCoefficients:
    """SINR model ``sinr = a @ p`` and power model ``cost @ p``."""

    a: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        c = np.asarray(self.cost, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or c.shape != (a.shape[1],):
            raise DimensionError(f"coefficient shapes a={a.shape}, cost={c.shape} are inconsistent")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ValueError("SINR coefficients must be finite and nonnegative")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise ValueError("power costs must be finite and positive")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "cost", c)

    @classmethod
    def from_precoder(cls, precoder) -> "SinrCoefficients":
        return cls(np.abs(precoder.t) ** 2, precoder.cost)

    @property
    def is_diagonal(self) -> bool:
        return not np.any(self.a[~np.eye(self.a.shape[0], dtype=bool)])

    def sinr(self, p) -> np.ndarray:
        return self.a @ np.asarray(getattr(p, "p", p), dtype=float)


def _check_budget(p_tot) -> float:
    p_tot = float(p_tot)
    if not np.isfinite(p_tot) or p_tot <= 0:
        raise ValueError(f"power budget must be positive, got {p_tot}")
    return p_tot


def throughput(a, p) -> float:
    """Sum of Shannon rates ``sum_k log2(1 + (a @ p)_k)``."""
    return float(np.sum(np.log2(1.0 + np.asarray(a) @ np.asarray(getattr(p, "p", p)))))


# --------------------------------------------------------------------- uniform


def uniform_power(precoder, p_tot) -> PowerAllocation:
    """Equal per-user power that spends the whole budget.

    ``sum(cost)`` equals ``Tr{T^H R^-1 T}``, so every user gets
    ``P_tot / Tr{T^H R^-1 T}``.
    """
    p_tot = _check_budget(p_tot)
    cost = np.asarray(precoder.cost, dtype=float)
    trace = float(np.sum(cost))
    if not trace > 0:
        raise ValueError("precoder has zero total power cost")
    return PowerAllocation(np.full(cost.shape, p_tot / trace), p_tot)


# -------------------------------------------------------------- water-filling


def _water_level(inv_gain: np.ndarray, p_tot: float) -> float:
    """Level ``mu`` with ``sum(max(0, mu - inv_gain)) == p_tot``."""
    floors = np.sort(inv_gain)
    csum = np.cumsum(floors)
    n = np.arange(1, floors.size + 1)
    levels = (p_tot + csum) / n
    # Largest active set whose level clears its highest floor.
    active = levels > floors
    r = int(np.nonzero(active)[0][-1])
    return float(levels[r])


def waterfill_throughput(gains, cost, p_tot) -> PowerAllocation:
    """Maximize ``sum log2(1 + g_k p_k)`` subject to ``cost @ p <= P_tot``.

    Closed form ``p_k = max(0, mu / c_k - 1 / g_k)`` with the water level
    ``mu`` found exactly by sorting.  Only valid for diagonal targets.
    """
    g = np.asarray(gains, dtype=float)
    c = np.asarray(cost, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("waterfilling needs at least one channel gain")
    if c.shape != g.shape:
        raise DimensionError(f"gains {g.shape} and costs {c.shape} differ in shape")
    if np.any(g <= 0) or np.any(c <= 0):
        raise ValueError("gains and costs must be positive")
    p_tot = _check_budget(p_tot)
    mu = _water_level(c / g, p_tot)
    q = np.maximum(0.0, mu - c / g)
    # Remove rounding drift so the budget binds to machine precision.
    q *= p_tot / np.sum(q)
    return PowerAllocation(q / c, p_tot)


# ------------------------------------------------------- projected gradient


def project_simplex(v: np.ndarray, total: float) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto ``{q >= 0, sum(q) = total}``."""
    v = np.atleast_2d(v)
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - total
    ind = np.arange(1, v.shape[1] + 1)
    cond = u - css / ind > 0
    rho = v.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(v.shape[0]), rho] / (rho + 1)
    return np.maximum(v - theta[:, None], 0.0)


def project_budget(v: np.ndarray, p_tot: float) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto ``{q >= 0, sum(q) <= P}``."""
    v = np.atleast_2d(v)
    out = np.maximum(v, 0.0)
    over = out.sum(axis=1) > p_tot
    if np.any(over):
        out[over] = project_simplex(v[over], p_tot)
    return out


def _objective(b, q):
    s = np.einsum("bkj,bj->bk", b, q)
    return np.sum(np.log1p(s), axis=1) / _LN2, s


def _gradient(b, s):
    return np.einsum("bkj,bk->bj", b, 1.0 / (1.0 + s)) / _LN2


def _fw_gap(grad, q):
    # Frank-Wolfe duality gap on the budget face, sum_j q_j (max g - g_j):
    # an upper bound on f* - f(q).
    return np.sum(q * (grad.max(axis=1, keepdims=True) - grad), axis=1)


def _newton_polish(b, q, p_tot, iters=8):
    """Newton iterations on the KKT system of the current support face.

    Solves ``grad_j(q) = mu`` for ``q_j > 0`` together with ``sum(q) = P``.
    Used once projected gradient stalls at the resolution of ``f``; it
    needs only gradients, which stay accurate long after differences of
    ``f`` have dissolved into rounding.
    """
    nb, k = q.shape
    q = q.copy()
    eye = np.eye(k, dtype=bool)
    for _ in range(iters):
        s = np.einsum("bkj,bj->bk", b, q)
        g = _gradient(b, s)
        w = 1.0 / (1.0 + s) ** 2
        hess = -np.einsum("bki,bk,bkj->bij", b, w, b) / _LN2
        sup = q > 0
        mu = np.sum(g * q, axis=1) / p_tot
        m = np.zeros((nb, k + 1, k + 1))
        rhs = np.zeros((nb, k + 1))
        both = sup[:, :, None] & sup[:, None, :]
        m[:, :k, :k] = np.where(both, hess, 0.0)
        m[:, :k, :k] += np.where(~sup[:, :, None] & eye, 1.0, 0.0)
        m[:, :k, k] = np.where(sup, -1.0, 0.0)
        m[:, k, :k] = sup
        rhs[:, :k] = np.where(sup, mu[:, None] - g, 0.0)
        rhs[:, k] = p_tot - q.sum(axis=1)
        try:
            dq = np.linalg.solve(m, rhs[..., None])[..., 0][:, :k]
        except np.linalg.LinAlgError:
            break
        # Damp so no support coordinate turns negative.
        neg = dq < 0
        ratio = np.where(neg & sup, q / np.where(neg, -dq, 1.0), np.inf)
        alpha = np.minimum(1.0, 0.99 * ratio.min(axis=1))
        q = np.where(sup, q + alpha[:, None] * dq, 0.0)
    return q


def _polish_into(b, q, s, grad, gap, idx, p_tot):
    """Polish entries ``idx`` in place, keeping only those that improved."""
    qp = _newton_polish(b[idx], q[idx], p_tot)
    _, sp = _objective(b[idx], qp)
    gp_grad = _gradient(b[idx], sp)
    gp = _fw_gap(gp_grad, qp)
    better = gp < gap[idx]
    sel = idx[better]
    q[sel], s[sel], grad[sel], gap[sel] = qp[better], sp[better], gp_grad[better], gp[better]


def ascent_throughput_batch(a, cost, p_tot, tol=ASCENT_TOL, max_iter=ASCENT_MAX_ITER):
    """Batched max-throughput solver for coupled SINRs.

    Maximizes ``sum_k log2(1 + (a_b @ p)_k)`` over ``{p >= 0, cost_b @ p <= P}``
    independently for every batch entry ``b``.  Projected gradient ascent
    runs in cost-scaled coordinates with Barzilai-Borwein steps and Armijo
    backtracking along the projection arc, starting from the uniform
    allocation.  Every few iterations, and whenever backtracking can no
    longer resolve an increase, a Newton step on the KKT system of the
    current support face is tried and kept if it shrinks the gap.

    The gradient is strictly positive (every ``a_jj > 0``), so the budget
    binds at every iterate and projections onto the budget set reduce to
    projections onto its face ``sum(q) = P``.  Shifting the gradient by a
    constant leaves those projections unchanged; centering it keeps the
    step small relative to ``q`` and avoids cancellation.

    Parameters
    ----------
    a : ndarray, shape (B, K, K)
    cost : ndarray, shape (B, K)
    p_tot : float
    tol : float
        Convergence when the Frank-Wolfe gap is below ``tol * max(1, f)``.

    Returns
    -------
    p : ndarray, shape (B, K)
    value : ndarray, shape (B,)
    gap : ndarray, shape (B,)
    """
    a = np.asarray(a, dtype=float)
    cost = np.asarray(cost, dtype=float)
    p_tot = _check_budget(p_tot)
    if a.ndim != 3 or a.shape[1] != a.shape[2] or cost.shape != a.shape[:2]:
        raise DimensionError(f"batch shapes a={a.shape}, cost={cost.shape} are inconsistent")
    b = a / cost[:, None, :]

    q = cost * (p_tot / cost.sum(axis=1, keepdims=True))
    f, s = _objective(b, q)
    grad = _gradient(b, s)
    gap = _fw_gap(grad, q)
    step = p_tot / np.maximum(grad.max(axis=1), 1e-300)
    active = np.nonzero(gap > tol * np.maximum(1.0, f))[0]

    it = 0
    while active.size and it < max_iter:
        it += 1
        ba, qa, sa, ga, ta = b[active], q[active], s[active], grad[active], step[active]
        dir_ = ga - np.sum(ga * qa, axis=1, keepdims=True) / p_tot
        pending = np.arange(active.size)
        q_new = qa.copy()
        s_new = sa.copy()
        gain = np.zeros(active.size)
        for _ in range(60):
            cand = project_simplex(qa[pending] + ta[pending, None] * dir_[pending], p_tot)
            ds = cand - qa[pending]
            dsin = np.einsum("bkj,bj->bk", ba[pending], ds)
            # Increment computed directly: no cancellation between nearby f values.
            terms = np.log1p(dsin / (1.0 + sa[pending]))
            inc = np.sum(terms, axis=1) / _LN2
            # Rounding error of the increment; below it f cannot tell steps apart.
            noise = 8 * _EPS * np.sum(np.abs(terms), axis=1) / _LN2
            ok = inc >= 1e-4 * np.sum(dir_[pending] * ds, axis=1) - noise
            acc = pending[ok]
            q_new[acc], s_new[acc], gain[acc] = cand[ok], sa[acc] + dsin[ok], inc[ok]
            pending = pending[~ok]
            if not pending.size:
                break
            ta[pending] *= 0.5

        g_new = _gradient(ba, s_new)
        ds = q_new - qa
        dy = ga - g_new
        sy = np.sum(ds * dy, axis=1)
        ss = np.sum(ds * ds, axis=1)
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 2.0 * ta)
        step[active] = np.clip(bb, 1e-12 * p_tot, 1e12 * p_tot)
        q[active], s[active], grad[active] = q_new, s_new, g_new
        f[active] += gain
        gap[active] = _fw_gap(g_new, q_new)

        stalled = np.zeros(active.size, dtype=bool)
        stalled[pending] = True
        if it % _POLISH_EVERY == 0 or np.any(stalled):
            _polish_into(b, q, s, grad, gap, active, p_tot)
            f[active], _ = _objective(b[active], q[active])
        # Entries that still cannot improve are stuck at rounding level.
        done = (gap[active] <= tol * np.maximum(1.0, f[active])) | stalled
        active = active[~done]

    rough = np.nonzero(gap > tol * np.maximum(1.0, f))[0]
    if rough.size:
        _polish_into(b, q, s, grad, gap, rough, p_tot)

    f, _ = _objective(b, q)
    return q / cost, f, np.maximum(gap, 0.0)


def ascent_throughput(coeff: SinrCoefficients, p_tot, tol=ASCENT_TOL, max_iter=ASCENT_MAX_ITER):
    """Max-throughput allocation for a (possibly coupled) SINR model.

    Raises :class:`ConvergenceError` carrying the best allocation when the
    certified gap stays above ``tol * max(1, f)``.
    """
    p, f, gap = ascent_throughput_batch(coeff.a[None], coeff.cost[None], p_tot, tol, max_iter)
    alloc = PowerAllocation(p[0], float(p_tot), float(gap[0]))
    if gap[0] > tol * max(1.0, f[0]):
        raise ConvergenceError(
            f"throughput ascent stopped with gap {gap[0]:.3e} (objective {f[0]:.6g})",
            best=alloc,
            residual=float(gap[0]),
        )
    return alloc


# ------------------------------------------------------------- max-min fairness


def _simplex_max(m: np.ndarray, rhs: np.ndarray, obj: np.ndarray, max_pivots=10_000):
    """Dense tableau simplex for ``max obj @ y`` s.t. ``m @ y <= rhs``, ``y >= 0``.

    ``rhs >= 0`` is required so the slack basis is feasible from the start.
    Bland's rule selects entering and leaving variables, which rules out
    cycling.  Returns the primal ``y``, the constraint duals and the value.
    """
    nr, nc = m.shape
    tab = np.zeros((nr + 1, nc + nr + 1))
    tab[:nr, :nc] = m
    tab[:nr, nc : nc + nr] = np.eye(nr)
    tab[:nr, -1] = rhs
    tab[nr, :nc] = -obj
    basis = list(range(nc, nc + nr))
    eps = 1e-12
    for _ in range(max_pivots):
        entering = next((j for j in range(nc + nr) if tab[nr, j] < -eps), None)
        if entering is None:
            break
        col = tab[:nr, entering]
        rows = np.nonzero(col > eps)[0]
        if rows.size == 0:
            raise InfeasibleError("dual program is unbounded, so the fairness problem is infeasible")
        ratios = tab[rows, -1] / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + eps * max(1.0, abs(best))]
        leave = min(ties, key=lambda r: basis[r])
        tab[leave] /= tab[leave, entering]
        for r in range(nr + 1):
            if r != leave and tab[r, entering] != 0.0:
                tab[r] -= tab[r, entering] * tab[leave]
        basis[leave] = entering
    else:
        raise ConvergenceError("simplex pivot limit reached")
    y = np.zeros(nc)
    for r, var in enumerate(basis):
        if var < nc:
            y[var] = tab[r, -1]
    duals = tab[nr, nc : nc + nr].copy()
    return y, duals, float(tab[nr, -1])


def maxmin_fairness(coeff: SinrCoefficients, p_tot) -> PowerAllocation:
    """Allocation maximizing ``min_k (a @ p)_k`` under the budget.

    SINRs and cost are both linear in ``p``, so it suffices to solve
    ``min cost @ p`` s.t. ``a @ p >= 1``, ``p >= 0`` once and rescale onto
    the budget.  The LP is solved through its dual, whose slack basis is
    feasible, so no phase-one step is needed.  Diagonal models use the
    closed form ``p_k = t / g_k`` with ``t = P / sum(c_k / g_k)``.
    """
    p_tot = _check_budget(p_tot)
    a, c = coeff.a, coeff.cost
    if np.any(~np.any(a > 0, axis=1)):
        raise InfeasibleError("some user receives no signal from any stream")
    if coeff.is_diagonal:
        g = np.diagonal(a)
        t = p_tot / float(np.sum(c / g))
        return PowerAllocation(t / g, p_tot)
    b = a / c[None, :]
    k = a.shape[0]
    # Dual: max 1 @ y  s.t.  b.T @ y <= 1, y >= 0.  Primal q are its duals.
    _, q, _ = _simplex_max(b.T.copy(), np.ones(k), np.ones(k))
    q = np.maximum(q, 0.0)
    p = q / c
    p *= p_tot / float(c @ p)
    return PowerAllocation(p, p_tot)


# ----------------------------------------------------------------- dispatcher


def allocate(precoder, p_tot, policy: str) -> PowerAllocation:
    """Apply a named policy: ``uniform``, ``max_throughput`` or ``max_fairness``."""
    if policy == "uniform":
        return uniform_power(precoder, p_tot)
    coeff = SinrCoefficients.from_precoder(precoder)
    if policy == "max_throughput":
        if coeff.is_diagonal:
            return waterfill_throughput(np.diagonal(coeff.a), coeff.cost, p_tot)
        return ascent_throughput(coeff, p_tot)
    if policy == "max_fairness":
        return maxmin_fairness(coeff, p_tot)
    raise ValueError(f"unknown power allocation policy {policy!r}; expected one of {POLICIES}")
