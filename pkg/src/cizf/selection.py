"""User selection from a pool of ``K >= N_t`` candidates.

Four strategies are provided:

``random``   uniform random subset (the no-selection baseline).
``sus``      semi-orthogonal user selection, a ZF-oriented greedy rule.
``optimal``  exhaustive search maximizing the CIZF sum rate under uniform
             power, the upper bound for CI-aware selection.
``spus``     semi-parallel user selection, a greedy rule on the CI matrix
             that favours users aligned with the ones already chosen.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import MAX_CONDITION, as_generator, validate_channel
from .errors import CapacityError, DimensionError
from .precoding import ci_matrix

log = logging.getLogger(__name__)

__all__ = [
    "SelectionResult",
    "METHODS",
    "SUS_ALPHA",
    "select_random",
    "select_sus",
    "select_optimal",
    "select_spus",
    "selection_objective",
    "MAX_COMBINATIONS",
]

METHODS = ("random", "sus", "optimal", "spus")
SUS_ALPHA = 0.3
MAX_COMBINATIONS = 1_000_000
_CHUNK = 4096


@dataclass(frozen=True)
class SelectionResult:
    """Selected users in selection order.

    ``pruned_mask`` is the SPUS output mask over ``users`` (in that order):
    the cross terms of the selected block of ``G`` that survive pruning.
    """

    users: tuple
    method: str
    pruned_mask: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {"method": self.method, "users": sorted(self.users), "order": list(self.users)}


def _check_sizes(k_pool: int, n_tx: int) -> None:
    if n_tx < 1:
        raise ValueError(f"must select at least one user, got n_tx={n_tx}")
    if k_pool < n_tx:
        raise ValueError(f"pool of {k_pool} users is smaller than n_tx={n_tx}")


def select_random(k_pool: int, n_tx: int, rng) -> SelectionResult:
    _check_sizes(k_pool, n_tx)
    perm = as_generator(rng).permutation(k_pool)[:n_tx]
    return SelectionResult(tuple(int(u) for u in perm), "random")


def _residual(h_k, basis):
    # Component of h_k orthogonal to the span of the orthonormal rows in basis.
    g = h_k.copy()
    for e in basis:
        g = g - (g @ e.conj()) * e
    return g


def select_sus(h, n_tx: int, alpha: float = SUS_ALPHA) -> SelectionResult:
    """Semi-orthogonal user selection.

    Greedily picks the candidate whose channel has the largest component
    orthogonal to the users already picked, then discards candidates whose
    normalized correlation with that component exceeds ``alpha``.  If the
    candidate set empties early, the remaining slots are filled from all
    unselected users by the same largest-residual rule.
    """
    h = validate_channel(h)
    k_pool, n_ant = h.shape
    _check_sizes(k_pool, n_tx)
    if n_tx > n_ant:
        raise DimensionError(f"cannot select {n_tx} users for {n_ant} antennas")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")

    norms = np.linalg.norm(h, axis=1)
    selected: list[int] = []
    basis: list[np.ndarray] = []
    candidates = list(range(k_pool))

    def pick(pool):
        best, best_norm, best_g = None, -1.0, None
        for k in pool:
            g = _residual(h[k], basis)
            n = float(np.linalg.norm(g))
            if n > best_norm:
                best, best_norm, best_g = k, n, g
        return best, best_norm, best_g

    def accept(k, n, g):
        selected.append(k)
        # A vanishing residual adds no direction to the span.
        if n > 1e-12 * max(norms[k], 1e-300):
            basis.append(g / n)
        return g, n

    while len(selected) < n_tx and candidates:
        k, n, g = pick(candidates)
        g, n = accept(k, n, g)
        candidates = [
            j
            for j in candidates
            if j != k and n > 0 and abs(h[j] @ g.conj()) / (norms[j] * n) <= alpha
        ]
    while len(selected) < n_tx:
        rest = [j for j in range(k_pool) if j not in selected]
        k, n, g = pick(rest)
        accept(k, n, g)
    return SelectionResult(tuple(selected), "sus")


def _rates_uniform_cizf(hs, ss, p_tot):
    """Uniform-power CIZF sum rates for a batch of sub-channels.

    ``hs`` has shape (C, n, N_t) and ``ss`` shape (C, n).  The column costs
    are ``t_j^H R^-1 t_j``.  Ill-conditioned subsets score ``-inf``.
    """
    r = np.einsum("cin,cjn->cij", hs, hs.conj())
    n = r.shape[1]
    g = ss[:, :, None] * r.real * ss[:, None, :]
    keep = (g > 0) | np.eye(n, dtype=bool)
    t = np.where(keep, r, 0)
    cond = np.linalg.cond(r)
    ok = np.isfinite(cond) & (cond <= MAX_CONDITION)
    rates = np.full(r.shape[0], -np.inf)
    if np.any(ok):
        rinv = np.linalg.inv(r[ok])
        tt = t[ok]
        cost = np.einsum("cij,cik,ckj->cj", tt.conj(), rinv, tt).real
        p = p_tot / cost.sum(axis=1)
        sinr = (np.abs(tt) ** 2).sum(axis=2) * p[:, None]
        rates[ok] = np.log2(1.0 + sinr).sum(axis=1)
    return rates


def selection_objective(h, s, users, p_tot) -> float:
    """Uniform-power CIZF sum rate of serving ``users``.

    Users are sorted first so the value depends on the set only.
    """
    h = validate_channel(h)
    idx = np.asarray(sorted(users), dtype=int)
    s = np.asarray(s, dtype=float)
    return float(_rates_uniform_cizf(h[idx][None], s[idx][None], float(p_tot))[0])


def select_optimal(h, s_pool, n_tx: int, p_tot, max_combinations: int = MAX_COMBINATIONS) -> SelectionResult:
    """Exhaustive search for the subset with the best uniform-power CIZF sum rate.

    Combinations are visited in lexicographic order and the first one
    reaching the maximum wins, so ties go to the smallest index tuple.
    """
    h = validate_channel(h)
    s_pool = np.asarray(s_pool, dtype=float)
    k_pool, n_ant = h.shape
    _check_sizes(k_pool, n_tx)
    if s_pool.shape != (k_pool,):
        raise DimensionError(f"symbols {s_pool.shape} do not match pool of {k_pool}")
    if n_tx > n_ant:
        raise DimensionError(f"cannot select {n_tx} users for {n_ant} antennas")
    total = math.comb(k_pool, n_tx)
    if total > max_combinations:
        raise CapacityError(f"C({k_pool},{n_tx}) = {total} combinations exceed the guard of {max_combinations}")

    p_tot = float(p_tot)
    best_val, best = -np.inf, None
    combos = itertools.combinations(range(k_pool), n_tx)
    while True:
        chunk = np.array(list(itertools.islice(combos, _CHUNK)), dtype=int)
        if chunk.size == 0:
            break
        vals = _rates_uniform_cizf(h[chunk], s_pool[chunk], p_tot)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = vals[i], chunk[i]
    if best is None:
        raise CapacityError("every user combination is ill-conditioned")
    return SelectionResult(tuple(int(u) for u in best), "optimal")


def select_spus(g_pool, n_tx: int, buffer: str = "cumulative") -> SelectionResult:
    """Semi-parallel user selection on the pool CI matrix ``g_pool``.

    Starts from the user with the largest ``g_kk`` (the strongest channel)
    and keeps a buffer of CI-matrix rows.  Each step picks the unselected
    user with the largest buffer entry and adds its row to the buffer.
    ``buffer="pairwise"`` instead keeps only the sum of the last two
    selected rows.  Finally, negative cross terms of the selected block are
    pruned; the surviving positions form ``pruned_mask``.  Argmax ties go
    to the lowest index.
    """
    g = np.asarray(g_pool, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise DimensionError(f"CI matrix must be square, got shape {g.shape}")
    k_pool = g.shape[0]
    _check_sizes(k_pool, n_tx)
    if buffer not in ("cumulative", "pairwise"):
        raise ValueError(f"unknown SPUS buffer rule {buffer!r}")

    first = int(np.argmax(np.diagonal(g)))
    selected = [first]
    c = g[first].copy()
    while len(selected) < n_tx:
        masked = c.copy()
        masked[selected] = -np.inf
        nxt = int(np.argmax(masked))
        if buffer == "cumulative":
            c = c + g[nxt]
        else:
            c = g[selected[-1]] + g[nxt]
        selected.append(nxt)

    block = g[np.ix_(selected, selected)]
    mask = (block > 0) & ~np.eye(n_tx, dtype=bool)
    return SelectionResult(tuple(selected), "spus", mask)


def select(method: str, h, s_pool, n_tx: int, p_tot, rng=None, alpha: float = SUS_ALPHA, r_pool=None):
    """Dispatch on ``method``; ``r_pool`` avoids recomputing the pool Gram matrix."""
    if method == "random":
        if rng is None:
            raise ValueError("random selection needs a random source")
        return select_random(np.shape(h)[0], n_tx, rng)
    if method == "sus":
        return select_sus(h, n_tx, alpha)
    if method == "optimal":
        return select_optimal(h, s_pool, n_tx, p_tot)
    if method == "spus":
        if r_pool is None:
            hh = validate_channel(h)
            r_pool = hh @ hh.conj().T
        return select_spus(ci_matrix(r_pool, s_pool), n_tx)
    raise ValueError(f"unknown selection method {method!r}; expected one of {METHODS}")
