"""Zero-forcing and constructive-interference precoders for BPSK.

The precoder has the form ``W = H^H R^-1 T`` with ``R = H H^H``, so the
effective channel is ``H W = T``.  Conventional ZF keeps only the diagonal
of ``R`` in ``T``; CIZF also keeps every cross term ``rho_kj`` that is
constructive for the current symbols, i.e. where
``g_kj = s_k Re(rho_kj) s_j > 0``.  P-CIZF searches all subsets of those
constructive terms.

Masks are ``K x K`` boolean arrays over off-diagonal positions; the
diagonal is implicitly always kept and stored as ``False``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import power as _power
from .channel import MAX_CONDITION, as_generator, validate_channel
from .errors import CapacityError, ConditioningError, DimensionError, MaskError

__all__ = [
    "Precoder",
    "PcizfResult",
    "draw_symbols",
    "ci_matrix",
    "constructive_positions",
    "target_zf",
    "target_cizf",
    "target_masked",
    "build_precoder",
    "power_costs",
    "mask_to_bits",
    "bits_to_mask",
    "pcizf_search",
    "MAX_CI_TERMS",
]

MAX_CI_TERMS = 20
_CHUNK = 1 << 13


def draw_symbols(k: int, rng) -> np.ndarray:
    """Uniform i.i.d. BPSK symbols in ``{+1, -1}`` as floats."""
    if int(k) != k or k < 1:
        raise DimensionError(f"invalid symbol count {k}")
    gen = as_generator(rng)
    return np.where(gen.integers(0, 2, size=int(k)) == 1, 1.0, -1.0)


def _square(r, name="Gram matrix") -> np.ndarray:
    r = np.asarray(r)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 1:
        raise DimensionError(f"{name} must be square, got shape {r.shape}")
    return r


def ci_matrix(r, s) -> np.ndarray:
    """``G = diag(s) Re(R) diag(s)``."""
    r = _square(r)
    s = np.asarray(s, dtype=float)
    if s.shape != (r.shape[0],):
        raise DimensionError(f"symbols {s.shape} do not match Gram matrix {r.shape}")
    if not np.all(np.abs(s) == 1.0):
        raise ValueError("symbols must be +1 or -1")
    return s[:, None] * r.real * s[None, :]


def _offdiag(k: int) -> np.ndarray:
    return ~np.eye(k, dtype=bool)


def constructive_positions(g) -> list[tuple[int, int]]:
    """Off-diagonal positions with ``g_kj > 0``, row-major."""
    g = _square(g, "CI matrix")
    k = g.shape[0]
    return [(i, j) for i in range(k) for j in range(k) if i != j and g[i, j] > 0]


def target_zf(r) -> np.ndarray:
    """``T = I o R``: the diagonal of ``R``."""
    r = _square(r)
    return np.diag(np.diagonal(r)).astype(np.complex128)


def target_masked(r, mask, g=None) -> np.ndarray:
    """Target keeping ``rho_kj`` at masked positions and the full diagonal.

    When ``g`` is given, positions that are not constructive in ``g`` may
    not be masked.
    """
    r = _square(r)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != r.shape:
        raise DimensionError(f"mask {mask.shape} does not match Gram matrix {r.shape}")
    keep = mask & _offdiag(r.shape[0])
    if g is not None:
        g = np.asarray(g, dtype=float)
        if g.shape != r.shape:
            raise DimensionError(f"CI matrix {g.shape} does not match Gram matrix {r.shape}")
        bad = keep & ~(g > 0)
        if np.any(bad):
            raise MaskError(f"mask retains non-constructive positions {np.argwhere(bad).tolist()}")
    t = np.where(keep, r, 0).astype(np.complex128)
    t[np.diag_indices_from(t)] = np.diagonal(r)
    return t


def target_cizf(r, g):
    """CIZF target and the mask of retained constructive terms."""
    r = _square(r)
    g = np.asarray(g, dtype=float)
    if g.shape != r.shape:
        raise DimensionError(f"CI matrix {g.shape} does not match Gram matrix {r.shape}")
    mask = (g > 0) & _offdiag(r.shape[0])
    return target_masked(r, mask), mask


@dataclass(frozen=True)
class Precoder:
    """Precoding matrix ``w`` for target ``t`` and per-user power costs.

    ``cost[j]`` is the transmit power spent per unit of ``p_j``, the squared
    norm of column ``j`` of ``w``.
    """

    w: np.ndarray
    t: np.ndarray
    cost: np.ndarray


def _check_conditioning(r) -> None:
    cond = np.linalg.cond(r)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise ConditioningError(f"Gram matrix condition number {cond:.3e} exceeds {MAX_CONDITION:.0e}")


def build_precoder(h, r, t) -> Precoder:
    """``W = H^H R^-1 T`` for a square, well-conditioned channel."""
    h = validate_channel(h)
    r = _square(r)
    t = np.asarray(t, dtype=np.complex128)
    k, n_tx = h.shape
    if k != n_tx:
        raise DimensionError(f"precoding needs as many users as antennas, got {k}x{n_tx}")
    if r.shape != (k, k) or t.shape != (k, k):
        raise DimensionError(f"Gram {r.shape} / target {t.shape} do not match channel {h.shape}")
    _check_conditioning(r)
    w = h.conj().T @ np.linalg.solve(r, t)
    cost = np.sum(np.abs(w) ** 2, axis=0)
    return Precoder(w, t, cost)


def power_costs(r, t) -> np.ndarray:
    """Column costs ``c_j = t_j^H R^-1 t_j`` for one target or a batch.

    Equals the squared column norms of ``H^H R^-1 T`` because
    ``W^H W = T^H R^-1 T``.
    """
    rinv = np.linalg.inv(r)
    rinv = 0.5 * (rinv + rinv.conj().T)
    t = np.asarray(t)
    if t.ndim == 2:
        return np.einsum("ij,ik,kj->j", t.conj(), rinv, t).real
    return np.einsum("bij,ik,bkj->bj", t.conj(), rinv, t).real


def mask_to_bits(mask, g) -> str:
    """Serialize a mask as one character per constructive position of ``g``."""
    mask = np.asarray(mask, dtype=bool)
    return "".join("1" if mask[i, j] else "0" for i, j in constructive_positions(g))


def bits_to_mask(bits: str, g) -> np.ndarray:
    positions = constructive_positions(g)
    if len(bits) != len(positions) or set(bits) - {"0", "1"}:
        raise MaskError(f"bitstring {bits!r} does not fit {len(positions)} constructive positions")
    mask = np.zeros(np.shape(g), dtype=bool)
    for (i, j), b in zip(positions, bits):
        mask[i, j] = b == "1"
    return mask


@dataclass(frozen=True)
class PcizfResult:
    mask: np.ndarray
    bits: str
    allocation: "_power.PowerAllocation"
    value: float
    precoder: Precoder
    n_terms: int


def _objective_values(a, p, objective):
    sinr = np.einsum("bkj,bj->bk", a, p)
    rates = np.log2(1.0 + sinr)
    if objective == "throughput":
        return rates.sum(axis=1)
    if objective == "fairness":
        return rates.min(axis=1)
    raise ValueError(f"unknown objective {objective!r}")


def pcizf_search(
    h,
    r,
    g,
    p_tot,
    pa: str = "uniform",
    objective: str = "throughput",
    max_terms: int = MAX_CI_TERMS,
    tie_rtol: float | None = None,
    prefer: str = "fewer",
) -> PcizfResult:
    """Best subset of constructive cross terms, by exhaustive search.

    Every one of the ``2^m`` subsets of the ``m`` constructive positions of
    ``g`` is turned into a target, allocated power with policy ``pa`` and
    scored by ``objective`` (``throughput`` = sum rate, ``fairness`` = min
    rate).  Values within ``tie_rtol`` of the best are ties.  Ties go to
    the mask keeping fewer terms (``prefer="more"`` reverses this), then to
    the lexicographically smallest bitstring.

    Exact ties are common under optimized PA: once a user gets zero power,
    every cross term in its column of ``T`` is inert.  Preferring fewer
    terms reports only the terms that matter.
    """
    h = validate_channel(h)
    r = _square(r)
    g = np.asarray(g, dtype=float)
    if pa not in _power.POLICIES:
        raise ValueError(f"unknown power allocation policy {pa!r}")
    if prefer not in ("fewer", "more"):
        raise ValueError(f"prefer must be 'fewer' or 'more', got {prefer!r}")
    p_tot = float(p_tot)
    positions = constructive_positions(g)
    m = len(positions)
    if m > max_terms:
        raise CapacityError(f"{m} constructive terms exceed the enumeration guard of {max_terms}")
    _check_conditioning(r)
    if tie_rtol is None:
        tie_rtol = 1e-12 if pa == "uniform" else 10 * _power.ASCENT_TOL

    k = r.shape[0]
    rows = np.array([i for i, _ in positions], dtype=int)
    cols = np.array([j for _, j in positions], dtype=int)
    base = target_zf(r)
    n_masks = 1 << m
    values = np.empty(n_masks)
    shifts = np.arange(m - 1, -1, -1)  # first position is the most significant bit

    for start in range(0, n_masks, _CHUNK):
        ids = np.arange(start, min(start + _CHUNK, n_masks))
        bits = ((ids[:, None] >> shifts[None, :]) & 1).astype(bool)
        t = np.repeat(base[None], ids.size, axis=0)
        for n in range(m):
            t[bits[:, n], rows[n], cols[n]] = r[rows[n], cols[n]]
        cost = power_costs(r, t)
        a = np.abs(t) ** 2
        if pa == "uniform":
            p = np.repeat((p_tot / cost.sum(axis=1))[:, None], k, axis=1)
        elif pa == "max_throughput":
            p, _, _ = _power.ascent_throughput_batch(a, cost, p_tot)
        else:
            p = np.stack(
                [_power.maxmin_fairness(_power.SinrCoefficients(a[b], cost[b]), p_tot).p for b in range(ids.size)]
            )
        values[ids] = _objective_values(a, p, objective)

    best = values.max()
    tied = np.nonzero(values >= best - tie_rtol * max(1.0, abs(best)))[0]
    counts = np.array([bin(int(i)).count("1") for i in tied])
    target = counts.min() if prefer == "fewer" else counts.max()
    cand = tied[counts == target]
    # With the first position as the most significant bit, the smallest id
    # is the lexicographically smallest bitstring.
    winner = int(cand.min())

    bitstr = format(winner, f"0{m}b") if m else ""
    mask = np.zeros((k, k), dtype=bool)
    for (i, j), b in zip(positions, bitstr):
        mask[i, j] = b == "1"
    precoder = build_precoder(h, r, target_masked(r, mask, g))
    alloc = _power.allocate(precoder, p_tot, pa)
    coeff_a = np.abs(precoder.t) ** 2
    value = float(_objective_values(coeff_a[None], alloc.p[None], objective)[0])
    return PcizfResult(mask, bitstr, alloc, value, precoder, m)


def enumerate_masks(g):
    """All masks over the constructive positions of ``g``, smallest bitstring first."""
    positions = constructive_positions(g)
    k = np.shape(g)[0]
    for bits in itertools.product((False, True), repeat=len(positions)):
        mask = np.zeros((k, k), dtype=bool)
        for (i, j), b in zip(positions, bits):
            mask[i, j] = b
        yield mask
