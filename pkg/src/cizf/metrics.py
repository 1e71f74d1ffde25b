"""SINR, spectral-efficiency and CI-retention metrics.

Noise power is normalized to one, so an SINR is just received signal
power.  The BPSK cap (one bit per channel use) is applied only when
reporting rates, never inside power optimization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError

__all__ = [
    "RateReport",
    "RetentionStat",
    "BPSK_CAP",
    "sinr_zf",
    "sinr_ci",
    "rate_report",
    "retention",
    "sum_rate",
]

BPSK_CAP = 1.0


def _powers(p) -> np.ndarray:
    return np.asarray(getattr(p, "p", p), dtype=float)


def sinr_zf(t, p) -> np.ndarray:
    """Per-user ``|tau_kk|^2 p_k``; cross terms in ``t`` are ignored."""
    t = np.asarray(t)
    p = _powers(p)
    return np.abs(np.diagonal(t)) ** 2 * p


def sinr_ci(t, p) -> np.ndarray:
    """Per-user ``sum_j |tau_kj|^2 p_j``.

    Every retained cross term adds power; there is no destructive term in
    the denominator because non-constructive terms are zero in ``t``.
    """
    t = np.asarray(t)
    p = _powers(p)
    if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[1] != p.shape[0]:
        raise DimensionError(f"target {t.shape} does not match powers {p.shape}")
    return (np.abs(t) ** 2) @ p


def sum_rate(sinr) -> float:
    return float(np.sum(np.log2(1.0 + np.asarray(sinr, dtype=float))))


@dataclass(frozen=True)
class RateReport:
    sinr: np.ndarray
    rate: np.ndarray
    sum_rate: float
    min_rate: float
    per_user_rate: float
    # True where the BPSK cap clipped that user's rate.
    capped: np.ndarray

    def to_dict(self) -> dict:
        return {
            "sinr": self.sinr.tolist(),
            "rate": self.rate.tolist(),
            "sum_rate": self.sum_rate,
            "min_rate": self.min_rate,
            "per_user_rate": self.per_user_rate,
            "capped": self.capped.tolist(),
        }


def rate_report(sinr, capped: bool = False) -> RateReport:
    """Shannon rates ``log2(1 + sinr)``, optionally capped at one bit."""
    sinr = np.asarray(sinr, dtype=float)
    if sinr.ndim != 1 or sinr.size == 0:
        raise DimensionError(f"sinr must be a non-empty vector, got shape {sinr.shape}")
    if np.any(sinr < 0) or not np.all(np.isfinite(sinr)):
        raise ValueError("sinr must be finite and nonnegative")
    rate = np.log2(1.0 + sinr)
    clipped = np.zeros(sinr.shape, dtype=bool)
    if capped:
        clipped = rate > BPSK_CAP
        rate = np.minimum(rate, BPSK_CAP)
    total = float(np.sum(rate))
    return RateReport(
        sinr=sinr,
        rate=rate,
        sum_rate=total,
        min_rate=float(np.min(rate)),
        per_user_rate=total / sinr.size,
        capped=clipped,
    )


@dataclass(frozen=True)
class RetentionStat:
    retained: int
    total: int
    percentage: Optional[float]

    def to_dict(self) -> dict:
        return {"retained": self.retained, "total": self.total, "percentage": self.percentage}


def retention(mask, g) -> RetentionStat:
    """Share of constructive cross terms of ``g`` that ``mask`` keeps.

    ``percentage`` is ``None`` when ``g`` has no constructive terms.
    """
    mask = np.asarray(mask, dtype=bool)
    g = np.asarray(g, dtype=float)
    if mask.shape != g.shape:
        raise DimensionError(f"mask {mask.shape} does not match CI matrix {g.shape}")
    off = ~np.eye(g.shape[0], dtype=bool)
    constructive = off & (g > 0)
    if np.any(mask & off & ~constructive):
        raise ValueError("mask retains non-constructive positions")
    total = int(np.count_nonzero(constructive))
    kept = int(np.count_nonzero(mask & constructive))
    pct = 100.0 * kept / total if total else None
    return RetentionStat(kept, total, pct)
