"""Monte Carlo experiment engine.

A sweep runs ``n_trials`` independent trials.  Trial ``t`` draws one pool
channel, one BPSK symbol per pool user and one random-priority vector from
stream ``(seed, t)``; those draws are shared by every scheme and every
grid point (paired comparison with common random numbers).  For pool-size
sweeps the pool of size ``k`` is the first ``k`` users of the largest pool.

Each scheme is a ``precoder/pa/selection`` triple, e.g.
``cizf/max_throughput/spus``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import metrics, power, precoding, selection
from .channel import RandomSource, generate_rayleigh, gram, submatrix
from .errors import CizfError, ConditioningError, DominanceError, OutOfRangeError

log = logging.getLogger(__name__)

__all__ = [
    "SchemeSpec",
    "ExperimentConfig",
    "TrialRecord",
    "SweepRow",
    "SweepResult",
    "run_trial",
    "run_trial_points",
    "run_trials",
    "run_sweep",
    "aggregate",
    "db_gain_at_rate",
    "write_csv",
    "write_sidecar",
    "CSV_HEADER",
    "PRECODERS",
    "SELECTIONS",
]

PRECODERS = ("zf", "cizf", "pcizf")
SELECTIONS = ("none",) + selection.METHODS
CSV_HEADER = (
    "scheme", "precoder", "pa", "selection", "grid_kind", "grid_value",
    "mean_per_user_rate", "mean_min_rate", "mean_retention_pct",
    "std_error", "n_trials", "seed",
)
DOMINANCE_RTOL = 1e-7
_MAX_REDRAWS = 20


@dataclass(frozen=True)
class SchemeSpec:
    precoder: str
    pa: str
    selection: str = "none"

    def __post_init__(self):
        if self.precoder not in PRECODERS:
            raise ValueError(f"unknown precoder {self.precoder!r}; expected one of {PRECODERS}")
        if self.pa not in power.POLICIES:
            raise ValueError(f"unknown power allocation {self.pa!r}; expected one of {power.POLICIES}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"unknown selection {self.selection!r}; expected one of {SELECTIONS}")

    @property
    def name(self) -> str:
        return f"{self.precoder}/{self.pa}/{self.selection}"

    @classmethod
    def parse(cls, text: str) -> "SchemeSpec":
        parts = text.strip().split("/")
        if len(parts) == 2:
            parts.append("none")
        if len(parts) != 3:
            raise ValueError(f"scheme {text!r} is not of the form precoder/pa[/selection]")
        return cls(*parts)


def _as_schemes(items) -> tuple:
    return tuple(s if isinstance(s, SchemeSpec) else SchemeSpec.parse(s) for s in items)


@dataclass(frozen=True)
class ExperimentConfig:
    n_tx: int = 4
    k_pool: int = 4
    snr_grid_db: tuple = tuple(float(x) for x in range(-10, 21, 2))
    pool_grid: Optional[tuple] = None
    fixed_snr_db: Optional[float] = None
    n_trials: int = 100
    seed: int = 42
    schemes: tuple = ()
    capped: bool = False
    sus_alpha: float = selection.SUS_ALPHA
    spus_buffer: str = "cumulative"
    check_dominance: bool = True

    def __post_init__(self):
        object.__setattr__(self, "schemes", _as_schemes(self.schemes))
        object.__setattr__(self, "snr_grid_db", tuple(float(x) for x in self.snr_grid_db))
        if self.pool_grid is not None:
            object.__setattr__(self, "pool_grid", tuple(int(x) for x in self.pool_grid))

    @property
    def grid_kind(self) -> str:
        return "pool" if self.pool_grid is not None else "snr"

    @property
    def grid(self) -> tuple:
        return self.pool_grid if self.grid_kind == "pool" else self.snr_grid_db

    @property
    def k_max(self) -> int:
        return max(self.pool_grid) if self.grid_kind == "pool" else self.k_pool

    def point(self, grid_value):
        """``(k_pool, snr_db)`` for one grid value."""
        if self.grid_kind == "pool":
            return int(grid_value), float(self.fixed_snr_db)
        return self.k_pool, float(grid_value)

    def validate(self) -> "ExperimentConfig":
        if self.n_tx < 1:
            raise ValueError("n_tx must be at least 1")
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if not self.schemes:
            raise ValueError("no schemes configured")
        if not 0 < self.sus_alpha < 1:
            raise ValueError("sus_alpha must lie in (0, 1)")
        if self.spus_buffer not in ("cumulative", "pairwise"):
            raise ValueError(f"unknown spus_buffer {self.spus_buffer!r}")
        if self.grid_kind == "pool":
            if not self.pool_grid:
                raise ValueError("pool_grid is empty")
            if self.fixed_snr_db is None:
                raise ValueError("pool sweeps need fixed_snr_db")
            pools = self.pool_grid
        else:
            if not self.snr_grid_db:
                raise ValueError("snr_grid_db is empty")
            pools = (self.k_pool,)
        if min(pools) < self.n_tx:
            raise ValueError(f"pool size {min(pools)} is smaller than n_tx={self.n_tx}")
        for s in self.schemes:
            if s.selection == "none" and max(pools) > self.n_tx:
                raise ValueError(f"scheme {s.name} needs a selection rule when the pool exceeds n_tx")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schemes"] = [s.name for s in self.schemes]
        d["snr_grid_db"] = list(self.snr_grid_db)
        d["pool_grid"] = None if self.pool_grid is None else list(self.pool_grid)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


@dataclass(frozen=True)
class TrialRecord:
    scheme: str
    grid_value: float
    trial: int
    per_user_rate: float
    min_rate: float
    sum_rate: float
    retention_pct: Optional[float]
    users: tuple


@dataclass(frozen=True)
class _Draw:
    h: np.ndarray
    s: np.ndarray
    priority: np.ndarray


def _draw(gen, cfg: ExperimentConfig) -> _Draw:
    h = generate_rayleigh(cfg.k_max, cfg.n_tx, gen)
    s = precoding.draw_symbols(cfg.k_max, gen)
    prio = gen.random(cfg.k_max)
    return _Draw(h, s, prio)


def _tol(v: float) -> float:
    return DOMINANCE_RTOL * max(1.0, abs(v))


def _objective(pa: str, a, p) -> float:
    sinr = a @ p
    if pa == "max_fairness":
        return float(np.min(sinr))
    return metrics.sum_rate(sinr)


class _Point:
    """Evaluation of every scheme at one grid point of one trial."""

    def __init__(self, cfg: ExperimentConfig, draw: _Draw, k_pool: int, snr_db: float):
        self.cfg = cfg
        self.h = draw.h[:k_pool]
        self.s = draw.s[:k_pool]
        self.prio = draw.priority[:k_pool]
        self.p_tot = power.db_to_linear(snr_db)
        self._r_pool = None
        self._sel: dict = {}

    def users(self, method: str) -> tuple:
        if method not in self._sel:
            n = self.cfg.n_tx
            if method == "none":
                users = tuple(range(n))
            elif method == "random":
                users = tuple(int(u) for u in np.argsort(self.prio, kind="stable")[:n])
            elif method == "spus":
                if self._r_pool is None:
                    self._r_pool = gram(self.h)
                g = precoding.ci_matrix(self._r_pool, self.s)
                users = selection.select_spus(g, n, self.cfg.spus_buffer).users
            elif method == "sus":
                users = selection.select_sus(self.h, n, self.cfg.sus_alpha).users
            else:
                users = selection.select_optimal(self.h, self.s, n, self.p_tot).users
            self._sel[method] = users
        return self._sel[method]

    def evaluate(self, scheme: SchemeSpec):
        users = self.users(scheme.selection)
        hs = submatrix(self.h, users)
        ss = self.s[list(users)]
        r = gram(hs)
        g = precoding.ci_matrix(r, ss)
        mask = None
        if scheme.precoder == "zf":
            pre = precoding.build_precoder(hs, r, precoding.target_zf(r))
            alloc = power.allocate(pre, self.p_tot, scheme.pa)
        elif scheme.precoder == "cizf":
            t, mask = precoding.target_cizf(r, g)
            pre = precoding.build_precoder(hs, r, t)
            alloc = power.allocate(pre, self.p_tot, scheme.pa)
        else:
            objective = "fairness" if scheme.pa == "max_fairness" else "throughput"
            res = precoding.pcizf_search(hs, r, g, self.p_tot, pa=scheme.pa, objective=objective)
            pre, alloc, mask = res.precoder, res.allocation, res.mask
        sinr = metrics.sinr_ci(pre.t, alloc.p)
        report = metrics.rate_report(sinr, self.cfg.capped)
        pct = None if mask is None else metrics.retention(mask, g).percentage
        if self.cfg.check_dominance:
            self._check(scheme, hs, r, g, pre, alloc)
        return report, pct, users

    def _check(self, scheme, hs, r, g, pre, alloc):
        a = np.abs(pre.t) ** 2
        value = _objective(scheme.pa, a, alloc.p)
        if scheme.pa != "uniform":
            base = _objective(scheme.pa, a, power.uniform_power(pre, self.p_tot).p)
            if value < base - _tol(base):
                raise DominanceError(f"{scheme.name}: optimized PA {value!r} below uniform PA {base!r}")
        if scheme.precoder == "pcizf":
            t, _ = precoding.target_cizf(r, g)
            full = precoding.build_precoder(hs, r, t)
            ref = _objective(scheme.pa, np.abs(t) ** 2, power.allocate(full, self.p_tot, scheme.pa).p)
            if value < ref - _tol(ref):
                raise DominanceError(f"{scheme.name}: P-CIZF {value!r} below CIZF {ref!r}")
        if "optimal" in self._sel:
            opt = selection.selection_objective(self.h, self.s, self._sel["optimal"], self.p_tot)
            for method in ("spus", "sus"):
                if method in self._sel:
                    other = selection.selection_objective(self.h, self.s, self._sel[method], self.p_tot)
                    if opt < other - _tol(other):
                        raise DominanceError(f"optimal selection {opt!r} below {method} {other!r}")


def run_trial_points(cfg: ExperimentConfig, trial_index: int, grid_values=None) -> list:
    """All scheme records of one trial over ``grid_values`` (default: the full grid).

    An ill-conditioned selected channel makes the trial redraw from the
    same stream; this is logged and deterministic.
    """
    grid_values = cfg.grid if grid_values is None else tuple(grid_values)
    gen = RandomSource(cfg.seed, int(trial_index)).generator()
    for attempt in range(_MAX_REDRAWS):
        draw = _draw(gen, cfg)
        try:
            out = []
            for gv in grid_values:
                k_pool, snr_db = cfg.point(gv)
                pt = _Point(cfg, draw, k_pool, snr_db)
                for scheme in cfg.schemes:
                    report, pct, users = pt.evaluate(scheme)
                    out.append(
                        TrialRecord(
                            scheme.name, float(gv), int(trial_index), report.per_user_rate,
                            report.min_rate, report.sum_rate, pct, users,
                        )
                    )
            return out
        except ConditioningError as exc:
            log.info("trial %d: redrawing after ill-conditioned channel (%s)", trial_index, exc)
    raise ConditioningError(f"trial {trial_index}: no well-conditioned draw in {_MAX_REDRAWS} attempts")


def run_trial(cfg: ExperimentConfig, grid_point, trial_index: int) -> list:
    """Records of every scheme for one grid point of one trial."""
    return run_trial_points(cfg, trial_index, (grid_point,))


def _trial_job(args):
    cfg, t = args
    try:
        return t, run_trial_points(cfg, t), None
    except CizfError as exc:
        return t, None, f"trial {t}: {type(exc).__name__}: {exc}"


def run_trials(cfg: ExperimentConfig, indices: Iterable[int], workers: int = 1):
    """Run trials and return ``(records, error)``.

    Records are ordered by trial index.  On the first failing trial the
    records of all earlier trials are returned together with the error
    message; later trials are discarded so the result does not depend on
    scheduling.
    """
    indices = list(indices)
    jobs = [(cfg, t) for t in indices]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = []
        for job in jobs:
            results.append(_trial_job(job))
            if results[-1][2] is not None:
                break
    records, error = [], None
    for t, recs, err in sorted(results, key=lambda x: x[0]):
        if err is not None:
            error = err
            break
        records.extend(recs)
    return records, error


@dataclass(frozen=True)
class SweepRow:
    scheme: str
    precoder: str
    pa: str
    selection: str
    grid_kind: str
    grid_value: float
    mean_per_user_rate: float
    mean_min_rate: float
    mean_retention_pct: Optional[float]
    std_error: float
    n_trials: int
    seed: int
    mean_sum_rate: float = field(default=float("nan"), compare=False)
    min_rate_std_error: float = field(default=float("nan"), compare=False)


@dataclass(frozen=True)
class SweepResult:
    config: ExperimentConfig
    rows: tuple
    partial: bool = False
    error: Optional[str] = None

    def row(self, scheme: str, grid_value) -> SweepRow:
        for r in self.rows:
            if r.scheme == scheme and r.grid_value == float(grid_value):
                return r
        raise KeyError((scheme, grid_value))

    def curve(self, scheme: str, metric: str = "mean_per_user_rate"):
        """``(grid, values)`` arrays for one scheme."""
        rows = [r for r in self.rows if r.scheme == scheme]
        x = np.array([r.grid_value for r in rows])
        y = np.array([getattr(r, metric) for r in rows], dtype=float)
        return x, y


def _mean(values) -> float:
    return math.fsum(values) / len(values)


def _std_error(values) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    m = _mean(values)
    var = math.fsum((v - m) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def aggregate(cfg: ExperimentConfig, records: Sequence[TrialRecord], partial=False, error=None) -> SweepResult:
    """Per scheme and grid point means over trials.

    Sums use ``math.fsum``, which is exactly rounded and so independent of
    record order.
    """
    groups: dict = {}
    for rec in records:
        groups.setdefault((rec.scheme, rec.grid_value), []).append(rec)
    rows = []
    for scheme in cfg.schemes:
        for gv in cfg.grid:
            recs = groups.get((scheme.name, float(gv)))
            if not recs:
                continue
            rates = [r.per_user_rate for r in recs]
            mins = [r.min_rate for r in recs]
            pcts = [r.retention_pct for r in recs if r.retention_pct is not None]
            rows.append(
                SweepRow(
                    scheme=scheme.name,
                    precoder=scheme.precoder,
                    pa=scheme.pa,
                    selection=scheme.selection,
                    grid_kind=cfg.grid_kind,
                    grid_value=float(gv),
                    mean_per_user_rate=_mean(rates),
                    mean_min_rate=_mean(mins),
                    mean_retention_pct=_mean(pcts) if pcts else None,
                    std_error=_std_error(rates),
                    n_trials=len(recs),
                    seed=cfg.seed,
                    mean_sum_rate=_mean([r.sum_rate for r in recs]),
                    min_rate_std_error=_std_error(mins),
                )
            )
    return SweepResult(cfg, tuple(rows), partial, error)


def run_sweep(cfg: ExperimentConfig, workers: int = 1, trials: Optional[Iterable[int]] = None) -> SweepResult:
    """Run and aggregate a sweep.

    A hard error in any trial stops the sweep; the returned result then
    aggregates the completed trials and is flagged ``partial``.
    """
    cfg.validate()
    indices = range(cfg.n_trials) if trials is None else trials
    records, error = run_trials(cfg, indices, workers)
    if error is not None:
        log.error("sweep aborted: %s", error)
    return aggregate(cfg, records, partial=error is not None, error=error)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in result.rows:
        w.writerow([_fmt(getattr(row, col)) for col in CSV_HEADER])
    return buf.getvalue()


def write_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(result))
    return path


def write_sidecar(result: SweepResult, path) -> Path:
    """JSON provenance next to the CSV: full config and completion status."""
    path = Path(path)
    doc = {
        "config": result.config.to_dict(),
        "partial": result.partial,
        "error": result.error,
        "rows": len(result.rows),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _crossing(snr, rate, target) -> float:
    snr = np.asarray(snr, dtype=float)
    rate = np.asarray(rate, dtype=float)
    if snr.shape != rate.shape or snr.size < 2:
        raise ValueError("a curve needs matching grid and value arrays with at least two points")
    if np.any(np.diff(snr) <= 0):
        raise ValueError("curve grid must be strictly increasing")
    if np.any(np.diff(rate) < 0):
        raise ValueError("curve values must be nondecreasing in SNR")
    if not rate[0] <= target <= rate[-1]:
        raise OutOfRangeError(f"target {target} outside curve range [{rate[0]}, {rate[-1]}]")
    i = int(np.searchsorted(rate, target, side="left"))
    if i == 0:
        return float(snr[0])
    x0, x1, y0, y1 = snr[i - 1], snr[i], rate[i - 1], rate[i]
    return float(x0 + (target - y0) * (x1 - x0) / (y1 - y0))


def db_gain_at_rate(curve_a, curve_b, target_rate: float) -> float:
    """Horizontal gap ``SNR_b - SNR_a`` in dB at which both curves reach ``target_rate``.

    Curves are ``(snr_db, rate)`` pairs.  Positive values mean ``a`` gets
    there with less power.
    """
    return _crossing(*curve_b, target_rate) - _crossing(*curve_a, target_rate)


# Presets for the standard comparisons; keyword arguments override fields.

def pa_sweep_config(**kw) -> ExperimentConfig:
    base = dict(
        n_tx=4, k_pool=4, snr_grid_db=tuple(float(x) for x in range(-10, 21)), n_trials=100,
        schemes=("zf/uniform/none", "zf/max_throughput/none", "cizf/uniform/none", "cizf/max_throughput/none"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def pcizf_sweep_config(**kw) -> ExperimentConfig:
    base = dict(
        n_tx=4, k_pool=4, snr_grid_db=(-5.0, 0.0, 5.0, 10.0, 15.0, 20.0), n_trials=100,
        schemes=("cizf/uniform/none", "pcizf/uniform/none", "cizf/max_throughput/none", "pcizf/max_throughput/none"),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def selection_sweep_config(pa: str = "max_throughput", **kw) -> ExperimentConfig:
    base = dict(
        n_tx=4, k_pool=12, snr_grid_db=tuple(float(x) for x in range(-15, 16)), n_trials=100,
        schemes=tuple(f"cizf/{pa}/{m}" for m in ("optimal", "spus", "sus", "random")),
    )
    base.update(kw)
    return ExperimentConfig(**base)


def pool_sweep_config(**kw) -> ExperimentConfig:
    base = dict(
        n_tx=4, pool_grid=(4, 6, 8, 10, 12), fixed_snr_db=15.0, n_trials=100,
        schemes=tuple(f"cizf/max_throughput/{m}" for m in ("optimal", "spus", "sus", "random")),
    )
    base.update(kw)
    return ExperimentConfig(**base)


PRESETS = {
    "pa-sweep": pa_sweep_config,
    "pcizf-sweep": pcizf_sweep_config,
    "selection-sweep": selection_sweep_config,
    "pool-sweep": pool_sweep_config,
}
