"""Command-line driver: experiment sweeps, single-instance dumps and verification.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import metrics, oracles, power, precoding, sim
from .channel import RandomSource, channel_from_record, generate_rayleigh, gram
from .errors import CizfError, DimensionError, OutOfRangeError

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SWEEPS = ("pa-sweep", "pcizf-sweep", "selection-sweep", "pool-sweep")

log = logging.getLogger("cizf")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing


def parse_range(text: str) -> tuple:
    """``a:b:step`` (inclusive of ``b``) or a comma list of values."""
    try:
        if ":" in text:
            a, b, step = (float(x) for x in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            n = int(round((b - a) / step))
            return tuple(float(a + i * step) for i in range(n + 1) if a + i * step <= b + 1e-9 * step)
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid SNR grid {text!r}; use a:b:step or a comma list") from None


def parse_ints(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer list {text!r}") from None


def parse_schemes(text: str) -> tuple:
    try:
        return tuple(sim.SchemeSpec.parse(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sweep_args(p: argparse.ArgumentParser, selection_pa: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON file with experiment settings; flags override it")
    p.add_argument("--ntx", type=int, dest="n_tx")
    p.add_argument("--kpool", type=int, dest="k_pool")
    p.add_argument("--snr-db", type=parse_range, dest="snr_grid_db", metavar="A:B:STEP")
    p.add_argument("--pool-grid", type=parse_ints, dest="pool_grid", metavar="LIST")
    p.add_argument("--fixed-snr-db", type=float, dest="fixed_snr_db")
    p.add_argument("--trials", type=int, dest="n_trials")
    p.add_argument("--seed", type=int)
    p.add_argument("--capped", action="store_true", default=None, help="cap per-user rates at one bit (BPSK)")
    p.add_argument("--sus-alpha", type=float, dest="sus_alpha")
    p.add_argument("--spus-buffer", choices=("cumulative", "pairwise"), dest="spus_buffer")
    p.add_argument("--schemes", type=parse_schemes, metavar="LIST", help="comma list of precoder/pa/selection")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path, help="CSV path; a JSON sidecar is written next to it")
    p.add_argument("--target-rate", type=float, help="rate at which dB gaps are read off")
    if selection_pa:
        p.add_argument("--pa", choices=power.POLICIES, default="max_throughput")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cizf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _sweep_args(sub.add_parser("pa-sweep", help="ZF and CIZF under uniform and optimized power allocation"))
    _sweep_args(sub.add_parser("pcizf-sweep", help="P-CIZF against CIZF with CI-term retention"))
    _sweep_args(sub.add_parser("selection-sweep", help="user selection rules over an SNR sweep"), selection_pa=True)
    _sweep_args(sub.add_parser("pool-sweep", help="user selection rules over pool sizes"))

    demo = sub.add_parser("demo", help="dump every intermediate quantity for one instance")
    src = demo.add_mutually_exclusive_group()
    src.add_argument("--instance", type=Path, help="JSON with k, n_tx, re, im, s and optional snr_db")
    src.add_argument("--seed", type=int, default=7)
    demo.add_argument("--ntx", type=int, default=4, dest="n_tx")
    demo.add_argument("--snr-db", type=float, dest="snr_db")
    demo.add_argument("--out", type=Path)

    ver = sub.add_parser("verify", help="run the oracle suite")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--checks", type=lambda t: tuple(t.split(",")), help="comma list of check names")
    ver.add_argument("--out", type=Path)
    ver.add_argument("--inject-fault", choices=("waterfill",), help=argparse.SUPPRESS)
    return parser


# ------------------------------------------------------------------ sweeps


def _config(args) -> sim.ExperimentConfig:
    kw = {}
    if args.command == "selection-sweep":
        kw["pa"] = args.pa
    cfg = sim.PRESETS[args.command](**kw)
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
    for key in ("n_tx", "k_pool", "snr_grid_db", "pool_grid", "fixed_snr_db", "n_trials", "seed",
                "capped", "sus_alpha", "spus_buffer", "schemes"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    try:
        merged = {**cfg.to_dict(), **data}
        return sim.ExperimentConfig.from_dict(merged).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _metric(cfg) -> str:
    return "mean_min_rate" if any(s.pa == "max_fairness" for s in cfg.schemes) else "mean_per_user_rate"


def _table(result: sim.SweepResult, metric: str) -> str:
    cfg = result.config
    names = [s.name for s in cfg.schemes]
    width = max(12, *(len(n) for n in names))
    head = f"{cfg.grid_kind:>8} " + " ".join(f"{n:>{width}}" for n in names)
    lines = [f"{metric} over {cfg.n_trials} trials (seed {cfg.seed})", head]
    for gv in cfg.grid:
        cells = []
        for n in names:
            try:
                cells.append(f"{getattr(result.row(n, gv), metric):>{width}.4f}")
            except KeyError:
                cells.append(f"{'-':>{width}}")
        lines.append(f"{gv:>8g} " + " ".join(cells))
    return "\n".join(lines)


def _gap_pairs(cfg) -> list:
    names = {s.name: s for s in cfg.schemes}
    pairs = []
    for s in cfg.schemes:
        if s.pa != "uniform" and s.precoder != "pcizf":
            base = f"{s.precoder}/uniform/{s.selection}"
            if base in names:
                pairs.append((s.name, base))
        if s.precoder == "pcizf":
            base = f"cizf/{s.pa}/{s.selection}"
            if base in names:
                pairs.append((s.name, base))
        if s.precoder == "cizf" and s.pa == "uniform":
            base = f"zf/uniform/{s.selection}"
            if base in names:
                pairs.append((s.name, base))
        if s.selection == "optimal":
            for other in ("spus", "sus", "random"):
                peer = f"{s.precoder}/{s.pa}/{other}"
                if peer in names:
                    pairs.append((s.name, peer))
    return pairs


def _gaps(result: sim.SweepResult, metric: str, target: float) -> list:
    lines = []
    for a, b in _gap_pairs(result.config):
        try:
            gap = sim.db_gain_at_rate(result.curve(a, metric), result.curve(b, metric), target)
            lines.append(f"gap {a} vs {b} at {target:g}: {gap:+.3f} dB")
        except (OutOfRangeError, ValueError) as exc:
            lines.append(f"gap {a} vs {b} at {target:g}: n/a ({exc})")
    return lines


def _retention(result: sim.SweepResult) -> list:
    lines = []
    for s in result.config.schemes:
        if s.precoder != "pcizf":
            continue
        vals = [r.mean_retention_pct for r in result.rows if r.scheme == s.name and r.mean_retention_pct is not None]
        if vals:
            lines.append(f"retention {s.name}: mean {float(np.mean(vals)):.1f}% over {len(vals)} points")
    return lines


def run_sweep_command(args, out=print) -> int:
    cfg = _config(args)
    if args.workers < 1:
        raise UsageError("--workers must be at least 1")
    result = sim.run_sweep(cfg, workers=args.workers)
    path = args.out or Path("results") / f"{args.command}.csv"
    sim.write_csv(result, path)
    sim.write_sidecar(result, path.with_suffix(".json"))
    metric = _metric(cfg)
    if cfg.grid_kind == "snr":
        target = args.target_rate if args.target_rate is not None else (0.5 if metric == "mean_min_rate" else 0.8)
    else:
        target = None
    out(_table(result, metric))
    if target is not None:
        for line in _gaps(result, metric, target):
            out(line)
    for line in _retention(result):
        out(line)
    out(f"wrote {path}")
    if result.partial:
        out(f"sweep aborted, partial results flagged: {result.error}")
        return EXIT_NUMERIC
    return EXIT_OK


# -------------------------------------------------------------------- demo


def _fmt_num(x) -> str:
    x = complex(x)
    re = 0.0 if abs(x.real) < 5e-7 else x.real
    im = 0.0 if abs(x.imag) < 5e-7 else x.imag
    if im == 0.0:
        return f"{re:+.6f}"
    return f"{re:+.6f}{im:+.6f}j"


def _fmt_matrix(name: str, m) -> list:
    m = np.atleast_2d(np.asarray(m))
    cells = [[_fmt_num(v) for v in row] for row in m]
    width = max(len(c) for row in cells for c in row)
    return [f"{name} =", *("  [" + "  ".join(c.rjust(width) for c in row) + "]" for row in cells)]


def _fmt_vector(name: str, v) -> str:
    return f"{name} = [" + "  ".join(_fmt_num(x) for x in np.ravel(v)) + "]"


def load_instance(path: Path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read instance {path}: {exc}") from exc
    try:
        h = channel_from_record(data)
        s = np.asarray(data["s"], dtype=float)
    except (KeyError, TypeError, ValueError, DimensionError) as exc:
        raise UsageError(f"malformed instance {path}: {exc}") from exc
    return h, s, data.get("snr_db")


def demo_lines(h, s, snr_db: float) -> list:
    """Every intermediate quantity of the ZF, CIZF and P-CIZF pipelines."""
    h = np.asarray(h, dtype=complex)
    p_tot = power.db_to_linear(snr_db)
    r = gram(h)
    g = precoding.ci_matrix(r, s)
    positions = precoding.constructive_positions(g)
    lines = [f"instance: K={h.shape[0]} users, N_t={h.shape[1]} antennas, P_tot={snr_db:g} dB ({p_tot:.6f})"]
    lines += _fmt_matrix("H", h)
    lines += _fmt_matrix("R = H H^H", r)
    lines.append(_fmt_vector("s", s))
    lines += _fmt_matrix("G = diag(s) Re(R) diag(s)", g)
    lines.append(f"constructive positions (m={len(positions)}): {positions}")
    t_zf = precoding.target_zf(r)
    t_ci, mask = precoding.target_cizf(r, g)
    for label, t in (("ZF", t_zf), ("CIZF", t_ci)):
        pre = precoding.build_precoder(h, r, t)
        lines.append("")
        lines.append(f"== {label}")
        lines += _fmt_matrix("T", t)
        lines += _fmt_matrix("W = H^H R^-1 T", pre.w)
        lines.append(_fmt_vector("cost ||w_j||^2", pre.cost))
        lines.append(f"  {'policy':<15} {'p':<40} {'sinr':<40} sum_rate  min_rate")
        for pa in power.POLICIES:
            alloc = power.allocate(pre, p_tot, pa)
            rep = metrics.rate_report(metrics.sinr_ci(t, alloc.p))
            p_txt = " ".join(f"{x:.6f}" for x in alloc.p)
            s_txt = " ".join(f"{x:.6f}" for x in rep.sinr)
            lines.append(f"  {pa:<15} {p_txt:<40} {s_txt:<40} {rep.sum_rate:.6f}  {rep.min_rate:.6f}")
    lines.append("")
    lines.append("== P-CIZF")
    for pa in ("uniform", "max_throughput"):
        res = precoding.pcizf_search(h, r, g, p_tot, pa=pa)
        ret = metrics.retention(res.mask, g)
        pct = "n/a" if ret.percentage is None else f"{ret.percentage:.1f}%"
        lines.append(f"  {pa:<15} mask={res.bits or '-'} kept {ret.retained}/{ret.total} ({pct}) sum_rate={res.value:.6f}")
    return lines


def run_demo(args, out=print) -> int:
    if args.instance is not None:
        h, s, snr = load_instance(args.instance)
    else:
        if args.n_tx < 1:
            raise UsageError("--ntx must be at least 1")
        gen = RandomSource(args.seed, 0).generator()
        h = generate_rayleigh(args.n_tx, args.n_tx, gen)
        s = precoding.draw_symbols(args.n_tx, gen)
        snr = None
    snr_db = args.snr_db if args.snr_db is not None else (10.0 if snr is None else float(snr))
    try:
        text = "\n".join(demo_lines(h, s, snr_db)) + "\n"
    except (DimensionError, ValueError) as exc:
        raise UsageError(f"invalid instance: {exc}") from exc
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text)
    out(text.rstrip("\n"))
    return EXIT_OK


# ------------------------------------------------------------------ verify


def run_verify(args, out=print) -> int:
    names = args.checks or tuple(oracles.CHECKS)
    unknown = [n for n in names if n not in oracles.CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; available: {sorted(oracles.CHECKS)}")
    restore = None
    if args.inject_fault == "waterfill":
        # Negative control: a water level 5% too high must be caught.
        restore = power._water_level
        power._water_level = lambda floors, p_tot: restore(floors, p_tot) * 1.05
    lines: list[str] = []

    def report(line):
        lines.append(line)
        out(line)

    try:
        results = oracles.run_checks(names, seed=args.seed, report=report)
    finally:
        if restore is not None:
            power._water_level = restore
    failed = [r.name for r in results if not r.passed]
    summary = f"{len(results) - len(failed)}/{len(results)} checks passed"
    if failed:
        summary += "; failed: " + ", ".join(failed)
    report(summary)
    if args.out is not None:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text("\n".join(lines) + "\n")
    return EXIT_VERIFY if failed else EXIT_OK


_VALUE_FLAGS = ("--snr-db", "--fixed-snr-db", "--target-rate")


def _attach_values(argv: list) -> list:
    # argparse treats "-10:20:2" as an option; bind such values to their flag.
    out, i = [], 0
    while i < len(argv):
        if argv[i] in _VALUE_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(_attach_values(list(sys.argv[1:] if argv is None else argv)))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in SWEEPS:
            return run_sweep_command(args)
        if args.command == "demo":
            return run_demo(args)
        return run_verify(args)
    except UsageError as exc:
        print(f"cizf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CizfError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"cizf: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
