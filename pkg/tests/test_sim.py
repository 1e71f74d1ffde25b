import csv
import json
import logging

import numpy as np
import pytest

from cizf import power, sim
from cizf.errors import OutOfRangeError
from cizf.sim import ExperimentConfig, SchemeSpec


def small(**kw):
    base = dict(n_tx=4, k_pool=4, snr_grid_db=(0.0, 10.0), n_trials=6, seed=3,
                schemes=("zf/uniform", "cizf/uniform", "cizf/max_throughput", "pcizf/uniform"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_scheme_spec():
    s = SchemeSpec.parse("cizf/max_throughput/spus")
    assert (s.precoder, s.pa, s.selection) == ("cizf", "max_throughput", "spus")
    assert s.name == "cizf/max_throughput/spus"
    assert SchemeSpec.parse("zf/uniform").selection == "none"
    for bad in ("qr/uniform", "zf/greedy", "zf/uniform/best", "zf"):
        with pytest.raises(ValueError):
            SchemeSpec.parse(bad)


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_trials=0),
        dict(k_pool=3),
        dict(k_pool=6),
        dict(snr_grid_db=()),
        dict(schemes=()),
        dict(sus_alpha=1.5),
        dict(pool_grid=(4, 6), schemes=("cizf/uniform/spus",)),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small(**kw).validate()


def test_config_round_trip():
    cfg = sim.pool_sweep_config(n_trials=3)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"unknown": 1})


def test_run_trial_deterministic():
    cfg = small()
    a = sim.run_trial(cfg, 10.0, 4)
    b = sim.run_trial(cfg, 10.0, 4)
    assert a == b
    assert [r.scheme for r in a] == [s.name for s in cfg.schemes]


def test_paired_trials_share_draws():
    cfg = small(n_trials=1)
    recs = {r.scheme: r for r in sim.run_trial(cfg, 10.0, 0)}
    # Same draw: CIZF never loses to ZF and P-CIZF never loses to CIZF under uniform PA.
    assert recs["cizf/uniform/none"].sum_rate >= recs["zf/uniform/none"].sum_rate
    assert recs["pcizf/uniform/none"].sum_rate >= recs["cizf/uniform/none"].sum_rate - 1e-9


def test_single_trial_aggregation():
    cfg = small(n_trials=1, snr_grid_db=(5.0,))
    res = sim.run_sweep(cfg)
    for rec in sim.run_trial(cfg, 5.0, 0):
        row = res.row(rec.scheme, 5.0)
        assert row.mean_per_user_rate == rec.per_user_rate
        assert row.mean_min_rate == rec.min_rate
        assert row.std_error == 0.0 and row.n_trials == 1


def test_half_sweeps_concatenate():
    cfg = small(n_trials=8)
    full = sim.run_sweep(cfg)
    first, _ = sim.run_trials(cfg, range(4))
    second, _ = sim.run_trials(cfg, range(4, 8))
    assert sim.aggregate(cfg, second + first).rows == full.rows


def test_workers_do_not_change_results():
    cfg = small(n_trials=6)
    assert sim.csv_text(sim.run_sweep(cfg, workers=1)) == sim.csv_text(sim.run_sweep(cfg, workers=2))


def test_cizf_beats_zf_every_point():
    cfg = ExperimentConfig(n_tx=4, k_pool=4, snr_grid_db=tuple(float(x) for x in range(-10, 21, 5)),
                           n_trials=100, seed=42, schemes=("zf/uniform", "cizf/uniform"))
    res = sim.run_sweep(cfg)
    _, zf = res.curve("zf/uniform/none")
    _, ci = res.curve("cizf/uniform/none")
    assert np.all(ci >= zf)


def test_std_error_scaling():
    def se(n):
        cfg = ExperimentConfig(snr_grid_db=(10.0,), n_trials=n, seed=11, schemes=("zf/uniform",))
        return sim.run_sweep(cfg).rows[0].std_error

    ratio = se(25) / se(100)
    assert 1.0 <= ratio <= 4.0


def test_pool_sweep_nested_pools():
    cfg = sim.pool_sweep_config(n_trials=2, schemes=("cizf/uniform/optimal", "cizf/uniform/random"))
    res = sim.run_sweep(cfg)
    assert {r.grid_kind for r in res.rows} == {"pool"}
    assert [r.grid_value for r in res.rows[:5]] == [4.0, 6.0, 8.0, 10.0, 12.0]
    # With K = N_t every rule serves the whole pool.
    assert res.row("cizf/uniform/optimal", 4).mean_per_user_rate == pytest.approx(
        res.row("cizf/uniform/random", 4).mean_per_user_rate, rel=1e-12)


def test_dominance_violation_aborts_with_partial(monkeypatch):
    real = power.allocate

    def broken(pre, p_tot, policy):
        alloc = real(pre, p_tot, policy)
        if policy == "max_throughput":
            return power.PowerAllocation(alloc.p * 0.5, alloc.budget)
        return alloc

    monkeypatch.setattr(power, "allocate", broken)
    res = sim.run_sweep(small(schemes=("zf/max_throughput",)))
    assert res.partial
    assert "DominanceError" in res.error


def test_ill_conditioned_draw_is_redrawn(monkeypatch, caplog):
    real = sim._draw
    calls = []

    def first_singular(gen, cfg):
        d = real(gen, cfg)
        calls.append(1)
        if len(calls) == 1:
            h = d.h.copy()
            h[1] = h[0]
            return sim._Draw(h, d.s, d.priority)
        return d

    monkeypatch.setattr(sim, "_draw", first_singular)
    with caplog.at_level(logging.INFO, logger="cizf.sim"):
        recs = sim.run_trial(small(), 10.0, 0)
    assert len(calls) == 2 and recs
    assert "redrawing" in caplog.text


def test_db_gain_readout():
    snr = np.arange(-10.0, 21.0)
    rate = np.log2(1 + 10 ** (snr / 10))
    assert sim.db_gain_at_rate((snr, rate), (snr, rate), 1.0) == 0.0
    assert sim.db_gain_at_rate((snr, rate), (snr + 2.0, rate), 2.0) == pytest.approx(2.0, abs=1e-12)
    a = (np.array([0.0, 10.0, 20.0]), np.array([0.0, 1.0, 3.0]))
    b = (np.array([0.0, 10.0, 20.0]), np.array([0.0, 0.5, 1.5]))
    # a reaches 1.2 at 11 dB, b at 17 dB.
    assert sim.db_gain_at_rate(a, b, 1.2) == pytest.approx(6.0, abs=1e-12)
    with pytest.raises(OutOfRangeError):
        sim.db_gain_at_rate(a, b, 2.0)
    with pytest.raises(ValueError):
        sim.db_gain_at_rate((snr, rate[::-1]), (snr, rate), 1.0)


def test_csv_and_sidecar(tmp_path):
    res = sim.run_sweep(small(n_trials=2))
    path = sim.write_csv(res, tmp_path / "out" / "r.csv")
    side = sim.write_sidecar(res, path.with_suffix(".json"))
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == sim.CSV_HEADER
    assert len(rows) == 1 + len(res.rows)
    by_scheme = {r[0]: r for r in rows[1:]}
    assert by_scheme["zf/uniform/none"][8] == ""
    assert float(by_scheme["cizf/uniform/none"][8]) == 100.0
    first = res.rows[0]
    assert rows[1][6] == repr(first.mean_per_user_rate)
    doc = json.loads(side.read_text())
    assert doc["config"]["seed"] == 3 and doc["partial"] is False
