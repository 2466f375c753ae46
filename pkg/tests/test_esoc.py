from __future__ import annotations

import math

import numpy as np
import pytest

from twmiqp.errors import AllConfigsDiscarded, AllFlagged, IngestError, InputError
from twmiqp.esoc import (
    EsocConfig,
    EsocResult,
    TimeSeries,
    build_esoc_instance,
    esoc_objective,
    evaluate,
    ingest_csv,
    mse_esoc,
    mse_ses,
    o_index,
    ses,
    solve_esoc,
    synthetic_series,
    train_size,
    tune,
    tune_ses,
    write_result_csv,
)
from twmiqp.instance import evaluate_objective, support_graph
from twmiqp.treedec import decompose


def result(x, mask):
    x = np.asarray(x, float)
    mask = np.asarray(mask, bool)
    return EsocResult(x, np.zeros_like(x), mask, np.r_[np.nan, x[:-1]], 0.0)


# smoothing and errors ------------------------------------------------------------------


def test_ses_recursion():
    assert ses(TimeSeries([1.0, 2.0, 3.0]), 0.5) == pytest.approx([1.0, 1.5, 2.25])


def test_ses_rejects_bad_beta():
    with pytest.raises(InputError):
        ses(TimeSeries([1.0, 2.0]), 1.0)


def test_mse_ses_one_step():
    ts = TimeSeries([1.0, 2.0, 3.0])
    # errors are x0 - y1 = -1 and x1 - y2 = -1.5
    assert mse_ses(ts, ses(ts, 0.5)) == pytest.approx(1.625)
    assert mse_ses(ts, ses(ts, 0.5), start=2) == pytest.approx(2.25)


def test_mse_esoc_skips_flagged():
    ts = TimeSeries([1.0, 2.0, 10.0, 3.0])
    res = result([1.0, 2.0, 2.5, 3.0], [False, False, True, False])
    # steps 1 and 3 remain: (1 - 2)^2 and (2.5 - 3)^2
    assert mse_esoc(ts, res) == pytest.approx((1.0 + 0.25) / 2)


def test_mse_esoc_all_flagged():
    ts = TimeSeries([1.0, 2.0, 3.0])
    with pytest.raises(AllFlagged):
        mse_esoc(ts, result([1, 2, 3], [True, True, True]))


# QP formulation ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(4))
def test_instance_reproduces_objective(seed):
    rng = np.random.default_rng(seed)
    T = int(rng.integers(2, 30))
    ts = TimeSeries(rng.normal(size=T) * 3)
    cfg = EsocConfig(float(rng.uniform(0.05, 0.95)), float(rng.uniform(0.01, 1)), float(rng.uniform(0, 3)),
                     float(rng.uniform(0.1, 3)))
    inst, vm = build_esoc_instance(ts, cfg)
    for _ in range(20):
        x = rng.normal(size=T) * 3
        o = rng.normal(size=T) * (rng.random(T) < 0.4)
        v = np.zeros(2 * T)
        v[vm["x"]] = x
        v[vm["o"]] = o
        z = v != 0
        z[vm["x"]] = True
        direct = esoc_objective(ts, cfg, x, o)
        assert evaluate_objective(inst, v, z) == pytest.approx(direct, abs=1e-8 * (1 + abs(direct)), rel=0)


def test_no_dynamics_decouples_pairs():
    inst, _ = build_esoc_instance(TimeSeries(np.arange(5.0)), EsocConfig(0.5, 0.1, mu1=0.0))
    adj = support_graph(inst.Q)
    for t in range(5):
        assert adj[o_index(t)] == {o_index(t) + 1}


def test_support_treewidth_two():
    inst, _ = build_esoc_instance(TimeSeries(np.sin(np.arange(40.0))), EsocConfig(0.3, 0.1))
    assert decompose(support_graph(inst.Q)).width == 2
    assert inst.Q.bandwidth() == 2


def test_config_validation():
    with pytest.raises(InputError):
        EsocConfig(0.0, 0.1)
    with pytest.raises(InputError):
        EsocConfig(0.5, 0.1, mu2=0.0)
    with pytest.raises(InputError):
        EsocConfig(0.5, 0.1, mu1=-1.0)


# fitting ----------------------------------------------------------------------------


def test_large_penalty_flags_nothing():
    ts, _ = synthetic_series(60, 0.3, seed=2)
    res = solve_esoc(ts, EsocConfig(0.3, 1e6))
    assert not res.outlier_mask.any() and np.all(res.o == 0.0)


def test_spikes_are_flagged():
    ts, pos = synthetic_series(120, 0.3, seed=5)
    res = solve_esoc(ts, EsocConfig(0.3, 0.05))
    assert res.outlier_mask[pos].mean() >= 0.9
    assert res.outlier_fraction < 0.2


def test_stronger_dynamics_approach_ses():
    # clean local-level signal, penalty high enough that nothing is flagged;
    # the first smoothed value is free, so SES is seeded from it
    ts, _ = synthetic_series(80, 0.3, spike_frac=0.0, seed=3)
    gaps = []
    for mu1 in (0.1, 1.0, 10.0, 100.0):
        x = solve_esoc(ts, EsocConfig(0.3, 1e6, mu1=mu1)).x
        ref = np.empty_like(x)
        ref[0] = x[0]
        for t in range(1, ts.T):
            ref[t] = 0.3 * ts.y[t] + 0.7 * ref[t - 1]
        gaps.append(float(np.max(np.abs(x - ref))))
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_tune_single_config():
    ts, _ = synthetic_series(60, 0.3, seed=1)
    tr = tune(ts, betas=[0.3], lambdas=[0.05])
    assert (tr.beta, tr.lam) == (0.3, 0.05)
    assert len(tr.records) == 1 and tr.records[0].kept


def test_tune_skips_after_overflagging():
    ts, _ = synthetic_series(80, 0.3, seed=4)
    tr = tune(ts, betas=[0.3], lambdas=[1e-6, 1e-5, 0.05, 10.0])
    by_lam = {r.lam: r for r in tr.records}
    assert by_lam[10.0].status == "solved"
    # the smallest penalties flag too many points, so at least the last is skipped
    assert by_lam[1e-6].status == "skipped" and math.isnan(by_lam[1e-6].flagged_fraction)
    solved = sorted((r for r in tr.records if r.status == "solved"), key=lambda r: -r.lam)
    fr = [r.flagged_fraction for r in solved]
    assert fr == sorted(fr)


def test_tune_all_discarded():
    ts, _ = synthetic_series(40, 0.3, seed=4)
    with pytest.raises(AllConfigsDiscarded):
        tune(ts, betas=[0.3], lambdas=[1e-7])


def test_tune_clean_signal_prefers_no_outliers():
    ts = TimeSeries(5.0 + 0.01 * np.sin(np.arange(60.0)))
    tr = tune(ts, betas=[0.2, 0.5], lambdas=[0.01, 0.05])
    assert all(r.flagged_fraction < 0.1 for r in tr.records if r.kept)


def test_tune_ses_and_split():
    ts, _ = synthetic_series(100, 0.3, seed=6)
    b, m = tune_ses(ts, betas=[0.1, 0.3, 0.9])
    assert b in (0.1, 0.3, 0.9) and m > 0
    assert train_size(100, 0.5) == 50
    with pytest.raises(InputError):
        train_size(3, 0.5)


def test_evaluate_summary_keys():
    ts, _ = synthetic_series(80, 0.3, seed=8)
    summary, full = evaluate(ts, betas=[0.3], lambdas=[0.05, 1.0])
    assert summary["train_size"] == 40
    assert set(summary["esoc"]) >= {"beta", "lambda", "train_mse", "train_mse_full", "test_mse"}
    assert summary["ses"]["beta"] == 0.3
    assert len(full.x) == 80


# ingestion --------------------------------------------------------------------------


def test_ingest_two_rows(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("timestamp,value\n2020-01-01,1.5\n2020-01-02,2.5\n")
    ts = ingest_csv(p)
    assert ts.y.tolist() == [1.5, 2.5] and ts.t == ["2020-01-01", "2020-01-02"]


def test_ingest_blank_line_reports_line(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("timestamp,value\na,1\n\nb,2\n")
    with pytest.raises(IngestError, match=":3:"):
        ingest_csv(p)


def test_ingest_bad_header_and_values(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("time,val\na,1\nb,2\n")
    with pytest.raises(IngestError):
        ingest_csv(p)
    p.write_text("timestamp,value\na,1\nb\n")
    with pytest.raises(IngestError, match=":3:"):
        ingest_csv(p)
    p.write_text("timestamp,value\na,1\nb,x\n")
    with pytest.raises(IngestError, match="cannot parse"):
        ingest_csv(p)
    with pytest.raises(IngestError):
        ingest_csv(tmp_path / "missing.csv")


def test_result_csv(tmp_path):
    ts, _ = synthetic_series(20, 0.3, seed=1)
    res = solve_esoc(ts, EsocConfig(0.3, 0.05))
    p = tmp_path / "r.csv"
    write_result_csv(p, ts, res)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,y,x,o,flagged,forecast"
    assert len(lines) == 21 and lines[1].endswith(",")
