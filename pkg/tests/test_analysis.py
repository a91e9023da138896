import dataclasses

import numpy as np
import pytest

from dcbackstep.analysis import (count_violations, lyapunov, metrics, settling_time,
                                 wdot_comparison)
from dcbackstep.config import load_preset
from dcbackstep.controller import ControllerState
from dcbackstep.engine import RunResult, TraceRecord
from dcbackstep.plant import ZipLoad, equilibrium
from dcbackstep.traces import read_trace_csv, write_trace_csv

from conftest import RATIOS, ZIP


def make_record(t, V, i_t, est, load=ZIP, v_ref=12.0, u=None):
    n = len(i_t)
    return TraceRecord(
        t=t, V_o=V, I_t=np.asarray(i_t, float), u=np.full(n, 0.5) if u is None else u,
        xi=0.0, Z1=0.0, Z2=0.0, Z2i=np.zeros(n - 1), theta=est.theta, theta_c=est.theta_c,
        c_inv=est.c_inv, l_inv=est.l_inv, lam=est.lam, mu=est.mu,
        I_L_hat=float(np.array([v_ref, 1 / v_ref, 1]) @ est.theta), phi=0.0,
        G_l=load.G_l, I_l=load.I_l, P_l=load.P_l, V_ref=v_ref,
    )


@pytest.fixture(scope="module")
def preset():
    return load_preset("paper-fig3")


def test_lyapunov_zero_at_fixed_point(dgus, gains, band):
    est = ControllerState.from_truth(dgus, ZIP)
    rec = make_record(0.0, 12.0, [10.8, 8.1, 5.4, 2.7], est)
    assert lyapunov(rec, dgus, ZIP, gains, band, 12.0) == pytest.approx(0.0, abs=1e-20)


def test_lyapunov_single_quadratic(dgus, gains, band):
    # one extra ampere on the last unit moves Z2 only (Z2i covers units 1..n-1)
    est = ControllerState.from_truth(dgus, ZIP)
    rec = make_record(0.0, 12.0, [10.8, 8.1, 5.4, 3.7], est)
    assert lyapunov(rec, dgus, ZIP, gains, band, 12.0) == pytest.approx(0.5, rel=1e-12)


def test_lyapunov_parameter_term(dgus, gains, band):
    est = ControllerState.from_truth(dgus, ZIP)
    est.mu = est.mu + np.array([2.0, 0, 0, 0])
    rec = make_record(0.0, 12.0, [10.8, 8.1, 5.4, 2.7], est)
    assert lyapunov(rec, dgus, ZIP, gains, band, 12.0) == pytest.approx(0.5 * 4 / 200)


def _equilibrium_trace(dgus, n_samples=100, dt=5e-5):
    eq = equilibrium(dgus, ZIP, 12.0, RATIOS)
    est = ControllerState.from_truth(dgus, ZIP)
    return [make_record(k * dt, 12.0, eq.I_t, est, u=eq.u) for k in range(n_samples + 1)]


def _result(preset, trace, **kw):
    sc = dataclasses.replace(preset, events=[], t_end=(len(trace) - 1) * preset.dt_ctrl, **kw)
    return RunResult(sc, trace)


def test_metrics_constant_equilibrium(preset, dgus):
    trace = _equilibrium_trace(dgus)
    s = metrics(_result(preset, trace))
    assert s.violations == 0 and s.worst_excursion is None
    seg = s.segments[0]
    assert np.allclose(seg.sharing_error, 0.0, atol=1e-15)
    assert seg.settling_time == 0.0
    assert seg.I_L_hat_error == pytest.approx(0.0, abs=1e-12)
    assert max(seg.oracle_error_u) < 1e-15


def test_metrics_boundary_sample_is_violation(preset, dgus):
    trace = _equilibrium_trace(dgus)
    trace[50].V_o = 12.2
    s = metrics(_result(preset, trace))
    assert s.violations == 1
    assert s.worst_excursion == 0.0


def test_count_violations(band):
    n, worst = count_violations([12.0, 11.8, 12.25, 11.7], band)
    assert n == 3
    assert worst == pytest.approx(0.1)


def test_settling_time():
    t = np.arange(6) * 0.1
    assert settling_time(t, [13, 13, 12.05, 12.0, 12.0, 12.0], 12.0) == pytest.approx(0.2)
    assert settling_time(t, [12, 12, 12, 12, 12, 13], 12.0) is None


def test_short_segment_unavailable(preset, dgus):
    trace = _equilibrium_trace(dgus, n_samples=4)
    s = metrics(_result(preset, trace))
    assert s.segments[0].sharing_error is None
    assert s.segments[0].settling_time is None


def test_zero_demand_relative_errors_unavailable(preset, dgus):
    est = ControllerState.from_truth(dgus, ZipLoad())
    load = ZipLoad()
    trace = [make_record(k * 5e-5, 12.0, np.zeros(4), est, load=load) for k in range(101)]
    s = metrics(_result(preset, trace, load=load))
    seg = s.segments[0]
    assert seg.oracle_I_L == 0.0
    assert seg.sharing_error is None
    assert seg.I_L_hat_error == 0.0


def test_oracle_values_for_paper_segments(paper_result):
    segs = paper_result.summary.segments
    assert [g.oracle_I_L for g in segs] == pytest.approx([27.0, 10.0, 20.0, 10.0], rel=1e-5)
    assert segs[2].oracle_I_t == pytest.approx([8.0, 6.0, 4.0, 2.0], rel=1e-5)
    assert [g.t_start for g in segs] == pytest.approx([0.0, 0.2, 0.4, 0.6])


def test_lyapunov_monotone_on_paper_trace(paper_result):
    audit = paper_result.summary.lyapunov
    assert audit.exempt_samples == 6
    assert audit.max_increase <= audit.tolerance


def test_wdot_shape(paper_result, preset):
    trace = paper_result.trace
    num, pred = wdot_comparison(trace, preset.gains, preset.dt_ctrl)
    keep = np.ones(num.size, dtype=bool)
    for e in (4000, 8000, 12000):
        keep[e - 3:e + 3] = False
    assert np.all(np.sign(num[keep]) == np.sign(pred[keep]))
    # where the dissipation is well above the differencing error
    big = keep & (np.abs(pred) >= 1.0)
    assert big.sum() > 1000
    assert np.max(np.abs(num[big] - pred[big]) / np.abs(pred[big])) < 0.10


def test_csv_round_trip(tmp_path, paper_result):
    path = tmp_path / "trace.csv"
    write_trace_csv(paper_result.trace[:500], path, 4)
    back = read_trace_csv(path)
    for a, b in zip(paper_result.trace[:500], back):
        for f in dataclasses.fields(TraceRecord):
            va, vb = getattr(a, f.name), getattr(b, f.name)
            assert np.array_equal(va, vb), f.name
    header = path.read_text().splitlines()[0]
    assert "V_o [V]" in header and "t [s]" in header and "I_t1 [A]" in header


def test_summary_from_csv_matches(tmp_path, paper_result):
    path = tmp_path / "trace.csv"
    write_trace_csv(paper_result.trace, path, 4)
    res = RunResult(paper_result.scenario, read_trace_csv(path))
    assert metrics(res).to_dict() == paper_result.summary.to_dict()


def test_plots(tmp_path, preset):
    from dcbackstep.analysis import plot_run
    from dcbackstep.engine import run

    res = run(dataclasses.replace(preset, t_end=0.01))
    paths = plot_run(res, tmp_path)
    assert [p.name for p in paths] == ["voltage.svg", "currents.svg", "lyapunov.svg"]
    assert all(p.stat().st_size > 1000 for p in paths)
