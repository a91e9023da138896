"""Post-run checks: Lyapunov audit, band violations, regulation, sharing.

Everything here works on a finished trace plus the scenario that produced it
and uses the true plant parameters, which the controller never sees.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barrier import BarrierDomainError, BarrierSpec, tanh_barrier
from .controller import Gains
from .plant import DguParams, ZipLoad, equilibrium

# fraction of each constant-parameter segment treated as steady state
STEADY_FRACTION = 0.2
# settling band, relative to the setpoint
SETTLE_BAND = 0.01
# controller samples after an event excluded from the monotonicity check
EVENT_EXEMPT = 2
W_REL_TOL = 1e-6


def lyapunov(record, dgus: Sequence[DguParams], load: ZipLoad, gains: Gains,
             barrier: BarrierSpec, setpoint: float) -> float:
    """Composite Lyapunov function of the closed loop at one trace record.

    Errors are recomputed from the measured state and the logged estimates;
    parameter errors are true value minus estimate.
    """
    bar = tanh_barrier(barrier)
    V = record.V_o
    i_t = np.asarray(record.I_t, dtype=float)
    theta_hat = np.asarray(record.theta, dtype=float)
    s, d1, _ = bar.inverse_with_derivatives(V)
    z1 = s - bar.inverse(setpoint)
    psi = np.array([V, 1.0 / V, 1.0])
    psi_star = np.array([setpoint, 1.0 / setpoint, 1.0])
    xi = -gains.kappa1 * z1 / d1 + psi @ theta_hat
    z2 = i_t.sum() - xi
    z2i = i_t[:-1] - gains.ratios[:-1] * (psi_star @ theta_hat)

    c_total = sum(d.C_t for d in dgus)
    theta = load.theta
    l_inv = np.array([1.0 / d.L_t for d in dgus])
    lam = np.array([d.lam for d in dgus])
    mu = np.array([d.mu for d in dgus])

    w = 0.5 * c_total * z1**2 + 0.5 * z2**2 + 0.5 * np.sum(z2i**2)
    w += 0.5 / gains.gamma1 * np.sum((theta - theta_hat) ** 2)
    w += 0.5 / gains.gamma2 * np.sum((theta / c_total - np.asarray(record.theta_c)) ** 2)
    w += 0.5 / gains.gamma3 * (1.0 / c_total - record.c_inv) ** 2
    w += np.sum(0.5 / gains.gamma4 * (l_inv - np.asarray(record.l_inv)) ** 2)
    w += np.sum(0.5 / gains.gamma5 * (lam - np.asarray(record.lam)) ** 2)
    w += np.sum(0.5 / gains.gamma6 * (mu - np.asarray(record.mu)) ** 2)
    return float(w)


def predicted_wdot(record, gains: Gains) -> float:
    """-kappa1 Z1^2 - kappa2 Z2^2 - sum kappa2i Z2i^2 at a record."""
    z2i = np.asarray(record.Z2i, dtype=float)
    return float(-gains.kappa1 * record.Z1**2 - gains.kappa2 * record.Z2**2
                 - np.sum(gains.kappa2i * z2i**2))


def fill_lyapunov(result) -> None:
    """Set ``W`` on every record of ``result.trace`` in place."""
    sc = result.scenario
    for rec in result.trace:
        try:
            rec.W = lyapunov(rec, sc.dgus, rec.load, sc.gains, sc.barrier, rec.V_ref)
        except BarrierDomainError:
            rec.W = math.nan


@dataclass
class SegmentMetrics:
    index: int
    t_start: float
    t_end: float
    load: dict
    setpoint: float
    oracle_I_L: float
    oracle_I_t: list
    oracle_u: list
    complete: bool
    settling_time: Optional[float] = None
    window_samples: int = 0
    window_max_dev: Optional[float] = None
    final_V: Optional[float] = None
    sharing_error: Optional[list] = None
    sharing_error_max: Optional[list] = None
    I_L_hat_error: Optional[float] = None
    I_L_hat_error_max: Optional[float] = None
    oracle_error_V: Optional[float] = None
    oracle_error_I_t: Optional[list] = None
    oracle_error_u: Optional[list] = None
    W_peak: Optional[float] = None
    W_end: Optional[float] = None
    W_decrease: Optional[float] = None


@dataclass
class LyapunovAudit:
    tolerance: float
    max_increase: Optional[float]
    increasing_fraction: Optional[float]
    checked_samples: int
    exempt_samples: int
    W0: Optional[float]


@dataclass
class RunSummary:
    status: str
    reason: str = ""
    detail: str = ""
    fail_time: Optional[float] = None
    n_samples: int = 0
    violations: int = 0
    worst_excursion: Optional[float] = None
    V_min: Optional[float] = None
    V_max: Optional[float] = None
    final_V: Optional[float] = None
    clamp_events: int = 0
    lyapunov: Optional[LyapunovAudit] = None
    segments: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def clean(self) -> bool:
        """Run finished and never touched the band edges."""
        return self.ok and self.violations == 0

    @classmethod
    def config_error(cls, message: str) -> "RunSummary":
        return cls(status="failed", reason="config_error", detail=message)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def count_violations(voltages, band: BarrierSpec) -> tuple[int, Optional[float]]:
    """Samples with V_o outside the open band and the worst distance past an edge."""
    v = np.asarray(voltages, dtype=float)
    bad = ~((v > band.v_min) & (v < band.v_max))
    if not bad.any():
        return 0, None
    past = np.maximum(v[bad] - band.v_max, band.v_min - v[bad])
    past = np.where(np.isfinite(past), past, np.inf)
    return int(bad.sum()), float(np.max(past))


def settling_time(t, v, setpoint, band=SETTLE_BAND) -> Optional[float]:
    """Time from ``t[0]`` after which ``v`` stays within ``band * setpoint``."""
    outside = np.abs(np.asarray(v) - setpoint) > band * setpoint
    if outside[-1]:
        return None
    idx = np.flatnonzero(outside)
    first = 0 if idx.size == 0 else idx[-1] + 1
    return float(t[first] - t[0])


def _segment_metrics(j, trace, sc, start, end, load, setpoint) -> SegmentMetrics:
    eq = equilibrium(sc.dgus, load, setpoint, sc.gains.ratios)
    seg = SegmentMetrics(
        index=j,
        t_start=start * sc.dt_ctrl,
        t_end=min(end, sc.n_samples) * sc.dt_ctrl,
        load={"G_l": load.G_l, "I_l": load.I_l, "P_l": load.P_l},
        setpoint=setpoint,
        oracle_I_L=eq.I_L,
        oracle_I_t=list(eq.I_t),
        oracle_u=list(eq.u),
        complete=len(trace) >= end,
    )
    recs = trace[start:min(end, len(trace))]
    if recs:
        W = np.array([r.W for r in recs])
        head = W[:EVENT_EXEMPT + 1]
        if np.all(np.isfinite(head)):
            seg.W_peak = float(head.max())
        if seg.complete and math.isfinite(W[-1]):
            seg.W_end = float(W[-1])
            if seg.W_peak:
                seg.W_decrease = 1.0 - seg.W_end / seg.W_peak
    if not seg.complete:
        return seg
    width = int(math.ceil(STEADY_FRACTION * (end - start)))
    if width < 2:
        return seg
    t = np.array([r.t for r in recs])
    V = np.array([r.V_o for r in recs])
    seg.settling_time = settling_time(t, V, setpoint)
    seg.final_V = float(V[-1])

    win = recs[-width:]
    I = np.array([r.I_t for r in win])
    u = np.array([r.u for r in win])
    Vw = V[-width:]
    il_hat = np.array([r.I_L_hat for r in win])
    seg.window_samples = width
    seg.window_max_dev = float(np.max(np.abs(Vw - setpoint)))
    seg.oracle_error_V = float(abs(Vw.mean() - setpoint) / setpoint)
    seg.oracle_error_u = list(np.abs(u.mean(axis=0) - eq.u) / np.abs(eq.u))
    # relative current errors are undefined for a zero demand
    if eq.I_L > 0:
        share = np.abs(I - eq.I_t) / eq.I_L
        seg.sharing_error = list(share.mean(axis=0))
        seg.sharing_error_max = list(share.max(axis=0))
        seg.oracle_error_I_t = list(np.abs(I.mean(axis=0) - eq.I_t) / eq.I_t)
    il_err = np.abs(il_hat - eq.I_L)
    seg.I_L_hat_error = float(il_err.mean())
    seg.I_L_hat_error_max = float(il_err.max())
    return seg


def lyapunov_audit(trace, event_samples: Sequence[int]) -> LyapunovAudit:
    W = np.array([r.W for r in trace])
    if W.size == 0:
        return LyapunovAudit(W_REL_TOL, None, None, 0, 0, None)
    tol = W_REL_TOL * max(W[0], 1.0) if math.isfinite(W[0]) else math.nan
    dW = np.diff(W)
    exempt = np.zeros(dW.size, dtype=bool)
    for e in event_samples:
        # dW[k] spans samples k -> k+1; drop the jump into e and the next sample
        for k in range(e - 1, e - 1 + EVENT_EXEMPT):
            if 0 <= k < dW.size:
                exempt[k] = True
    checked = dW[~exempt]
    checked = checked[np.isfinite(checked)]
    if checked.size == 0:
        return LyapunovAudit(tol, None, None, 0, int(exempt.sum()), float(W[0]))
    return LyapunovAudit(
        tolerance=float(tol),
        max_increase=float(checked.max()),
        increasing_fraction=float(np.mean(checked > 0)),
        checked_samples=int(checked.size),
        exempt_samples=int(exempt.sum()),
        W0=float(W[0]),
    )


def metrics(result) -> RunSummary:
    """Summarise a finished (or failed) run.

    ``result`` carries ``scenario``, ``trace``, ``status``, ``reason`` and
    ``fail_time``.  Steady-state figures use the final 20 % of each
    constant-parameter segment and are left empty when the segment was not
    completed.
    """
    sc = result.scenario
    trace = result.trace
    summary = RunSummary(
        status=result.status,
        reason=result.reason,
        detail=result.detail,
        fail_time=result.fail_time,
        n_samples=len(trace),
    )
    if not trace:
        return summary
    V = np.array([r.V_o for r in trace])
    summary.violations, summary.worst_excursion = count_violations(V, sc.barrier)
    summary.V_min = float(V.min())
    summary.V_max = float(V.max())
    summary.final_V = float(V[-1])
    summary.clamp_events = int(sum(bool(r.clamp_flag) for r in trace))
    segs = sc.segments()
    summary.lyapunov = lyapunov_audit(trace, [s[0] for s in segs[1:]])
    for j, (start, end, load, setpoint) in enumerate(segs):
        if start >= len(trace):
            break
        summary.segments.append(_segment_metrics(j, trace, sc, start, end, load, setpoint))
    return summary


def wdot_comparison(trace, gains: Gains, dt: float):
    """Finite-difference dW/dt next to the predicted rate at interval midpoints.

    Returns ``(numeric, predicted)`` arrays of length ``len(trace) - 1``.
    """
    W = np.array([r.W for r in trace])
    pred = np.array([predicted_wdot(r, gains) for r in trace])
    return np.diff(W) / dt, 0.5 * (pred[1:] + pred[:-1])


def plot_run(result, outdir) -> list:
    """Write V_o, current and Lyapunov plots as SVG; returns the file paths."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from pathlib import Path

    matplotlib.rcParams["svg.hashsalt"] = "dcbackstep"
    outdir = Path(outdir)
    sc, trace = result.scenario, result.trace
    t = np.array([r.t for r in trace])
    V = np.array([r.V_o for r in trace])
    I = np.array([r.I_t for r in trace])
    il_hat = np.array([r.I_L_hat for r in trace])
    W = np.array([r.W for r in trace])
    paths = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, V, lw=1.0, label="V_o")
    for edge in (sc.barrier.v_min, sc.barrier.v_max):
        ax.axhline(edge, color="r", ls="--", lw=0.8)
    ax.plot(t, [r.V_ref for r in trace], color="k", ls=":", lw=0.8, label="V*")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("V (V)")
    ax.legend(loc="best")
    fig.tight_layout()
    paths.append(outdir / "voltage.svg")
    fig.savefig(paths[-1])
    plt.close(fig)

    truth = np.array([r.load.demand(r.V_ref) for r in trace])
    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(I.shape[1]):
        line, = ax.plot(t, I[:, i], lw=1.0, label=f"I_t{i + 1}")
        ax.plot(t, sc.gains.ratios[i] * il_hat, color=line.get_color(), ls="--", lw=0.8)
        ax.plot(t, sc.gains.ratios[i] * truth, color=line.get_color(), ls=":", lw=0.8)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("I (A)")
    ax.set_title("currents (solid), r_i * estimate (dashed), r_i * demand (dotted)", fontsize=9)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    paths.append(outdir / "currents.svg")
    fig.savefig(paths[-1])
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.semilogy(t, np.where(W > 0, W, np.nan), lw=1.0)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("W")
    fig.tight_layout()
    paths.append(outdir / "lyapunov.svg")
    fig.savefig(paths[-1])
    plt.close(fig)
    return paths
