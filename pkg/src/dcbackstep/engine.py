"""Closed-loop simulation of the converters under the adaptive controller.

Two controller realisations are available:

``continuous``
    The control law is evaluated at every RK4 stage and the estimate ODEs are
    integrated together with the plant (an analog controller).  Records are
    still taken once per ``dt_ctrl``.
``sampled``
    Zero-order hold at ``dt_ctrl``: one law evaluation per period, duty held
    over the plant substeps, estimates advanced by forward Euler.

Load and setpoint events snap to the first controller sample at or after
their time and are applied before that sample is taken.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barrier import BarrierDomainError, BarrierSpec, tanh_barrier
from .controller import MU_FLOOR, BacksteppingLaw, ControllerState, Gains
from .plant import DguParams, Plant, PlantSingularityError, PlantState, ZipLoad

log = logging.getLogger(__name__)

CONTROLLER_MODES = ("continuous", "sampled")
_TIME_TOL = 1e-9


class ScenarioError(ValueError):
    """Scenario failed validation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message


@dataclass(frozen=True)
class Event:
    t: float
    load: Optional[ZipLoad] = None
    setpoint: Optional[float] = None


@dataclass
class Scenario:
    dgus: list
    load: ZipLoad
    setpoint: float
    barrier: BarrierSpec
    gains: Gains
    initial: PlantState
    estimates: ControllerState
    events: list = field(default_factory=list)
    t_end: float = 0.8
    dt_plant: float = 1e-5
    dt_ctrl: float = 5e-5
    controller_mode: str = "continuous"
    mu_floor: float = MU_FLOOR
    saturate: bool = False
    noise: float = 0.0
    seed: int = 0
    switching_frequency: Optional[float] = None  # recorded, not simulated
    name: str = "scenario"

    @property
    def n(self) -> int:
        return len(self.dgus)

    @property
    def substeps(self) -> int:
        return int(round(self.dt_ctrl / self.dt_plant))

    @property
    def n_samples(self) -> int:
        return int(round(self.t_end / self.dt_ctrl))

    def validate(self) -> None:
        """Raise :class:`ScenarioError` on the first broken invariant."""
        n = self.n
        if n < 1:
            raise ScenarioError("dgus", "need at least one DGU")
        for i, d in enumerate(self.dgus):
            if not isinstance(d, DguParams):
                raise ScenarioError(f"dgus.{i}", "not a DguParams")
        if self.gains.n != n:
            raise ScenarioError("gains.ratios", f"expected {n} ratios, got {self.gains.n}")
        if self.estimates.n != n:
            raise ScenarioError("estimates", f"sized for {self.estimates.n} DGUs, not {n}")
        if self.initial.I_t.shape != (n,):
            raise ScenarioError("initial.I_t", f"expected {n} currents")
        if not all(np.isfinite(self.estimates.as_vector())):
            raise ScenarioError("estimates", "non-finite value")
        if np.any(self.estimates.mu < self.mu_floor):
            raise ScenarioError("estimates.mu", f"must be >= mu_floor = {self.mu_floor}")
        for name in ("t_end", "dt_plant", "dt_ctrl"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(name, f"must be > 0, got {value}")
        ratio = self.dt_ctrl / self.dt_plant
        if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0) or round(ratio) < 1:
            raise ScenarioError(
                "dt_ctrl", f"must be an integer multiple of dt_plant ({self.dt_plant})"
            )
        if self.controller_mode not in CONTROLLER_MODES:
            raise ScenarioError(
                "controller_mode", f"must be one of {CONTROLLER_MODES}, got {self.controller_mode!r}"
            )
        if not (math.isfinite(self.mu_floor) and self.mu_floor > 0):
            raise ScenarioError("mu_floor", "must be > 0")
        if not (math.isfinite(self.noise) and self.noise >= 0):
            raise ScenarioError("noise", "must be >= 0")
        if not self.barrier.contains(self.setpoint):
            raise ScenarioError(
                "setpoint",
                f"{self.setpoint} V not inside the band ({self.barrier.v_min}, {self.barrier.v_max})",
            )
        if not self.barrier.contains(self.initial.V_o):
            raise ScenarioError(
                "initial.V_o",
                f"{self.initial.V_o} V not inside the band ({self.barrier.v_min}, {self.barrier.v_max})",
            )
        last = -math.inf
        for i, ev in enumerate(self.events):
            if not (math.isfinite(ev.t) and ev.t >= 0):
                raise ScenarioError(f"events.{i}.t", "must be >= 0")
            if ev.t < last:
                raise ScenarioError(f"events.{i}.t", "events must be sorted by time")
            last = ev.t
            if ev.load is None and ev.setpoint is None:
                raise ScenarioError(f"events.{i}", "event changes nothing")
            if ev.setpoint is not None and not self.barrier.contains(ev.setpoint):
                raise ScenarioError(f"events.{i}.setpoint", "outside the band")

    def segments(self) -> list[tuple[int, int, ZipLoad, float]]:
        """Constant-parameter stretches as ``(first_sample, end_sample, load, setpoint)``.

        ``end_sample`` is exclusive except for the last segment, which
        includes the final sample at ``t_end``.
        """
        load, setpoint = self.load, self.setpoint
        bounds = [(0, load, setpoint)]
        for ev in self.events:
            k = self.event_sample(ev.t)
            if k > self.n_samples:
                break
            load = ev.load or load
            setpoint = ev.setpoint if ev.setpoint is not None else setpoint
            if k == bounds[-1][0]:
                bounds[-1] = (k, load, setpoint)
            else:
                bounds.append((k, load, setpoint))
        out = []
        for j, (k, ld, sp) in enumerate(bounds):
            end = bounds[j + 1][0] if j + 1 < len(bounds) else self.n_samples + 1
            out.append((k, end, ld, sp))
        return out

    def event_sample(self, t: float) -> int:
        return int(math.ceil(t / self.dt_ctrl - _TIME_TOL))


@dataclass
class TraceRecord:
    t: float
    V_o: float
    I_t: np.ndarray
    u: np.ndarray
    xi: float
    Z1: float
    Z2: float
    Z2i: np.ndarray
    theta: np.ndarray
    theta_c: np.ndarray
    c_inv: float
    l_inv: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    I_L_hat: float
    phi: float
    G_l: float
    I_l: float
    P_l: float
    V_ref: float
    W: float = math.nan
    clamp_flag: bool = False

    @property
    def load(self) -> ZipLoad:
        return ZipLoad(self.G_l, self.I_l, self.P_l)

    @property
    def estimates(self) -> ControllerState:
        return ControllerState(self.theta, self.theta_c, self.c_inv, self.l_inv, self.lam, self.mu)


@dataclass
class RunResult:
    scenario: Scenario
    trace: list
    status: str = "ok"
    reason: str = ""
    detail: str = ""
    fail_time: Optional[float] = None
    summary: Optional[object] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class _Failure(Exception):
    def __init__(self, reason: str, detail: str):
        super().__init__(detail)
        self.reason = reason


def _classify(exc: Exception) -> _Failure:
    if isinstance(exc, BarrierDomainError):
        return _Failure("barrier_domain", str(exc))
    if isinstance(exc, PlantSingularityError):
        return _Failure("singularity", str(exc))
    return _Failure("numerical", f"{type(exc).__name__}: {exc}")


class _Loop:
    """Mutable simulation state for one run."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.n = sc.n
        self.barrier = tanh_barrier(sc.barrier)
        self.plant = Plant(sc.dgus, sc.load)
        self.setpoint = sc.setpoint
        self.law = BacksteppingLaw(sc.gains, self.barrier, sc.setpoint)
        self.x = sc.initial.as_vector()
        self.est = sc.estimates.as_vector()
        self.rng = np.random.default_rng(sc.seed)
        self.noise = np.zeros(1 + self.n)
        self.mu_slice = slice(7 + 2 * self.n, 7 + 3 * self.n)
        self.clamped = False

    def apply_event(self, ev: Event):
        if ev.load is not None:
            self.plant.load = ev.load
        if ev.setpoint is not None:
            self.setpoint = ev.setpoint
            self.law = BacksteppingLaw(self.sc.gains, self.barrier, ev.setpoint)

    def draw_noise(self):
        if self.sc.noise > 0:
            self.noise = self.rng.uniform(-self.sc.noise, self.sc.noise, 1 + self.n)

    def duty(self, u):
        return np.clip(u, 0.0, 1.0) if self.sc.saturate else u

    def control(self, x, est):
        m = x + self.noise
        return self.law.rates(m[0], m[1:], est)

    def clamp_mu(self):
        mu = self.est[self.mu_slice]
        if np.any(mu < self.sc.mu_floor):
            self.clamped = True
            np.maximum(mu, self.sc.mu_floor, out=mu)

    def record(self, k, u, diag) -> TraceRecord:
        sc, n, est, x = self.sc, self.n, self.est, self.x
        z1, z2, z2i, xi, ph, _ = diag
        load = self.plant.load
        psi_star = self.law.psi_star
        return TraceRecord(
            t=k * sc.dt_ctrl,
            V_o=float(x[0]),
            I_t=x[1:].copy(),
            u=np.array(u, dtype=float),
            xi=float(xi),
            Z1=float(z1),
            Z2=float(z2),
            Z2i=np.array(z2i, dtype=float),
            theta=est[0:3].copy(),
            theta_c=est[3:6].copy(),
            c_inv=float(est[6]),
            l_inv=est[7:7 + n].copy(),
            lam=est[7 + n:7 + 2 * n].copy(),
            mu=est[7 + 2 * n:].copy(),
            I_L_hat=float(psi_star @ est[0:3]),
            phi=float(ph),
            G_l=load.G_l,
            I_l=load.I_l,
            P_l=load.P_l,
            V_ref=self.setpoint,
            clamp_flag=self.clamped,
        )

    def advance_sampled(self, u, d_est):
        sc = self.sc
        self.est = self.est + sc.dt_ctrl * d_est
        self.clamp_mu()
        u_plant = self.duty(u)
        for _ in range(sc.substeps):
            self.x = self.plant.rk4(self.x, u_plant, sc.dt_plant)

    def advance_continuous(self, first):
        """RK4 on (plant, estimates); ``first`` is the law output at the current state."""
        sc, h, nx = self.sc, self.sc.dt_plant, 1 + self.n
        plant = self.plant

        def f(y, ctrl=None):
            u, d_est, _ = ctrl if ctrl is not None else self.control(y[:nx], y[nx:])
            return np.concatenate((plant.rhs(y[:nx], self.duty(u)), d_est))

        for j in range(sc.substeps):
            if j > 0:
                self.draw_noise()
            y = np.concatenate((self.x, self.est))
            k1 = f(y, first if j == 0 else None)
            k2 = f(y + 0.5 * h * k1)
            k3 = f(y + 0.5 * h * k2)
            k4 = f(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            self.x, self.est = y[:nx], y[nx:].copy()
            self.clamp_mu()


def simulate(sc: Scenario) -> RunResult:
    """Run the closed loop and return the raw trace (no metrics)."""
    sc.validate()
    loop = _Loop(sc)
    events = sorted(sc.events, key=lambda e: e.t)
    pending = [(sc.event_sample(ev.t), ev) for ev in events]
    trace = []
    result = RunResult(sc, trace)
    k = 0
    try:
        for k in range(sc.n_samples + 1):
            while pending and pending[0][0] <= k:
                loop.apply_event(pending.pop(0)[1])
            loop.draw_noise()
            loop.clamped = False
            try:
                ctrl = loop.control(loop.x, loop.est)
            except (BarrierDomainError, PlantSingularityError, ValueError, ArithmeticError) as exc:
                raise _classify(exc) from exc
            u, d_est, diag = ctrl
            rec = loop.record(k, u, diag)
            trace.append(rec)
            if k == sc.n_samples:
                break
            try:
                if sc.controller_mode == "sampled":
                    loop.advance_sampled(u, d_est)
                else:
                    loop.advance_continuous(ctrl)
            except (BarrierDomainError, PlantSingularityError, ValueError, ArithmeticError) as exc:
                raise _classify(exc) from exc
            rec.clamp_flag = loop.clamped
            if not np.all(np.isfinite(loop.x)) or not np.all(np.isfinite(loop.est)):
                raise _Failure("numerical", "state became non-finite")
            if not loop.barrier.spec.contains(loop.x[0]):
                raise _Failure(
                    "barrier_domain",
                    f"V_o = {float(loop.x[0])!r} V left the band "
                    f"({sc.barrier.v_min}, {sc.barrier.v_max})",
                )
    except _Failure as fail:
        result.status = "failed"
        result.reason = fail.reason
        result.fail_time = k * sc.dt_ctrl
        log.warning("run %s failed at t=%.6g s: %s", sc.name, result.fail_time, fail)
        result.detail = str(fail)
    return result


def run(sc: Scenario) -> RunResult:
    """Simulate, fill the Lyapunov column and attach a :class:`RunSummary`.

    An initial voltage outside the band is reported as a failed run without
    stepping; other scenario errors raise :class:`ScenarioError`.
    """
    from . import analysis

    if not sc.barrier.contains(sc.initial.V_o):
        detail = (
            f"V_o(0) = {sc.initial.V_o} V is outside the band "
            f"({sc.barrier.v_min}, {sc.barrier.v_max}) V"
        )
        result = RunResult(sc, [], status="failed", reason="initial_voltage_outside_band",
                           detail=detail, fail_time=0.0)
        result.summary = analysis.metrics(result)
        return result
    result = simulate(sc)
    analysis.fill_lyapunov(result)
    result.summary = analysis.metrics(result)
    return result


# --- sweeps -----------------------------------------------------------------

def _set_path(obj, parts: Sequence[str], value):
    head, rest = parts[0], parts[1:]
    if isinstance(obj, (list, tuple)):
        idx = int(head)
        items = list(obj)
        items[idx] = _set_path(items[idx], rest, value) if rest else value
        return type(obj)(items) if isinstance(obj, tuple) else items
    if not dataclasses.is_dataclass(obj):
        raise ScenarioError(".".join(parts), f"cannot descend into {type(obj).__name__}")
    if head not in {f.name for f in dataclasses.fields(obj)}:
        raise ScenarioError(head, f"{type(obj).__name__} has no field {head!r}")
    current = getattr(obj, head)
    new = _set_path(current, rest, value) if rest else value
    if isinstance(current, np.ndarray) and not rest:
        new = np.asarray(value, dtype=float)
    elif isinstance(current, np.ndarray):
        new = np.asarray(new, dtype=float)
    return dataclasses.replace(obj, **{head: new})


def apply_patch(base: Scenario, patch: dict) -> Scenario:
    """Return a copy of ``base`` with dotted-path fields replaced.

    Paths follow attribute names, with list indices as path components,
    e.g. ``{"events.1.load.P_l": 480.0, "gains.gamma1": 50.0}``.
    """
    sc = base
    for path, value in patch.items():
        try:
            sc = _set_path(sc, path.split("."), value)
        except ScenarioError as exc:
            raise ScenarioError(path, exc.message) from None
        except (ValueError, TypeError, IndexError) as exc:
            raise ScenarioError(path, str(exc)) from None
    return sc


def _run_patched(args):
    base, patch = args
    from . import analysis

    try:
        sc = apply_patch(base, patch)
        sc.validate()
    except ScenarioError as exc:
        return analysis.RunSummary.config_error(str(exc))
    return run(sc).summary


def sweep(base: Scenario, patches: Sequence[dict], parallelism: int = 1) -> list:
    """One :class:`RunSummary` per patch, in patch order.

    Runs are independent and deterministic, so the result does not depend on
    ``parallelism``.  A broken patch yields a config-error summary instead
    of aborting the sweep.
    """
    jobs = [(base, dict(p)) for p in patches]
    if not jobs:
        return []
    if parallelism <= 1 or len(jobs) == 1:
        return [_run_patched(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(_run_patched, jobs))
