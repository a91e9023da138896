"""Barrier-based adaptive backstepping controller for parallel converters.

The controller sees only the bus voltage and the n filter currents.  Load,
input voltages and filter elements enter only through on-line estimates:

    theta   [G_l, P_l, I_l]                 load vector
    theta_c theta / C_t                     load vector scaled by 1/C_t
    c_inv   1 / C_t
    l_inv   1 / L_ti                        per DGU
    lam     R_ti / L_ti                     per DGU
    mu      E_i / L_ti                      per DGU

Packed as a flat vector the estimates are laid out in exactly that order
(length 7 + 3n), which is what the closed-loop integrator carries around.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .barrier import BarrierMap
from .plant import V_SINGULAR, PlantSingularityError

# Lower bound on the input-gain estimates mu_i (1/s); they are divided by.
MU_FLOOR = 100.0


def _vec(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float)).copy()


@dataclass(frozen=True)
class Gains:
    kappa1: float
    kappa2: float
    kappa2i: np.ndarray
    gamma1: float
    gamma2: float
    gamma3: float
    gamma4: np.ndarray
    gamma5: np.ndarray
    gamma6: np.ndarray
    ratios: np.ndarray

    def __post_init__(self):
        for name in ("kappa2i", "gamma4", "gamma5", "gamma6", "ratios"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        n = self.ratios.size
        if self.kappa2i.size != n - 1:
            raise ValueError(f"kappa2i needs {n - 1} entries for {n} DGUs")
        for name in ("gamma4", "gamma5", "gamma6"):
            if getattr(self, name).size != n:
                raise ValueError(f"{name} needs {n} entries")
        for name in ("kappa1", "kappa2", "gamma1", "gamma2", "gamma3"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be a positive number, got {value}")
        for name in ("kappa2i", "gamma4", "gamma5", "gamma6"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{name} entries must be positive")
        if np.any(self.ratios <= 0) or (n > 1 and np.any(self.ratios >= 1)):
            raise ValueError("sharing ratios must lie in (0, 1)")
        if not math.isclose(self.ratios.sum(), 1.0, abs_tol=1e-9):
            raise ValueError(f"sharing ratios must sum to 1, got {self.ratios.sum()}")

    @property
    def n(self) -> int:
        return self.ratios.size

    @classmethod
    def uniform(cls, ratios, kappa1=1.0, kappa2=10.0, kappa2i=15.0,
                gamma1=100.0, gamma2=100.0, gamma3=100.0,
                gamma4=100.0, gamma5=100.0, gamma6=200.0) -> "Gains":
        """Same per-DGU gain for every unit; defaults are the Table II tuning."""
        n = len(ratios)
        return cls(
            kappa1, kappa2, np.full(n - 1, kappa2i), gamma1, gamma2, gamma3,
            np.full(n, gamma4), np.full(n, gamma5), np.full(n, gamma6), ratios,
        )


@dataclass
class ControllerState:
    theta: np.ndarray
    theta_c: np.ndarray
    c_inv: float
    l_inv: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.theta = _vec(self.theta)
        self.theta_c = _vec(self.theta_c)
        self.c_inv = float(self.c_inv)
        self.l_inv = _vec(self.l_inv)
        self.lam = _vec(self.lam)
        self.mu = _vec(self.mu)
        if self.theta.size != 3 or self.theta_c.size != 3:
            raise ValueError("theta and theta_c are 3-vectors")
        if not self.l_inv.size == self.lam.size == self.mu.size:
            raise ValueError("per-DGU estimate vectors differ in length")

    @property
    def n(self) -> int:
        return self.mu.size

    def copy(self) -> "ControllerState":
        return ControllerState(
            self.theta, self.theta_c, self.c_inv, self.l_inv, self.lam, self.mu
        )

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            (self.theta, self.theta_c, [self.c_inv], self.l_inv, self.lam, self.mu)
        )

    @classmethod
    def from_vector(cls, v) -> "ControllerState":
        v = np.asarray(v, dtype=float)
        n = (v.size - 7) // 3
        if v.size != 7 + 3 * n or n < 1:
            raise ValueError(f"bad estimate vector length {v.size}")
        return cls(v[0:3], v[3:6], v[6], v[7:7 + n], v[7 + n:7 + 2 * n], v[7 + 2 * n:])

    @classmethod
    def from_truth(cls, dgus, load) -> "ControllerState":
        """Estimates equal to the true plant values (simulation studies only)."""
        c_total = sum(d.C_t for d in dgus)
        return cls(
            theta=load.theta,
            theta_c=load.theta / c_total,
            c_inv=1.0 / c_total,
            l_inv=[1.0 / d.L_t for d in dgus],
            lam=[d.lam for d in dgus],
            mu=[d.mu for d in dgus],
        )


@dataclass
class StepOutput:
    u: np.ndarray
    u_total: float
    Z1: float
    Z2: float
    Z2i: np.ndarray
    xi: float
    phi: float
    theta_dot: np.ndarray
    I_L_hat: float
    I_t_hat: np.ndarray
    rates: ControllerState
    clamped: bool = False


def regressor(voltage: float) -> np.ndarray:
    """Row [V, 1/V, 1]; its product with [G_l, P_l, I_l] is the load current."""
    if not voltage >= V_SINGULAR:
        raise ValueError(f"regressor undefined for V = {voltage!r} < {V_SINGULAR} V")
    return np.array([voltage, 1.0 / voltage, 1.0])


class BacksteppingLaw:
    """Control law with gains, barrier and setpoint bound in.

    :meth:`rates` works on flat arrays and is what the simulator calls at
    every integrator stage; the module-level helpers below wrap it.
    """

    def __init__(self, gains: Gains, barrier: BarrierMap, setpoint: float):
        barrier.check_domain(setpoint)
        self.gains = gains
        self.barrier = barrier
        self.setpoint = float(setpoint)
        self.n = gains.n
        self.psi_star = regressor(setpoint)
        self.z1_offset = barrier.inverse(setpoint)
        self._r_head = gains.ratios[:-1]
        self._k2i = gains.kappa2i
        self._g456 = np.stack((gains.gamma4, gains.gamma5, gains.gamma6))

    def errors(self, voltage, i_t, theta):
        """``(Z1, Z2, Z2i, xi, d1, d2)`` at one measurement."""
        s, d1, d2 = self.barrier.inverse_with_derivatives(voltage)
        z1 = s - self.z1_offset
        ps = self.psi_star
        i_load_hat = ps[0] * theta[0] + ps[1] * theta[1] + theta[2]
        xi = (-self.gains.kappa1 * z1 / d1
              + voltage * theta[0] + theta[1] / voltage + theta[2])
        z2 = i_t.sum() - xi
        z2i = i_t[:-1] - self._r_head * i_load_hat
        return z1, z2, z2i, xi, d1, d2

    def rates(self, voltage: float, i_t: np.ndarray, est: np.ndarray):
        """Duty commands and estimate derivatives for packed estimates ``est``.

        Returns ``(u, d_est, diag)`` where ``diag`` is
        ``(z1, z2, z2i, xi, phi, u_total)``.
        """
        if not voltage >= V_SINGULAR:
            raise PlantSingularityError(f"bus voltage {float(voltage)!r} V below {V_SINGULAR} V")
        g = self.gains
        n = self.n
        theta = est[0:3]
        theta_c = est[3:6]
        c_inv = est[6]
        l_inv = est[7:7 + n]
        lam = est[7 + n:7 + 2 * n]
        mu = est[7 + 2 * n:7 + 3 * n]

        z1, z2, z2i, xi, d1, d2 = self.errors(voltage, i_t, theta)
        inv_v = 1.0 / voltage
        psi = np.array([voltage, inv_v, 1.0])
        i_sum = i_t.sum()

        th_dot = (-g.gamma1 * d1 * z1) * psi
        k1 = g.kappa1
        ph = k1 * d2 * z1 / (d1 * d1) - k1 + theta[0] - theta[1] * inv_v * inv_v

        u_total = (
            -d1 * z1
            - g.kappa2 * z2
            + l_inv.sum() * voltage
            + lam @ i_t
            + ph * (i_sum * c_inv - psi @ theta_c)
            + psi @ th_dot
        )
        target_rate = self.psi_star @ th_dot
        u = np.empty(n)
        u[:-1] = (
            -self._k2i * z2i
            + l_inv[:-1] * voltage
            + lam[:-1] * i_t[:-1]
            + self._r_head * target_rate
        ) / mu[:-1]
        # last unit closes u_total = sum(mu_i * u_i)
        u[-1] = (u_total - mu[:-1] @ u[:-1]) / mu[-1]

        # Z2 + delta_i Z2i with delta_n = 0
        s = np.full(n, z2)
        s[:-1] += z2i
        d_est = np.empty(7 + 3 * n)
        d_est[0:3] = th_dot
        d_est[3:6] = (g.gamma2 * ph * z2) * psi
        d_est[6] = -g.gamma3 * ph * i_sum * z2
        # rows: -V s, -I s, u s, scaled by gamma4..gamma6
        d_est[7:] = (self._g456 * np.stack((-voltage * s, -i_t * s, u * s))).ravel()
        return u, d_est, (z1, z2, z2i, xi, ph, u_total)

    def step_output(self, voltage, i_t, state: ControllerState) -> StepOutput:
        i_t = np.asarray(i_t, dtype=float)
        if i_t.shape != (self.n,):
            raise ValueError(f"expected {self.n} current measurements, got {i_t.shape}")
        if state.n != self.n:
            raise ValueError("estimate vector sized for a different number of DGUs")
        u, d_est, (z1, z2, z2i, xi, ph, u_total) = self.rates(
            float(voltage), i_t, state.as_vector()
        )
        i_load_hat = float(self.psi_star @ state.theta)
        return StepOutput(
            u=u,
            u_total=float(u_total),
            Z1=float(z1),
            Z2=float(z2),
            Z2i=z2i,
            xi=float(xi),
            phi=float(ph),
            theta_dot=d_est[0:3].copy(),
            I_L_hat=i_load_hat,
            I_t_hat=self.gains.ratios * i_load_hat,
            rates=ControllerState.from_vector(d_est),
        )


def errors(voltage, i_sum, i_t, state: ControllerState, gains: Gains,
           barrier: BarrierMap, setpoint: float):
    """Tracking errors ``(Z1, Z2, Z2i, xi)``.

    ``Z2i`` only covers the first n-1 units; the last one follows from the
    total-current loop.  ``i_sum`` is the measured total current.
    """
    law = BacksteppingLaw(gains, barrier, setpoint)
    i_t = np.asarray(i_t, dtype=float)
    z1, _, z2i, xi, _, _ = law.errors(float(voltage), i_t, state.theta)
    return z1, i_sum - xi, z2i, xi


def theta_dot(voltage: float, z1: float, barrier: BarrierMap, gamma1: float) -> np.ndarray:
    return -gamma1 * barrier.inverse_d1(voltage) * regressor(voltage) * z1


def phi(voltage: float, z1: float, state: ControllerState, gains: Gains,
        barrier: BarrierMap) -> float:
    """Coefficient of dV_o/dt in the time derivative of ``xi``."""
    d1 = barrier.inverse_d1(voltage)
    d2 = barrier.inverse_d2(voltage)
    k1 = gains.kappa1
    g_hat, p_hat = state.theta[0], state.theta[1]
    return k1 * d2 * z1 / (d1 * d1) - k1 + g_hat - p_hat / (voltage * voltage)


def evaluate(measurement, state: ControllerState, gains: Gains,
             barrier: BarrierMap, setpoint: float) -> StepOutput:
    """Control law and estimate rates at ``measurement = (V_o, I_t)``."""
    voltage, i_t = measurement
    return BacksteppingLaw(gains, barrier, setpoint).step_output(voltage, i_t, state)


def advance(state: ControllerState, rates: ControllerState, dt: float,
            mu_floor: float = MU_FLOOR) -> tuple[ControllerState, bool]:
    """Forward-Euler step of the estimates, then the mu floor.

    Returns the new state and whether the floor was hit.
    """
    v = state.as_vector() + dt * rates.as_vector()
    n = state.n
    mu = v[7 + 2 * n:]
    clamped = bool(np.any(mu < mu_floor))
    np.maximum(mu, mu_floor, out=mu)
    return ControllerState.from_vector(v), clamped


def control_step(measurement, state: ControllerState, gains: Gains,
                 barrier: BarrierMap, setpoint: float, dt: float,
                 mu_floor: float = MU_FLOOR):
    """Evaluate the law at one sample and advance the estimates by ``dt``.

    All rates are taken before the update (so ``theta_dot`` inside the duty
    commands is the pre-update value).  Returns ``(StepOutput, new_state)``;
    ``state`` is left untouched.
    """
    if dt <= 0:
        raise ValueError("controller period must be > 0")
    if np.any(state.mu < mu_floor):
        raise ValueError(f"mu estimates must be >= {mu_floor}")
    out = evaluate(measurement, state, gains, barrier, setpoint)
    new_state, out.clamped = advance(state, out.rates, dt, mu_floor)
    return out, new_state
