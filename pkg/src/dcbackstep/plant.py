"""Averaged dynamics of n parallel DC-DC converters feeding a ZIP load.

State is the bus voltage ``V_o`` and the n filter currents ``I_t``::

    C_t dV_o/dt   = sum(I_t) - G_l V_o - I_l - P_l / V_o
    L_ti dI_ti/dt = -V_o - R_ti I_ti + E_i u_i

with ``C_t`` the sum of the filter capacitances.  Nothing in here is visible
to the controller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

# Below this bus voltage the P-load term is treated as a blow-up (V).
V_SINGULAR = 0.1


class PlantSingularityError(ArithmeticError):
    """Bus voltage collapsed below :data:`V_SINGULAR`."""


@dataclass(frozen=True)
class DguParams:
    E: float
    R_t: float
    L_t: float
    C_t: float

    def __post_init__(self):
        for name in ("E", "R_t", "L_t", "C_t"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.E <= 0:
            raise ValueError(f"E must be > 0, got {self.E}")
        if self.L_t <= 0:
            raise ValueError(f"L_t must be > 0, got {self.L_t}")
        if self.R_t < 0 or self.C_t < 0:
            raise ValueError("R_t and C_t must be >= 0")

    @property
    def lam(self) -> float:
        return self.R_t / self.L_t

    @property
    def mu(self) -> float:
        return self.E / self.L_t


@dataclass(frozen=True)
class ZipLoad:
    G_l: float = 0.0
    I_l: float = 0.0
    P_l: float = 0.0

    def __post_init__(self):
        for name in ("G_l", "I_l", "P_l"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")

    @property
    def theta(self) -> np.ndarray:
        """Unknown load vector in regressor order [G_l, P_l, I_l]."""
        return np.array([self.G_l, self.P_l, self.I_l])

    def demand(self, voltage: float) -> float:
        return self.G_l * voltage + self.I_l + self.P_l / voltage


@dataclass
class PlantState:
    V_o: float
    I_t: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.V_o = float(self.V_o)
        self.I_t = np.asarray(self.I_t, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(([self.V_o], self.I_t))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "PlantState":
        return cls(float(x[0]), np.array(x[1:], dtype=float))


class Plant:
    """Packs DGU parameters into arrays so the right-hand side stays cheap."""

    def __init__(self, dgus: Sequence[DguParams], load: ZipLoad):
        if not dgus:
            raise ValueError("need at least one DGU")
        self.dgus = tuple(dgus)
        self.E = np.array([d.E for d in dgus])
        self.R = np.array([d.R_t for d in dgus])
        self.inv_L = np.array([1.0 / d.L_t for d in dgus])
        self.C_total = float(sum(d.C_t for d in dgus))
        if self.C_total <= 0:
            raise ValueError("total filter capacitance must be > 0")
        self.load = load

    @property
    def n(self) -> int:
        return len(self.dgus)

    def rhs(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        v = x[0]
        if not v >= V_SINGULAR:
            raise PlantSingularityError(
                f"bus voltage {float(v)!r} V fell below {V_SINGULAR} V (P-load singularity)"
            )
        i_t = x[1:]
        load = self.load
        dx = np.empty_like(x)
        dx[0] = (i_t.sum() - load.G_l * v - load.I_l - load.P_l / v) / self.C_total
        dx[1:] = (-v - self.R * i_t + self.E * u) * self.inv_L
        return dx

    def rk4(self, x: np.ndarray, u: np.ndarray, h: float) -> np.ndarray:
        k1 = self.rhs(x, u)
        k2 = self.rhs(x + 0.5 * h * k1, u)
        k3 = self.rhs(x + 0.5 * h * k2, u)
        k4 = self.rhs(x + h * k3, u)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_inputs(params: Sequence[DguParams], state: PlantState, u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (len(params),):
        raise ValueError(f"expected {len(params)} duty inputs, got shape {u.shape}")
    if state.I_t.shape != (len(params),):
        raise ValueError(f"expected {len(params)} filter currents, got {state.I_t.shape}")
    return u


def derivative(
    params: Sequence[DguParams], load: ZipLoad, state: PlantState, u
) -> PlantState:
    """Time derivative of the plant state, returned as a :class:`PlantState`."""
    u = _check_inputs(params, state, u)
    return PlantState.from_vector(Plant(params, load).rhs(state.as_vector(), u))


def rk4_step(
    params: Sequence[DguParams], load: ZipLoad, state: PlantState, u, h: float
) -> PlantState:
    """One classical RK4 step with ``u`` and the load held over the step."""
    if h < 0:
        raise ValueError("step must be >= 0")
    u = _check_inputs(params, state, u)
    if h == 0:
        return PlantState(state.V_o, state.I_t.copy())
    return PlantState.from_vector(Plant(params, load).rk4(state.as_vector(), u, h))


@dataclass(frozen=True)
class Equilibrium:
    I_L: float
    I_t: np.ndarray
    u: np.ndarray


def equilibrium(
    params: Sequence[DguParams], load: ZipLoad, setpoint: float, ratios
) -> Equilibrium:
    """Steady state that holds ``setpoint`` with currents split by ``ratios``."""
    ratios = np.asarray(ratios, dtype=float)
    if setpoint <= 0:
        raise ValueError("setpoint must be > 0")
    if ratios.shape != (len(params),):
        raise ValueError("one sharing ratio per DGU required")
    if np.any(ratios <= 0) or (len(params) > 1 and np.any(ratios >= 1)):
        raise ValueError("sharing ratios must lie in (0, 1)")
    if not math.isclose(ratios.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"sharing ratios must sum to 1, got {ratios.sum()}")
    i_load = load.demand(setpoint)
    i_t = ratios * i_load
    R = np.array([d.R_t for d in params])
    E = np.array([d.E for d in params])
    return Equilibrium(i_load, i_t, (setpoint + R * i_t) / E)
