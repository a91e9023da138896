"""Barrier maps between the real line and an open voltage band.

A barrier map ``F`` sends any real ``s`` into ``(v_min, v_max)``; its inverse
blows up at the band edges, so keeping ``F^-1(V_o)`` bounded keeps ``V_o``
inside the band.  The controller only ever needs ``F^-1`` and its first two
derivatives with respect to the voltage.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass

# Evaluation is refused closer than this to either band edge (V).
EDGE_MARGIN = 1e-9


class BarrierDomainError(ValueError):
    """Voltage at or outside the open band; treat it as a constraint violation."""

    def __init__(self, voltage: float, v_min: float, v_max: float):
        super().__init__(
            f"V_o = {float(voltage)!r} V is outside the open band ({v_min}, {v_max}) V"
        )
        self.voltage = voltage
        self.v_min = v_min
        self.v_max = v_max


@dataclass(frozen=True)
class BarrierSpec:
    v_min: float
    v_max: float

    def __post_init__(self):
        if not (math.isfinite(self.v_min) and math.isfinite(self.v_max)):
            raise ValueError("barrier band limits must be finite")
        if not 0.0 < self.v_min < self.v_max:
            raise ValueError(
                f"need 0 < v_min < v_max, got v_min={self.v_min}, v_max={self.v_max}"
            )

    @property
    def width(self) -> float:
        return self.v_max - self.v_min

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.v_min + self.v_max)

    def contains(self, voltage: float) -> bool:
        return self.v_min < voltage < self.v_max


class BarrierMap(ABC):
    """Smooth strictly increasing bijection R -> (v_min, v_max)."""

    def __init__(self, spec: BarrierSpec):
        self.spec = spec

    def check_domain(self, voltage: float) -> None:
        lo = self.spec.v_min + EDGE_MARGIN
        hi = self.spec.v_max - EDGE_MARGIN
        if not lo <= voltage <= hi:
            raise BarrierDomainError(voltage, self.spec.v_min, self.spec.v_max)

    @abstractmethod
    def forward(self, s: float) -> float:
        """F(s), always inside the band."""

    @abstractmethod
    def inverse(self, voltage: float) -> float:
        """F^-1(V)."""

    @abstractmethod
    def inverse_d1(self, voltage: float) -> float:
        """dF^-1/dV, strictly positive inside the band."""

    @abstractmethod
    def inverse_d2(self, voltage: float) -> float:
        """d^2 F^-1/dV^2."""

    def inverse_with_derivatives(self, voltage: float) -> tuple[float, float, float]:
        """``(F^-1(V), dF^-1/dV, d^2F^-1/dV^2)`` in one call."""
        return self.inverse(voltage), self.inverse_d1(voltage), self.inverse_d2(voltage)

    def __repr__(self):
        return f"{type(self).__name__}({self.spec.v_min}, {self.spec.v_max})"


class TanhBarrier(BarrierMap):
    """F(s) = mid + half_width * tanh(s), F^-1(V) = artanh((V - mid) / half_width)."""

    def forward(self, s: float) -> float:
        spec = self.spec
        v = spec.midpoint + 0.5 * spec.width * math.tanh(s)
        # rounding can step past an edge once tanh saturates
        return min(max(v, spec.v_min), spec.v_max)

    def inverse(self, voltage: float) -> float:
        self.check_domain(voltage)
        spec = self.spec
        return 0.5 * math.log((voltage - spec.v_min) / (spec.v_max - voltage))

    def inverse_d1(self, voltage: float) -> float:
        self.check_domain(voltage)
        spec = self.spec
        return 0.5 * spec.width / ((spec.v_max - voltage) * (voltage - spec.v_min))

    def inverse_d2(self, voltage: float) -> float:
        # derivative of 0.5*w / ((b - V)(V - a)) with respect to V
        self.check_domain(voltage)
        a, b = self.spec.v_min, self.spec.v_max
        p = (b - voltage) * (voltage - a)
        return 0.5 * self.spec.width * (2.0 * voltage - a - b) / (p * p)

    def inverse_with_derivatives(self, voltage: float) -> tuple[float, float, float]:
        self.check_domain(voltage)
        a, b = self.spec.v_min, self.spec.v_max
        lo, hi = voltage - a, b - voltage
        p = lo * hi
        half_w = 0.5 * (b - a)
        return 0.5 * math.log(lo / hi), half_w / p, half_w * (lo - hi) / (p * p)


def tanh_barrier(spec: BarrierSpec) -> TanhBarrier:
    return TanhBarrier(spec)


def inverse_derivatives(barrier: BarrierMap, voltage: float) -> tuple[float, float]:
    """First and second derivative of ``F^-1`` at ``voltage``.

    Raises :class:`BarrierDomainError` when ``voltage`` is not strictly inside
    the band (within :data:`EDGE_MARGIN`).
    """
    return barrier.inverse_d1(voltage), barrier.inverse_d2(voltage)
