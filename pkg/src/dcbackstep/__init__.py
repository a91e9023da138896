"""Adaptive backstepping voltage control of parallel DC-DC converters.

Modules: ``barrier`` (band maps), ``plant`` (averaged converter model),
``controller`` (control and adaptation laws), ``engine`` (closed-loop
simulation), ``analysis`` (post-run checks) and ``cli``.
"""

from .barrier import BarrierDomainError, BarrierSpec, TanhBarrier, tanh_barrier
from .controller import BacksteppingLaw, ControllerState, Gains, control_step
from .engine import Event, RunResult, Scenario, ScenarioError, run, simulate, sweep
from .plant import DguParams, PlantSingularityError, PlantState, ZipLoad, equilibrium

__version__ = "0.1.0"

__all__ = [
    "BarrierDomainError", "BarrierSpec", "TanhBarrier", "tanh_barrier",
    "BacksteppingLaw", "ControllerState", "Gains", "control_step",
    "Event", "RunResult", "Scenario", "ScenarioError", "run", "simulate", "sweep",
    "DguParams", "PlantSingularityError", "PlantState", "ZipLoad", "equilibrium",
]
