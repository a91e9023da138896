"""YAML scenario files and bundled presets.

Errors are raised as :class:`ConfigError` with a dotted path to the field,
e.g. ``barrier.v_min`` or ``dgus.2.L_t``.  The schema is described in
``docs/FORMATS.md``.
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .barrier import BarrierSpec
from .controller import MU_FLOOR, ControllerState, Gains
from .engine import Event, Scenario, ScenarioError
from .plant import DguParams, PlantState, ZipLoad

PRESET_PACKAGE = "dcbackstep.presets"


class ConfigError(ScenarioError):
    pass


def _get(d: dict, key: str, path: str, default: Any = ..., kind=float):
    if not isinstance(d, dict):
        raise ConfigError(path, "expected a mapping")
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}".lstrip("."), "missing")
        return default
    value = d[key]
    p = f"{path}.{key}".lstrip(".")
    if kind is float:
        return _float(value, p)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(p, f"expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(p, f"expected true/false, got {value!r}")
        return value
    return value


def _float(value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    return value


def _vector(value, path, n) -> np.ndarray:
    """Scalar broadcast to ``n`` entries, or a list of exactly ``n`` numbers."""
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ConfigError(path, f"expected {n} entries, got {len(value)}")
        return np.array([_float(v, f"{path}.{i}") for i, v in enumerate(value)])
    return np.full(n, _float(value, path))


def _load(d, path) -> ZipLoad:
    vals = {k: _get(d, k, path, 0.0) for k in ("G_l", "I_l", "P_l")}
    unknown = set(d) - set(vals)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    for k, v in vals.items():
        if v < 0:
            raise ConfigError(f"{path}.{k}", f"must be >= 0, got {v}")
    return ZipLoad(**vals)


def _dgus(raw) -> list:
    if not isinstance(raw, list) or not raw:
        raise ConfigError("dgus", "expected a non-empty list")
    out = []
    for i, d in enumerate(raw):
        p = f"dgus.{i}"
        vals = {k: _get(d, k, p) for k in ("E", "R_t", "L_t", "C_t")}
        for k in ("E", "L_t"):
            if vals[k] <= 0:
                raise ConfigError(f"{p}.{k}", f"must be > 0, got {vals[k]}")
        for k in ("R_t", "C_t"):
            if vals[k] < 0:
                raise ConfigError(f"{p}.{k}", f"must be >= 0, got {vals[k]}")
        out.append(DguParams(**vals))
    if sum(d.C_t for d in out) <= 0:
        raise ConfigError("dgus", "total capacitance must be > 0")
    return out


def _barrier(raw) -> BarrierSpec:
    v_min = _get(raw, "v_min", "barrier")
    v_max = _get(raw, "v_max", "barrier")
    if v_min <= 0:
        raise ConfigError("barrier.v_min", f"must be > 0, got {v_min}")
    if v_min >= v_max:
        raise ConfigError("barrier.v_min", f"must be < v_max ({v_max}), got {v_min}")
    return BarrierSpec(v_min, v_max)


def _gains(raw, n) -> Gains:
    p = "gains"
    if not isinstance(raw, dict):
        raise ConfigError(p, "expected a mapping")
    ratios = _vector(_get(raw, "ratios", p, kind=None), "gains.ratios", n)
    if np.any(ratios <= 0) or (n > 1 and np.any(ratios >= 1)):
        raise ConfigError("gains.ratios", "entries must lie in (0, 1)")
    if not math.isclose(ratios.sum(), 1.0, abs_tol=1e-9):
        raise ConfigError("gains.ratios", f"must sum to 1, got {ratios.sum()}")
    scalars = {}
    for k, default in (("kappa1", 1.0), ("kappa2", 10.0), ("gamma1", 100.0),
                       ("gamma2", 100.0), ("gamma3", 100.0)):
        scalars[k] = _get(raw, k, p, default)
    vectors = {}
    for k, default, size in (("kappa2i", 15.0, n - 1), ("gamma4", 100.0, n),
                             ("gamma5", 100.0, n), ("gamma6", 200.0, n)):
        vectors[k] = _vector(raw.get(k, default), f"gains.{k}", size)
    for k, v in scalars.items():
        if v <= 0:
            raise ConfigError(f"gains.{k}", f"must be > 0, got {v}")
    for k, v in vectors.items():
        if np.any(v <= 0):
            raise ConfigError(f"gains.{k}", "entries must be > 0")
    known = set(scalars) | set(vectors) | {"ratios"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"gains.{sorted(unknown)[0]}", "unknown field")
    return Gains(ratios=ratios, **scalars, **vectors)


def _events(raw) -> list:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ConfigError("events", "expected a list")
    out = []
    for i, e in enumerate(raw):
        p = f"events.{i}"
        t = _get(e, "t", p)
        load = _load(e["load"], f"{p}.load") if e.get("load") is not None else None
        sp = _get(e, "setpoint", p, None)
        unknown = set(e) - {"t", "load", "setpoint"}
        if unknown:
            raise ConfigError(f"{p}.{sorted(unknown)[0]}", "unknown field")
        if load is None and sp is None:
            raise ConfigError(p, "needs a load or a setpoint")
        out.append(Event(t, load, sp))
    return out


def _estimates(raw, dgus, load, n) -> ControllerState:
    """Initial estimates.

    ``truth`` copies the plant values.  Otherwise the DGU estimates start at
    the nominal values scaled by ``1 + nominal_error`` and the load estimates
    default to zero; any field may be overridden explicitly.
    """
    if raw == "truth":
        return ControllerState.from_truth(dgus, load)
    raw = raw or {}
    p = "estimates"
    if not isinstance(raw, dict):
        raise ConfigError(p, "expected a mapping or 'truth'")
    known = {"nominal_error", "theta", "theta_c", "c_inv", "l_inv", "lam", "mu"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{p}.{sorted(unknown)[0]}", "unknown field")
    f = 1.0 + _get(raw, "nominal_error", p, 0.0)
    if f <= 0:
        raise ConfigError(f"{p}.nominal_error", "must be > -1")
    theta = _vector(raw.get("theta", 0.0), f"{p}.theta", 3)
    c_inv = _get(raw, "c_inv", p, 1.0 / sum(d.C_t for d in dgus))
    if "theta_c" in raw:
        theta_c = _vector(raw["theta_c"], f"{p}.theta_c", 3)
    else:
        theta_c = theta * c_inv
    l_inv = _vector(raw.get("l_inv", [f / d.L_t for d in dgus]), f"{p}.l_inv", n)
    lam = _vector(raw.get("lam", [f * d.lam for d in dgus]), f"{p}.lam", n)
    mu = _vector(raw.get("mu", [f * d.mu for d in dgus]), f"{p}.mu", n)
    return ControllerState(theta, theta_c, c_inv, l_inv, lam, mu)


def _initial(raw, dgus, load, ratios, n) -> PlantState:
    """``I_t: equilibrium`` splits the demand at ``V_o(0)`` by the sharing ratios."""
    p = "initial"
    V = _get(raw, "V_o", p)
    if V <= 0:
        raise ConfigError(f"{p}.V_o", "must be > 0")
    i_raw = raw.get("I_t", "equilibrium")
    if i_raw == "equilibrium":
        i_t = ratios * load.demand(V)
    else:
        i_t = _vector(i_raw, f"{p}.I_t", n)
    return PlantState(V, i_t)


_TOP = {"name", "dgus", "load", "setpoint", "barrier", "gains", "events",
        "initial", "estimates", "simulation"}
_SIM = {"t_end", "dt_plant", "dt_ctrl", "controller", "mu_floor", "saturate",
        "noise", "seed", "switching_frequency"}


def scenario_from_dict(cfg: dict) -> Scenario:
    """Build and validate a :class:`Scenario`; raises :class:`ConfigError`."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a mapping")
    unknown = set(cfg) - _TOP
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    dgus = _dgus(cfg.get("dgus"))
    n = len(dgus)
    load = _load(cfg.get("load") or {}, "load")
    barrier = _barrier(cfg.get("barrier"))
    setpoint = _get(cfg, "setpoint", "")
    gains = _gains(cfg.get("gains"), n)
    sim = cfg.get("simulation") or {}
    if not isinstance(sim, dict):
        raise ConfigError("simulation", "expected a mapping")
    unknown = set(sim) - _SIM
    if unknown:
        raise ConfigError(f"simulation.{sorted(unknown)[0]}", "unknown field")
    mode = sim.get("controller", "continuous")
    try:
        sc = Scenario(
            dgus=dgus,
            load=load,
            setpoint=setpoint,
            barrier=barrier,
            gains=gains,
            initial=_initial(cfg.get("initial") or {}, dgus, load, gains.ratios, n),
            estimates=_estimates(cfg.get("estimates"), dgus, load, n),
            events=_events(cfg.get("events")),
            t_end=_get(sim, "t_end", "simulation", 0.8),
            dt_plant=_get(sim, "dt_plant", "simulation", 1e-5),
            dt_ctrl=_get(sim, "dt_ctrl", "simulation", 5e-5),
            controller_mode=mode,
            mu_floor=_get(sim, "mu_floor", "simulation", MU_FLOOR),
            saturate=_get(sim, "saturate", "simulation", False, kind=bool),
            noise=_get(sim, "noise", "simulation", 0.0),
            seed=_get(sim, "seed", "simulation", 0, kind=int),
            switching_frequency=_get(sim, "switching_frequency", "simulation", None),
            name=str(cfg.get("name", "scenario")),
        )
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ConfigError("<root>", str(exc)) from None
    try:
        sc.validate()
    except ScenarioError as exc:
        raise ConfigError(_config_path(exc.path), exc.message) from None
    return sc


# Scenario attribute -> config key, for validation messages
_PATHS = {
    "t_end": "simulation.t_end",
    "dt_plant": "simulation.dt_plant",
    "dt_ctrl": "simulation.dt_ctrl",
    "controller_mode": "simulation.controller",
    "mu_floor": "simulation.mu_floor",
    "noise": "simulation.noise",
}


def _config_path(path: str) -> str:
    head, _, rest = path.partition(".")
    mapped = _PATHS.get(head, head)
    return f"{mapped}.{rest}" if rest else mapped


def preset_names() -> list:
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".yaml"))


def preset_text(name: str) -> str:
    res = resources.files(PRESET_PACKAGE) / f"{name}.yaml"
    if not res.is_file():
        raise ConfigError("<preset>", f"no preset named {name!r}; have {preset_names()}")
    return res.read_text()


def load_dict(source: str) -> dict:
    """Parse a config file path or a bundled preset name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif source in preset_names():
        text = preset_text(source)
    else:
        raise ConfigError("<config>", f"{source!r} is neither a file nor a preset")
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<config>", f"YAML parse error: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a mapping at top level")
    return cfg


def load_scenario(source: str) -> Scenario:
    return scenario_from_dict(load_dict(source))


def load_preset(name: str) -> Scenario:
    return scenario_from_dict(yaml.safe_load(preset_text(name)))


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``dotted`` (``a.b.0.c``) set to ``value``."""
    import copy

    out = copy.deepcopy(cfg)
    parts = dotted.split(".")
    node: Any = out
    for i, part in enumerate(parts[:-1]):
        key: Any = int(part) if isinstance(node, list) else part
        try:
            nxt = node[key]
        except (KeyError, IndexError, TypeError):
            nxt = None
        if nxt is None:
            if isinstance(node, list):
                raise ConfigError(dotted, f"index {part} out of range")
            nxt = node[key] = {}
        node = nxt
    last = parts[-1]
    if isinstance(node, list):
        idx = int(last)
        if not 0 <= idx < len(node):
            raise ConfigError(dotted, f"index {last} out of range")
        node[idx] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigError(dotted, "path does not lead to a mapping or list")
    return out


def load_sweep(source: str) -> tuple[dict, list, Optional[Path]]:
    """Sweep file: ``base`` (preset name or path) plus a list of ``runs``.

    Each run is ``{label: str, set: {dotted.path: value, ...}}``; paths use
    config keys.  Returns ``(base_config, runs, base_dir)``.
    """
    path = Path(source)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError("<sweep>", str(exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "expected a mapping")
    base = raw.get("base")
    if not isinstance(base, str):
        raise ConfigError("base", "expected a preset name or config path")
    base_path = path.parent / base
    base_cfg = load_dict(str(base_path) if base_path.is_file() else base)
    runs = raw.get("runs") or []
    if not isinstance(runs, list):
        raise ConfigError("runs", "expected a list")
    for i, r in enumerate(runs):
        if not isinstance(r, dict) or not isinstance(r.get("set", {}), dict):
            raise ConfigError(f"runs.{i}", "expected {label, set}")
    return base_cfg, runs, path.parent
