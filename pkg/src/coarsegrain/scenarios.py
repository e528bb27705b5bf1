"""Scenario configuration: JSON schema, validation and built-in presets.

A scenario file is a JSON object with these keys (``*`` = required)::

    name          str
    units         {"length_unit": m, "mass_unit": kg}     optional, informational
    grid*         {"x_min", "x_max", "n"}
    partition*    {"delta_x", "delta_p", "x_origin", "p_origin"}
    hamiltonian*  {"mass", "potential": [[power, coeff], ...]}
    channel       [{"weight", "mass", "potential"}, ...]   replaces hamiltonian
    state*        {"x0", "p0", "sigma_x"}
    propagator    {"dt"}                                  default: stability limit
    schedule      {"tau": float | [floats], "n": int, "times": [floats]}
    ensemble      {"count": int}
    collision     {"density", "cross_section", "speed"}   SI, cloud-chamber table
    seed          int
    output        str                                     output directory

Numbers are in simulation units with ``hbar = 1``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .core import CoherentStateParams, Grid, HamiltonianSpec, SlotPartition, UnitScale
from .ehrenfest import CLOUD_CHAMBER, MACRO, MICRO
from .quantum import PropagatorConfig, max_stable_dt
from .trajectory import MixedChannelSpec

SCHEMA_VERSION = "1.0"


class ConfigError(ValueError):
    """Invalid scenario configuration; the message names the offending field."""


@dataclass(frozen=True)
class Schedule:
    tau: float | tuple[float, ...] | None = None
    n: int = 0
    times: tuple[float, ...] = ()


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    grid: Grid
    partition: SlotPartition
    hamiltonian: HamiltonianSpec
    state: CoherentStateParams
    dt: float | None = None
    schedule: Schedule = Schedule()
    channel: MixedChannelSpec | None = None
    ensemble_count: int = 1
    collision: Mapping[str, float] | None = None
    units: UnitScale | None = None
    seed: int = 0
    output: str | None = None
    raw: Mapping[str, Any] = field(default_factory=dict)

    def propagator(self) -> PropagatorConfig:
        dt = self.dt or 0.99 * max_stable_dt(self.grid, self.hamiltonian)
        return PropagatorConfig(dt=dt)

    def config_hash(self) -> str:
        return config_hash(self.raw)


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(raw: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical serialization of a config mapping."""
    return hashlib.sha256(canonical_json(raw).encode()).hexdigest()


def _section(raw: Mapping, key: str, required: bool = True) -> Mapping | None:
    if key not in raw:
        if required:
            raise ConfigError(f"missing field: {key}")
        return None
    sec = raw[key]
    if not isinstance(sec, Mapping):
        raise ConfigError(f"invalid field: {key} (expected an object)")
    return sec


def _num(sec: Mapping, key: str, path: str, default: float | None = None,
         positive: bool = False) -> float:
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing field: {path}.{key}")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"invalid field: {path}.{key} (expected a finite number)")
    if positive and not v > 0:
        raise ConfigError(f"invalid field: {path}.{key} (must be positive)")
    return float(v)


def _int(sec: Mapping, key: str, path: str, default: int | None = None, minimum: int = 0) -> int:
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing field: {path}.{key}")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"invalid field: {path}.{key} (expected an integer >= {minimum})")
    return v


def _hamiltonian(sec: Mapping, path: str) -> HamiltonianSpec:
    mass = _num(sec, "mass", path, 1.0, positive=True)
    pot = sec.get("potential", [])
    if not isinstance(pot, list) or not all(
        isinstance(t, list) and len(t) == 2 and isinstance(t[0], int) and not isinstance(t[0], bool)
        and isinstance(t[1], (int, float)) for t in pot
    ):
        raise ConfigError(f"invalid field: {path}.potential (expected [[power, coeff], ...])")
    try:
        return HamiltonianSpec(mass, tuple((int(n), float(c)) for n, c in pot))
    except ValueError as exc:
        raise ConfigError(f"invalid field: {path}.potential ({exc})") from None


def _schedule(sec: Mapping | None) -> Schedule:
    if sec is None:
        return Schedule()
    tau = sec.get("tau")
    if tau is not None:
        if isinstance(tau, list):
            if not all(isinstance(t, (int, float)) and t > 0 for t in tau):
                raise ConfigError("invalid field: schedule.tau (intervals must be positive)")
            tau = tuple(float(t) for t in tau)
        else:
            tau = _num(sec, "tau", "schedule", positive=True)
    n = _int(sec, "n", "schedule", 0)
    if isinstance(tau, tuple) and "n" in sec and n != len(tau):
        raise ConfigError("invalid field: schedule.n (must equal the number of intervals)")
    if isinstance(tau, tuple):
        n = len(tau)
    times = sec.get("times", [])
    if not isinstance(times, list) or not all(isinstance(t, (int, float)) for t in times):
        raise ConfigError("invalid field: schedule.times (expected a list of numbers)")
    times = tuple(float(t) for t in times)
    if any(t < 0 for t in times) or any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("invalid field: schedule.times (must be non-negative and increasing)")
    return Schedule(tau, n, times)


def parse_scenario(raw: Any, name: str = "scenario") -> Scenario:
    """Validate a config mapping and build a :class:`Scenario`."""
    if not isinstance(raw, Mapping):
        raise ConfigError("missing field: grid")
    g = _section(raw, "grid")
    try:
        grid = Grid(_num(g, "x_min", "grid"), _num(g, "x_max", "grid"), _int(g, "n", "grid", minimum=8))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid field: grid ({exc})") from None
    ps = _section(raw, "partition")
    part = SlotPartition(_num(ps, "delta_x", "partition", positive=True),
                         _num(ps, "delta_p", "partition", positive=True),
                         _num(ps, "x_origin", "partition", 0.0),
                         _num(ps, "p_origin", "partition", 0.0))
    if part.delta_x > grid.length or part.delta_p > grid.momentum_period:
        raise ConfigError("invalid field: partition (slot larger than the grid window)")

    chan = None
    if "channel" in raw:
        comps = raw["channel"]
        if not isinstance(comps, list) or not comps:
            raise ConfigError("invalid field: channel (expected a non-empty list)")
        parsed = []
        for k, c in enumerate(comps):
            if not isinstance(c, Mapping):
                raise ConfigError(f"invalid field: channel[{k}]")
            parsed.append((_num(c, "weight", f"channel[{k}]"), _hamiltonian(c, f"channel[{k}]")))
        try:
            chan = MixedChannelSpec(tuple(parsed))
        except ValueError as exc:
            raise ConfigError(f"invalid field: channel ({exc})") from None
        ham = parsed[0][1] if "hamiltonian" not in raw else _hamiltonian(_section(raw, "hamiltonian"), "hamiltonian")
    else:
        ham = _hamiltonian(_section(raw, "hamiltonian"), "hamiltonian")

    st = _section(raw, "state")
    state = CoherentStateParams(_num(st, "x0", "state"), _num(st, "p0", "state", 0.0),
                                _num(st, "sigma_x", "state", positive=True))
    if not grid.x_min < state.x0 < grid.x_max:
        raise ConfigError("invalid field: state.x0 (outside the grid window)")

    prop = _section(raw, "propagator", required=False) or {}
    dt = _num(prop, "dt", "propagator", positive=True) if "dt" in prop else None
    sched = _schedule(_section(raw, "schedule", required=False))
    ens = _section(raw, "ensemble", required=False) or {}
    count = _int(ens, "count", "ensemble", 1, minimum=1)

    coll = _section(raw, "collision", required=False)
    if coll is not None:
        coll = {k: _num(coll, k, "collision", positive=True) for k in ("density", "cross_section", "speed")}
    units = None
    u = _section(raw, "units", required=False)
    if u is not None:
        units = UnitScale.natural(_num(u, "length_unit", "units", positive=True),
                                  _num(u, "mass_unit", "units", positive=True))
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("invalid field: seed (expected an unsigned 64-bit integer)")
    out = raw.get("output")
    if out is not None and not isinstance(out, str):
        raise ConfigError("invalid field: output (expected a path string)")
    return Scenario(str(raw.get("name", name)), grid, part, ham, state, dt, sched, chan,
                    count, coll, units, seed, out, dict(raw))


def load_scenario(path: str | Path) -> Scenario:
    text = Path(path).read_text()
    if not text.strip():
        raise ConfigError("missing field: grid")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_scenario(raw, Path(path).stem)


def _micro() -> dict:
    scale = UnitScale.natural(MICRO["delta_x"], MICRO["mass"])
    dp = scale.to_sim(MICRO["delta_p"], length=1, mass=1, time=-1)
    return {
        "name": "micro",
        "units": {"length_unit": MICRO["delta_x"], "mass_unit": MICRO["mass"]},
        "grid": {"x_min": -16.0, "x_max": 16.0, "n": 256},
        "partition": {"delta_x": 1.0, "delta_p": dp, "x_origin": -0.5, "p_origin": -0.5 * dp},
        "hamiltonian": {"mass": 1.0, "potential": []},
        "state": {"x0": 0.0, "p0": 0.0, "sigma_x": 0.5},
        "seed": 0,
    }


def _macro() -> dict:
    scale = UnitScale.natural(MACRO["delta_x"], MACRO["mass"])
    sp = scale.to_sim(MACRO["sigma_p"], length=1, mass=1, time=-1)
    return {
        "name": "macro",
        "units": {"length_unit": MACRO["delta_x"], "mass_unit": MACRO["mass"]},
        "grid": {"x_min": -16.0, "x_max": 16.0, "n": 256},
        "partition": {"delta_x": 1.0, "delta_p": sp, "x_origin": -0.5, "p_origin": -0.5 * sp},
        "hamiltonian": {"mass": 1.0, "potential": []},
        "state": {"x0": 0.0, "p0": 0.0, "sigma_x": 0.5 / sp},
        "seed": 0,
    }


def _harmonic() -> dict:
    s = math.sqrt(0.5)
    d = 16.0 * s
    return {
        "name": "harmonic",
        "grid": {"x_min": -30.0, "x_max": 30.0, "n": 600},
        "partition": {"delta_x": d, "delta_p": d, "x_origin": 0.04 * d, "p_origin": 0.04 * d},
        "hamiltonian": {"mass": 1.0, "potential": [[2, 0.5]]},
        "state": {"x0": 0.54 * d, "p0": 0.54 * d, "sigma_x": s},
        "schedule": {"tau": 2.0 * math.pi / 64.0, "n": 64,
                     "times": [2.0 * math.pi * k / 8.0 for k in range(1, 9)]},
        "ensemble": {"count": 100},
        "seed": 0,
    }


def _quartic() -> dict:
    return {
        "name": "quartic",
        "grid": {"x_min": -8.0, "x_max": 8.0, "n": 256},
        "partition": {"delta_x": 4.0, "delta_p": 2.0, "x_origin": -2.0, "p_origin": -1.0},
        "hamiltonian": {"mass": 1.0, "potential": [[4, 0.2]]},
        "state": {"x0": 2.0, "p0": 0.0, "sigma_x": 1.0},
        "schedule": {"tau": 1.65, "n": 100, "times": [0.5 * k for k in range(1, 61)]},
        "ensemble": {"count": 10},
        "seed": 0,
    }


def _cloud_chamber() -> dict:
    raw = _micro()
    raw["name"] = "cloud-chamber"
    raw["collision"] = dict(CLOUD_CHAMBER)
    return raw


BUILTINS = {
    "micro": _micro,
    "macro": _macro,
    "harmonic": _harmonic,
    "quartic": _quartic,
    "cloud-chamber": _cloud_chamber,
}


def builtin_config(name: str) -> dict:
    if name not in BUILTINS:
        raise ConfigError(f"unknown builtin scenario {name!r} (choose from {', '.join(BUILTINS)})")
    return BUILTINS[name]()


def builtin(name: str) -> Scenario:
    return parse_scenario(builtin_config(name), name)
