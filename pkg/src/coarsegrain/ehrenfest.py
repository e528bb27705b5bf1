"""Ehrenfest-time estimates for coarse-grained classical behaviour.

The lower bound is

    t_E >= hbar / [ dp^2 / m + 2 |D2V(x_i) / dx^2| dx^2 ],

with ``D2V(x_i) = V(x_i + dx) - 2 V(x_i) + V(x_i - dx)``.  The two terms in
the denominator are reported separately as rates (``term / hbar``), so that
``t_lower_bound = 1 / (kinetic_term + potential_term)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .core import HBAR, HBAR_SI, HamiltonianSpec, SlotPartition, UnitScale, WaveFunction
from .operators import (
    OperatorMatrix,
    Stripes,
    commutator,
    effective_hamiltonian,
    hamiltonian_matrix,
    quadratic_fluctuation_hamiltonian,
    second_difference,
    spectral_norm,
)


@dataclass(frozen=True)
class EhrenfestReport:
    t_lower_bound: float
    kinetic_term: float
    potential_term: float
    slot: tuple[int, int] | None = None
    label: str = ""

    def __post_init__(self) -> None:
        if not self.t_lower_bound > 0:
            raise ValueError("Ehrenfest bound must be positive")

    @property
    def order_of_magnitude(self) -> int:
        return order_of_magnitude(self.t_lower_bound)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["slot"] = list(self.slot) if self.slot is not None else None
        d["order_of_magnitude"] = self.order_of_magnitude
        return d


def order_of_magnitude(value: float) -> int:
    """``round(log10 |value|)``."""
    return int(round(math.log10(abs(value))))


def ehrenfest_lower_bound(spec: HamiltonianSpec, part: SlotPartition, x_i: float,
                          hbar: float = HBAR, slot: tuple[int, int] | None = None,
                          label: str = "") -> EhrenfestReport:
    """Lower bound on the Ehrenfest time for the position stripe centred at ``x_i``."""
    dx, dp = part.delta_x, part.delta_p
    kinetic = dp * dp / spec.mass / hbar
    curv = float(second_difference(spec, x_i, dx)) / (dx * dx)
    potential = 2.0 * abs(curv) * dx * dx / hbar
    total = kinetic + potential
    if not total > 0:
        raise ValueError("Ehrenfest bound undefined: both denominator terms vanish")
    return EhrenfestReport(1.0 / total, kinetic, potential, slot, label)


def textbook_free_ehrenfest(mass: float, sigma_p: float, hbar: float = HBAR) -> float:
    """``m hbar / sigma_p^2``."""
    if not sigma_p > 0:
        raise ValueError("sigma_p must be positive")
    return mass * hbar / (sigma_p * sigma_p)


def collision_time(density: float, cross_section: float, speed: float) -> float:
    """Mean free time ``1 / (n sigma v)``."""
    if not (density > 0 and cross_section > 0 and speed > 0):
        raise ValueError("collision parameters must be positive")
    return 1.0 / (density * cross_section * speed)


@dataclass(frozen=True)
class DriftReport:
    rate: float
    holder_bound: float
    slot: tuple[int, int]

    @property
    def time(self) -> float:
        return math.inf if self.rate == 0 else 1.0 / self.rate


def fluctuation_hamiltonian(spec: HamiltonianSpec, part: SlotPartition, stripes: Stripes,
                            fluct: tuple[OperatorMatrix, OperatorMatrix],
                            truncation: str = "quadratic") -> np.ndarray:
    """``dH`` at quadratic order, or the full ``H - H_eff``."""
    if truncation == "quadratic":
        return quadratic_fluctuation_hamiltonian(spec, part, stripes, fluct).A
    if truncation == "full":
        h = hamiltonian_matrix(spec, stripes.grid).A
        return h - effective_hamiltonian(spec, part, stripes, fluct).A
    raise ValueError(f"unknown truncation {truncation!r}")


def drift_rate(psi: WaveFunction, spec: HamiltonianSpec, part: SlotPartition, stripes: Stripes,
               fluct: tuple[OperatorMatrix, OperatorMatrix], slot: tuple[int, int],
               truncation: str = "quadratic") -> DriftReport:
    """``|Tr[rho [dH, P_ij]]| / hbar`` and its operator-norm ceiling."""
    dh = fluctuation_hamiltonian(spec, part, stripes, fluct, truncation)
    c = commutator(dh, stripes.element(*slot).A)
    v = psi.amplitudes * math.sqrt(psi.grid.dx)
    rate = abs(np.vdot(v, c @ v)) / HBAR
    return DriftReport(float(rate), spectral_norm(c) / HBAR, tuple(slot))


def empirical_ehrenfest_time(times: Sequence[float], tv: Sequence[float],
                             threshold: float = 0.3) -> float:
    """First time the TV series exceeds ``threshold``, linearly interpolated.

    Returns ``inf`` if the series never exceeds it.
    """
    t_prev, v_prev = 0.0, 0.0
    for t, v in zip(times, tv):
        if v > threshold:
            if v == v_prev:
                return float(t)
            return float(t_prev + (threshold - v_prev) * (t - t_prev) / (v - v_prev))
        t_prev, v_prev = t, v
    return math.inf


# Inputs of the physical scenario table, SI units.
MICRO = {"mass": 1e-27, "delta_x": 1e-10, "delta_p": 1e-24}
MACRO = {"mass": 1e-3, "delta_x": 1e-6, "sigma_p": 1e-28}
CLOUD_CHAMBER = {"density": 1e25, "cross_section": 1e-18, "speed": 1e7}


def micro_report(scale: UnitScale | None = None) -> EhrenfestReport:
    """Free microscopic particle, evaluated in simulation units and returned in seconds."""
    scale = scale or UnitScale.natural(MICRO["delta_x"], MICRO["mass"])
    spec = HamiltonianSpec.free(scale.to_sim(MICRO["mass"], mass=1))
    part = SlotPartition(scale.to_sim(MICRO["delta_x"], length=1),
                         scale.to_sim(MICRO["delta_p"], length=1, mass=1, time=-1))
    r = ehrenfest_lower_bound(spec, part, 0.0, hbar=scale.hbar, slot=(0, 0), label="micro")
    return EhrenfestReport(
        scale.to_si(r.t_lower_bound, time=1),
        scale.to_si(r.kinetic_term, time=-1),
        scale.to_si(r.potential_term, time=-1),
        r.slot,
        "micro",
    )


def micro_report_si() -> EhrenfestReport:
    """Direct SI evaluation of :func:`micro_report`."""
    spec = HamiltonianSpec.free(MICRO["mass"])
    part = SlotPartition(MICRO["delta_x"], MICRO["delta_p"])
    return ehrenfest_lower_bound(spec, part, 0.0, hbar=HBAR_SI, slot=(0, 0), label="micro")


def macro_time(scale: UnitScale | None = None) -> float:
    """Textbook free-particle Ehrenfest time of the macroscopic body, seconds."""
    scale = scale or UnitScale.natural(MACRO["delta_x"], MACRO["mass"])
    m = scale.to_sim(MACRO["mass"], mass=1)
    sp = scale.to_sim(MACRO["sigma_p"], length=1, mass=1, time=-1)
    return scale.to_si(textbook_free_ehrenfest(m, sp, hbar=scale.hbar), time=1)


@dataclass(frozen=True)
class ScenarioTable:
    micro: EhrenfestReport
    macro_t: float
    collision_tau: float

    @property
    def collision_shorter(self) -> bool:
        return self.collision_tau < self.micro.t_lower_bound

    def rows(self) -> list[dict]:
        return [
            {"scenario": "micro", "quantity": "t_E", "seconds": self.micro.t_lower_bound,
             "order_of_magnitude": order_of_magnitude(self.micro.t_lower_bound), **MICRO},
            {"scenario": "macro", "quantity": "t_E", "seconds": self.macro_t,
             "order_of_magnitude": order_of_magnitude(self.macro_t), **MACRO},
            {"scenario": "cloud-chamber", "quantity": "collision_time", "seconds": self.collision_tau,
             "order_of_magnitude": order_of_magnitude(self.collision_tau), **CLOUD_CHAMBER,
             "shorter_than_micro_t_E": self.collision_shorter},
        ]


def scenario_table() -> ScenarioTable:
    return ScenarioTable(micro_report(), macro_time(), collision_time(**CLOUD_CHAMBER))
