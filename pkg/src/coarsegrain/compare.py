"""Quantum versus Liouville slot dynamics from the same initial state."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CoherentStateParams, Grid, HamiltonianSpec, SlotDistribution, SlotPartition, coherent_state
from .ehrenfest import empirical_ehrenfest_time
from .liouville import ClassicalField, coherent_husimi_density, pushforward_evolve, total_variation
from .quantum import PropagatorConfig, evolve_series, max_stable_dt, slot_probabilities

HUSIMI_EXTENT = 9.0


@dataclass(frozen=True, eq=False)
class ComparisonSeries:
    times: tuple[float, ...]
    tv: tuple[float, ...]
    quantum: tuple[SlotDistribution, ...]
    classical: tuple[ClassicalField, ...]

    def first_crossing(self, threshold: float = 0.3) -> float:
        """Interpolated first time the TV exceeds ``threshold`` (``inf`` if never)."""
        return empirical_ehrenfest_time(self.times, self.tv, threshold)


def quantum_vs_liouville(params: CoherentStateParams, spec: HamiltonianSpec, part: SlotPartition,
                         grid: Grid, times: Sequence[float], cfg: PropagatorConfig | None = None,
                         cells: int = 32) -> ComparisonSeries:
    """Slot distributions of the quantum state and of its transported initial Husimi density.

    The classical side pushes the Husimi density of the coherent state forward
    along the exact Hamiltonian flow (see :func:`pushforward_evolve`).
    """
    times = [float(t) for t in times]
    if not times or times[0] <= 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be positive and increasing")
    cfg = cfg or PropagatorConfig(dt=0.99 * max_stable_dt(grid, spec))
    ax = HUSIMI_EXTENT * params.sigma_x
    ap = HUSIMI_EXTENT * params.sigma_p
    support = (params.x0 - ax, params.x0 + ax, params.p0 - ap, params.p0 + ap)
    ser = pushforward_evolve(coherent_husimi_density(params), spec, part, times, support, cells=cells)
    states = evolve_series(coherent_state(params, grid), spec, cfg, times)
    qd = tuple(slot_probabilities(q, part, params.sigma_x, captured_mass_tol=1e-2) for q in states)
    tv = tuple(total_variation(a, b) for a, b in zip(qd, ser.fields))
    return ComparisonSeries(tuple(times), tv, qd, tuple(ser.fields))
