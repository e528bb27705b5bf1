"""Repeated coarse-grained measurements and mixed-unitary channels."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal, Sequence

import numpy as np

from .core import (
    HamiltonianSpec,
    NumericalGuardError,
    Slot,
    SlotDistribution,
    SlotPartition,
    WaveFunction,
    mixture,
)
from .liouville import SlotSequence, discrete_characteristics
from .quantum import (
    PropagatorConfig,
    evolve,
    max_stable_dt,
    measure_collapse,
    slot_probabilities,
)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Outcome sequence ``(k, (mu_k, nu_k))`` of one measured run.

    ``outcomes`` has ``n + 1`` entries unless the run was ``truncated``.
    """

    seed: int
    tau: float | tuple[float, ...]
    outcomes: tuple[tuple[int, Slot], ...]
    final_state_norm: float
    steps: int = -1
    truncated: bool = False
    reason: str = ""

    def __post_init__(self) -> None:
        if self.steps < 0:
            object.__setattr__(self, "steps", len(self.outcomes) - 1)

    @property
    def slots(self) -> tuple[Slot, ...]:
        return tuple(s for _, s in self.outcomes)

    def as_dict(self) -> dict:
        tau = list(self.tau) if isinstance(self.tau, tuple) else self.tau
        return {
            "seed": self.seed,
            "tau": tau,
            "outcomes": [[k, [s[0], s[1]]] for k, s in self.outcomes],
            "final_state_norm": self.final_state_norm,
            "steps": self.steps,
            "truncated": self.truncated,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class MixedChannelSpec:
    """Weights ``p_n`` and Hamiltonians of a mixture of unitary evolutions."""

    components: tuple[tuple[float, HamiltonianSpec], ...]

    def __post_init__(self) -> None:
        comps = tuple((float(w), s) for w, s in self.components)
        if not comps:
            raise ValueError("a mixed channel needs at least one component")
        if any(w < 0 for w, _ in comps):
            raise ValueError("channel weights must be non-negative")
        if abs(math.fsum(w for w, _ in comps) - 1.0) > 1e-12:
            raise ValueError("channel weights must sum to 1")
        object.__setattr__(self, "components", comps)

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(w for w, _ in self.components)


def _taus(tau, n: int) -> list[float]:
    taus = [float(tau)] * n if np.isscalar(tau) else [float(t) for t in tau]
    if len(taus) != n:
        raise ValueError("need one interval per step")
    if any(not t > 0 for t in taus):
        raise ValueError("measurement interval must be positive")
    return taus


def repeated_measurement_run(psi0: WaveFunction, spec: HamiltonianSpec, part: SlotPartition,
                             sigma_x: float, tau: float | Sequence[float], n: int, seed: int,
                             cfg: PropagatorConfig | None = None,
                             mode: Literal["luders", "reprepare"] = "luders") -> TrajectoryRecord:
    """Initial measurement followed by ``n`` rounds of ``evolve(tau)`` and measurement.

    A state that leaves the measurement window or the grid ends the record early
    with ``truncated=True``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    taus = _taus(tau, n)
    cfg = cfg or PropagatorConfig(dt=0.99 * max_stable_dt(psi0.grid, spec))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    outcomes: list[tuple[int, Slot]] = []
    psi = psi0
    reason = ""
    try:
        for k in range(n + 1):
            res = measure_collapse(psi, part, sigma_x, rng, mode=mode)
            outcomes.append((k, res.slot))
            psi = res.state
            if k < n:
                psi = evolve(psi, spec, cfg, taus[k])
    except (NumericalGuardError, ValueError) as exc:
        reason = str(exc)
    tau_out = float(tau) if np.isscalar(tau) else tuple(taus)
    norm = float(np.sqrt(np.sum(psi.density) * psi.grid.dx))
    return TrajectoryRecord(int(seed), tau_out, tuple(outcomes), norm, steps=n,
                            truncated=len(outcomes) < n + 1, reason=reason)


def classical_prediction(start_slot: Slot, spec: HamiltonianSpec, part: SlotPartition,
                         tau: float | Sequence[float], n: int, **kwargs) -> SlotSequence:
    """Slot sequence of the discrete classical equations of motion."""
    return discrete_characteristics(start_slot, spec, part, tau, n, **kwargs)


@dataclass(frozen=True)
class AgreementReport:
    fraction: float
    mean_distance: float
    steps: int


def trajectory_agreement(record, prediction) -> AgreementReport:
    """Fraction of exact slot matches and mean Chebyshev index distance.

    Either argument may be a :class:`TrajectoryRecord` or a slot sequence.
    """
    a = record.slots if isinstance(record, TrajectoryRecord) else tuple(map(tuple, record))
    b = prediction.slots if isinstance(prediction, TrajectoryRecord) else tuple(map(tuple, prediction))
    if len(a) != len(b):
        raise ValueError(f"sequence lengths differ: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("cannot score empty sequences")
    hits = sum(1 for s, t in zip(a, b) if s == t)
    dist = [max(abs(s[0] - t[0]), abs(s[1] - t[1])) for s, t in zip(a, b)]
    return AgreementReport(hits / len(a), float(np.mean(dist)), len(a))


def record_agreement(record: TrajectoryRecord, spec: HamiltonianSpec, part: SlotPartition,
                     **kwargs) -> AgreementReport:
    """Score a record against the prediction started from its first outcome.

    Steps missing from a truncated record count as misses; the mean distance is
    taken over the recorded steps only.
    """
    if not record.outcomes:
        raise ValueError("record has no outcomes")
    pred = classical_prediction(record.slots[0], spec, part, record.tau, record.steps, **kwargs)
    m = min(len(record.slots), len(pred))
    rep = trajectory_agreement(record.slots[:m], pred.slots[:m])
    total = record.steps + 1
    return AgreementReport(rep.fraction * m / total, rep.mean_distance, total)


def child_seed(master_seed: int, index: int) -> int:
    """Independent 64-bit seed for stream ``index`` of ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_ensemble(run: Callable[[int], TrajectoryRecord], master_seed: int, count: int,
                 threads: int = 1) -> list[TrajectoryRecord]:
    """Run ``run(child_seed(master_seed, k))`` for ``k < count``, in index order."""
    seeds = [child_seed(master_seed, k) for k in range(count)]
    if threads <= 1:
        return [run(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(run, seeds))


def mixed_unitary_distribution(psi0: WaveFunction, chan: MixedChannelSpec, part: SlotPartition,
                               sigma_x: float, t: float,
                               cfg: PropagatorConfig | None = None) -> SlotDistribution:
    """``sum_n p_n p_ij^(n)(t)`` from component-wise evolutions."""
    dists = []
    for _, spec in chan.components:
        c = cfg or PropagatorConfig(dt=0.99 * max_stable_dt(psi0.grid, spec))
        psi = evolve(psi0, spec, c, t) if t > 0 else psi0
        dists.append(slot_probabilities(psi, part, sigma_x))
    return mixture(dists, chan.weights)
