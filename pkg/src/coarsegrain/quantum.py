"""Grid quantum dynamics, Husimi transforms and coarse-grained measurement.

Time evolution is Strang split-step with FFT kinetic factors.  Husimi values
are computed as ``<x p|psi>`` through a pair of matrix products, one Gaussian
window matrix over sample positions and one Fourier matrix over sample
momenta, restricted to grid points where the state has support.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Literal, Sequence

import numpy as np

from .core import (
    HBAR,
    CoherentStateParams,
    Grid,
    HamiltonianSpec,
    NumericalGuardError,
    SlotDistribution,
    SlotPartition,
    WaveFunction,
    coherent_state,
)
from .operators import QuadratureRule

EDGE_MASS_LIMIT = 1e-3
SUPPORT_CUTOFF = 1e-15


@dataclass(frozen=True)
class PropagatorConfig:
    """Strang split-step settings.

    ``dt`` is an upper bound; :func:`evolve` divides each interval into equal
    steps no longer than ``dt``.
    """

    dt: float
    steps_per_output: int = 1
    scheme: Literal["strang-split"] = "strang-split"
    edge_sigma: float | None = None

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps_per_output < 1:
            raise ValueError("steps_per_output must be >= 1")
        if self.scheme != "strang-split":
            raise ValueError(f"unsupported propagation scheme {self.scheme!r}")


def energy_scale(grid: Grid, spec: HamiltonianSpec) -> float:
    """Largest kinetic energy plus the potential's spread over the grid."""
    v = spec.potential(grid.x)
    return float(np.max(spec.kinetic(grid.p)) + (np.max(v) - np.min(v)))


def max_stable_dt(grid: Grid, spec: HamiltonianSpec, margin: float = 0.5) -> float:
    return margin * HBAR / energy_scale(grid, spec)


@lru_cache(maxsize=64)
def _split_factors(grid: Grid, spec: HamiltonianSpec, dt: float):
    half_v = np.exp(-0.5j * dt * spec.potential(grid.x) / HBAR)
    kin = np.exp(-1j * dt * spec.kinetic(grid.p) / HBAR)
    half_v.setflags(write=False)
    kin.setflags(write=False)
    return half_v, kin


def _check_stability(grid: Grid, spec: HamiltonianSpec, dt: float) -> None:
    e = energy_scale(grid, spec)
    if dt * e / HBAR >= 0.5:
        raise NumericalGuardError(
            f"time step {dt:g} too large for energy scale {e:g}; use dt < {0.5 * HBAR / e:g}"
        )


def edge_mass(psi: WaveFunction, margin: float) -> float:
    """Probability within ``margin`` of either grid edge."""
    g = psi.grid
    y = g.x
    near = (y - g.x_min < margin) | (g.x_max - y < margin)
    return float(np.sum(psi.density[near]) * g.dx)


def _check_edges(amp: np.ndarray, grid: Grid, margin: float) -> None:
    y = grid.x
    near = (y - grid.x_min < margin) | (grid.x_max - y < margin)
    m = float(np.sum(np.abs(amp[near]) ** 2) * grid.dx)
    if m > EDGE_MASS_LIMIT:
        raise NumericalGuardError(
            f"{m:.2e} probability reached the grid edge; enlarge the grid or shorten the run"
        )


def _steps(t: float, dt: float) -> int:
    return max(1, int(math.ceil(t / dt - 1e-12)))


def _propagate(amp: np.ndarray, grid: Grid, spec: HamiltonianSpec, h: float, nsteps: int,
               cfg: PropagatorConfig) -> np.ndarray:
    half_v, kin = _split_factors(grid, spec, h)
    margin = 3.0 * cfg.edge_sigma if cfg.edge_sigma else None
    a = amp.copy()
    for k in range(nsteps):
        a *= half_v
        a = np.fft.ifft(kin * np.fft.fft(a))
        a *= half_v
        if margin is not None and (k + 1) % cfg.steps_per_output == 0:
            _check_edges(a, grid, margin)
    if margin is not None:
        _check_edges(a, grid, margin)
    return a


def evolve(psi: WaveFunction, spec: HamiltonianSpec, cfg: PropagatorConfig, t: float) -> WaveFunction:
    """Apply ``exp(-i H t / hbar)``.

    ``t`` is split into equal steps no longer than ``cfg.dt``.  With
    ``cfg.edge_sigma`` set, the run aborts with :class:`NumericalGuardError`
    once more than 1e-3 probability comes within ``3 * edge_sigma`` of the
    grid edge.
    """
    if t < 0 or not math.isfinite(t):
        raise ValueError("evolution time must be finite and non-negative")
    if t == 0:
        return psi
    grid = psi.grid
    nsteps = _steps(t, cfg.dt)
    h = t / nsteps
    _check_stability(grid, spec, h)
    a = _propagate(psi.amplitudes, grid, spec, h, nsteps, cfg)
    return WaveFunction.normalized(a, grid)


def evolve_series(psi: WaveFunction, spec: HamiltonianSpec, cfg: PropagatorConfig,
                  times: Sequence[float]) -> list[WaveFunction]:
    """States at non-decreasing ``times``, each evolved from the previous one."""
    out = []
    cur, t_prev = psi, 0.0
    for t in times:
        if t < t_prev:
            raise ValueError("output times must be non-decreasing")
        cur = evolve(cur, spec, cfg, t - t_prev)
        out.append(cur)
        t_prev = t
    return out


def energy_expectation(psi: WaveFunction, spec: HamiltonianSpec) -> float:
    g = psi.grid
    pot = float(np.sum(spec.potential(g.x) * psi.density) * g.dx)
    kin = float(np.sum(spec.kinetic(g.p) * psi.momentum_density()))
    return pot + kin


@dataclass(frozen=True)
class PhaseLattice:
    """Rectangular set of ``(x, p)`` sample points."""

    xs: np.ndarray
    ps: np.ndarray

    @classmethod
    def uniform(cls, x_min: float, x_max: float, nx: int, p_min: float, p_max: float,
                np_: int) -> "PhaseLattice":
        """Cell-centred lattice."""
        dx = (x_max - x_min) / nx
        dp = (p_max - p_min) / np_
        return cls(x_min + dx * (np.arange(nx) + 0.5), p_min + dp * (np.arange(np_) + 0.5))

    @property
    def cell_area(self) -> float:
        return float((self.xs[1] - self.xs[0]) * (self.ps[1] - self.ps[0]))


@dataclass(frozen=True, eq=False)
class HusimiField:
    """``Q(x, p)`` on a :class:`PhaseLattice`; ``values[a, b]`` is at ``(xs[a], ps[b])``."""

    values: np.ndarray
    lattice: PhaseLattice

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if np.any(v < -1e-12):
            raise ValueError("Husimi values below -1e-12")
        v = np.clip(v, 0.0, None)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def riemann_sum(self) -> float:
        return float(np.sum(self.values) * self.lattice.cell_area)

    def peak(self) -> tuple[float, float]:
        a, b = np.unravel_index(np.argmax(self.values), self.values.shape)
        return float(self.lattice.xs[a]), float(self.lattice.ps[b])


def _support(psi: WaveFunction) -> np.ndarray:
    """Indices carrying all but ``SUPPORT_CUTOFF`` of the probability."""
    w = psi.density * psi.grid.dx
    order = np.argsort(w)
    cum = np.cumsum(w[order])
    drop = order[cum < SUPPORT_CUTOFF]
    keep = np.ones(w.size, dtype=bool)
    keep[drop] = False
    return np.flatnonzero(keep)


def _wrapped(d: np.ndarray, length: float) -> np.ndarray:
    return d - length * np.round(d / length)


def _window_matrix(xs: np.ndarray, y: np.ndarray, sigma_x: float, grid: Grid) -> np.ndarray:
    """``dx * phi0(y - x)`` with minimum-image distances, shape ``(len(xs), len(y))``."""
    d = _wrapped(y[None, :] - xs[:, None], grid.length)
    norm = (2.0 * np.pi * sigma_x**2) ** -0.25
    return grid.dx * norm * np.exp(-(d * d) / (4.0 * sigma_x**2))


def coherent_amplitudes(psi: WaveFunction, xs: np.ndarray, ps: np.ndarray, sigma_x: float) -> np.ndarray:
    """``<x p|psi>`` for every pair, shape ``(len(xs), len(ps))``.

    Points outside the grid's position range or momentum zone would alias
    back onto the lattice; they are set to zero.
    """
    g = psi.grid
    xs = np.asarray(xs, float)
    ps = np.asarray(ps, float)
    idx = _support(psi)
    y = g.x[idx]
    a = _window_matrix(xs, y, sigma_x, g) * psi.amplitudes[idx][None, :]
    b = np.exp(-1j * np.outer(y, ps) / HBAR)
    out = a @ b
    out[(xs < g.x_min) | (xs > g.x_max), :] = 0.0
    out[:, (ps < g.p_min) | (ps > g.p_max)] = 0.0
    return out


def husimi(psi: WaveFunction, sigma_x: float, lattice: PhaseLattice) -> HusimiField:
    """``Q(x, p) = |<x p|psi>|^2 / (2 pi hbar)`` on ``lattice``."""
    c = coherent_amplitudes(psi, lattice.xs, lattice.ps, sigma_x)
    return HusimiField(np.abs(c) ** 2 / (2.0 * np.pi * HBAR), lattice)


def _mass_range(values: np.ndarray, density: np.ndarray, tail: float) -> tuple[float, float]:
    order = np.argsort(values)
    v = values[order]
    c = np.cumsum(density[order])
    c /= c[-1]
    lo = v[min(np.searchsorted(c, tail), v.size - 1)]
    hi = v[min(np.searchsorted(c, 1.0 - tail), v.size - 1)]
    return float(lo), float(hi)


def support_window(psi: WaveFunction, part: SlotPartition, sigma_x: float,
                   margin: float = 6.0) -> tuple[range, range]:
    """Slot index ranges covering the state's support plus ``margin`` packet widths."""
    g = psi.grid
    sigma_p = HBAR / (2.0 * sigma_x)
    xlo, xhi = _mass_range(g.x, psi.density, 1e-14)
    plo, phi = _mass_range(g.p, psi.momentum_density(), 1e-14)
    xlo, xhi = xlo - margin * sigma_x, xhi + margin * sigma_x
    plo, phi = plo - margin * sigma_p, phi + margin * sigma_p
    i0 = math.floor((xlo - part.x_origin) / part.delta_x)
    i1 = math.floor((xhi - part.x_origin) / part.delta_x)
    j0 = math.floor((plo - part.p_origin) / part.delta_p)
    j1 = math.floor((phi - part.p_origin) / part.delta_p)
    return range(i0, i1 + 1), range(j0, j1 + 1)


def husimi_rule(part: SlotPartition, sigma_x: float) -> QuadratureRule:
    """Gauss-Legendre nodes for integrating ``Q`` over slots.

    ``Q`` is smooth on the packet scale, so ``1.5 side / sigma + 8`` nodes
    suffice (the collapse synthesis needs the denser operator rule).
    """
    return QuadratureRule.for_partition(part, sigma_x, density=1.5)


def _nodes(ranges: range, bounds: Callable, rule: Callable):
    pts, wts, owner = [], [], []
    for k in ranges:
        z, w = rule(*bounds(k))
        pts.append(z)
        wts.append(w)
        owner.append(np.full(z.size, k))
    return np.concatenate(pts), np.concatenate(wts), np.concatenate(owner)


def slot_probabilities(psi: WaveFunction, part: SlotPartition, sigma_x: float,
                       quad: QuadratureRule | None = None,
                       window: tuple[range, range] | None = None,
                       captured_mass_tol: float = 1e-3, tol: float = 1e-6) -> SlotDistribution:
    """``p_ij = int_slot Q dx dp`` by tensor quadrature over every slot in ``window``.

    The window defaults to :func:`support_window`.  Slots whose probability is
    below 1e-300 are omitted.
    """
    quad = quad or husimi_rule(part, sigma_x)
    ir, jr = window or support_window(psi, part, sigma_x)
    xs, wx, ix = _nodes(ir, part.x_bounds, quad.x_nodes)
    ps, wp, jp = _nodes(jr, part.p_bounds, quad.p_nodes)
    q = np.abs(coherent_amplitudes(psi, xs, ps, sigma_x)) ** 2 / (2.0 * np.pi * HBAR)
    # sum rows per slot column, then columns per slot row
    wq = (wx[:, None] * q) * wp[None, :]
    rows = np.add.reduceat(wq, np.searchsorted(ix, list(ir)), axis=0)
    cells = np.add.reduceat(rows, np.searchsorted(jp, list(jr)), axis=1)
    entries = {}
    for a, i in enumerate(ir):
        for b, j in enumerate(jr):
            v = float(cells[a, b])
            if v > 1e-300:
                entries[(i, j)] = v
    return SlotDistribution(entries, part, captured_mass_tol=captured_mass_tol, tol=tol)


def coarse_observable_expectation(dist: SlotDistribution, func: Callable[[float, float], float]) -> float:
    """``sum_ij A(x_i, p_j) p_ij`` for a coarse observable ``A``."""
    part = dist.partition
    terms = []
    for (i, j), v in dist.entries.items():
        a = float(func(float(part.x_center(i)), float(part.p_center(j))))
        if not math.isfinite(a):
            raise ValueError(f"observable is not finite on populated slot ({i}, {j})")
        terms.append(a * v)
    return math.fsum(terms)


def as_generator(seed) -> np.random.Generator:
    """Philox generator from an int, a ``SeedSequence`` or a generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def sample_slot(dist: SlotDistribution, rng) -> tuple[int, int]:
    """Draw a slot with probability ``p_ij / sum p``."""
    rng = as_generator(rng)
    keys = list(dist.entries)
    if not keys:
        raise ValueError("cannot sample from an empty distribution")
    probs = np.fromiter(dist.entries.values(), dtype=float, count=len(keys))
    total = probs.sum()
    if not total > 0:
        raise ValueError("cannot sample from an all-zero distribution")
    cum = np.cumsum(probs)
    k = int(np.searchsorted(cum, rng.random() * total, side="right"))
    return keys[min(k, len(keys) - 1)]


def project_slot(psi: WaveFunction, part: SlotPartition, i: int, j: int, sigma_x: float,
                 quad: QuadratureRule | None = None) -> np.ndarray:
    """Unnormalized ``P_ij psi`` synthesized from coherent states at slot nodes."""
    g = psi.grid
    quad = quad or QuadratureRule.for_partition(part, sigma_x)
    xs, wx, ps, wp = quad.slot_nodes(part, i, j)
    c = coherent_amplitudes(psi, xs, ps, sigma_x)
    d = c * (wx[:, None] * wp[None, :]) / (2.0 * np.pi * HBAR)
    y = g.x
    e = d @ np.exp(1j * np.outer(ps, y) / HBAR)
    win = _window_matrix(xs, y, sigma_x, g) / g.dx
    return np.sum(win * e, axis=0)


@dataclass(frozen=True, eq=False)
class CollapseResult:
    slot: tuple[int, int]
    state: WaveFunction
    distribution: SlotDistribution
    probability: float


def measure_collapse(psi: WaveFunction, part: SlotPartition, sigma_x: float, rng_seed,
                     mode: Literal["luders", "reprepare"] = "luders",
                     quad: QuadratureRule | None = None,
                     dist: SlotDistribution | None = None) -> CollapseResult:
    """Sample a slot from ``p_ij`` and apply the post-measurement map.

    ``mode="luders"`` returns ``P_ij psi / ||P_ij psi||``; ``mode="reprepare"``
    returns the coherent state at the slot centre.
    """
    if dist is None:
        dist = slot_probabilities(psi, part, sigma_x, captured_mass_tol=1e-2)
    if dist.total < 0.99:
        raise ValueError(f"state is not inside the measurement window (captured {dist.total:.4f})")
    i, j = sample_slot(dist, rng_seed)
    if mode == "luders":
        amp = project_slot(psi, part, i, j, sigma_x, quad)
        new = WaveFunction.normalized(amp, psi.grid)
    elif mode == "reprepare":
        params = CoherentStateParams(float(part.x_center(i)), float(part.p_center(j)), sigma_x)
        new = coherent_state(params, psi.grid)
    else:
        raise ValueError(f"unknown collapse mode {mode!r}")
    return CollapseResult((i, j), new, dist, dist[(i, j)])
