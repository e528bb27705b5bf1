"""Phase-space geometry, units, states and slot bookkeeping.

Every numerical routine in the package works in dimensionless simulation
units with ``hbar = 1``.  :class:`UnitScale` converts physical SI inputs in
and out of those units.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

HBAR = 1.0
HBAR_SI = 1.054571817e-34  # J s

_BOUNDARY_SNAP = 1e-9


class NumericalGuardError(RuntimeError):
    """A run left the regime where its discretization can be trusted."""


@dataclass(frozen=True)
class UnitScale:
    """Conversion between SI quantities and simulation units.

    A simulation quantity with dimensions ``L^a M^b T^c`` equals the SI value
    divided by ``length_unit**a * mass_unit**b * time_unit**c``.
    """

    hbar: float = HBAR
    length_unit: float = 1.0
    mass_unit: float = 1.0
    time_unit: float = 1.0

    def __post_init__(self) -> None:
        for name in ("hbar", "length_unit", "mass_unit", "time_unit"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        recovered = self.hbar * self.mass_unit * self.length_unit**2 / self.time_unit
        if abs(recovered / HBAR_SI - 1.0) > 1e-12:
            raise ValueError(
                f"unit scale reproduces hbar = {recovered:.12e} J s, expected {HBAR_SI:.12e}"
            )

    @classmethod
    def natural(cls, length_unit: float, mass_unit: float) -> "UnitScale":
        """Scale with ``hbar = 1`` fixed by the chosen length and mass units."""
        return cls(
            hbar=HBAR,
            length_unit=length_unit,
            mass_unit=mass_unit,
            time_unit=mass_unit * length_unit**2 / HBAR_SI,
        )

    def _factor(self, length: int, mass: int, time: int) -> float:
        return self.length_unit**length * self.mass_unit**mass * self.time_unit**time

    def to_sim(self, value, length: int = 0, mass: int = 0, time: int = 0):
        return value / self._factor(length, mass, time)

    def to_si(self, value, length: int = 0, mass: int = 0, time: int = 0):
        return value * self._factor(length, mass, time)

    @property
    def momentum_unit(self) -> float:
        return self._factor(1, 1, -1)

    @property
    def energy_unit(self) -> float:
        return self._factor(2, 1, -2)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic position lattice and its FFT-conjugate momentum lattice."""

    x_min: float
    x_max: float
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid needs n >= 8 points, got {self.n!r}")
        if not (math.isfinite(self.x_min) and math.isfinite(self.x_max)):
            raise ValueError("grid bounds must be finite")
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def dp(self) -> float:
        return 2.0 * np.pi * HBAR / self.length

    @property
    def momentum_period(self) -> float:
        """Width of the momentum Brillouin zone, ``2 pi hbar / dx``."""
        return 2.0 * np.pi * HBAR / self.dx

    @property
    def p_min(self) -> float:
        return -0.5 * self.momentum_period

    @property
    def p_max(self) -> float:
        return 0.5 * self.momentum_period

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def p(self) -> np.ndarray:
        """Momentum lattice in FFT order."""
        return 2.0 * np.pi * HBAR * np.fft.fftfreq(self.n, d=self.dx)


@dataclass(frozen=True)
class SlotPartition:
    """Rectangular tiling of phase space into slots of size ``delta_x * delta_p``.

    Slot ``(i, j)`` covers ``[x_origin + i dx, x_origin + (i+1) dx)`` times the
    analogous momentum interval; boundary points belong to the upper slot.
    """

    delta_x: float
    delta_p: float
    x_origin: float = 0.0
    p_origin: float = 0.0

    def __post_init__(self) -> None:
        if not (self.delta_x > 0 and self.delta_p > 0):
            raise ValueError("slot sides must be positive")
        for name in ("delta_x", "delta_p", "x_origin", "p_origin"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def coarseness(self) -> float:
        """Slot area in units of hbar."""
        return self.delta_x * self.delta_p / HBAR

    @property
    def area(self) -> float:
        return self.delta_x * self.delta_p

    def x_bounds(self, i: int) -> tuple[float, float]:
        a = self.x_origin + i * self.delta_x
        return a, a + self.delta_x

    def p_bounds(self, j: int) -> tuple[float, float]:
        a = self.p_origin + j * self.delta_p
        return a, a + self.delta_p

    def x_center(self, i):
        return self.x_origin + (np.asarray(i) + 0.5) * self.delta_x

    def p_center(self, j):
        return self.p_origin + (np.asarray(j) + 0.5) * self.delta_p

    def shifted(self, dx: float = 0.0, dp: float = 0.0) -> "SlotPartition":
        return SlotPartition(self.delta_x, self.delta_p, self.x_origin + dx, self.p_origin + dp)


def _snapped_floor(q):
    q = np.asarray(q, dtype=float)
    r = np.round(q)
    q = np.where(np.abs(q - r) < _BOUNDARY_SNAP * np.maximum(1.0, np.abs(r)), r, q)
    return np.floor(q).astype(np.int64)


def slot_index(x, p, part: SlotPartition):
    """Slot ``(i, j)`` containing the phase-space point ``(x, p)``.

    Works elementwise on arrays.  Points within 1e-9 slot widths of a boundary
    are treated as lying on it and go to the upper slot.
    """
    xa = np.asarray(x, dtype=float)
    pa = np.asarray(p, dtype=float)
    if not (np.all(np.isfinite(xa)) and np.all(np.isfinite(pa))):
        raise ValueError("slot_index needs finite coordinates")
    i = _snapped_floor((xa - part.x_origin) / part.delta_x)
    j = _snapped_floor((pa - part.p_origin) / part.delta_p)
    if i.ndim == 0 and j.ndim == 0:
        return int(i), int(j)
    return i, j


def slot_center(i, j, part: SlotPartition):
    x = part.x_center(i)
    p = part.p_center(j)
    if np.ndim(x) == 0 and np.ndim(p) == 0:
        return float(x), float(p)
    return x, p


@dataclass(frozen=True)
class HamiltonianSpec:
    """``H(x, p) = p^2 / 2m + sum_n c_n x^n``."""

    mass: float
    potential_coeffs: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mass) and self.mass > 0):
            raise ValueError("mass must be positive")
        coeffs = tuple((int(n), float(c)) for n, c in self.potential_coeffs)
        for n, c in coeffs:
            if n < 0:
                raise ValueError("potential powers must be >= 0")
            if not math.isfinite(c):
                raise ValueError("potential coefficients must be finite")
        object.__setattr__(self, "potential_coeffs", coeffs)

    @classmethod
    def free(cls, mass: float = 1.0) -> "HamiltonianSpec":
        return cls(mass)

    @classmethod
    def harmonic(cls, mass: float = 1.0, omega: float = 1.0) -> "HamiltonianSpec":
        return cls(mass, ((2, 0.5 * mass * omega**2),))

    @classmethod
    def quartic(cls, c4: float, mass: float = 1.0, c2: float = 0.0) -> "HamiltonianSpec":
        coeffs = ((4, c4),) if c2 == 0 else ((2, c2), (4, c4))
        return cls(mass, coeffs)

    @property
    def degree(self) -> int:
        return max((n for n, c in self.potential_coeffs if c != 0), default=0)

    @property
    def is_free(self) -> bool:
        return all(c == 0 or n == 0 for n, c in self.potential_coeffs)

    @property
    def _poly(self) -> np.ndarray:
        """Dense coefficients, lowest power first."""
        c = np.zeros(self.degree + 1)
        for n, v in self.potential_coeffs:
            if n <= self.degree:
                c[n] += v
        return c

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        v = np.zeros_like(x)
        for c in self._poly[::-1]:
            v = v * x + c
        return v

    def force(self, x):
        """``-dV/dx``."""
        x = np.asarray(x, dtype=float)
        c = self._poly
        f = np.zeros_like(x)
        for n in range(c.size - 1, 0, -1):
            f = f * x - n * c[n]
        return f

    def kinetic(self, p):
        p = np.asarray(p, dtype=float)
        return p * p / (2.0 * self.mass)

    def energy(self, x, p):
        return self.kinetic(p) + self.potential(x)


@dataclass(frozen=True)
class CoherentStateParams:
    x0: float
    p0: float
    sigma_x: float

    def __post_init__(self) -> None:
        if not (self.sigma_x > 0 and math.isfinite(self.sigma_x)):
            raise ValueError("sigma_x must be positive")
        if not (math.isfinite(self.x0) and math.isfinite(self.p0)):
            raise ValueError("coherent state centre must be finite")

    @property
    def sigma_p(self) -> float:
        return HBAR / (2.0 * self.sigma_x)


@dataclass(frozen=True, eq=False)
class WaveFunction:
    """Unit-norm amplitudes on a :class:`Grid` (``sum |psi|^2 dx = 1``)."""

    amplitudes: np.ndarray
    grid: Grid

    def __post_init__(self) -> None:
        amp = np.array(self.amplitudes, dtype=complex)
        if amp.shape != (self.grid.n,):
            raise ValueError(f"amplitudes shape {amp.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        norm = float(np.sum(np.abs(amp) ** 2) * self.grid.dx)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"wave function norm {norm!r} differs from 1")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def normalized(cls, amplitudes, grid: Grid) -> "WaveFunction":
        amp = np.asarray(amplitudes, dtype=complex)
        norm = np.sqrt(np.sum(np.abs(amp) ** 2) * grid.dx)
        if not norm > 0:
            raise ValueError("cannot normalize a zero wave function")
        return cls(amp / norm, grid)

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def momentum_density(self) -> np.ndarray:
        """``|psi(p)|^2`` in FFT order, normalized to sum to one."""
        w = np.abs(np.fft.fft(self.amplitudes)) ** 2
        return w / w.sum()

    def expect_x(self) -> float:
        return float(np.sum(self.grid.x * self.density) * self.grid.dx)

    def expect_p(self) -> float:
        return float(np.sum(self.grid.p * self.momentum_density()))

    def std_x(self) -> float:
        mu = self.expect_x()
        return float(np.sqrt(np.sum((self.grid.x - mu) ** 2 * self.density) * self.grid.dx))

    def std_p(self) -> float:
        mu = self.expect_p()
        return float(np.sqrt(np.sum((self.grid.p - mu) ** 2 * self.momentum_density())))

    def inner(self, other: "WaveFunction") -> complex:
        """``<self|other>``."""
        return complex(np.vdot(self.amplitudes, other.amplitudes) * self.grid.dx)


def _gaussian_mass_inside(center: float, std: float, lo: float, hi: float) -> float:
    s = np.sqrt(2.0) * std
    return 0.5 * (erf((hi - center) / s) - erf((lo - center) / s))


def coherent_state(params: CoherentStateParams, grid: Grid) -> WaveFunction:
    """Minimum-uncertainty packet ``|x0 p0>`` sampled on ``grid``.

    Phase convention: ``psi(y) ~ exp(-(y-x0)^2 / 4 sigma^2 + i p0 y / hbar)``,
    so the spectral momentum expectation is ``+p0``.
    """
    s = params.sigma_x
    sp = params.sigma_p
    inside_x = _gaussian_mass_inside(params.x0, s, grid.x_min, grid.x_max)
    inside_p = _gaussian_mass_inside(params.p0, sp, grid.p_min, grid.p_max)
    if inside_x < 1.0 - 1e-6 or inside_p < 1.0 - 1e-6:
        raise ValueError(
            f"grid holds only {min(inside_x, inside_p):.8f} of the coherent state's mass"
        )
    if params.x0 - 6 * s < grid.x_min or params.x0 + 6 * s > grid.x_max:
        warnings.warn("coherent state lies within 6 sigma_x of the grid edge", stacklevel=2)
    y = grid.x
    amp = (2.0 * np.pi * s * s) ** -0.25 * np.exp(
        -((y - params.x0) ** 2) / (4.0 * s * s) + 1j * params.p0 * y / HBAR
    )
    return WaveFunction.normalized(amp, grid)


def overlap(a: CoherentStateParams, b: CoherentStateParams) -> complex:
    """Closed-form ``<a|b>`` for equal-width coherent states (same phase convention)."""
    if not math.isclose(a.sigma_x, b.sigma_x, rel_tol=1e-12):
        raise ValueError("overlap is only defined here for equal widths")
    s = a.sigma_x
    dx = b.x0 - a.x0
    dp = b.p0 - a.p0
    xm = 0.5 * (a.x0 + b.x0)
    log_mod = -(dx * dx) / (8.0 * s * s) - (dp * dp) * s * s / (2.0 * HBAR * HBAR)
    return complex(np.exp(log_mod + 1j * dp * xm / HBAR))


Slot = tuple[int, int]


@dataclass(frozen=True, eq=False)
class SlotDistribution:
    """Sparse slot probabilities ``p_ij`` on a partition.

    Entries are clamped to ``[0, 1]`` after a ``tol`` sanity check; a total
    exceeding one by quadrature noise is rescaled to one.  ``deficit`` is the
    mass not captured by any listed slot.
    """

    entries: Mapping[Slot, float]
    partition: SlotPartition
    captured_mass_tol: float = 1e-3
    tol: float = 1e-9

    def __post_init__(self) -> None:
        clean: dict[Slot, float] = {}
        for (i, j), v in self.entries.items():
            v = float(v)
            if not math.isfinite(v) or v < -self.tol or v > 1.0 + self.tol:
                raise ValueError(f"slot ({i}, {j}) probability {v!r} outside [0, 1]")
            clean[(int(i), int(j))] = min(max(v, 0.0), 1.0)
        total = math.fsum(clean.values())
        if total > 1.0 + self.tol:
            raise ValueError(f"slot probabilities sum to {total!r} > 1")
        if total > 1.0:
            clean = {k: v / total for k, v in clean.items()}
            total = math.fsum(clean.values())
        if total < 1.0 - self.captured_mass_tol:
            raise ValueError(
                f"slot probabilities capture only {total:.6f} (tolerance {self.captured_mass_tol})"
            )
        object.__setattr__(self, "entries", dict(sorted(clean.items())))

    @property
    def total(self) -> float:
        return math.fsum(self.entries.values())

    @property
    def deficit(self) -> float:
        return max(0.0, 1.0 - self.total)

    def __getitem__(self, slot: Slot) -> float:
        return self.entries.get((int(slot[0]), int(slot[1])), 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def probability(self, slots: Iterable[Slot]) -> float:
        """Probability of a union of distinct slots."""
        return math.fsum(self[s] for s in set(map(tuple, slots)))

    def most_likely(self) -> Slot:
        return max(self.entries.items(), key=lambda kv: (kv[1], kv[0]))[0]

    def x_marginal(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for (i, _), v in self.entries.items():
            out[i] = out.get(i, 0.0) + v
        return out

    def p_marginal(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for (_, j), v in self.entries.items():
            out[j] = out.get(j, 0.0) + v
        return out

    def populated(self, threshold: float = 0.0) -> list[Slot]:
        return [k for k, v in self.entries.items() if v > threshold]


def mixture(dists: Sequence[SlotDistribution], weights: Sequence[float]) -> SlotDistribution:
    """Convex combination of distributions on a common partition."""
    if len(dists) != len(weights) or not dists:
        raise ValueError("need one weight per distribution")
    part = dists[0].partition
    if any(d.partition != part for d in dists):
        raise ValueError("distributions live on different partitions")
    acc: dict[Slot, list[float]] = {}
    for d, w in zip(dists, weights):
        for k, v in d.entries.items():
            acc.setdefault(k, []).append(w * v)
    tol = max(d.captured_mass_tol for d in dists)
    return SlotDistribution({k: math.fsum(v) for k, v in acc.items()}, part, captured_mass_tol=tol)
