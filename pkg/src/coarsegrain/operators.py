"""Dense-matrix realization of the coarse-grained phase-space POVM.

Operators act on the orthonormal position basis of a small :class:`Grid`
(``n <= 1024``).  Coherent states entering the POVM are periodized over the
grid length, so a partition whose slots tile the whole grid torus
(:meth:`SlotWindow.torus`) resolves the identity up to quadrature error with
no window edge at all.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import erf

from .core import HBAR, Grid, HamiltonianSpec, SlotPartition

MAX_DENSE_N = 1024


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense complex matrix over the position basis of ``grid``."""

    entries: np.ndarray
    grid: Grid
    hermitian: bool = False

    def __post_init__(self) -> None:
        a = np.asarray(self.entries, dtype=complex)
        n = self.grid.n
        if a.shape != (n, n):
            raise ValueError(f"operator shape {a.shape} does not match grid n={n}")
        if not np.all(np.isfinite(a)):
            raise ValueError("operator entries must be finite")
        if self.hermitian:
            scale = np.max(np.abs(a)) or 1.0
            if np.max(np.abs(a - a.conj().T)) >= 1e-10 * scale:
                raise ValueError("operator flagged Hermitian is not")
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def A(self) -> np.ndarray:
        return self.entries

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)

    def trace(self) -> complex:
        return complex(np.trace(self.entries))

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.A + other.A, self.grid, self.hermitian and other.hermitian)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        return OperatorMatrix(self.A - other.A, self.grid, self.hermitian and other.hermitian)


def _arr(a) -> np.ndarray:
    return a.entries if isinstance(a, OperatorMatrix) else np.asarray(a)


def trace_norm(a) -> float:
    """Schatten-1 norm from a full SVD."""
    return float(np.sum(np.linalg.svd(_arr(a), compute_uv=False)))


def spectral_norm(a) -> float:
    return float(np.linalg.norm(_arr(a), 2))


def commutator(a, b) -> np.ndarray:
    a, b = _arr(a), _arr(b)
    return a @ b - b @ a


def hermitize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.conj().T)


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor rule discretizing the slot integral over ``(x, p)``."""

    nodes_per_slot_x: int = 8
    nodes_per_slot_p: int = 8
    scheme: Literal["gauss-legendre", "midpoint"] = "gauss-legendre"

    def __post_init__(self) -> None:
        if self.nodes_per_slot_x < 4 or self.nodes_per_slot_p < 4:
            raise ValueError("quadrature needs at least 4 nodes per slot side")
        if self.scheme not in ("gauss-legendre", "midpoint"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")

    @classmethod
    def for_partition(cls, part: SlotPartition, sigma_x: float,
                      scheme: str = "gauss-legendre", density: float = 2.0) -> "QuadratureRule":
        """Node counts scaled to the slot size in units of the packet widths.

        Eight nodes per slot only resolve slots up to a few packet widths; the
        count grows as ``density * side / sigma + 8``.
        """
        sigma_p = HBAR / (2.0 * sigma_x)
        nx = max(8, int(math.ceil(density * part.delta_x / sigma_x)) + 8)
        np_ = max(8, int(math.ceil(density * part.delta_p / sigma_p)) + 8)
        return cls(nx, np_, scheme)

    def refined(self, factor: int = 2) -> "QuadratureRule":
        return QuadratureRule(self.nodes_per_slot_x * factor, self.nodes_per_slot_p * factor, self.scheme)

    def _rule(self, a: float, b: float, count: int) -> tuple[np.ndarray, np.ndarray]:
        if self.scheme == "gauss-legendre":
            t, w = leggauss(count)
        else:
            t = -1.0 + (2.0 * np.arange(count) + 1.0) / count
            w = np.full(count, 2.0 / count)
        half = 0.5 * (b - a)
        return a + half * (t + 1.0), w * half

    def x_nodes(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        return self._rule(a, b, self.nodes_per_slot_x)

    def p_nodes(self, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
        return self._rule(a, b, self.nodes_per_slot_p)

    def slot_nodes(self, part: SlotPartition, i: int, j: int):
        """``(xs, wx, ps, wp)`` for slot ``(i, j)``."""
        xs, wx = self.x_nodes(*part.x_bounds(i))
        ps, wp = self.p_nodes(*part.p_bounds(j))
        return xs, wx, ps, wp


@dataclass(frozen=True)
class SlotWindow:
    """Half-open index ranges ``[i_start, i_stop) x [j_start, j_stop)``."""

    i_start: int
    i_stop: int
    j_start: int
    j_stop: int

    def __post_init__(self) -> None:
        if self.i_stop <= self.i_start or self.j_stop <= self.j_start:
            raise ValueError("empty slot window")

    @property
    def i_range(self) -> range:
        return range(self.i_start, self.i_stop)

    @property
    def j_range(self) -> range:
        return range(self.j_start, self.j_stop)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.i_range), len(self.j_range)

    def slots(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self.i_range for j in self.j_range]

    def __contains__(self, slot) -> bool:
        i, j = slot
        return self.i_start <= i < self.i_stop and self.j_start <= j < self.j_stop

    @classmethod
    def torus(cls, grid: Grid, part: SlotPartition) -> "SlotWindow":
        """Window of slots tiling the full position range and momentum zone."""
        nx = grid.length / part.delta_x
        npp = grid.momentum_period / part.delta_p
        ix = (grid.x_min - part.x_origin) / part.delta_x
        jp = (grid.p_min - part.p_origin) / part.delta_p
        for v in (nx, npp, ix, jp):
            if abs(v - round(v)) > 1e-9 * max(1.0, abs(v)):
                raise ValueError("partition does not tile the grid torus")
        return cls(round(ix), round(ix) + round(nx), round(jp), round(jp) + round(npp))


def torus_partition(grid: Grid, nx_slots: int, np_slots: int) -> SlotPartition:
    """Partition of ``grid``'s torus into ``nx_slots x np_slots`` slots."""
    return SlotPartition(grid.length / nx_slots, grid.momentum_period / np_slots,
                         grid.x_min, grid.p_min)


def _require_dense(grid: Grid) -> None:
    if grid.n > MAX_DENSE_N:
        raise ValueError(f"dense operator work limited to n <= {MAX_DENSE_N}, got {grid.n}")


def _image_range(sigma_x: float, grid: Grid) -> range:
    m = int(math.ceil(10.0 * sigma_x / grid.length)) + 1
    return range(-m, m + 1)


def coherent_columns(xs: np.ndarray, ps: np.ndarray, sigma_x: float, grid: Grid) -> np.ndarray:
    """Periodized coherent states ``|x p>`` as orthonormal-basis columns.

    Column order is x-major: column ``a * len(ps) + b`` holds ``(xs[a], ps[b])``.
    """
    y = grid.x
    xs = np.asarray(xs, dtype=float)
    ps = np.asarray(ps, dtype=float)
    norm = (2.0 * np.pi * sigma_x**2) ** -0.25 * np.sqrt(grid.dx)
    out = np.zeros((grid.n, xs.size, ps.size), dtype=complex)
    for m in _image_range(sigma_x, grid):
        ym = y + m * grid.length
        env = np.exp(-((ym[:, None] - xs[None, :]) ** 2) / (4.0 * sigma_x**2))
        if not np.any(env > 1e-300):
            continue
        phase = np.exp(1j * ym[:, None] * ps[None, :] / HBAR)
        out += env[:, :, None] * phase[:, None, :]
    return (norm * out).reshape(grid.n, xs.size * ps.size)


def _check_slot(i: int, j: int, part: SlotPartition, sigma_x: float, grid: Grid,
                quad: QuadratureRule) -> None:
    xa, xb = part.x_bounds(i)
    pa, pb = part.p_bounds(j)
    tol_x = 1e-9 * grid.length
    tol_p = 1e-9 * grid.momentum_period
    if xa < grid.x_min - tol_x or xb > grid.x_max + tol_x or pa < grid.p_min - tol_p or pb > grid.p_max + tol_p:
        raise ValueError(f"slot ({i}, {j}) lies outside the grid's phase-space window")
    if sigma_x < 2.0 * grid.dx:
        raise ValueError("sigma_x is below two grid spacings; coherent states are unresolved")
    if sigma_x < 2.0 * part.delta_x / quad.nodes_per_slot_x:
        raise ValueError("quadrature under-resolves sigma_x; raise nodes_per_slot_x")
    sigma_p = HBAR / (2.0 * sigma_x)
    if sigma_p < 2.0 * part.delta_p / quad.nodes_per_slot_p:
        raise ValueError("quadrature under-resolves sigma_p; raise nodes_per_slot_p")


def build_povm_element(i: int, j: int, part: SlotPartition, sigma_x: float, grid: Grid,
                       quad: QuadratureRule | None = None) -> OperatorMatrix:
    """``P_ij = (1 / 2 pi hbar) int_slot |x p><x p| dx dp`` by tensor quadrature."""
    _require_dense(grid)
    quad = quad or QuadratureRule.for_partition(part, sigma_x)
    _check_slot(i, j, part, sigma_x, grid, quad)
    xs, wx, ps, wp = quad.slot_nodes(part, i, j)
    cols = coherent_columns(xs, ps, sigma_x, grid)
    w = np.sqrt(np.outer(wx, wp).ravel() / (2.0 * np.pi * HBAR))
    cols = cols * w[None, :]
    return OperatorMatrix(hermitize(cols @ cols.conj().T), grid, hermitian=True)


def position_operator(grid: Grid) -> OperatorMatrix:
    return OperatorMatrix(np.diag(grid.x).astype(complex), grid, hermitian=True)


def momentum_function(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Matrix of ``f(p_hat)`` given ``f`` sampled on the FFT momentum lattice."""
    n = grid.n
    f = np.fft.fft(np.eye(n), axis=0, norm="ortho")
    return f.conj().T @ (np.asarray(values)[:, None] * f)


def momentum_operator(grid: Grid) -> OperatorMatrix:
    """Spectral ``p_hat`` (diagonal on the conjugate lattice)."""
    return OperatorMatrix(hermitize(momentum_function(grid, grid.p)), grid, hermitian=True)


def hamiltonian_matrix(spec: HamiltonianSpec, grid: Grid) -> OperatorMatrix:
    kin = momentum_function(grid, spec.kinetic(grid.p))
    pot = np.diag(spec.potential(grid.x))
    return OperatorMatrix(hermitize(kin + pot), grid, hermitian=True)


def translation_operator(a: float, grid: Grid) -> np.ndarray:
    """``T(a) = exp(-i a p_hat / hbar)``."""
    return momentum_function(grid, np.exp(-1j * a * grid.p / HBAR))


def projectivity_error_numeric(P) -> float:
    """``||P^2 - P||_1 / ||P||_1`` via singular values."""
    a = _arr(P)
    return trace_norm(a @ a - a) / trace_norm(a)


def _f_edge(u: float) -> float:
    # (exp(-u^2) - 1) / u + sqrt(pi) erf(u), with its small-u series
    if u < 1e-4:
        return u - u**3 / 6.0
    return (math.expm1(-u * u)) / u + math.sqrt(math.pi) * math.erf(u)


def projectivity_error_closed_form(part: SlotPartition, sigma_x: float) -> float:
    """``1 - F(dx / 2 sigma_x) F(dp / 2 sigma_p) / pi`` for the Gaussian POVM."""
    sigma_p = HBAR / (2.0 * sigma_x)
    fx = _f_edge(part.delta_x / (2.0 * sigma_x))
    fp = _f_edge(part.delta_p / (2.0 * sigma_p))
    return 1.0 - fx * fp / math.pi


def projectivity_error_asymptote(part: SlotPartition, sigma_x: float) -> float:
    """Two-term large-slot expansion of the closed form."""
    sigma_p = HBAR / (2.0 * sigma_x)
    rx = sigma_x / part.delta_x
    rp = sigma_p / part.delta_p
    return 2.0 / math.sqrt(math.pi) * (rx + rp) - 4.0 * rx * rp / math.pi


@dataclass(frozen=True, eq=False)
class Stripes:
    """POVM elements of a window and their position/momentum stripe sums."""

    partition: SlotPartition
    sigma_x: float
    grid: Grid
    window: SlotWindow
    elements: dict
    x: dict
    p: dict

    def element(self, i: int, j: int) -> OperatorMatrix:
        return self.elements[(i, j)]

    def completeness(self) -> np.ndarray:
        return sum(e.A for e in self.elements.values())


def build_stripe_projectors(part: SlotPartition, sigma_x: float, grid: Grid,
                            quad: QuadratureRule | None = None,
                            window: SlotWindow | None = None) -> Stripes:
    """``P_{x_i} = sum_j P_ij`` and ``P_{p_j} = sum_i P_ij`` over ``window``.

    The window defaults to the grid torus when the partition tiles it.
    """
    quad = quad or QuadratureRule.for_partition(part, sigma_x)
    window = window or SlotWindow.torus(grid, part)
    elements = {(i, j): build_povm_element(i, j, part, sigma_x, grid, quad) for i, j in window.slots()}
    xs = {}
    for i in window.i_range:
        xs[i] = OperatorMatrix(sum(elements[(i, j)].A for j in window.j_range), grid, hermitian=True)
    ps = {}
    for j in window.j_range:
        ps[j] = OperatorMatrix(sum(elements[(i, j)].A for i in window.i_range), grid, hermitian=True)
    return Stripes(part, sigma_x, grid, window, elements, xs, ps)


def stripe_density_exact(i: int, part: SlotPartition, sigma_x: float, grid: Grid) -> np.ndarray:
    """Diagonal of a full-momentum-zone position stripe from the erf closed form."""
    xa, xb = part.x_bounds(i)
    y = grid.x
    s = math.sqrt(2.0) * sigma_x
    out = np.zeros(grid.n)
    for m in _image_range(sigma_x, grid):
        ym = y + m * grid.length
        out += 0.5 * (erf((ym - xa) / s) - erf((ym - xb) / s))
    return out


def fluctuation_operators(part: SlotPartition, stripes: Stripes) -> tuple[OperatorMatrix, OperatorMatrix]:
    """``dx = x - sum_i x_i P_{x_i}`` and ``dp = p - sum_j p_j P_{p_j}``."""
    grid = stripes.grid
    cx = sum(part.x_center(i) * stripes.x[i].A for i in stripes.x)
    cp = sum(part.p_center(j) * stripes.p[j].A for j in stripes.p)
    dx = position_operator(grid).A - cx
    dp = momentum_operator(grid).A - cp
    return (OperatorMatrix(hermitize(dx), grid, hermitian=True),
            OperatorMatrix(hermitize(dp), grid, hermitian=True))


def interior_x_indices(grid: Grid, margin: float) -> np.ndarray:
    """Grid points at least ``margin`` away from the periodic wrap of x."""
    y = grid.x
    return np.flatnonzero((y - grid.x_min >= margin) & (grid.x_max - y >= margin))


def interior_p_indices(grid: Grid, margin: float) -> np.ndarray:
    """FFT momentum indices at least ``margin`` away from the zone edge."""
    p = grid.p
    return np.flatnonzero((p - grid.p_min >= margin) & (grid.p_max - p >= margin))


def restrict_x(a, idx: np.ndarray) -> np.ndarray:
    """Compression of ``a`` to the position-basis subspace ``idx``."""
    a = _arr(a)
    return a[np.ix_(idx, idx)]


def restrict_p(a, grid: Grid, idx: np.ndarray) -> np.ndarray:
    """Compression of ``a`` to the momentum-basis subspace ``idx``."""
    f = np.fft.fft(np.eye(grid.n), axis=0, norm="ortho")
    ap = f @ _arr(a) @ f.conj().T
    return ap[np.ix_(idx, idx)]


@dataclass(frozen=True)
class CommutatorReport:
    slot: tuple[int, int]
    residual_p: float
    residual_x: float
    residual_p_spectral: float
    residual_x_spectral: float
    residual_p_bare: float
    residual_x_bare: float
    stripe_term_p: float
    stripe_term_x: float


def commutator_check(i: int, j: int, part: SlotPartition, grid: Grid, sigma_x: float,
                     quad: QuadratureRule | None = None,
                     stripes: Stripes | None = None) -> CommutatorReport:
    """Residuals of the discrete-translation commutator identities.

    ``residual_p`` compares ``[dp, P_ij]`` with ``i hbar (P_{i+1,j} - P_ij) / dx``
    and ``residual_x`` compares ``[dx, P_ij]`` with
    ``-i hbar (P_{i,j+1} - P_ij) / dp``, both relative in trace norm.  The
    ``_bare`` variants use ``p_hat`` / ``x_hat`` in place of the fluctuation
    operators; ``stripe_term_*`` is the relative size of the stripe-sum
    commutator that separates the two.
    """
    stripes = stripes or build_stripe_projectors(part, sigma_x, grid, quad)
    win = stripes.window
    for s in ((i, j), (i + 1, j), (i, j + 1)):
        if s not in win:
            raise ValueError(f"slot {s} outside the operator window")
    dx_op, dp_op = fluctuation_operators(part, stripes)
    P = stripes.element(i, j).A
    Pi = stripes.element(i + 1, j).A
    Pj = stripes.element(i, j + 1).A
    xhat = position_operator(grid).A
    phat = momentum_operator(grid).A

    target_p = 1j * HBAR * (Pi - P) / part.delta_x
    target_x = -1j * HBAR * (Pj - P) / part.delta_p
    cp = commutator(dp_op, P)
    cx = commutator(dx_op, P)
    cp_bare = commutator(phat, P)
    cx_bare = commutator(xhat, P)

    def rel(a, b, norm=trace_norm):
        return norm(a - b) / norm(a)

    return CommutatorReport(
        slot=(i, j),
        residual_p=rel(cp, target_p),
        residual_x=rel(cx, target_x),
        residual_p_spectral=rel(cp, target_p, spectral_norm),
        residual_x_spectral=rel(cx, target_x, spectral_norm),
        residual_p_bare=rel(cp_bare, target_p),
        residual_x_bare=rel(cx_bare, target_x),
        stripe_term_p=trace_norm(cp - cp_bare) / trace_norm(cp_bare),
        stripe_term_x=trace_norm(cx - cx_bare) / trace_norm(cx_bare),
    )


@dataclass(frozen=True)
class DerivativeErrorReport:
    slot: tuple[int, int]
    eps_d: float
    predicted: float
    derivative_norm: float
    shift: float


def discrete_derivative_error(i: int, j: int, part: SlotPartition, grid: Grid, sigma_x: float,
                              quad: QuadratureRule | None = None,
                              shift_fraction: float = 1.0 / 16.0) -> DerivativeErrorReport:
    """``eps_D = dx ||(P_{i+1,j} - P_ij) / dx - d_x P_ij||_1``.

    ``d_x P_ij`` and ``d_x^2 P_ij`` are central differences of elements built
    on partitions whose origin is shifted by ``+-h``, ``h = shift_fraction * dx``.
    """
    quad = quad or QuadratureRule.for_partition(part, sigma_x)
    h = shift_fraction * part.delta_x

    def element(shift: float, ii: int) -> np.ndarray:
        return build_povm_element(ii, j, part.shifted(dx=shift), sigma_x, grid, quad).A

    P0 = element(0.0, i)
    P1 = element(0.0, i + 1)
    Pp = element(h, i)
    Pm = element(-h, i)
    d1 = (Pp - Pm) / (2.0 * h)
    d2 = (Pp - 2.0 * P0 + Pm) / (h * h)
    eps = part.delta_x * trace_norm((P1 - P0) / part.delta_x - d1)
    predicted = 0.5 * part.delta_x**2 * trace_norm(d2)
    return DerivativeErrorReport((i, j), eps, predicted, trace_norm(d1), h)


def effective_hamiltonian(spec: HamiltonianSpec, part: SlotPartition, stripes: Stripes,
                          fluct: tuple[OperatorMatrix, OperatorMatrix]) -> OperatorMatrix:
    """Linearization of ``H`` in the fluctuation operators, Hermitized."""
    dx_op, dp_op = (f.A for f in fluct)
    n = stripes.grid.n
    eye = np.eye(n)
    acc = np.zeros((n, n), dtype=complex)
    m = spec.mass
    for j, Pp in stripes.p.items():
        pj = float(part.p_center(j))
        acc += ((pj * pj / (2.0 * m)) * eye + (pj / m) * dp_op) @ Pp.A
    for i, Px in stripes.x.items():
        xi = float(part.x_center(i))
        for k, c in spec.potential_coeffs:
            term = (xi**k) * eye
            if k >= 1:
                term = term + k * xi ** (k - 1) * dx_op
            acc += c * term @ Px.A
    return OperatorMatrix(hermitize(acc), stripes.grid, hermitian=True)


def second_difference(spec: HamiltonianSpec, x, delta_x: float):
    """``V(x + dx) - 2 V(x) + V(x - dx)``."""
    return spec.potential(np.asarray(x) + delta_x) - 2.0 * spec.potential(x) + spec.potential(np.asarray(x) - delta_x)


def quadratic_fluctuation_hamiltonian(spec: HamiltonianSpec, part: SlotPartition, stripes: Stripes,
                                      fluct: tuple[OperatorMatrix, OperatorMatrix]) -> OperatorMatrix:
    """``dp^2 / 2m + sum_k (Delta^2 V(x_k) / dx^2) dx^2 P_{x_k}``, Hermitized."""
    dx_op, dp_op = (f.A for f in fluct)
    acc = dp_op @ dp_op / (2.0 * spec.mass)
    dx2 = dx_op @ dx_op
    for k, Px in stripes.x.items():
        curv = float(second_difference(spec, part.x_center(k), part.delta_x)) / part.delta_x**2
        if curv != 0.0:
            acc = acc + curv * dx2 @ Px.A
    return OperatorMatrix(hermitize(acc), stripes.grid, hermitian=True)
