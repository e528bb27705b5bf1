import math

import numpy as np
import pytest

from coarsegrain.core import CoherentStateParams, Grid, HamiltonianSpec, SlotPartition, coherent_state
from coarsegrain.operators import (
    OperatorMatrix,
    QuadratureRule,
    SlotWindow,
    build_povm_element,
    build_stripe_projectors,
    commutator,
    commutator_check,
    discrete_derivative_error,
    effective_hamiltonian,
    fluctuation_operators,
    hamiltonian_matrix,
    interior_x_indices,
    position_operator,
    projectivity_error_asymptote,
    projectivity_error_closed_form,
    projectivity_error_numeric,
    quadratic_fluctuation_hamiltonian,
    restrict_x,
    spectral_norm,
    stripe_density_exact,
    torus_partition,
    trace_norm,
    translation_operator,
)

G = Grid(-64.0, 64.0, 128)
SIG = 4.0
SP = 0.5 / SIG


def centred(rx, rp, sig=SIG):
    sp = 0.5 / sig
    return SlotPartition(rx * sig, rp * sp, -0.5 * rx * sig, -0.5 * rp * sp)


@pytest.fixture(scope="module")
def torus():
    part = torus_partition(G, 4, 3)
    return part, build_stripe_projectors(part, SIG, G)


def test_povm_element_properties():
    part = centred(8, 8)
    P = build_povm_element(0, 0, part, SIG, G)
    ev = P.eigvalsh()
    assert ev.min() > -1e-8 and ev.max() < 1 + 1e-8
    assert np.allclose(P.A, P.A.conj().T)
    assert P.trace().real == pytest.approx(part.area / (2 * math.pi), rel=1e-4)


def test_povm_quadrature_refinement():
    part = centred(8, 8)
    q = QuadratureRule.for_partition(part, SIG)
    a = build_povm_element(0, 0, part, SIG, G, q)
    b = build_povm_element(0, 0, part, SIG, G, q.refined())
    assert abs(spectral_norm(a.A) - spectral_norm(b.A)) / spectral_norm(a.A) < 1e-6
    assert abs(trace_norm(a.A) - trace_norm(b.A)) / trace_norm(a.A) < 1e-6


def test_povm_guards():
    part = centred(16, 16)
    with pytest.raises(ValueError):
        build_povm_element(0, 0, part, SIG, G, QuadratureRule(4, 4))
    with pytest.raises(ValueError):
        build_povm_element(5, 0, part, SIG, G)
    with pytest.raises(ValueError):
        QuadratureRule(2, 8)


def test_projectivity_error_trivial_cases():
    d = np.diag([1.0, 0.0, 1.0, 0.0])
    assert projectivity_error_numeric(d) == 0.0
    assert projectivity_error_numeric(0.5 * np.eye(5)) == pytest.approx(0.5)


@pytest.mark.parametrize("r", [4, 8, 16])
def test_projectivity_numeric_matches_closed_form(r):
    g = Grid(-128.0, 128.0, 256)
    sig = 4.5
    part = centred(r, r, sig)
    en = projectivity_error_numeric(build_povm_element(0, 0, part, sig, g))
    assert en == pytest.approx(projectivity_error_closed_form(part, sig), rel=0.10)


def test_closed_form_limits_and_asymptote():
    small = projectivity_error_closed_form(SlotPartition(1e4, 1e4), 1.0)
    assert 0 < small < 1e-3
    for r in (64, 256):
        part = SlotPartition(r, r / 2.0)
        assert projectivity_error_closed_form(part, 1.0) == pytest.approx(
            projectivity_error_asymptote(part, 1.0), rel=1e-3)


def test_closed_form_monte_carlo():
    rng = np.random.default_rng(12)
    r = 10.0
    part = centred(r, r, 1.0)
    n = 2_000_000
    u = (rng.random(n) - rng.random(n)) * part.delta_x
    v = (rng.random(n) - rng.random(n)) * part.delta_p
    ex = np.mean(np.exp(-u * u / 4.0))
    ep = np.mean(np.exp(-v * v / (4.0 * 0.25)))
    mc = 1.0 - part.area / (2 * math.pi) * ex * ep
    assert mc == pytest.approx(projectivity_error_closed_form(part, 1.0), rel=5e-3)


def test_closed_form_monotone_on_lattice():
    rs = np.linspace(2, 40, 10)
    vals = np.array([[projectivity_error_closed_form(centred(a, b, 1.0), 1.0) for b in rs] for a in rs])
    assert np.all((vals > 0) & (vals < 1))
    assert np.all(np.diff(vals, axis=0) < 0)
    assert np.all(np.diff(vals, axis=1) < 0)


def test_completeness_on_torus(torus):
    part, st = torus
    S = st.completeness()
    assert np.max(np.abs(S - np.eye(G.n))) < 1e-6


def test_completeness_on_sub_window():
    # x sub-window; the diagonal in x needs every momentum, so p tiles the zone
    part = SlotPartition(8 * SIG, G.momentum_period / 8, 0.0, G.p_min)
    win = SlotWindow(-1, 1, 0, 8)
    st = build_stripe_projectors(part, SIG, G, window=win)
    # x range of the window is [-32, 32); 5 sigma inside it
    idx = np.flatnonzero((G.x >= -32 + 5 * SIG) & (G.x < 32 - 5 * SIG))
    S = restrict_x(st.completeness(), idx)
    assert np.max(np.abs(np.diag(S).real - 1)) < 1e-6


def test_stripes_match_exact_density(torus):
    part, st = torus
    for i, Px in st.x.items():
        assert np.max(np.abs(Px.A - np.diag(stripe_density_exact(i, part, SIG, G)))) < 1e-8
        ev = Px.eigvalsh()
        assert ev.min() > -1e-8 and ev.max() < 1 + 1e-8


def test_stripe_commutator_scales_with_sigma():
    xhat = position_operator(G).A
    norms = []
    for sig in (4.0, 2.0):
        part = torus_partition(G, 4, 3)
        dens = stripe_density_exact(1, part, sig, G)
        norms.append(spectral_norm(commutator(xhat, np.diag(dens))))
    # diagonal stripes commute with x exactly; the physical scale lives in the POVM element
    assert norms[0] < 1e-12 and norms[1] < 1e-12
    vals = []
    for sig in (4.0, 2.0):
        part = SlotPartition(32.0, 2 * math.pi / 3, -16.0, -math.pi)
        st = build_stripe_projectors(part, sig, G, window=SlotWindow(0, 1, 0, 3))
        vals.append(spectral_norm(commutator(xhat, st.x[0].A @ st.p[1].A)))
    assert vals[1] / vals[0] == pytest.approx(0.5, rel=0.25)


def test_fluctuation_operators(torus):
    part, st = torus
    dx_op, dp_op = fluctuation_operators(part, st)
    assert np.allclose(dx_op.A, dx_op.A.conj().T)
    assert np.allclose(dp_op.A, dp_op.A.conj().T)
    i, j = 1, 1
    psi = coherent_state(CoherentStateParams(float(part.x_center(i)), float(part.p_center(j)), SIG), G)
    v = psi.amplitudes * math.sqrt(G.dx)
    assert abs(np.vdot(v, dx_op.A @ v)) < 1e-3 * part.delta_x
    idx = interior_x_indices(G, 0.0)
    sub = restrict_x(dx_op.A, np.flatnonzero((G.x > -24) & (G.x < 24)))
    assert spectral_norm(sub) <= 0.55 * part.delta_x
    assert idx.size > 0


def test_translation_covariance():
    part = centred(8, 8)
    T = translation_operator(part.delta_x, G)
    P0 = build_povm_element(0, 0, part, SIG, G).A
    P1 = build_povm_element(1, 0, part, SIG, G).A
    assert trace_norm(T @ P0 @ T.conj().T - P1) / trace_norm(P0) < 1e-6


def test_commutator_check_report(torus):
    part, st = torus
    rep = commutator_check(1, 1, part, G, SIG, stripes=st)
    for v in (rep.residual_p, rep.residual_x, rep.residual_p_bare, rep.residual_x_bare):
        assert math.isfinite(v) and v >= 0
    with pytest.raises(ValueError):
        commutator_check(3, 1, part, G, SIG, stripes=st)


def test_derivative_error_refinement():
    part = SlotPartition(2 * SIG, 16 * SP, 0.0, -8 * SP)
    a = discrete_derivative_error(0, 0, part, G, SIG, shift_fraction=1 / 16)
    b = discrete_derivative_error(0, 0, part, G, SIG, shift_fraction=1 / 32)
    assert a.eps_d > 0 and math.isfinite(a.eps_d)
    assert abs(a.eps_d - b.eps_d) / a.eps_d < 0.05
    coarse = discrete_derivative_error(0, 0, SlotPartition(8 * SIG, 16 * SP, 0.0, -8 * SP), G, SIG)
    assert coarse.eps_d > 0 and math.isfinite(coarse.eps_d)


def test_effective_hamiltonian_harmonic(torus):
    g = Grid(-64.0, 64.0, 256)
    sig = math.sqrt(0.5) * 4
    H = HamiltonianSpec.harmonic(1.0, 1.0 / 16)
    part = torus_partition(g, 4, 4)
    st = build_stripe_projectors(part, sig, g)
    fl = fluctuation_operators(part, st)
    heff = effective_hamiltonian(H, part, st, fl)
    assert np.allclose(heff.A, heff.A.conj().T)
    i, j = 1, 2
    x, p = float(part.x_center(i)), float(part.p_center(j))
    psi = coherent_state(CoherentStateParams(x, p, sig), g)
    v = psi.amplitudes * math.sqrt(g.dx)
    assert np.vdot(v, heff.A @ v).real == pytest.approx(float(H.energy(x, p)), rel=0.01)


def test_effective_hamiltonian_free_single_stripe():
    g = Grid(-32.0, 32.0, 64)
    part = SlotPartition(g.length, g.momentum_period, g.x_min, g.p_min)
    st = build_stripe_projectors(part, 2.0, g)
    fl = fluctuation_operators(part, st)
    heff = effective_hamiltonian(HamiltonianSpec.free(), part, st, fl).A
    pj = float(part.p_center(0))
    from coarsegrain.operators import momentum_operator

    ph = momentum_operator(g).A
    expect = 0.5 * pj * pj * np.eye(g.n) + pj * (ph - pj * np.eye(g.n))
    assert np.max(np.abs(heff - expect)) < 1e-8


def test_quadratic_fluctuation_hamiltonian_free_has_only_dp2(torus):
    part, st = torus
    fl = fluctuation_operators(part, st)
    dh = quadratic_fluctuation_hamiltonian(HamiltonianSpec.free(), part, st, fl).A
    dp = fl[1].A
    assert np.max(np.abs(dh - 0.5 * (dp @ dp + (dp @ dp).conj().T) / 2)) < 1e-10


def test_operator_matrix_hermitian_flag():
    a = np.array([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        OperatorMatrix(a, Grid(0, 1, 8), hermitian=True)


def test_hamiltonian_matrix_hermitian():
    h = hamiltonian_matrix(HamiltonianSpec.quartic(0.01), G)
    assert np.allclose(h.A, h.A.conj().T)
