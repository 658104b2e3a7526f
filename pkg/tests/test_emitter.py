import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nanosqueeze import emitter as em
from nanosqueeze.errors import DomainError
from nanosqueeze.green import SphereSystem

SPHERE = SphereSystem(60.0)


@pytest.fixture(scope="module")
def dressed():
    return em.dressed_rates(em.Emitter.on_axis(60.0, 10.0, 550.0), SPHERE)


def test_free_space_decay_is_gamma0():
    e = em.Emitter.on_axis(0.0, 50.0, 550.0)
    assert em.decay_rate(e, SphereSystem(0.0)) == pytest.approx(e.gamma_0, rel=1e-12)
    assert em.lamb_shift(e, SphereSystem(0.0)) == e.omega
    assert em.rabi_enhancement(e, SphereSystem(0.0)) == pytest.approx(1.0)


def test_purcell_at_reference_point(dressed):
    assert dressed.purcell == pytest.approx(60.0, rel=0.30)


def test_rabi_enhancement_at_reference_point(dressed):
    assert abs(dressed.rabi_enhancement) == pytest.approx(4.9, rel=0.30)


def test_red_shift(dressed):
    assert dressed.omega_tilde < dressed.omega_e
    assert dressed.shift_over_gamma0 > 0


def test_lamb_shift_quadrature_refinement():
    e = em.Emitter.on_axis(60.0, 10.0, 550.0)
    a = em.lamb_shift(e, SPHERE, order=8)
    b = em.lamb_shift(e, SPHERE, order=16)
    assert abs(a - b) < 1e-6 * abs(e.omega - b)
    # rtol path runs the doubled rule internally
    assert em.lamb_shift(e, SPHERE, rtol=1e-6) == pytest.approx(b, rel=1e-12)


def test_decay_decreases_with_distance():
    s = np.linspace(5.0, 60.0, 23)
    g = [em.decay_rate(em.Emitter.on_axis(60.0, x, 550.0), SPHERE) for x in s]
    assert np.all(np.diff(g) < 0)


def test_rabi_decreases_with_distance():
    s = np.linspace(10.0, 100.0, 19)
    r = [abs(em.rabi_enhancement(em.Emitter.on_axis(60.0, x, 550.0), SPHERE)) for x in s]
    assert np.all(np.diff(r) < 0)


def test_normalized_params_quoted_ratios():
    d = em.DressedRates(60.0, 1.0, 1e15, 1e15, 4.9 + 0j)
    delta, z = em.normalized_params(3.0, 12.0, d)
    assert z == pytest.approx(12.0 * 4.9 / 60.0)
    assert delta == pytest.approx(3.0 / 60.0)


def test_normalized_params_reference(dressed):
    bare, _ = em.normalized_params(0.0, 1.0, dressed, "bare")
    own, _ = em.normalized_params(0.0, 1.0, dressed, "dressed")
    assert own == 0.0
    assert bare == pytest.approx(-dressed.shift_over_gamma0 / dressed.purcell)
    with pytest.raises(DomainError):
        em.normalized_params(0.0, 1.0, dressed, "other")


def test_x_with_dephasing():
    e = em.Emitter.on_axis(60.0, 10.0, 550.0, gamma_star_over_gamma0=0.5)
    d = em.dressed_rates(e, SPHERE, lamb=False)
    assert d.x == pytest.approx(1.0 / d.purcell)
    assert d.omega_tilde == d.omega_e


def test_bloch_oracle_random_draws():
    rng = np.random.default_rng(20240611)
    n = 1000
    delta, z = rng.uniform(-10, 10, n), rng.uniform(0, 10, n)
    x, phi = rng.uniform(0, 3, n), rng.uniform(0, 2 * np.pi, n)
    tr = em.bloch_transient(delta, z, x, phi, t_end=50.0, keep=0)
    ss = em.bloch_steady_state(delta, z, x, phi)
    assert np.abs(tr.sigma[-1] - ss.sigma_s).max() < 1e-8
    assert np.abs(tr.sigma_z[-1] - ss.sigma_z_s).max() < 1e-8


def test_bloch_transient_starts_in_ground_state():
    tr = em.bloch_transient(0.5, 1.0, 0.2, keep=10)
    assert tr.sigma[0] == 0 and tr.sigma_z[0] == -1.0
    assert np.all(np.abs(tr.sigma_z) <= 1 + 1e-12)
    with pytest.raises(DomainError):
        em.bloch_transient(0.0, 1.0, 0.0, dt=1.0)


def test_steady_state_quadrant():
    # phi_dep is arg(-delta + i): in (0, pi) for every detuning
    for d in (-3.0, -0.1, 0.0, 0.1, 3.0):
        s = em.bloch_steady_state(d, 1.0, 0.0)
        assert 0 < s.phi_dep < np.pi
        assert np.angle(s.sigma_s) == pytest.approx(s.phi_dep)


def test_variance_minimum_exact():
    z = np.sqrt(1 / 3)
    assert em.atomic_variance(0.0, z, 0.0) == pytest.approx(-1 / 8, abs=1e-10)
    zz = np.linspace(0, 2, 20001)
    assert em.atomic_variance(0.0, zz, 0.0).min() >= -1 / 8 - 1e-12


def test_threshold_matches_sign_on_grid():
    d, z, x = np.meshgrid(np.linspace(-5, 5, 50), np.linspace(0.01, 5, 50), np.linspace(0, 0.95, 10), indexing="ij")
    v = em.atomic_variance(d, z, x)
    thr = em.squeezing_threshold(d, x)
    assert np.array_equal(v < 0, z**2 < thr)


def test_no_squeezing_for_strong_dephasing():
    d, z, x = np.meshgrid(np.linspace(-5, 5, 30), np.linspace(0, 5, 30), np.linspace(1, 4, 10), indexing="ij")
    assert np.all(em.atomic_variance(d, z, x) >= 0)
    assert np.all(em.squeezing_threshold(d, x) == 0)
    assert em.squeezing_threshold(0.0, 1.0) == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 10), st.floats(0, 3), st.floats(0, 2 * np.pi))
def test_variance_from_state_at_optimal_angle(delta, z, x, phi):
    s = em.bloch_steady_state(delta, z, x, phi)
    best = em.atomic_variance_from_state(s, em.optimal_theta(s))
    assert best == pytest.approx(float(em.atomic_variance(delta, z, x)), abs=1e-12)
    # any other angle is no better, and the angle maps onto theta_total
    for th in np.linspace(0, np.pi, 7):
        v = em.atomic_variance_from_state(s, th)
        assert v >= best - 1e-12
        total = 2 * (th + np.angle(s.sigma_s))
        assert v == pytest.approx(float(em.atomic_variance(delta, z, x, total)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 10), st.floats(0, 3))
def test_variance_bounds(delta, z, x):
    v = float(em.atomic_variance(delta, z, x))
    assert -1 / 8 - 1e-12 <= v <= 1.0
    assert em.bloch_steady_state(delta, z, x).sigma_z_s <= 0


def test_emitter_validation():
    with pytest.raises(DomainError):
        em.Emitter((0.0, 0.0), 550.0)
    with pytest.raises(DomainError):
        em.Emitter((0.0, 0.0, 0.0), 550.0)
    with pytest.raises(DomainError):
        em.Emitter((0.0, 0.0, 70.0), -1.0)
    with pytest.raises(DomainError):
        em.Emitter((0.0, 0.0, 70.0), 550.0, orientation=(1.0, 1.0, 0.0))
    with pytest.raises(DomainError):
        em.decay_rate(em.Emitter((0.0, 0.0, 50.0), 550.0), SPHERE)
    with pytest.raises(DomainError):
        em.bloch_steady_state(0.0, -1.0, 0.0)
    with pytest.raises(DomainError):
        em.squeezing_threshold(0.0, -0.1)
