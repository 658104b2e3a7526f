"""Squeezing amplitude at a detection point, field variance and homodyne layer.

The source part of the field at r is i hbar sigma (gamma(r)/2 + i dw(r)), so
its complex amplitude is g = hbar (-dw + i gamma/2).  With G_eff the Green
tensor whose real part carries the principal-value integral,

    g = (w_E^2 / eps0 c^2) G_eff(r, r_E) . d,

where G_eff = G in the far-field (resonant) approximation and
G_eff = G - Q in full mode, Q being the imaginary-axis remainder of
:mod:`nanosqueeze.contour`.  Components are reported in the spherical basis
(r, theta, phi) of the sphere-centred frame.
"""

from dataclasses import dataclass, field

import numpy as np

from . import contour
from .constants import C, EPS0, HBAR, NM
from .emitter import atomic_variance
from .errors import DomainError
from .green import N_CAP, _free_space_matrix, estimate_order_bound, free_space_batch, scattered_green, scattered_green_batch, scattered_green_tail

COMPONENTS = ("r", "theta", "phi")
MODES = ("far-field", "full")

#: Source counts above this fraction of the local-oscillator counts void the
#: strong-oscillator assumption behind the homodyne formula.
LO_VALIDITY_FRACTION = 0.01


def spherical_basis(r_nm):
    """Rows r_hat, theta_hat, phi_hat at r (phi = 0 on the z axis)."""
    r = np.asarray(r_nm, dtype=float)
    rho = np.linalg.norm(r)
    if rho == 0:
        raise DomainError("spherical basis undefined at the origin")
    th = np.arccos(np.clip(r[2] / rho, -1, 1))
    ph = np.arctan2(r[1], r[0]) if np.hypot(r[0], r[1]) > 0 else 0.0
    st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
    return np.array([[st * cp, st * sp, ct], [ct * cp, ct * sp, -st], [-sp, cp, 0.0]])


def component_index(name):
    try:
        return COMPONENTS.index(name)
    except ValueError:
        raise DomainError(f"component must be one of {COMPONENTS}") from None


def _check_mode(mode):
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")


def effective_green(system, r_nm, r_e_nm, omega, mode="far-field", order=contour.DEFAULT_ORDER, rtol=None,
                    tol=1e-10):
    """G_eff(r, r_E) for an array of emitter frequencies, shape omega.shape + (3, 3).

    ``tol`` is the Mie-series tolerance, ``rtol`` (optional) the quadrature
    self-consistency tolerance of full mode.
    """
    _check_mode(mode)
    r_nm = np.asarray(r_nm, dtype=float)
    r_e_nm = np.asarray(r_e_nm, dtype=float)
    w = np.asarray(omega, dtype=float)
    k = w / C
    G = _free_space_matrix(r_nm * NM, r_e_nm * NM, k)
    if system.radius_nm > 0:
        G = G + scattered_green(system, r_nm, r_e_nm, w, tol=tol).matrix
    if mode == "full":
        dist = np.linalg.norm(r_nm - r_e_nm) * NM
        G = G - contour.off_resonant_green(
            lambda wc: _free_space_matrix(r_nm * NM, r_e_nm * NM, wc / C), w, dist, order, rtol)
        if system.radius_nm > 0:
            path = (np.linalg.norm(r_nm) + np.linalg.norm(r_e_nm) - 2 * system.radius_nm) * NM
            G = G - contour.off_resonant_green(
                lambda wc: scattered_green_tail(system, r_nm, r_e_nm, wc, tol), w, path, order, rtol,
                series_tol=max(tol, 1e-8))
    return G


def _chunks(n, size):
    for i in range(0, n, size):
        yield slice(i, min(n, i + size))


def effective_green_batch(system, points_nm, r_e_nm, omega, mode="far-field", order=contour.DEFAULT_ORDER,
                          tol=1e-10, rtol=None, n_cap=None, chunk=None):
    """G_eff for many detection points and emitter frequencies at once.

    Returns (G, ok): G of shape (W, P, 3, 3) for W frequencies and P points
    and a (W, P) mask.  A point fails when the estimated series remainder
    (real-axis plus imaginary-axis parts) exceeds ``tol`` relative to
    |G_eff|, or, with ``rtol``, when doubling the quadrature order moves Q
    by more than rtol |G_eff|.  Points are processed in chunks whose size
    depends only on the inputs, so results are reproducible.
    """
    _check_mode(mode)
    pts = np.atleast_2d(np.asarray(points_nm, dtype=float))
    r_e = np.asarray(r_e_nm, dtype=float)
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    k = (w / C)[:, None]
    sphere = system.radius_nm > 0
    R = system.radius_nm
    cap = N_CAP if n_cap is None else int(n_cap)
    out = np.empty((w.size, pts.shape[0], 3, 3), dtype=complex)
    ok = np.ones((w.size, pts.shape[0]), dtype=bool)
    dist = np.linalg.norm(pts - r_e, axis=1) * NM
    path = (np.linalg.norm(pts, axis=1) + np.linalg.norm(r_e) - 2 * R) * NM

    def order_bound(sl):
        near = pts[sl][np.argmin(np.linalg.norm(pts[sl], axis=1))]
        return min(cap, estimate_order_bound(system, near, r_e, w.max(), tol))

    def q_part(n, sl, nmax):
        u, wt = contour.imag_axis_rule(w, np.concatenate([dist[sl], path[sl]]) if sphere else dist[sl], n)
        kq = 1j * w[:, None] * u / C
        hq = np.broadcast_to(contour.node_weights(u, wt), kq.shape)
        Q = free_space_batch(pts[sl], r_e, kq, hq).real
        tail = np.zeros(Q.shape[:2])
        if sphere:
            # orders sized at the real frequencies: distant nodes carry little
            # weight and the integrated tail estimate covers the rest
            Qs, tail = scattered_green_batch(system, pts[sl], r_e, kq, hq, n_max=nmax, return_tail=True)
            Q = Q + Qs.real
        return Q, tail

    if chunk is None:
        per = w.size * (128 if mode == "full" else 1)
        chunk = max(1, min(2000, int(1e6 // per)))
    for sl in _chunks(pts.shape[0], chunk):
        G = free_space_batch(pts[sl], r_e, k)
        err = np.zeros(G.shape[:2])
        nmax = order_bound(sl) if sphere else 0
        if sphere:
            Gs, tail = scattered_green_batch(system, pts[sl], r_e, k, n_max=nmax, return_tail=True)
            G = G + Gs
            err += tail
        if mode == "full":
            Q, tail = q_part(order, sl, nmax)
            err += tail
            if rtol is not None:
                Qf, tail_f = q_part(2 * order, sl, nmax)
                change = np.sqrt(np.sum(np.abs(Qf - Q) ** 2, axis=(-2, -1)))
                scale = np.sqrt(np.sum(np.abs(G - Qf) ** 2, axis=(-2, -1)))
                ok[:, sl] &= change <= rtol * np.maximum(scale, 1e-300)
                Q = Qf
            G = G - Q
        scale = np.sqrt(np.sum(np.abs(G) ** 2, axis=(-2, -1)))
        ok[:, sl] &= err <= tol * np.maximum(scale, 1e-300)
        out[:, sl] = G
    return out, ok


def amplitude_batch(system, points_nm, r_e_nm, dipole_vec, omega, mode="far-field", paired=False, **kw):
    """g in spherical components, shape (W, P, 3), plus the (W, P) convergence mask.

    With ``paired`` the i-th point goes with the i-th frequency only and the
    results have shapes (W, 3) and (W,).
    """
    pts = np.atleast_2d(np.asarray(points_nm, dtype=float))
    if np.any(np.linalg.norm(pts - np.asarray(r_e_nm, float), axis=1) == 0):
        raise DomainError("detection point coincides with the emitter")
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    if paired and pts.shape[0] != w.size:
        raise DomainError("paired evaluation needs one point per frequency")
    G, ok = effective_green_batch(system, pts, r_e_nm, w, mode, **kw)
    g = (w * w / (EPS0 * C**2))[:, None, None] * (G @ np.asarray(dipole_vec, dtype=float))
    basis = np.stack([spherical_basis(p) for p in pts])
    g = np.einsum("wpj,pij->wpi", g, basis)
    if paired:
        idx = np.arange(w.size)
        return g[idx, idx], ok[idx, idx]
    return g, ok
    G, ok = effective_green_batch(system, pts, r_e_nm, w, mode, **kw)
    g = np.einsum("wpj,pij->wpi", pref[:, None, None] * (G @ d), basis)
    return g, ok


def amplitude_vector(system, r_nm, r_e_nm, dipole_vec, omega, mode="far-field", **kw):
    """Complex g in spherical components at r [V/m], shape omega.shape + (3,)."""
    if np.linalg.norm(np.asarray(r_nm, float) - np.asarray(r_e_nm, float)) == 0:
        raise DomainError("detection point coincides with the emitter")
    G = effective_green(system, r_nm, r_e_nm, omega, mode, **kw)
    w = np.asarray(omega, dtype=float)
    g = (w * w / (EPS0 * C**2))[..., None] * (G @ np.asarray(dipole_vec, dtype=float))
    return g @ spherical_basis(r_nm).T


@dataclass(frozen=True)
class FieldAmplitude:
    """gamma_i and dw_i [1/s] per spherical component at a detection point."""

    gamma: np.ndarray
    delta_omega: np.ndarray
    position_nm: tuple
    mode: str

    @property
    def magnitude(self):
        return HBAR * np.sqrt((self.gamma / 2) ** 2 + self.delta_omega**2)

    @property
    def phase(self):
        """Argument of g = hbar(-dw + i gamma/2), i.e. arctan(-gamma / 2dw) on the right branch."""
        return np.arctan2(self.gamma / 2, -self.delta_omega)

    @property
    def complex(self):
        return HBAR * (-self.delta_omega + 0.5j * self.gamma)

    def component(self, name):
        return self.complex[component_index(name)]


def _emitter_args(emitter):
    return emitter.r, emitter.dipole_vector, emitter.omega


def field_amplitude(emitter, system, r_nm, mode="far-field", rtol=None, tol=1e-10):
    r_e, d, w = _emitter_args(emitter)
    g = amplitude_vector(system, r_nm, r_e, d, w, mode, rtol=rtol, tol=tol)
    return FieldAmplitude(2 * g.imag / HBAR, -g.real / HBAR, tuple(np.asarray(r_nm, float)), mode)


def gamma_vector(emitter, system, r_nm):
    """(2 w^2 / hbar eps0 c^2) Im G(r, r_E).d in spherical components [1/s]."""
    return field_amplitude(emitter, system, r_nm, "far-field").gamma


def delta_omega_vector(emitter, system, r_nm, mode="far-field", rtol=None):
    """Principal-value frequency vector [1/s]; far-field keeps only the pole term."""
    return field_amplitude(emitter, system, r_nm, mode, rtol=rtol).delta_omega


def amplitude_ratio(emitter, system, r_nm, component, mode="far-field", tol=1e-10):
    """|g_i / g_i,0|^2 with the same emitter and detector but no sphere."""
    i = component_index(component)
    g = field_amplitude(emitter, system, r_nm, mode, tol=tol).complex[i]
    g0 = field_amplitude(emitter, system.free_space(), r_nm, mode).complex[i]
    return float(abs(g / g0) ** 2)


def off_resonant_fraction(emitter, system, r_nm, component="r", tol=1e-10):
    """|g_full - g_far| / |g_full| for one spherical component.

    The share of the amplitude carried by the off-resonant frequencies,
    i.e. the error made by the resonant (far-field) approximation.
    """
    i = component_index(component)
    full = field_amplitude(emitter, system, r_nm, "full", tol=tol).complex[i]
    far = field_amplitude(emitter, system, r_nm, "far-field", tol=tol).complex[i]
    return float(abs(full - far) / abs(full))


# -- variance ---------------------------------------------------------------------

@dataclass(frozen=True)
class VarianceResult:
    """(Delta E_i)^2 [V^2/m^2] per component plus optional normalized value."""

    value: np.ndarray
    normalized: np.ndarray = None
    homodyne: object = None

    @property
    def squeezed(self):
        return np.asarray(self.value) < 0


def field_variance(amplitude, state, delta, z, x, theta_total=0.0, reference=None):
    """|g_i|^2 times the atomic variance; ``reference`` is the free-space amplitude.

    ``state`` (a BlochState, or None) is checked against (delta, z, x).
    """
    if state is not None:
        sz = -(1 + np.asarray(delta) ** 2) / (1 + np.asarray(delta) ** 2 + np.asarray(z) ** 2)
        if not np.allclose(state.sigma_z_s, sz, rtol=1e-9, atol=1e-12):
            raise DomainError("Bloch state inconsistent with (delta, z, x)")
    av = atomic_variance(delta, z, x, theta_total)
    mag2 = np.abs(amplitude.complex) ** 2
    value = mag2 * av
    norm = None
    if reference is not None:
        with np.errstate(invalid="ignore", divide="ignore"):
            norm = value / np.abs(reference.complex) ** 2
    return VarianceResult(value, norm)


# -- homodyne detection ---------------------------------------------------------------

@dataclass(frozen=True)
class HomodyneConfig:
    """Balanced-homodyne settings.

    ``lo_flux`` is |alpha|^2 in photons per second at the detector and
    ``field_to_flux`` converts a field variance [V^2/m^2] into the same units
    (1.0 means values are already in flux units).
    """

    efficiency: float
    window_s: float
    lo_flux: float
    lo_phase: float = 0.0
    theta: float = 0.0
    field_to_flux: float = 1.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise DomainError("detector efficiency must lie in [0, 1]")
        if self.window_s < 0 or self.lo_flux < 0 or self.field_to_flux <= 0:
            raise DomainError("window, oscillator flux and flux scale must be non-negative")


@dataclass(frozen=True)
class HomodyneResult:
    signal: float
    mean_counts: float
    source_counts: float
    valid: bool
    warnings: tuple = field(default=())


def photocount_mean(cfg):
    """Shot-noise counts xi dt |alpha|^2."""
    return cfg.efficiency * cfg.window_s * cfg.lo_flux


def homodyne_signal(variance, cfg, source_intensity=0.0):
    """(Dn^2 - n) / n = xi dt <:dE^2:>, with a strong-oscillator validity check.

    ``variance`` is a field variance [V^2/m^2] (or a VarianceResult component
    value); ``source_intensity`` is |g|^2 <sigma^+ sigma> in the same units.
    """
    v = float(getattr(variance, "value", variance))
    scale = cfg.efficiency * cfg.window_s * cfg.field_to_flux
    n_mean = photocount_mean(cfg)
    source = scale * float(source_intensity)
    valid = source <= LO_VALIDITY_FRACTION * n_mean
    warns = () if valid else (
        f"source counts {source:.3g} exceed {LO_VALIDITY_FRACTION:g} of the oscillator counts {n_mean:.3g}",)
    return HomodyneResult(scale * v, n_mean, source, bool(valid), warns)


def source_intensity(amplitude, state, component):
    """|g_i|^2 <sigma^+ sigma> = |g_i|^2 (1 + <sigma_z>)/2."""
    g = amplitude.component(component)
    return float(abs(g) ** 2 * (1 + state.sigma_z_s) / 2)


def detection_point(kind, radius_nm, lambda_nm, custom=None):
    """D1 (x axis, 1e5 wavelengths out), D2 (-z axis, 10 nm off the surface) or custom."""
    if kind == "D1":
        return np.array([1e5 * lambda_nm, 0.0, 0.0])
    if kind == "D2":
        return np.array([0.0, 0.0, -(radius_nm + 10.0)])
    if kind == "custom" and custom is not None:
        return np.asarray(custom, dtype=float)
    raise DomainError(f"unknown detection point {kind!r}")
