"""Dyadic Green tensor of vacuum plus a homogeneous sphere.

SI convention: curl curl G - k^2 eps G = I delta, so that
Im G_ii(r, r, w) = w / (6 pi c) in vacuum and the decay rate is
gamma = (2 w^2 / hbar eps0 c^2) d.Im G.d.  Positions enter in nm, G is in 1/m.

The scattered part is the vector-spherical-wave series

    G_s(r1, r2) = ik sum_nm [B_M M_nm(r1) (x) M~_nm(r2) + B_N N_nm(r1) (x) N~_nm(r2)]

with orthonormal vector spherical harmonics, outgoing radial functions at both
points and ``~`` conjugating only the angular part (keeps G analytic in k, so
the same code runs at complex frequency).  The source point is rotated onto
the +z axis, where only m = -1, 0, 1 survive.  Radial factors are assembled
from Riccati log-derivatives and ratios, never from h_n itself, so high orders
and imaginary frequencies do not overflow.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import specfun
from .constants import C, NM
from .errors import ConvergenceError, DomainError
from .materials import GOLD_DEFAULT, DrudeLorentzModel

N_CAP = specfun.ORDER_CAP


@dataclass(frozen=True)
class SphereSystem:
    """Sphere of radius ``radius_nm`` centred at the origin, in vacuum.

    ``radius_nm == 0`` is allowed and means no sphere at all.
    """

    radius_nm: float
    material: DrudeLorentzModel = GOLD_DEFAULT
    background_permittivity: float = 1.0

    def __post_init__(self):
        if not self.radius_nm >= 0:
            raise DomainError("sphere radius must be >= 0")
        if self.background_permittivity != 1.0:
            raise DomainError("only a vacuum background is supported")

    @property
    def radius(self):
        return self.radius_nm * NM

    def free_space(self):
        return SphereSystem(0.0, self.material)


@dataclass(frozen=True)
class DyadicGreen:
    """G(r1, r2, omega); ``matrix`` has shape omega.shape + (3, 3)."""

    matrix: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    omega: object


@dataclass(frozen=True)
class MieCoefficients:
    n: int
    B_M: complex
    B_N: complex


# -- vacuum -----------------------------------------------------------------

def _free_space_matrix(r1, r2, k):
    """Vacuum G for distinct points (metres); k of any shape, complex allowed."""
    d = np.asarray(r1, dtype=float) - np.asarray(r2, dtype=float)
    rho = float(np.linalg.norm(d))
    if rho == 0:
        raise DomainError("coincident points: use free_space_green_imag_coincident")
    rhat = d / rho
    kr = np.asarray(k, dtype=complex) * rho
    g = np.exp(1j * kr) / (4 * np.pi * rho)
    a = g * (1 + (1j * kr - 1) / kr**2)
    b = g * (3 - 3j * kr - kr**2) / kr**2
    return a[..., None, None] * np.eye(3) + b[..., None, None] * np.outer(rhat, rhat)


def free_space_batch(points_nm, r2_nm, k, h=None):
    """sum_j h[g, j] G_0(points[p], r2, c k[g, j]) with shape (G, P, 3, 3)."""
    pts = np.atleast_2d(np.asarray(points_nm, dtype=float)) * NM
    d = pts - np.asarray(r2_nm, dtype=float) * NM
    rho = np.linalg.norm(d, axis=1)
    if np.any(rho == 0):
        raise DomainError("coincident points: use free_space_green_imag_coincident")
    rhat = d / rho[:, None]
    k = np.atleast_2d(np.asarray(k, dtype=complex))
    h = np.ones(k.shape) if h is None else np.broadcast_to(np.asarray(h, dtype=complex), k.shape)
    kr = k[..., None] * rho
    with np.errstate(under="ignore"):
        g = np.exp(1j * kr) / (4 * np.pi * rho)
    a = np.einsum("gj,gjp->gp", h, g * (1 + (1j * kr - 1) / kr**2))
    b = np.einsum("gj,gjp->gp", h, g * (3 - 3j * kr - kr**2) / kr**2)
    return a[..., None, None] * np.eye(3) + b[..., None, None] * np.einsum("pi,pj->pij", rhat, rhat)


def free_space_green(r1_nm, r2_nm, omega):
    """Vacuum dyadic Green tensor between distinct points (positions in nm)."""
    r1 = np.asarray(r1_nm, dtype=float) * NM
    r2 = np.asarray(r2_nm, dtype=float) * NM
    k = np.asarray(omega, dtype=complex) / C
    return DyadicGreen(_free_space_matrix(r1, r2, k), np.asarray(r1_nm), np.asarray(r2_nm), omega)


def free_space_green_imag_coincident(omega):
    """Im G_0(r, r, omega) = omega / (6 pi c) * I, the finite coincidence limit."""
    w = np.asarray(omega, dtype=float)
    return (w / (6 * np.pi * C))[..., None, None] * np.eye(3)


# -- Mie coefficients ---------------------------------------------------------

def _refractive_index(eps):
    m = np.sqrt(np.asarray(eps, dtype=complex))
    return np.where(m.imag < 0, -m, m)


def _mie_scaled(nmax, x, m):
    """(B_M h_n(x)^2, B_N h_n(x)^2, B_M h_n(x), B_N h_n(x)) for n = 0..nmax.

    ``B = -b_n`` (magnetic) and ``-a_n`` (electric) in Bohren-Huffman notation.
    """
    d1, d3, psixi, _ = specfun.riccati_log_derivatives(nmax, x)
    dm = specfun.psi_log_derivative(nmax, m * x)
    m_ = m[..., None]
    x_ = x[..., None]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio_n = (m_ * d1 - dm) / (m_ * d3 - dm)
        ratio_m = (d1 - m_ * dm) / (d3 - m_ * dm)
    bn_hh = -psixi / x_**2 * ratio_n
    bm_hh = -psixi / x_**2 * ratio_m
    return bm_hh, bn_hh, ratio_m, ratio_n


def mie_reflection_coefficients(system, n, omega):
    """Exterior reflection coefficients (B_M, B_N) of order n at frequency omega."""
    if n < 1:
        raise DomainError("Mie order must be >= 1")
    if system.radius_nm == 0:
        return MieCoefficients(n, 0j, 0j)
    w = complex(omega)
    if w.imag == 0 and w.real <= 0:
        raise DomainError("omega must be > 0")
    x = np.asarray(w / C * system.radius, dtype=complex)
    m = _refractive_index(system.material.evaluate(w))
    _, _, ratio_m, ratio_n = _mie_scaled(n, x, m)
    psi, xi = specfun.riccati_functions(n, complex(x))
    q = psi.value / xi.value
    return MieCoefficients(n, complex(-q * ratio_m[n]), complex(-q * ratio_n[n]))


# -- angular part ---------------------------------------------------------------

def _vsh(nmax, mu, phi):
    """Orthonormal VSH pieces for n = 1..nmax and m = -1, 0, 1 in Cartesian form.

    Returns Y (..., N, 3m), X and Z = rhat x X (..., N, 3m, 3), rhat (..., 3).
    """
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    p, pi, tau = specfun.mie_angular_all(nmax, mu)
    n = np.arange(1, nmax + 1)
    p, pi, tau = p[..., 1:], pi[..., 1:], tau[..., 1:]
    sin = np.sqrt(np.clip(1 - mu * mu, 0, None))[..., None]
    c0 = np.sqrt((2 * n + 1) / (4 * np.pi))
    c1 = np.sqrt((2 * n + 1) / (4 * np.pi * n * (n + 1)))
    s = np.sqrt(n * (n + 1.0))
    ep = np.exp(1j * phi)[..., None]
    em = np.conj(ep)
    Y = np.stack([c1 * sin * pi * em, c0 * p + 0j, -c1 * sin * pi * ep], axis=-1)
    m_over_sin_Y = np.stack([-c1 * pi * em, np.zeros_like(p) + 0j, -c1 * pi * ep], axis=-1)
    dY = np.stack([c1 * tau * em, -c0 * sin * pi + 0j, -c1 * tau * ep], axis=-1)
    st = sin[..., 0]
    cp, sp = np.cos(phi), np.sin(phi)
    rhat = np.stack([st * cp, st * sp, mu * np.ones_like(cp)], axis=-1)
    that = np.stack([mu * cp, mu * sp, -st * np.ones_like(cp)], axis=-1)
    phat = np.stack([-sp, cp, np.zeros_like(cp)], axis=-1)
    th = that[..., None, None, :]
    ph = phat[..., None, None, :]
    norm = s[:, None, None]
    X = (-m_over_sin_Y[..., None] * th - 1j * dY[..., None] * ph) / norm
    Z = (1j * dY[..., None] * th - m_over_sin_Y[..., None] * ph) / norm
    return Y, X, Z, rhat


def _dyads(nmax, mu1, phi1):
    """n-resolved angular dyads for field point (mu1, phi1), source on +z.

    Returns an array (..., N, 5, 3, 3): [M, rr, rZ, Zr, ZZ] pieces.
    """
    Y1, X1, Z1, r1 = _vsh(nmax, mu1, phi1)
    Y2, X2, Z2, r2 = _vsh(nmax, np.array(1.0), np.array(0.0))
    s = np.sqrt(np.arange(1, nmax + 1) * (np.arange(1, nmax + 1) + 1.0))
    Y2c, X2c, Z2c = np.conj(Y2), np.conj(X2), np.conj(Z2)
    dM = np.einsum("...nmi,nmj->...nij", X1, X2c)
    yy = np.einsum("...nm,nm->...n", Y1, Y2c) * s**2
    drr = yy[..., None, None] * r1[..., None, :, None] * r2
    dZr = -1j * s[:, None, None] * np.einsum("...nmi,nm->...ni", Z1, Y2c)[..., None] * r2
    yz = 1j * s[:, None] * np.einsum("...nm,nmj->...nj", Y1, Z2c)
    drZ = r1[..., None, :, None] * yz[..., None, :]
    dZZ = np.einsum("...nmi,nmj->...nij", Z1, Z2c)
    return np.stack([dM, drr, drZ, dZr, dZZ], axis=-3)


# -- series ---------------------------------------------------------------------

def _frame(r2):
    """Rotation matrix Q (rows = new axes) with Q @ r2 along +z."""
    e3 = r2 / np.linalg.norm(r2)
    trial = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = trial - e3 * (trial @ e3)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3])


def _spherical(r):
    rho = np.sqrt(np.sum(r * r, axis=-1))
    mu = np.clip(r[..., 2] / rho, -1, 1)
    phi = np.arctan2(r[..., 1], r[..., 0])
    return rho, mu, phi


def _radial_series_terms(k, eps, R, rho1, rho2, nmax):
    """Per-order radial weights (..., N, 5) multiplying the dyads, times ik.

    Shapes of k, eps and rho1 broadcast together; rho2 is a scalar.
    """
    k = np.asarray(k, dtype=complex)
    x = k * R
    m = _refractive_index(eps)
    x, m, rho1 = np.broadcast_arrays(x, m, np.asarray(rho1, dtype=float))
    z1 = k * rho1
    z2 = k * rho2
    bm_hh, bn_hh, _, _ = _mie_scaled(nmax, x, m)
    _, sig_x = specfun.xi_log_derivatives(nmax, x)
    d3_1, sig_1 = specfun.xi_log_derivatives(nmax, z1)
    d3_2, sig_2 = specfun.xi_log_derivatives(nmax, np.broadcast_to(z2, z1.shape))
    # t_n(z) = h_n(z) / h_n(x), built from xi ratios
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        t1 = np.cumprod(sig_1[..., 1:] / sig_x[..., 1:], axis=-1) * ((x / z1) * np.exp(1j * (z1 - x)))[..., None]
        t2 = np.cumprod(sig_2[..., 1:] / sig_x[..., 1:], axis=-1) * ((x / z2) * np.exp(1j * (z2 - x)))[..., None]
    t1 = np.nan_to_num(t1)
    t2 = np.nan_to_num(t2)
    cM = bm_hh[..., 1:] * t1 * t2
    cN = bn_hh[..., 1:] * t1 * t2
    iz1 = (1 / z1)[..., None]
    iz2 = (1 / z2)[..., None] if np.ndim(z2) else 1 / z2
    w = np.stack(
        [cM, cN * iz1 * iz2, cN * iz1 * d3_2[..., 1:], cN * d3_1[..., 1:] * iz2, cN * d3_1[..., 1:] * d3_2[..., 1:]],
        axis=-1,
    )
    return 1j * k[..., None, None] * w


def _free_radial_terms(k, rho1, rho2, nmax):
    """Radial weights of the vacuum expansion for rho1 > rho2 (test oracle)."""
    k = np.asarray(k, dtype=complex)
    z1 = k * rho1
    z2 = k * rho2
    h1 = specfun.spherical_h1_all(nmax, z1)[..., 1:]
    d3_1, _ = specfun.xi_log_derivatives(nmax, z1)
    j2 = specfun.spherical_jn_all(nmax, z2)[..., 1:]
    d1_2 = specfun.psi_log_derivative(nmax, z2)[..., 1:]
    c = h1 * j2
    iz1, iz2 = (1 / z1)[..., None], (1 / z2)[..., None]
    w = np.stack([c, c * iz1 * iz2, c * iz1 * d1_2, c * d3_1[..., 1:] * iz2, c * d3_1[..., 1:] * d1_2], axis=-1)
    return 1j * k[..., None, None] * w


def _contract(weights, dyads):
    """Sum over n and the five pieces -> (..., 3, 3) and per-order norms."""
    terms = np.einsum("...np,...npij->...nij", weights, dyads)
    return terms.sum(axis=-3), np.sqrt(np.sum(np.abs(terms) ** 2, axis=(-2, -1)))


def estimate_order_bound(system, r1_nm, r2_nm, omega, tol=1e-10):
    """Upper bound on the number of Mie orders.

    The larger of the Wiscombe count inflated by the near-field factor
    R / sqrt((|r1| - R)(|r2| - R)), and the order at which the geometric
    factor (R^2 / |r1||r2|)^n falls below tol; capped at N_CAP.  The
    geometric mean keeps a far-zone partner point from paying for a
    near-surface one: the Hankel ratios then decay factorially.
    """
    R = system.radius_nm
    kR = float(np.max(np.abs(np.asarray(omega, dtype=complex)))) / C * system.radius
    nw = kR + 4 * kR ** (1 / 3) + 10
    a, b = float(np.linalg.norm(r1_nm)), float(np.linalg.norm(r2_nm))
    near = R / math.sqrt((a - R) * (b - R))
    q = R * R / (a * b)
    n_geo = math.log(min(tol, 0.5)) / math.log(q) if q > 0 else 0.0
    return int(min(N_CAP, math.ceil(max(nw * (1 + near), 1.3 * n_geo + 10))))


def _check_exterior(system, *points):
    for p in points:
        if np.any(np.linalg.norm(np.asarray(p, dtype=float), axis=-1) <= system.radius_nm):
            raise DomainError("points must lie outside the sphere")


def _scattered_in_frame(system, r1_nm, r2_nm, omega, nmax):
    """Scattered G and per-order norms; r1_nm may be an array (..., 3)."""
    r1 = np.asarray(r1_nm, dtype=float) * NM
    r2 = np.asarray(r2_nm, dtype=float) * NM
    Q = _frame(r2)
    r1p = r1 @ Q.T
    rho1, mu1, phi1 = _spherical(r1p)
    rho2 = float(np.linalg.norm(r2))
    w = np.asarray(omega, dtype=complex)
    k = w / C
    eps = system.material.evaluate(w)
    dy = _dyads(nmax, mu1, phi1)
    if np.ndim(rho1):
        # points vary: broadcast omega over a trailing point axis
        k_ = k[..., None]
        eps_ = np.asarray(eps)[..., None]
    else:
        k_, eps_ = k, eps
    wts = _radial_series_terms(k_, eps_, system.radius, rho1, rho2, nmax)
    G, norms = _contract(wts, dy)
    G = Q.T @ G @ Q
    return G, norms


def _tail_ok(G, norms, tol, tail=3):
    scale = np.sqrt(np.sum(np.abs(G) ** 2, axis=(-2, -1)))
    last = norms[..., -tail:].max(axis=-1)
    return bool(np.all(last <= tol * np.maximum(scale, 1e-300)))


def scattered_green(system, r1_nm, r2_nm, omega, n_max=None, tol=1e-10):
    """Sphere-scattered Green tensor G_s(r1, r2, omega).

    ``omega`` may be an array (complex values allowed).  Without ``n_max`` the
    series is summed to the bound of :func:`estimate_order_bound` and the tail
    is checked against ``tol``; an unconverged tail raises ConvergenceError.
    """
    r1_nm = np.asarray(r1_nm, dtype=float)
    r2_nm = np.asarray(r2_nm, dtype=float)
    w = np.asarray(omega)
    if system.radius_nm == 0:
        return DyadicGreen(np.zeros(w.shape + (3, 3), complex), r1_nm, r2_nm, omega)
    _check_exterior(system, r1_nm, r2_nm)
    if n_max is not None:
        if n_max < 1:
            raise DomainError("n_max must be >= 1")
        G, _ = _scattered_in_frame(system, r1_nm, r2_nm, w, n_max)
        return DyadicGreen(G, r1_nm, r2_nm, omega)
    nmax = estimate_order_bound(system, r1_nm, r2_nm, w, tol)
    G, norms = _scattered_in_frame(system, r1_nm, r2_nm, w, nmax)
    if not _tail_ok(G, norms, tol):
        raise ConvergenceError(
            f"Mie series not converged at n_max={nmax}",
            report={"n_max": nmax, "tail": float(norms[..., -1].max())},
        )
    return DyadicGreen(G, r1_nm, r2_nm, omega)


def scattered_green_tail(system, r1_nm, r2_nm, omega, tol=1e-10):
    """(G_s, tail) with tail the size of the last retained terms per frequency.

    Used on the imaginary axis, where strong cancellation between terms
    makes a per-frequency relative check meaningless; callers judge the tail
    against the integrated quantity instead.
    """
    r1_nm = np.asarray(r1_nm, dtype=float)
    r2_nm = np.asarray(r2_nm, dtype=float)
    _check_exterior(system, r1_nm, r2_nm)
    nmax = estimate_order_bound(system, r1_nm, r2_nm, omega, tol)
    G, norms = _scattered_in_frame(system, r1_nm, r2_nm, np.asarray(omega), nmax)
    return G, norms[..., -3:].max(axis=-1)


def scattered_green_batch(system, points_nm, r2_nm, k, h=None, n_max=None, tol=1e-10, return_tail=False):
    """Weighted sums of G_s over frequency nodes for many field points.

    ``k`` has shape (G, J) (complex wavenumbers [1/m]); ``h`` the matching
    weights (default 1 with J = 1).  Returns S (G, P, 3, 3) with
    S[g, p] = sum_j h[g, j] G_s(points[p], r2, c k[g, j]) and a boolean
    (G, P) array telling whether the summed series met ``tol``.  The node
    sum is taken order by order before the angular contraction, so the tail
    estimate (the largest of the last three order contributions, same
    shape as the mask) applies to the integrated quantity.  With
    ``return_tail`` the estimate is returned instead of the mask.
    """
    pts = np.atleast_2d(np.asarray(points_nm, dtype=float))
    r2_nm = np.asarray(r2_nm, dtype=float)
    _check_exterior(system, r2_nm, *pts)
    k = np.atleast_2d(np.asarray(k, dtype=complex))
    h = np.ones(k.shape) if h is None else np.broadcast_to(np.asarray(h, dtype=complex), k.shape)
    R = system.radius
    r2 = r2_nm * NM
    Q = _frame(r2)
    rho1, mu1, phi1 = _spherical(pts * NM @ Q.T)
    rho2 = float(np.linalg.norm(r2))
    if n_max is None:
        near = pts[np.argmin(np.linalg.norm(pts, axis=1))]
        n_max = estimate_order_bound(system, near, r2_nm, C * np.abs(k).max(), tol)
    N = n_max
    x = k * R
    m = _refractive_index(system.material.evaluate(C * k))
    bm_hh, bn_hh, _, _ = _mie_scaled(N, x, m)
    _, sig_x = specfun.xi_log_derivatives(N, x)
    z2 = k * rho2
    d3_2, sig_2 = specfun.xi_log_derivatives(N, z2)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        t2 = np.cumprod(sig_2[..., 1:] / sig_x[..., 1:], axis=-1) * ((x / z2) * np.exp(1j * (z2 - x)))[..., None]
    t2 = np.nan_to_num(t2)
    c0 = 1j * k * h
    z1 = k[..., None] * rho1
    iz1 = 1 / z1
    with np.errstate(under="ignore"):
        t1 = (x[..., None] * iz1) * np.exp(1j * (z1 - x[..., None]))
    d3 = np.full(z1.shape, 1j)
    A = np.empty((k.shape[0], pts.shape[0], N, 5), dtype=complex)
    for n in range(1, N + 1):
        sig = n * iz1 - d3
        d3 = 1 / sig - n * iz1
        with np.errstate(under="ignore", over="ignore", invalid="ignore"):
            t1 = np.nan_to_num(t1 * (sig / sig_x[..., n, None]))
        cM = c0 * bm_hh[..., n] * t2[..., n - 1]
        cN = c0 * bn_hh[..., n] * t2[..., n - 1]
        a = t1 * iz1
        b = t1 * d3
        A[..., n - 1, 0] = np.einsum("gj,gjp->gp", cM, t1)
        A[..., n - 1, 1] = np.einsum("gj,gjp->gp", cN / z2, a)
        A[..., n - 1, 2] = np.einsum("gj,gjp->gp", cN * d3_2[..., n], a)
        A[..., n - 1, 3] = np.einsum("gj,gjp->gp", cN / z2, b)
        A[..., n - 1, 4] = np.einsum("gj,gjp->gp", cN * d3_2[..., n], b)
    dy = _dyads(N, mu1, phi1)
    terms = np.einsum("gpnq,pnqij->gpnij", A, dy)
    S = terms.sum(axis=2)
    norms = np.sqrt(np.sum(np.abs(terms) ** 2, axis=(-2, -1)))
    tail = norms[..., -3:].max(axis=-1)
    if return_tail:
        return Q.T @ S @ Q, tail
    scale = np.sqrt(np.sum(np.abs(S) ** 2, axis=(-2, -1)))
    return Q.T @ S @ Q, tail <= tol * np.maximum(scale, 1e-300)


def green(system, r1_nm, r2_nm, omega, **kw):
    """Total G = G_0 + G_s for distinct exterior points."""
    Gs = scattered_green(system, r1_nm, r2_nm, omega, **kw).matrix
    G0 = free_space_green(r1_nm, r2_nm, omega).matrix
    return DyadicGreen(G0 + Gs, np.asarray(r1_nm), np.asarray(r2_nm), omega)


def truncation_order(system, r1_nm, r2_nm, omega, tol):
    """Smallest n such that every later term is below tol relative to the sum."""
    r1_nm = np.asarray(r1_nm, dtype=float)
    r2_nm = np.asarray(r2_nm, dtype=float)
    if system.radius_nm == 0:
        return 1
    _check_exterior(system, r1_nm, r2_nm)
    bound = estimate_order_bound(system, r1_nm, r2_nm, omega, tol)
    G, norms = _scattered_in_frame(system, r1_nm, r2_nm, np.asarray(omega), bound)
    norms = norms.reshape(-1, bound).max(axis=0)
    partial = np.cumsum(norms)  # triangle-inequality stand-in for |S_n|
    scale = np.sqrt(np.sum(np.abs(G) ** 2, axis=(-2, -1))).max()
    tail_max = np.maximum.accumulate(norms[::-1])[::-1]
    for n in range(1, bound + 1):
        nxt = tail_max[n] if n < bound else 0.0
        if nxt < tol * scale or n == bound and nxt == 0.0 and norms[-1] < tol * scale:
            return n
    raise ConvergenceError(
        f"truncation order exceeds the cap of {bound}; move the points away from the surface",
        report={"bound": bound, "partial": float(partial[-1])},
    )


# -- plane wave ------------------------------------------------------------------

def plane_wave_local_field(system, k_inc, polarization, r_nm, omega):
    """Total field (incident + scattered) of a unit-amplitude plane wave at r.

    ``k_inc`` is the propagation direction; ``polarization`` a unit vector
    perpendicular to it.  The scattered part is the limit of a point source
    receding along -k_inc, which reuses the dipole series machinery.  Either
    ``omega`` or ``r_nm`` (shape (..., 3)) may be an array.
    """
    khat = np.asarray(k_inc, dtype=float)
    khat = khat / np.linalg.norm(khat)
    e = np.asarray(polarization, dtype=complex)
    if abs(np.dot(khat, e)) > 1e-12 * np.linalg.norm(e):
        raise DomainError("polarization must be perpendicular to k_inc")
    r_nm = np.asarray(r_nm, dtype=float)
    w = np.asarray(omega, dtype=complex)
    k = w / C
    if np.ndim(k) and r_nm.ndim > 1:
        raise DomainError("omega and r_nm cannot both be arrays")
    r = r_nm * NM
    e_inc = np.exp(1j * k * (r @ khat))[..., None] * e
    if system.radius_nm == 0:
        return e_inc
    _check_exterior(system, r_nm)
    Q = _frame(-khat)
    rho1, mu1, phi1 = _spherical(r @ Q.T)
    R = system.radius
    kR = float(np.max(np.abs(k))) * R
    near = float(np.max(R / (rho1 - R)))
    nmax = int(min(N_CAP, math.ceil((kR + 4 * kR ** (1 / 3) + 10) * (1 + min(near, 4.0)))))
    x = k * R
    m = _refractive_index(system.material.evaluate(w))
    _, _, ratio_m, ratio_n = _mie_scaled(nmax, x, m)
    jx = specfun.spherical_jn_all(nmax, x)
    _, sig_x = specfun.xi_log_derivatives(nmax, x)
    z1 = k * rho1
    d3_1, sig_1 = specfun.xi_log_derivatives(nmax, z1)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        t1 = np.cumprod(sig_1[..., 1:] / sig_x[..., 1:], axis=-1) * ((x / z1) * np.exp(1j * (z1 - x)))[..., None]
    t1 = np.nan_to_num(t1)
    n = np.arange(1, nmax + 1)
    # B h_n(z1) = B h_n(x) t_n, with B_N h_n(x) = -j_n(x) * ratio_n
    bm_h = -jx[..., 1:] * ratio_m[..., 1:] * t1
    bn_h = -jx[..., 1:] * ratio_n[..., 1:] * t1
    # receding source: h_n(kL) 4 pi L e^{-ikL} -> 4 pi (-i)^{n+1} / k, D3 -> i, 1/(kL) -> 0
    far = 4 * np.pi * (-1j) ** (n + 1) / k[..., None]
    zeros = np.zeros_like(bm_h)
    wts = 1j * k[..., None, None] * np.stack(
        [bm_h * far, zeros, bn_h * far / z1[..., None] * 1j, zeros, bn_h * far * d3_1[..., 1:] * 1j], axis=-1
    )
    dy = _dyads(nmax, mu1, phi1)
    Gp, _ = _contract(wts, dy)
    Gs = Q.T @ Gp @ Q
    return e_inc + Gs @ e
