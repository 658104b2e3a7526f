"""Spherical Bessel/Hankel, Riccati-Bessel and Mie angular functions.

All routines accept complex arguments and broadcast over arrays of ``z``.
The ``*_all`` variants return every order ``0..nmax`` along the last axis,
which is what the Mie series needs.

Conventions: ``psi_n(z) = z j_n(z)``, ``xi_n(z) = z h_n^(1)(z)``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

ORDER_CAP = 200
SMALL_Z = 1e-2


@dataclass(frozen=True)
class RiccatiPair:
    value: complex
    derivative: complex


def _check_order(n):
    if n < 0:
        raise DomainError(f"order must be >= 0, got {n}")
    if n > ORDER_CAP:
        raise DomainError(f"order {n} exceeds the cap of {ORDER_CAP}")


def _miller_start(nmax, z):
    zmax = float(np.max(np.abs(z))) if np.size(z) else 0.0
    top = max(nmax, zmax)
    return int(top + 4.0 * top ** (1.0 / 3.0) + 16)


def jn_ratios(nmax, z):
    """Ratios ``j_n(z)/j_{n-1}(z)`` for n = 1..nmax, by downward continued fraction.

    Returned array has shape ``z.shape + (nmax + 1,)``; index 0 is unused (NaN).
    The continued fraction is stable for every z, which makes it the building
    block for both ``j_n`` and the logarithmic derivative of ``psi_n``.
    """
    z = np.asarray(z, dtype=complex)
    nstart = _miller_start(nmax, z)
    out = np.full(z.shape + (nmax + 1,), np.nan + 0j)
    rho = np.zeros_like(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        for n in range(nstart, 0, -1):
            rho = 1.0 / ((2 * n + 1) / z - rho)
            if n <= nmax:
                out[..., n] = rho
    return out


def _series_jn(n, z, terms=40):
    """Ascending power series of j_n; accurate for |z| small compared with n+1."""
    z = np.asarray(z, dtype=complex)
    # z^n / (2n+1)!!
    lead = np.ones_like(z)
    for k in range(1, n + 1):
        lead = lead * z / (2 * k + 1)
    term = np.ones_like(z)
    total = np.ones_like(z)
    w = -0.5 * z * z
    for k in range(1, terms):
        term = term * w / (k * (2 * n + 2 * k + 1))
        total = total + term
    return lead * total


def spherical_jn_all(nmax, z):
    """j_0..j_nmax at z (last axis is the order)."""
    _check_order(nmax)
    z = np.asarray(z, dtype=complex)
    out = np.empty(z.shape + (nmax + 1,), dtype=complex)
    small = np.abs(z) < SMALL_Z
    zs = np.where(small, 1.0, z)
    j0 = np.sin(zs) / zs
    j1 = np.sin(zs) / zs**2 - np.cos(zs) / zs
    rho = jn_ratios(max(nmax, 1), zs)
    # anchor on whichever of j0, j1 is larger so zeros of sin(z) do no harm
    use_j1 = np.abs(j1) > np.abs(j0)
    out[..., 0] = j0
    if nmax >= 1:
        out[..., 1] = np.where(use_j1, j1, j0 * rho[..., 1])
    for n in range(2, nmax + 1):
        out[..., n] = out[..., n - 1] * rho[..., n]
    if np.any(small):
        for n in range(nmax + 1):
            out[..., n] = np.where(small, _series_jn(n, z), out[..., n])
    return out


def spherical_yn_all(nmax, z):
    """y_0..y_nmax at z.

    Formed as ``-i (h_n - j_n)``: plain upward recurrence for y_n loses
    accuracy off the real axis, where j_n dominates the combination.
    """
    _check_order(nmax)
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise DomainError("y_n is singular at z = 0")
    return -1j * (spherical_h1_all(nmax, z) - spherical_jn_all(nmax, z))


def spherical_h1_all(nmax, z):
    """h^(1)_0..h^(1)_nmax at z by upward recurrence.

    Evaluated directly rather than as j + i y so that the exponentially small
    values on the positive imaginary axis survive.
    """
    _check_order(nmax)
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise DomainError("h_n^(1) is singular at z = 0")
    out = np.empty(z.shape + (nmax + 1,), dtype=complex)
    e = np.exp(1j * z)
    out[..., 0] = -1j * e / z
    if nmax >= 1:
        out[..., 1] = -e * (z + 1j) / z**2
    for n in range(1, nmax):
        out[..., n + 1] = (2 * n + 1) / z * out[..., n] - out[..., n - 1]
    return out


def spherical_bessel_j(n, z):
    """Spherical Bessel function j_n(z) for complex z."""
    _check_order(n)
    z = np.asarray(z, dtype=complex)
    return spherical_jn_all(n, z)[..., n]


def spherical_bessel_y(n, z):
    _check_order(n)
    return spherical_yn_all(n, z)[..., n]


def spherical_hankel1(n, z):
    """Outgoing spherical Hankel function h_n^(1)(z) = j_n + i y_n."""
    _check_order(n)
    return spherical_h1_all(n, z)[..., n]


def riccati_functions(n, z):
    """Riccati-Bessel functions psi_n = z j_n and xi_n = z h_n^(1) with derivatives.

    Returns a pair of :class:`RiccatiPair` for scalar z.
    """
    _check_order(n)
    z = complex(z)
    if z == 0:
        raise DomainError("Riccati functions need z != 0")
    m = max(n, 1)
    j = spherical_jn_all(m, z)
    h = spherical_h1_all(m, z)
    if n == 0:
        dpsi = np.cos(z)
        dxi = np.exp(1j * z)
    else:
        # psi_n' = psi_{n-1} - n psi_n / z, likewise for xi
        dpsi = z * j[n - 1] - n * j[n]
        dxi = z * h[n - 1] - n * h[n]
    return RiccatiPair(z * j[n], dpsi), RiccatiPair(z * h[n], dxi)


def xi_log_derivatives(nmax, z):
    """Outgoing-wave part of :func:`riccati_log_derivatives`: ``(d3, sigma)``.

    Cheap at any |z| (no continued fraction), so far-field points use this.
    """
    z = np.asarray(z, dtype=complex)
    d3 = np.empty(z.shape + (nmax + 1,), dtype=complex)
    sigma = np.empty_like(d3)
    d3[..., 0] = 1j
    sigma[..., 0] = -1j * np.exp(1j * z)
    for n in range(1, nmax + 1):
        sigma[..., n] = n / z - d3[..., n - 1]
        d3[..., n] = 1.0 / sigma[..., n] - n / z
    return d3, sigma


def psi_log_derivative(nmax, z):
    """``psi_n'/psi_n`` for n = 0..nmax (the interior Mie log-derivative)."""
    z = np.asarray(z, dtype=complex)
    rho = jn_ratios(max(nmax, 1), z)
    d1 = np.empty(z.shape + (nmax + 1,), dtype=complex)
    d1[..., 0] = 1.0 / np.tan(z)
    n = np.arange(1, nmax + 1)
    d1[..., 1:] = 1.0 / rho[..., 1 : nmax + 1] - n / z[..., None]
    return d1


def riccati_log_derivatives(nmax, z):
    """Scale-free Riccati data for the Mie series at argument z.

    Returns ``(d1, d3, psixi, sigma)``, each of shape ``z.shape + (nmax+1,)``:

    * ``d1[n] = psi_n'/psi_n``
    * ``d3[n] = xi_n'/xi_n``
    * ``psixi[n] = psi_n xi_n``
    * ``sigma[n] = xi_n/xi_{n-1}`` (``sigma[0] = xi_0``)

    None of these overflow at high order or small |z|, unlike psi_n and xi_n
    themselves.
    """
    z = np.asarray(z, dtype=complex)
    rho = jn_ratios(max(nmax, 1), z)
    d3, sigma = xi_log_derivatives(nmax, z)
    d1 = np.empty_like(d3)
    psixi = np.empty_like(d3)
    d1[..., 0] = 1.0 / np.tan(z)
    psixi[..., 0] = 0.5 * (1.0 - np.exp(2j * z))
    for n in range(1, nmax + 1):
        d1[..., n] = 1.0 / rho[..., n] - n / z
        psixi[..., n] = psixi[..., n - 1] * rho[..., n] * sigma[..., n]
    return d1, d3, psixi, sigma


def mie_angular_all(nmax, cos_theta):
    """Mie angular functions for n = 0..nmax (index 0 is zero).

    Returns ``(legendre, pi, tau)`` with ``legendre[n] = P_n``,
    ``pi_n = dP_n/dmu`` and ``tau_n = mu pi_n - (1 - mu^2) dpi_n/dmu``.
    """
    mu = np.asarray(cos_theta, dtype=float)
    if np.any(np.abs(mu) > 1 + 1e-12):
        raise DomainError("|cos_theta| must not exceed 1")
    mu = np.clip(mu, -1.0, 1.0)
    shape = mu.shape + (nmax + 1,)
    p = np.zeros(shape)
    pi = np.zeros(shape)
    tau = np.zeros(shape)
    p[..., 0] = 1.0
    if nmax >= 1:
        p[..., 1] = mu
        pi[..., 1] = 1.0
        tau[..., 1] = mu
    for n in range(2, nmax + 1):
        p[..., n] = ((2 * n - 1) * mu * p[..., n - 1] - (n - 1) * p[..., n - 2]) / n
        pi[..., n] = ((2 * n - 1) * mu * pi[..., n - 1] - n * pi[..., n - 2]) / (n - 1)
        tau[..., n] = n * mu * pi[..., n] - (n + 1) * pi[..., n - 1]
    return p, pi, tau


def mie_angular(n, cos_theta):
    """(pi_n, tau_n) at cos(theta)."""
    _check_order(n)
    _, pi, tau = mie_angular_all(max(n, 1), cos_theta)
    return pi[..., n], tau[..., n]
