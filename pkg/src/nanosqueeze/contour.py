"""Off-resonant part of principal-value frequency integrals.

For f(w) = w^2 G(w), analytic in the upper half plane with f(-w*) = f(w)*,

    P int_0^inf Im f(w) / (w - wE) dw = pi Re f(wE) - O,
    O / (pi wE^2) = (1/pi) int_0^inf [-u^2 / (1 + u^2)] G(i wE u) du,

obtained by closing the contour along the positive imaginary axis, where G is
real and decays exponentially.  The first term is the resonant (pole) part;
``off_resonant_green`` returns the second, O / (pi wE^2), in units of G.
"""

import numpy as np

from .constants import C
from .errors import ConvergenceError

#: Number of Gauss-Legendre nodes per panel used by default.
DEFAULT_ORDER = 8


def imag_axis_rule(omega_e, length_m, order=DEFAULT_ORDER, ratio=3.0):
    """Nodes and weights in u = xi / omega_E for the imaginary-axis integral.

    ``length_m`` is the exponential decay length of G(i xi), i.e. the shortest
    propagation path; the integrand dies off beyond u_c = c / (omega_E L).
    Panels are geometric so that the u ~ 1 pole scale, u_c and everything
    between are resolved.  ``omega_e`` and ``length_m`` may be arrays; the
    rule then covers every combination.
    """
    w = np.asarray(omega_e, dtype=float)
    L = np.asarray(length_m, dtype=float)
    u_lo = C / (float(w.max()) * float(L.max()))
    u_hi = C / (float(w.min()) * float(L.min()))
    # below ~1e-2 the integrand is flat; beyond 40 u_c it is below e^-40
    lo = 1e-2 * min(1.0, u_lo)
    hi = 40.0 * u_hi
    n_pan = max(1, int(np.ceil(np.log(hi / lo) / np.log(ratio))))
    edges = np.concatenate([[0.0], lo * (hi / lo) ** (np.arange(n_pan + 1) / n_pan)])
    x, wt = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    u = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    wt = (0.5 * (b - a) * wt).ravel()
    return u, wt


def node_weights(u, wt):
    """Quadrature weights including the -u^2 / (pi (1 + u^2)) kernel."""
    return wt * (-(u * u) / (1 + u * u)) / np.pi


def off_resonant_green(gfunc, omega_e, length_m, order=DEFAULT_ORDER, rtol=None, series_tol=1e-8):
    """(1/pi) int_0^inf [-u^2/(1+u^2)] G(i omega_E u) du for each omega_E.

    ``gfunc`` maps an array of complex frequencies of shape (K,) to G values
    of shape (K, ...).  The result has shape omega_e.shape + (...).  With
    ``rtol`` set, the rule is repeated at twice the order and a
    ConvergenceError is raised if the two disagree by more than rtol.

    ``gfunc`` may also return ``(G, tail)`` with ``tail`` (K,) the size of the
    truncated series remainder at each node; the weighted tail must then stay
    below ``series_tol`` times the result.
    """
    w = np.asarray(omega_e, dtype=float)

    def integrate(n):
        u, wt = imag_axis_rule(w, length_m, order=n)
        xi = (w.reshape(-1, 1) * u).ravel()
        res = gfunc(1j * xi)
        tail = None
        if isinstance(res, tuple):
            res, tail = res
        g = np.asarray(res).real
        g = g.reshape((w.size, u.size) + g.shape[1:])
        h = node_weights(u, wt)
        out = np.einsum("ku...,u->k...", g, h)
        if tail is not None:
            err = np.abs(h) @ np.asarray(tail).reshape(w.size, u.size).T
            scale = np.abs(out).reshape(w.size, -1).max(axis=1)
            if np.any(err > series_tol * np.maximum(scale, 1e-300)):
                raise ConvergenceError(
                    "Mie series tail too large on the imaginary axis",
                    report={"tail": float(err.max()), "scale": float(scale.min())},
                )
        return out.reshape(w.shape + g.shape[2:])

    val = integrate(order)
    if rtol is not None:
        fine = integrate(2 * order)
        scale = max(float(np.max(np.abs(fine))), 1e-300)
        err = float(np.max(np.abs(fine - val))) / scale
        if err > rtol:
            raise ConvergenceError(
                f"imaginary-axis quadrature not converged (rel. change {err:.2e})",
                report={"order": order, "relative_change": err},
            )
        val = fine
    return val
