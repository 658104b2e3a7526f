"""Dressed two-level emitter: decay rate, Lamb shift, local drive, Bloch states.

Normalized Bloch variables follow the usual resonance-fluorescence notation
with pure dephasing: Gamma = gamma + 2 gamma*, x = 2 gamma*/gamma,
delta = 2 delta_L / Gamma and z = sqrt(2) |Omega| / sqrt(gamma Gamma).
"""

from dataclasses import dataclass, field

import numpy as np

from . import contour
from .constants import C, DEFAULT_DIPOLE_CM, EPS0, HBAR, NM, free_space_decay_rate, omega_from_wavelength
from .errors import DomainError
from .green import free_space_green_imag_coincident, plane_wave_local_field, scattered_green, scattered_green_tail

#: Default drive: plane wave along +x, polarized along z (radial at an on-axis emitter).
DEFAULT_INCIDENCE = ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0))


@dataclass(frozen=True)
class Emitter:
    """Point-dipole emitter; position in nm, dipole in C m, gamma_star in 1/s."""

    position_nm: tuple
    lambda_nm: float
    dipole: float = DEFAULT_DIPOLE_CM
    orientation: tuple = None
    gamma_star: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position_nm, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise DomainError("emitter position must be a finite 3-vector")
        if not self.dipole > 0:
            raise DomainError("dipole magnitude must be > 0")
        if not self.lambda_nm > 0:
            raise DomainError("wavelength must be > 0")
        if not self.gamma_star >= 0:
            raise DomainError("pure dephasing rate must be >= 0")
        if self.orientation is None:
            if not np.linalg.norm(pos) > 0:
                raise DomainError("radial orientation undefined at the origin")
            o = pos / np.linalg.norm(pos)
        else:
            o = np.asarray(self.orientation, dtype=float)
            if abs(np.linalg.norm(o) - 1) > 1e-9:
                raise DomainError("dipole orientation must be a unit vector")
        object.__setattr__(self, "position_nm", tuple(pos))
        object.__setattr__(self, "orientation", tuple(o))

    @classmethod
    def on_axis(cls, radius_nm, s_nm, lambda_nm, gamma_star_over_gamma0=0.0, dipole=DEFAULT_DIPOLE_CM):
        """Radial emitter on +z at distance s from the surface of a sphere of radius R."""
        w = omega_from_wavelength(lambda_nm)
        g0 = free_space_decay_rate(w, dipole)
        return cls((0.0, 0.0, radius_nm + s_nm), lambda_nm, dipole, None, gamma_star_over_gamma0 * g0)

    @property
    def omega(self):
        return omega_from_wavelength(self.lambda_nm)

    @property
    def gamma_0(self):
        return free_space_decay_rate(self.omega, self.dipole)

    @property
    def dipole_vector(self):
        return self.dipole * np.asarray(self.orientation)

    @property
    def r(self):
        return np.asarray(self.position_nm)

    def surface_distance(self, system):
        return float(np.linalg.norm(self.r)) - system.radius_nm


@dataclass(frozen=True)
class DressedRates:
    """Environment-dressed emitter parameters (rates in 1/s, frequencies in rad/s)."""

    gamma: float
    gamma_0: float
    omega_e: float
    omega_tilde: float
    rabi_enhancement: complex
    gamma_star: float = 0.0

    @property
    def x(self):
        return 2 * self.gamma_star / self.gamma

    @property
    def purcell(self):
        return self.gamma / self.gamma_0

    @property
    def phi_L(self):
        return float(np.angle(self.rabi_enhancement))

    @property
    def shift_over_gamma0(self):
        """2 (omega_E - omega_tilde) / gamma_0, the offset entering delta."""
        return 2 * (self.omega_e - self.omega_tilde) / self.gamma_0


@dataclass(frozen=True)
class BlochState:
    sigma_s: complex
    sigma_z_s: float
    phi_dep: float


@dataclass
class Trajectory:
    t: np.ndarray
    sigma: np.ndarray
    sigma_z: np.ndarray
    meta: dict = field(default_factory=dict)


# -- dressed quantities ---------------------------------------------------------

def _coincident_scattered(emitter, system, omega):
    r = emitter.r
    return scattered_green(system, r, r, omega).matrix


def decay_rate(emitter, system):
    """gamma = (2 w^2 / hbar eps0 c^2) d.Im G(rE, rE).d."""
    w = emitter.omega
    d = emitter.dipole_vector
    if system.radius_nm > 0 and emitter.surface_distance(system) <= 0:
        raise DomainError("emitter must lie outside the sphere")
    im = free_space_green_imag_coincident(w) + _coincident_scattered(emitter, system, w).imag
    return float(2 * w * w / (HBAR * EPS0 * C**2) * d @ im @ d)


def lamb_shift(emitter, system, order=contour.DEFAULT_ORDER, rtol=None):
    """Dressed frequency omega_tilde [rad/s] from the sphere-scattered part.

    The vacuum self-energy is taken as already contained in omega_E.  The
    principal-value integral is the resonant Re G_s term minus the
    imaginary-axis remainder, see :mod:`nanosqueeze.contour`.
    """
    w = emitter.omega
    if system.radius_nm == 0:
        return w
    d = emitter.orientation
    d = np.asarray(d)
    res = d @ _coincident_scattered(emitter, system, w).real @ d
    s = emitter.surface_distance(system) * NM
    def gs(wc):
        G, tail = scattered_green_tail(system, emitter.r, emitter.r, wc)
        return np.einsum("i,kij,j->k", d, G, d), tail

    off = contour.off_resonant_green(gs, w, 2 * s, order=order, rtol=rtol)
    pref = w * w * emitter.dipole**2 / (HBAR * EPS0 * C**2)
    return float(w - pref * (res - off))


def rabi_enhancement(emitter, system, incidence=DEFAULT_INCIDENCE):
    """Omega / Omega_0 = d.E_local / d.E_incident at the emitter."""
    k_inc, pol = incidence
    d = np.asarray(emitter.orientation)
    pol = np.asarray(pol, dtype=complex)
    e_loc = plane_wave_local_field(system, k_inc, pol, emitter.r, emitter.omega)
    k = np.asarray(k_inc, float) / np.linalg.norm(k_inc)
    e_inc = pol * np.exp(1j * emitter.omega / C * (emitter.r * NM) @ k)
    den = d @ e_inc
    if abs(den) < 1e-12:
        raise DomainError("incident field has no component along the dipole")
    return complex(d @ e_loc / den)


def dressed_rates(emitter, system, incidence=DEFAULT_INCIDENCE, lamb=True, rtol=None):
    gamma = decay_rate(emitter, system)
    wt = lamb_shift(emitter, system, rtol=rtol) if lamb else emitter.omega
    return DressedRates(gamma, emitter.gamma_0, emitter.omega, wt,
                        rabi_enhancement(emitter, system, incidence), emitter.gamma_star)


def normalized_params(delta0, z0, dressed, reference="bare"):
    """Map free-space (delta0, z0) to the dressed (delta, z).

    ``reference="bare"`` subtracts 2 (omega_E - omega_tilde)/gamma_0 from
    delta0; ``"dressed"`` takes delta0 as already measured from omega_tilde.
    """
    p = dressed.purcell
    x = dressed.x
    off = dressed.shift_over_gamma0 if reference == "bare" else 0.0
    if reference not in ("bare", "dressed"):
        raise DomainError("reference must be 'bare' or 'dressed'")
    delta = (np.asarray(delta0) - off) / (p * (1 + x))
    z = np.asarray(z0) * abs(dressed.rabi_enhancement) / (p * np.sqrt(1 + x))
    return delta, z


# -- Bloch equations ---------------------------------------------------------------

def bloch_steady_state(delta, z, x, phi_L=0.0):
    """Stationary coherence and inversion.

    phi_dep is the argument of (-delta + i), which fixes the quadrant of
    arctan(-1/delta) so that sigma_s equals the exact solution of the ODE.
    """
    if np.any(np.asarray(z) < 0) or np.any(np.asarray(x) < 0):
        raise DomainError("z and x must be >= 0")
    d2 = 1 + np.asarray(delta) ** 2
    den = d2 + np.asarray(z) ** 2
    phi_dep = np.arctan2(1.0, -np.asarray(delta))
    mag = np.sqrt(1 / (2 * (1 + np.asarray(x)))) * z * np.sqrt(d2) / den
    sigma = np.exp(1j * (phi_L + phi_dep)) * mag
    sz = -d2 / den
    if np.ndim(sigma) == 0:
        return BlochState(complex(sigma), float(sz), float(phi_dep))
    return BlochState(sigma, sz, phi_dep)


def _bloch_generator(delta, z, x, phi_L):
    """Augmented 4x4 generator for y = (Re sigma, Im sigma, sigma_z, 1), time in 1/gamma."""
    big_gamma = 1 + x
    delta_l = 0.5 * delta * big_gamma
    omega = z * np.sqrt(0.5 * big_gamma) * np.exp(1j * phi_L)
    wr, wi = omega.real, omega.imag
    A = np.zeros(delta.shape + (4, 4))
    A[..., 0, 0] = A[..., 1, 1] = -0.5 * big_gamma
    A[..., 0, 1] = -delta_l
    A[..., 1, 0] = delta_l
    A[..., 0, 2] = 0.5 * wi
    A[..., 1, 2] = -0.5 * wr
    A[..., 2, 0] = -2 * wi
    A[..., 2, 1] = 2 * wr
    A[..., 2, 2] = -1.0
    A[..., 2, 3] = -1.0
    rate = np.maximum.reduce([big_gamma, np.abs(omega), np.abs(delta_l)])
    return A, rate


def bloch_transient(delta, z, x, phi_L=0.0, initial=(0j, -1.0), t_end=50.0, dt=None, keep=1):
    """Fixed-step RK4 integration of the Bloch equations, time in units of 1/gamma.

    Parameters broadcast, so many draws integrate at once.  The equations are
    linear and autonomous, so one RK4 step is the degree-4 Taylor polynomial
    of exp(dt A); it is formed once per draw and applied repeatedly.  The
    default step is 0.05 / (fastest rate); dt * rate >= 0.1 is rejected.
    ``keep`` stores every keep-th step (0 keeps only the end points).
    """
    delta, z, x, phi_L = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (delta, z, x, phi_L)))
    if np.any(z < 0) or np.any(x < 0):
        raise DomainError("z and x must be >= 0")
    A, rate = _bloch_generator(delta, z, x, phi_L)
    rate = float(np.max(rate))
    if dt is None:
        dt = 0.05 / rate
    if dt * rate >= 0.1:
        raise DomainError(f"time step too coarse: dt*rate = {dt * rate:.3g} >= 0.1")
    nstep = int(np.ceil(t_end / dt))
    dt = t_end / nstep
    hA = dt * A
    step = np.eye(4) + hA
    term = hA
    for k in (2, 3, 4):
        term = term @ hA / k
        step = step + term
    y = np.zeros(delta.shape + (4,))
    y[..., 0] = np.real(initial[0])
    y[..., 1] = np.imag(initial[0])
    y[..., 2] = initial[1]
    y[..., 3] = 1.0
    ts, ys = [0.0], [y]
    for i in range(1, nstep + 1):
        y = np.einsum("...ij,...j->...i", step, y)
        if (keep and i % keep == 0) or i == nstep:
            ts.append(i * dt)
            ys.append(y)
    ys = np.array(ys)
    return Trajectory(np.array(ts), ys[..., 0] + 1j * ys[..., 1], ys[..., 2], {"dt": dt, "steps": nstep})


# -- variances -----------------------------------------------------------------------

def atomic_variance(delta, z, x, theta_total=0.0):
    """Normally-ordered atomic quadrature variance.

    ``theta_total`` is the full phase inside the cosine; 0 selects the most
    squeezed quadrature.
    """
    delta, z, x = np.asarray(delta), np.asarray(z), np.asarray(x)
    d2 = 1 + delta**2
    den = d2 + z**2
    return z**2 / den * (1 - d2 * (1 + np.cos(theta_total)) / ((1 + x) * den))


def atomic_variance_from_state(state, theta):
    """Same quantity from <sigma>, <sigma_z> directly, at quadrature angle theta."""
    s = np.asarray(state.sigma_s)
    return (1 + np.asarray(state.sigma_z_s)) - 2 * np.abs(s) ** 2 - 2 * np.real(np.exp(2j * theta) * s * s)


def optimal_theta(state):
    """Quadrature angle at which the variance is most negative.

    The angle enters as theta_total = 2 (theta + arg <sigma>), so the
    minimum sits at theta = -arg <sigma> (mod pi).
    """
    return np.mod(-np.angle(state.sigma_s), np.pi)


def squeezing_threshold(delta, x):
    """Largest z^2 with squeezing: (1+delta^2)(1-x)/(1+x), or 0 for x >= 1."""
    delta, x = np.asarray(delta), np.asarray(x)
    if np.any(x < 0):
        raise DomainError("x must be >= 0")
    return np.where(x < 1, (1 + delta**2) * (1 - x) / (1 + x), 0.0)
