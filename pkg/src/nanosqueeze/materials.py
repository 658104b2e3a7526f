"""Drude-Lorentz permittivity of the sphere material.

The model is

    eps(w) = eps_inf - wp^2 / (w^2 + i gp w) + sum_j A_j wj^2 / (wj^2 - w^2 - i gj w)

with time dependence exp(-i w t).  It is analytic in the upper half of the
complex frequency plane, so the same expression evaluates on the real axis,
on the imaginary axis, and along any ray in between.
"""

import csv
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .constants import EV, omega_from_wavelength
from .errors import DomainError, FitError, InvalidModelError


@dataclass(frozen=True)
class DrudeLorentzModel:
    """Analytic permittivity model; frequencies in rad/s."""

    eps_inf: float
    omega_p: float
    gamma_p: float
    lorentz_poles: tuple = ()

    def __post_init__(self):
        poles = tuple(tuple(float(v) for v in p) for p in self.lorentz_poles)
        object.__setattr__(self, "lorentz_poles", poles)
        values = [self.eps_inf, self.omega_p, self.gamma_p] + [v for p in poles for v in p]
        if not np.all(np.isfinite(values)):
            raise InvalidModelError("Drude-Lorentz parameters must be finite")
        if any(len(p) != 3 for p in poles):
            raise InvalidModelError("each Lorentz pole is (amplitude, center, width)")

    def __call__(self, omega):
        return self.evaluate(omega)

    def evaluate(self, omega):
        """eps at (possibly complex) angular frequency; no domain checks."""
        w = np.asarray(omega, dtype=complex)
        eps = self.eps_inf - self.omega_p**2 / (w * (w + 1j * self.gamma_p))
        for amp, w0, g in self.lorentz_poles:
            eps = eps + amp * w0**2 / (w0**2 - w * w - 1j * g * w)
        return eps

    def to_dict(self):
        return {
            "eps_inf": self.eps_inf,
            "omega_p": self.omega_p,
            "gamma_p": self.gamma_p,
            "lorentz_poles": [list(p) for p in self.lorentz_poles],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            float(d["eps_inf"]),
            float(d["omega_p"]),
            float(d["gamma_p"]),
            tuple(tuple(p) for p in d.get("lorentz_poles", ())),
        )


@dataclass(frozen=True)
class PermittivityTable:
    """Tabulated permittivity, wavelengths in nm (strictly increasing)."""

    wavelength_nm: np.ndarray
    eps: np.ndarray = field(repr=False)
    source: str = ""

    def __post_init__(self):
        wl = np.asarray(self.wavelength_nm, dtype=float)
        eps = np.asarray(self.eps, dtype=complex)
        if wl.shape != eps.shape or wl.ndim != 1:
            raise DomainError("wavelength and eps columns must be 1-D and equal length")
        if wl.size > 1 and np.any(np.diff(wl) <= 0):
            raise DomainError("wavelengths must be strictly increasing")
        if np.any(eps.imag < 0):
            raise DomainError("tabulated Im eps must be >= 0")
        object.__setattr__(self, "wavelength_nm", wl)
        object.__setattr__(self, "eps", eps)

    def interpolate(self, lambda_nm):
        """Linear interpolation of Re and Im eps at the given wavelengths."""
        lam = np.asarray(lambda_nm, dtype=float)
        if np.any(lam < self.wavelength_nm[0]) or np.any(lam > self.wavelength_nm[-1]):
            raise DomainError("wavelength outside the table support")
        re = np.interp(lam, self.wavelength_nm, self.eps.real)
        im = np.interp(lam, self.wavelength_nm, self.eps.imag)
        return re + 1j * im

    def band(self, lo, hi):
        sel = (self.wavelength_nm >= lo) & (self.wavelength_nm <= hi)
        return self.wavelength_nm[sel], self.eps[sel]


def read_permittivity_csv(path):
    """Read a ``wavelength_nm,eps_re,eps_im`` CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"wavelength_nm", "eps_re", "eps_im"} - set(reader.fieldnames or ())
        if missing:
            raise DomainError(f"permittivity CSV is missing columns: {sorted(missing)}")
        rows = [(float(r["wavelength_nm"]), float(r["eps_re"]), float(r["eps_im"])) for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return PermittivityTable(arr[:, 0], arr[:, 1] + 1j * arr[:, 2], source=str(path))


def write_permittivity_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("wavelength_nm,eps_re,eps_im\n")
        for wl, e in zip(table.wavelength_nm, table.eps):
            fh.write(f"{float(wl)!r},{float(e.real)!r},{float(e.imag)!r}\n")


def gold_table():
    """Johnson & Christy (1972) room-temperature gold, shipped with the package."""
    ref = resources.files("nanosqueeze") / "data" / "gold_johnson_christy.csv"
    with resources.as_file(ref) as p:
        return read_permittivity_csv(Path(p))


def permittivity(model, omega):
    """Complex permittivity at real angular frequency omega > 0 [rad/s].

    Complex omega in the upper half plane is accepted as well (analytic
    continuation); real input must be positive.
    """
    w = np.asarray(omega)
    if not np.iscomplexobj(w) and np.any(w <= 0):
        raise DomainError("omega must be > 0")
    return model.evaluate(w)


def permittivity_imag_axis(model, xi):
    """Real permittivity eps(i xi) for xi > 0."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise DomainError("xi must be > 0")
    eps = model.eps_inf + model.omega_p**2 / (xi * (xi + model.gamma_p))
    for amp, w0, g in model.lorentz_poles:
        eps = eps + amp * w0**2 / (w0**2 + xi * xi + g * xi)
    return eps


# -- fitting ---------------------------------------------------------------

def _pack(model):
    p = [model.eps_inf, model.omega_p / EV, model.gamma_p / EV]
    for amp, w0, g in model.lorentz_poles:
        p += [amp, w0 / EV, g / EV]
    return np.array(p)


def _unpack(p):
    poles = tuple((p[i], p[i + 1] * EV, p[i + 2] * EV) for i in range(3, len(p), 3))
    return DrudeLorentzModel(p[0], p[1] * EV, p[2] * EV, poles)


def fit_drude_lorentz(table, seed, band=(400.0, 900.0), max_relative_residual=0.15):
    """Least-squares Drude-Lorentz fit to tabulated data inside ``band`` (nm).

    Minimizes sum |eps_model - eps_table|^2 with a bounded trust-region solver;
    the bounds (all rates and amplitudes >= 0, eps_inf >= 1) keep the result
    passive.  Parameters are fitted in eV for conditioning.  Deterministic for
    a given seed.

    Raises FitError if the worst per-point relative deviation exceeds
    ``max_relative_residual``.
    """
    lo, hi = band
    if not lo < hi:
        raise DomainError("empty fit band")
    if lo < table.wavelength_nm[0] or hi > table.wavelength_nm[-1]:
        raise DomainError("fit band outside the table support")
    wl, eps_t = table.band(lo, hi)
    if wl.size < 10:
        raise DomainError(f"need at least 10 table rows in the band, got {wl.size}")
    omega = omega_from_wavelength(wl)

    def resid(p):
        d = _unpack(p).evaluate(omega) - eps_t
        return np.concatenate([d.real, d.imag])

    p0 = _pack(seed)
    lower = np.zeros_like(p0)
    lower[0] = 1.0
    # a strictly positive floor on widths keeps Im eps > 0 everywhere
    lower[2::3] = np.maximum(lower[2::3], 1e-6)
    p0 = np.clip(p0, lower, np.inf)
    sol = least_squares(resid, p0, bounds=(lower, np.inf), method="trf",
                        x_scale="jac", xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=20000)
    model = _unpack(sol.x)
    rel = np.abs(model.evaluate(omega) - eps_t) / np.abs(eps_t)
    worst = float(rel.max())
    if worst > max_relative_residual:
        raise FitError(f"Drude-Lorentz fit residual {worst:.3g} exceeds {max_relative_residual}",
                       residual=worst)
    return model


def fit_relative_residuals(model, table, band=(400.0, 900.0)):
    wl, eps_t = table.band(*band)
    return wl, np.abs(model.evaluate(omega_from_wavelength(wl)) - eps_t) / np.abs(eps_t)


#: Starting point for gold fits (eV-scale values converted to rad/s).
GOLD_SEED = DrudeLorentzModel(
    eps_inf=1.5,
    omega_p=8.9 * EV,
    gamma_p=0.07 * EV,
    lorentz_poles=((1.2, 2.7 * EV, 0.6 * EV), (2.0, 3.6 * EV, 1.2 * EV)),
)


#: Two-pole fit of the bundled gold table over 400-900 nm, frozen so results
#: do not depend on optimizer details.  ``tests`` check that refitting from
#: GOLD_SEED reproduces it.
GOLD_DEFAULT = DrudeLorentzModel(
    eps_inf=5.220473724532095,
    omega_p=8.792448643899402 * EV,
    gamma_p=0.050769557740089705 * EV,
    lorentz_poles=(
        (0.6745540498346033, 2.7302227945220117 * EV, 0.566884175007214 * EV),
        (1.4190081011831412, 3.2934649811842354 * EV, 0.7576100010442409 * EV),
    ),
)
