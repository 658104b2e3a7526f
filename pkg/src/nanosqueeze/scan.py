"""Configuration-driven sweeps and figure pipelines.

A scan is described by a JSON document (see :class:`ScanConfig`).  Every
pipeline splits its grid into independent tasks whose composition depends
only on the configuration, runs them on a thread pool and writes each result
into a pre-allocated array by index, so the output bytes do not depend on
the number of workers.
"""

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq, minimize, minimize_scalar

from . import __version__, contour
from . import emitter as em
from . import squeeze as sq
from .constants import C, DEFAULT_DIPOLE_CM, EPS0, EV, omega_from_wavelength
from .errors import ConfigError, NanosqueezeError
from .green import N_CAP, SphereSystem
from .materials import GOLD_DEFAULT, DrudeLorentzModel

log = logging.getLogger("nanosqueeze")

PIPELINES = ("amplitude_map", "farfield_pattern", "variance_map", "distance_scan", "spatial_map")
FORMATS = ("csv", "json", "svg")

#: Per-point status written to the ``error_code`` column.
OK, NOT_CONVERGED, MASKED, FAILED = 0, 1, 2, 3
ERROR_CODES = {OK: "ok", NOT_CONVERGED: "series or quadrature tolerance missed",
               MASKED: "masked (inside or too close to the sphere or emitter)", FAILED: "numerical failure"}

_DEFAULTS = {
    "geometry": {"radius_nm": 60.0, "s_nm": 10.0, "detection": {"kind": "D1"}, "component": None},
    "emitter": {"lambda_nm": 550.0, "dipole_cm": DEFAULT_DIPOLE_CM, "gamma_star_over_gamma0": 0.0},
    "drive": {},
    "material": {"model": "gold"},
    "numerics": {"tol": 1e-8, "n_max_cap": N_CAP, "quadrature_order": contour.DEFAULT_ORDER,
                 "quadrature_rtol": None, "mode": None},
    "output": {"formats": ["csv", "json"], "stem": None},
}


# -- configuration ------------------------------------------------------------------

def axis_values(spec, name="axis"):
    """Samples of a range spec: scalar, list, or {"start", "stop", "num"}."""
    if isinstance(spec, dict):
        try:
            a, b, n = float(spec["start"]), float(spec["stop"]), int(spec["num"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{name}: range needs numeric start, stop and num") from None
        if n < 1:
            raise ConfigError(f"{name}: num must be >= 1")
        vals = np.linspace(a, b, n) if n > 1 else np.array([a])
    elif isinstance(spec, (list, tuple)):
        try:
            vals = np.array([float(v) for v in spec])
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: list entries must be numbers") from None
    elif isinstance(spec, (int, float)) and not isinstance(spec, bool):
        vals = np.array([float(spec)])
    else:
        raise ConfigError(f"{name}: expected a number, a list or a range object")
    if vals.size == 0:
        raise ConfigError(f"{name}: empty range")
    if not np.all(np.isfinite(vals)):
        raise ConfigError(f"{name}: values must be finite")
    return vals


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _material(block):
    kind = block.get("model", "gold")
    if kind == "gold":
        return GOLD_DEFAULT
    if kind == "drude_lorentz":
        try:
            poles = tuple((float(a), float(w) * EV, float(g) * EV) for a, w, g in block.get("poles_ev", ()))
            return DrudeLorentzModel(float(block["eps_inf"]), float(block["omega_p_ev"]) * EV,
                                     float(block["gamma_p_ev"]) * EV, poles)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"material: bad Drude-Lorentz block ({exc})") from None
    raise ConfigError(f"material: unknown model {kind!r} (use 'gold' or 'drude_lorentz')")


@dataclass(frozen=True)
class ScanConfig:
    """Validated scan description.

    Blocks: ``geometry`` (radius_nm, s_nm, detection, component, plus the
    x_nm/z_nm grid of spatial maps), ``emitter`` (lambda_nm, dipole_cm,
    gamma_star_over_gamma0), ``drive`` (pipeline specific), ``material``,
    ``numerics`` (tol, n_max_cap, quadrature settings, mode) and ``output``.
    """

    name: str
    pipeline: str
    geometry: dict
    emitter: dict
    drive: dict
    material: dict
    numerics: dict
    output: dict

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - {"name", "pipeline", *_DEFAULTS}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        pipeline = data.get("pipeline")
        if pipeline not in PIPELINES:
            raise ConfigError(f"pipeline must be one of {PIPELINES}")
        blocks = {}
        for key, default in _DEFAULTS.items():
            user = data.get(key, {})
            if not isinstance(user, dict):
                raise ConfigError(f"{key} must be an object")
            blocks[key] = _merge(default, user)
        cfg = cls(str(data.get("name", pipeline)), pipeline, **blocks)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def to_dict(self):
        return {"name": self.name, "pipeline": self.pipeline,
                **{k: copy.deepcopy(getattr(self, k)) for k in _DEFAULTS}}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @property
    def digest(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def with_overrides(self, tol=None, formats=None):
        d = self.to_dict()
        if tol is not None:
            d["numerics"]["tol"] = float(tol)
        if formats is not None:
            d["output"]["formats"] = list(formats)
        return ScanConfig.from_dict(d)

    # -- accessors
    @property
    def model(self):
        return _material(self.material)

    @property
    def stem(self):
        return self.output.get("stem") or self.name

    def axis(self, block, key):
        return axis_values(getattr(self, block)[key], f"{block}.{key}")

    def mode(self, default):
        return self.numerics.get("mode") or default

    def numeric_kw(self):
        n = self.numerics
        return {"tol": float(n["tol"]), "order": int(n["quadrature_order"]),
                "rtol": None if n.get("quadrature_rtol") is None else float(n["quadrature_rtol"]),
                "n_cap": int(n["n_max_cap"])}

    def validate(self):
        n = self.numerics
        try:
            tol = float(n["tol"])
            cap = int(n["n_max_cap"])
            order = int(n["quadrature_order"])
        except (TypeError, ValueError):
            raise ConfigError("numerics: tol, n_max_cap and quadrature_order must be numbers") from None
        if not 0 < tol < 1:
            raise ConfigError("numerics.tol must lie in (0, 1)")
        if not 1 <= cap <= N_CAP:
            raise ConfigError(f"numerics.n_max_cap must lie in [1, {N_CAP}]")
        if order < 2:
            raise ConfigError("numerics.quadrature_order must be >= 2")
        if n.get("mode") not in (None, *sq.MODES):
            raise ConfigError(f"numerics.mode must be one of {sq.MODES}")
        fmts = self.output.get("formats")
        if not isinstance(fmts, list) or not fmts or any(f not in FORMATS for f in fmts):
            raise ConfigError(f"output.formats must be a non-empty list drawn from {FORMATS}")
        self.model  # noqa: B018 - raises on a bad material block
        if self.material.get("background_permittivity", 1.0) != 1.0:
            raise ConfigError("material: only a vacuum background is supported")
        radii = self.axis("geometry", "radius_nm")
        if np.any(radii < 0):
            raise ConfigError("geometry.radius_nm must be >= 0")
        lam = self.axis("emitter", "lambda_nm")
        if np.any(lam < 200) or np.any(lam > 5000):
            raise ConfigError("emitter.lambda_nm must lie in [200, 5000] nm")
        if not float(self.emitter["dipole_cm"]) > 0:
            raise ConfigError("emitter.dipole_cm must be > 0")
        if float(self.emitter["gamma_star_over_gamma0"]) < 0:
            raise ConfigError("emitter.gamma_star_over_gamma0 must be >= 0")
        s = self.axis("geometry", "s_nm")
        if np.any(s <= 0):
            raise ConfigError("geometry.s_nm must be > 0")
        comp = self.geometry.get("component")
        if comp is not None and comp not in sq.COMPONENTS:
            raise ConfigError(f"geometry.component must be one of {sq.COMPONENTS}")
        self._validate_detection(radii, s)
        getattr(self, f"_validate_{self.pipeline}")()

    def _validate_detection(self, radii, s):
        det = self.geometry.get("detection", {})
        kind = det.get("kind")
        if kind not in ("D1", "D2", "custom"):
            raise ConfigError("geometry.detection.kind must be D1, D2 or custom")
        if kind == "custom":
            p = det.get("point_nm")
            try:
                p = np.asarray(p, dtype=float)
            except (TypeError, ValueError):
                p = None
            if p is None or p.shape != (3,) or not np.all(np.isfinite(p)):
                raise ConfigError("custom detection needs a finite point_nm [x, y, z]")
            if np.linalg.norm(p) <= radii.max():
                raise ConfigError("custom detection point lies inside the sphere")
            for R in radii:
                for si in s:
                    if np.linalg.norm(p - [0.0, 0.0, R + si]) == 0:
                        raise ConfigError("custom detection point coincides with the emitter")

    def _validate_amplitude_map(self):
        pass

    def _validate_farfield_pattern(self):
        n = int(self.drive.get("theta_samples", 360))
        if n < 4:
            raise ConfigError("drive.theta_samples must be >= 4")

    def _validate_variance_map(self):
        if self.axis("drive", "delta0").size < 2 or self.axis("drive", "z0").size < 1:
            raise ConfigError("variance_map needs a delta0 range and a z0 range")
        if np.any(self.axis("drive", "z0") < 0):
            raise ConfigError("drive.z0 must be >= 0")
        if self.drive.get("reference", "dressed") not in ("bare", "dressed"):
            raise ConfigError("drive.reference must be 'bare' or 'dressed'")
        _incidence(self.drive)

    def _validate_distance_scan(self):
        om = self.axis("drive", "omega_over_gamma0")
        if np.any(om <= 0):
            raise ConfigError("drive.omega_over_gamma0 entries must be > 0")
        if float(self.drive.get("free_space_omega_over_gamma0", 0.4)) <= 0:
            raise ConfigError("drive.free_space_omega_over_gamma0 must be > 0")
        if self.axis("geometry", "radius_nm").size != 1:
            raise ConfigError("distance_scan takes a single radius")

    def _validate_spatial_map(self):
        for key in ("x_nm", "z_nm"):
            if key not in self.geometry:
                raise ConfigError(f"spatial_map needs geometry.{key}")
            self.axis("geometry", key)
        if self.axis("geometry", "radius_nm").size != 1 or self.axis("geometry", "s_nm").size != 1:
            raise ConfigError("spatial_map takes a single radius and distance")
        if float(self.geometry.get("mask_margin_nm", 5.0)) < 0:
            raise ConfigError("geometry.mask_margin_nm must be >= 0")
        for key in ("delta", "z", "x"):
            v = self.drive.get(key, 0.0)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"drive.{key} must be a finite number")
        if self.drive.get("z", 0.0) < 0 or self.drive.get("x", 0.0) < 0:
            raise ConfigError("drive.z and drive.x must be >= 0")


def _incidence(drive):
    inc = drive.get("incidence")
    if inc is None:
        return em.DEFAULT_INCIDENCE
    try:
        k = np.asarray(inc["direction"], dtype=float)
        e = np.asarray(inc["polarization"], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise ConfigError("drive.incidence needs direction and polarization vectors") from None
    if k.shape != (3,) or e.shape != (3,) or abs(k @ e) > 1e-12 * np.linalg.norm(k) * np.linalg.norm(e):
        raise ConfigError("drive.incidence: polarization must be a 3-vector perpendicular to direction")
    return tuple(k), tuple(e)


def preset_names():
    ref = resources.files("nanosqueeze") / "presets"
    return sorted(p.name[:-5] for p in ref.iterdir() if p.name.endswith(".json"))


def load_preset(name):
    ref = resources.files("nanosqueeze") / "presets" / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return ScanConfig.from_json(ref.read_text(encoding="utf-8"))


# -- result container -----------------------------------------------------------------

@dataclass(frozen=True)
class Axis:
    name: str
    unit: str
    values: np.ndarray


@dataclass
class ResultGrid:
    """Values over a rectangular grid, row-major over ``axes`` in order.

    ``extras`` holds further named columns of the same shape; ``error`` an
    integer status per point (see ERROR_CODES).  Values are NaN exactly
    where the status is not OK.
    """

    name: str
    axes: tuple
    value: np.ndarray
    value_name: str
    value_unit: str
    error: np.ndarray
    extras: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shape = tuple(a.values.size for a in self.axes)
        self.value = np.asarray(self.value, dtype=float).reshape(shape)
        self.error = np.asarray(self.error, dtype=int).reshape(shape)
        for k, (unit, arr) in list(self.extras.items()):
            self.extras[k] = (unit, np.broadcast_to(np.asarray(arr, dtype=float), shape))
        bad = ~np.isfinite(self.value)
        if np.any(bad & (self.error == OK)):
            raise NanosqueezeError("non-finite value without an error code")
        self.value = np.where(self.error == OK, self.value, np.nan)

    @property
    def shape(self):
        return self.value.shape

    @property
    def failures(self):
        return int(np.sum((self.error == NOT_CONVERGED) | (self.error == FAILED)))

    def finite_range(self):
        v = self.value[np.isfinite(self.value)]
        return (float(v.min()), float(v.max())) if v.size else (None, None)


# -- execution helpers ---------------------------------------------------------------

def _run_tasks(fn, tasks, threads):
    """Evaluate fn over tasks; the returned list is in task order."""
    threads = max(1, int(threads))
    if threads == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))


def _guarded(fn, shape):
    """Wrap a task so numerical errors mark its points FAILED instead of aborting."""

    def run(task):
        try:
            return fn(task)
        except NanosqueezeError as exc:
            log.warning("task %r failed: %s", task, exc)
            return np.full(shape, np.nan), np.full(shape, FAILED)

    return run


def _emitter(cfg, radius, s, lam):
    e = cfg.emitter
    return em.Emitter.on_axis(radius, s, lam, float(e["gamma_star_over_gamma0"]), float(e["dipole_cm"]))


def _system(cfg, radius):
    return SphereSystem(float(radius), cfg.model)


def _detection(cfg, radius, lam):
    det = cfg.geometry["detection"]
    return sq.detection_point(det["kind"], radius, lam, det.get("point_nm"))


def _base_meta(cfg, grid_kind, mode):
    return {"config_sha256": cfg.digest, "code_version": __version__, "pipeline": cfg.pipeline,
            "grid": grid_kind, "mode": mode, "error_codes": {str(k): v for k, v in ERROR_CODES.items()}}


def _finish(grid):
    lo, hi = grid.finite_range()
    grid.metadata["value_min"] = lo
    grid.metadata["value_max"] = hi
    grid.metadata["failed_points"] = grid.failures
    return grid


# -- pipelines ------------------------------------------------------------------------

def run_amplitude_map(cfg, threads=1):
    """|g_i / g_i,0|^2 over (lambda_E, R) at D1, D2 or a custom point."""
    lam = cfg.axis("emitter", "lambda_nm")
    radii = cfg.axis("geometry", "radius_nm")
    s = float(cfg.axis("geometry", "s_nm")[0])
    kind = cfg.geometry["detection"]["kind"]
    comp = cfg.geometry.get("component") or ("theta" if kind == "D1" else "r")
    mode = cfg.mode("far-field" if kind == "D1" else "full")
    i = sq.component_index(comp)
    kw = cfg.numeric_kw()
    w = omega_from_wavelength(lam)

    def task(R):
        if R == 0:
            return np.ones(lam.size), np.zeros(lam.size, int)
        e = _emitter(cfg, R, s, lam[0])
        pts = np.array([_detection(cfg, R, l) for l in lam])
        paired = kind == "D1"
        if not paired:
            pts = pts[:1]
        g, ok = sq.amplitude_batch(_system(cfg, R), pts, e.r, e.dipole_vector, w, mode, paired=paired, **kw)
        g0, _ = sq.amplitude_batch(_system(cfg, 0), pts, e.r, e.dipole_vector, w, mode, paired=paired, **kw)
        if not paired:
            g, g0, ok = g[:, 0], g0[:, 0], ok[:, 0]
        ratio = np.abs(g[:, i] / g0[:, i]) ** 2
        return ratio, np.where(ok, OK, NOT_CONVERGED)

    cols = _run_tasks(_guarded(task, lam.size), list(radii), threads)
    value = np.stack([c[0] for c in cols], axis=1)
    err = np.stack([c[1] for c in cols], axis=1)
    axes = (Axis("lambda_nm", "nm", lam), Axis("radius_nm", "nm", radii))
    meta = _base_meta(cfg, "lambda x radius", mode)
    meta.update({"component": comp, "detection": kind, "s_nm": s})
    grid = ResultGrid(cfg.name, axes, value, f"amplitude_ratio_{comp}", "1", err, metadata=meta)
    if np.any(np.isfinite(grid.value)):
        j, k = np.unravel_index(np.nanargmax(grid.value), grid.shape)
        meta["peak"] = {"value": float(grid.value[j, k]), "lambda_nm": float(lam[j]), "radius_nm": float(radii[k])}
    return _finish(grid)


def _count_lobes(theta, values):
    """Number of circular local maxima of a polar pattern (ties ignored)."""
    v = np.asarray(values)
    return int(np.sum((v > np.roll(v, 1)) & (v > np.roll(v, -1))))


def run_farfield_pattern(cfg, threads=1):
    """|g_theta| [V/m] on a circle of radius 1e5 lambda_E in the xz plane."""
    radii = cfg.axis("geometry", "radius_nm")
    lam = float(cfg.axis("emitter", "lambda_nm")[0])
    s = float(cfg.axis("geometry", "s_nm")[0])
    n = int(cfg.drive.get("theta_samples", 360))
    # half-step offset keeps samples off the axis, where g_theta vanishes
    theta = (np.arange(n) + 0.5) * 2 * np.pi / n
    rho = 1e5 * lam
    pts = np.stack([rho * np.sin(theta), np.zeros(n), rho * np.cos(theta)], axis=1)
    mode = cfg.mode("far-field")
    comp = cfg.geometry.get("component") or "theta"
    i = sq.component_index(comp)
    kw = cfg.numeric_kw()
    w = omega_from_wavelength(lam)

    def task(R):
        e = _emitter(cfg, R, s, lam)
        g, ok = sq.amplitude_batch(_system(cfg, R), pts, e.r, e.dipole_vector, w, mode, **kw)
        return np.abs(g[0, :, i]), np.where(ok[0], OK, NOT_CONVERGED)

    rows = _run_tasks(_guarded(task, n), list(radii), threads)
    value = np.stack([r[0] for r in rows])
    err = np.stack([r[1] for r in rows])
    axes = (Axis("radius_nm", "nm", radii), Axis("theta_rad", "rad", theta))
    meta = _base_meta(cfg, "radius x theta", mode)
    meta.update({"component": comp, "lambda_nm": lam, "distance_nm": rho, "s_nm": s,
                 "lobes": {repr(float(R)): _count_lobes(theta, v) for R, v in zip(radii, value)}})
    peaks = value.max(axis=1, keepdims=True)
    shapes = value / np.where(peaks > 0, peaks, 1)
    meta["shape_rms_difference"] = {
        f"{float(radii[a])!r}|{float(radii[b])!r}": float(np.sqrt(np.mean((shapes[a] - shapes[b]) ** 2)))
        for a in range(len(radii)) for b in range(a + 1, len(radii))}
    grid = ResultGrid(cfg.name, axes, value, f"abs_g_{comp}", "V/m", err, metadata=meta)
    return _finish(grid)


def _variance_panel(ratio, dressed, reference, x, d0, z0):
    def v(a, b):
        delta, z = em.normalized_params(a, b, dressed, reference)
        return ratio * em.atomic_variance(delta, z, x)
    return v


def _panel_analysis(vfun, d0, z0, values, d_res):
    """Minimum and half-depth detuning extent of one variance panel.

    The minimum is refined from the best grid sample inside the window.  At
    x = 0 it is degenerate along z^2 = (1 + delta^2)/3, so the extent is
    anchored at the dressed resonance ``d_res``: on the z0 row that squeezes
    most there, it is the delta0 width over which the variance stays below
    half of that depth.  The edges are root-bracketed beyond the window if
    needed (``extent_exceeds_window`` then reports it).
    """
    j, k = np.unravel_index(np.argmin(values), values.shape)
    lo = np.array([d0.min(), z0.min()])
    hi = np.array([d0.max(), z0.max()])
    res = minimize(lambda p: float(vfun(p[0], p[1])), [d0[j], z0[k]], method="L-BFGS-B",
                   bounds=list(zip(lo, hi)), options={"ftol": 1e-15, "gtol": 1e-14, "maxiter": 500})
    better = res.fun <= values[j, k]
    out = {"minimum": float(res.fun if better else values[j, k]),
           "delta0_at_min": float(res.x[0] if better else d0[j]),
           "z0_at_min": float(res.x[1] if better else z0[k])}
    row = minimize_scalar(lambda b: float(vfun(d_res, b)), bounds=(z0.min(), z0.max()), method="bounded",
                          options={"xatol": 1e-10})
    z_row, v_res = float(row.x), float(row.fun)
    out.update({"delta0_resonance": float(d_res), "z0_resonance_row": z_row, "resonance_depth": v_res})
    if not v_res < 0:
        out.update({"extent_delta0": 0.0, "extent_exceeds_window": False})
        return out
    half = lambda d: float(vfun(d, z_row)) - v_res / 2
    edges = []
    span = max(1.0, float(np.ptp(d0)))
    for sign in (-1, 1):
        step = span
        while half(d_res + sign * step) < 0:
            step *= 2
            if step > 1e9:
                raise NanosqueezeError("half-depth edge not bracketed")
        a, b = sorted((d_res, d_res + sign * step))
        edges.append(brentq(half, a, b, xtol=1e-12, rtol=1e-14))
    out.update({"extent_delta0": float(edges[1] - edges[0]), "half_depth_edges": [float(e) for e in edges],
                "extent_exceeds_window": bool(edges[0] < d0.min() or edges[1] > d0.max())})
    return out


def run_variance_map(cfg, threads=1):
    """Normalized (Delta E_i)^2 / |g_i,0|^2 over (delta0, z0) per radius (0 = free space)."""
    radii = cfg.axis("geometry", "radius_nm")
    d0 = cfg.axis("drive", "delta0")
    z0 = cfg.axis("drive", "z0")
    lam = float(cfg.axis("emitter", "lambda_nm")[0])
    s = float(cfg.axis("geometry", "s_nm")[0])
    reference = cfg.drive.get("reference", "dressed")
    incidence = _incidence(cfg.drive)
    mode = cfg.mode("far-field")
    comp = cfg.geometry.get("component") or "theta"
    kw = cfg.numeric_kw()
    D0, Z0 = np.meshgrid(d0, z0, indexing="ij")

    def task(R):
        e = _emitter(cfg, R, s, lam)
        system = _system(cfg, R)
        dressed = em.dressed_rates(e, system, incidence, lamb=reference == "bare")
        r = _detection(cfg, R, lam)
        g, ok = sq.amplitude_batch(system, [r], e.r, e.dipole_vector, e.omega, mode, **kw)
        g0, _ = sq.amplitude_batch(system.free_space(), [r], e.r, e.dipole_vector, e.omega, mode, **kw)
        i = sq.component_index(comp)
        ratio = float(abs(g[0, 0, i] / g0[0, 0, i]) ** 2)
        vfun = _variance_panel(ratio, dressed, reference, dressed.x, d0, z0)
        vals = vfun(D0, Z0)
        d_res = dressed.shift_over_gamma0 if reference == "bare" else 0.0
        info = _panel_analysis(vfun, d0, z0, vals, d_res)
        info.update({"gamma_over_gamma0": float(dressed.purcell), "rabi_enhancement_abs": abs(dressed.rabi_enhancement),
                     "amplitude_ratio": ratio, "x": float(dressed.x),
                     "shift_over_gamma0": dressed.shift_over_gamma0 if reference == "bare" else None})
        # zero contour: z^2 = (1 + delta^2)(1 - x)/(1 + x), mapped back to z0
        delta, _ = em.normalized_params(d0, 0.0, dressed, reference)
        zb = np.sqrt(np.clip((1 + delta**2) * (1 - dressed.x) / (1 + dressed.x), 0, None))
        scale = abs(dressed.rabi_enhancement) / (dressed.purcell * np.sqrt(1 + dressed.x))
        info["zero_contour_z0"] = [float(v) for v in zb / scale]
        err = np.full(vals.shape, OK if ok.all() else NOT_CONVERGED)
        return vals, err, info

    results = _run_tasks(task, list(radii), threads)
    value = np.stack([r[0] for r in results])
    err = np.stack([r[1] for r in results])
    axes = (Axis("radius_nm", "nm", radii), Axis("delta0", "1", d0), Axis("z0", "1", z0))
    meta = _base_meta(cfg, "radius x delta0 x z0", mode)
    meta.update({"component": comp, "lambda_nm": lam, "s_nm": s, "reference": reference,
                 "quadrature": "optimal (cos = 1)",
                 "panels": {repr(float(R)): r[2] for R, r in zip(radii, results)}})
    free = [r[2] for R, r in zip(radii, results) if R == 0]
    for R, r in zip(radii, results):
        if R > 0 and free and free[0]["minimum"] < 0:
            r[2]["minimum_ratio_to_free_space"] = r[2]["minimum"] / free[0]["minimum"]
            if free[0]["extent_delta0"] > 0:
                r[2]["extent_ratio_to_free_space"] = r[2]["extent_delta0"] / free[0]["extent_delta0"]
    grid = ResultGrid(cfg.name, axes, value, f"normalized_variance_{comp}", "1", err, metadata=meta)
    return _finish(grid)


def _onset(s, v):
    """Largest s at which the curve is negative, refined by linear interpolation."""
    neg = np.nonzero(v < 0)[0]
    if neg.size == 0:
        return None
    j = neg.max()
    if j + 1 < s.size and np.isfinite(v[j + 1]):
        return float(s[j] + (s[j + 1] - s[j]) * v[j] / (v[j] - v[j + 1]))
    return float(s[j])


def run_distance_scan(cfg, threads=1):
    """Normalized variance versus emitter-surface distance for several Rabi frequencies.

    Omega is the local Rabi frequency at the emitter, in units of gamma_0;
    the detuning ``drive.delta`` (default 0) is measured from the dressed
    transition in units of Gamma / 2.
    """
    R = float(cfg.axis("geometry", "radius_nm")[0])
    s = cfg.axis("geometry", "s_nm")
    lam = float(cfg.axis("emitter", "lambda_nm")[0])
    om = cfg.axis("drive", "omega_over_gamma0")
    delta = float(cfg.drive.get("delta", 0.0))
    gs = float(cfg.emitter["gamma_star_over_gamma0"])
    mode = cfg.mode("far-field")
    comp = cfg.geometry.get("component") or "theta"
    i = sq.component_index(comp)
    kw = cfg.numeric_kw()
    system = _system(cfg, R)

    def task(si):
        e = _emitter(cfg, R, si, lam)
        p = em.decay_rate(e, system) / e.gamma_0
        r = _detection(cfg, R, lam)
        g, ok = sq.amplitude_batch(system, [r], e.r, e.dipole_vector, e.omega, mode, **kw)
        g0, _ = sq.amplitude_batch(system.free_space(), [r], e.r, e.dipole_vector, e.omega, mode, **kw)
        ratio = float(abs(g[0, 0, i] / g0[0, 0, i]) ** 2)
        x = 2 * gs / p
        z = np.sqrt(2) * om / (p * np.sqrt(1 + x))
        vals = ratio * em.atomic_variance(delta, z, x)
        err = np.full(om.size, OK if ok.all() else NOT_CONVERGED)
        return vals, err, (p, ratio, x)

    def guarded(si):
        try:
            return task(si)
        except NanosqueezeError as exc:
            log.warning("s = %r failed: %s", si, exc)
            return np.full(om.size, np.nan), np.full(om.size, FAILED), (np.nan,) * 3

    results = _run_tasks(guarded, list(s), threads)
    value = np.stack([r[0] for r in results], axis=1)
    err = np.stack([r[1] for r in results], axis=1)
    inset = np.array([r[2] for r in results])
    axes = (Axis("omega_over_gamma0", "1", om), Axis("s_nm", "nm", s))
    extras = {"gamma_over_gamma0": ("1", inset[None, :, 0]), "amplitude_ratio": ("1", inset[None, :, 1]),
              "two_gamma_star_over_gamma": ("1", inset[None, :, 2])}
    om_ref = float(cfg.drive.get("free_space_omega_over_gamma0", 0.4))
    x0 = 2 * gs
    free = float(em.atomic_variance(delta, np.sqrt(2) * om_ref / np.sqrt(1 + x0), x0))
    meta = _base_meta(cfg, "omega x s", mode)
    meta.update({"component": comp, "lambda_nm": lam, "radius_nm": R, "delta": delta,
                 "gamma_star_over_gamma0": gs, "rabi_convention": "local Rabi frequency at the emitter",
                 "free_space_reference": {"omega_over_gamma0": om_ref, "value": free}})
    curves = {}
    for k, o in enumerate(om):
        v = value[k]
        entry = {"onset_s_nm": _onset(s, v)}
        if np.any(np.isfinite(v)):
            j = int(np.nanargmin(v))
            entry.update({"min_value": float(v[j]), "min_s_nm": float(s[j])})
        curves[repr(float(o))] = entry
    meta["curves"] = curves
    grid = ResultGrid(cfg.name, axes, value, f"normalized_variance_{comp}", "1", err, extras, meta)
    return _finish(grid)


def lateral_lobes(grid, radius_nm, offset_nm=None, samples=720):
    """Angular maxima of |value| on a shell around the sphere (log-interpolated).

    Returns the polar angles [deg] of local maxima inside the band
    |z| < R/2 off the z axis, sampled on the shell R + offset.
    """
    x = grid.axes[0].values
    z = grid.axes[1].values
    if offset_nm is None:
        step = max(np.max(np.diff(x)) if x.size > 1 else 0, np.max(np.diff(z)) if z.size > 1 else 0)
        offset_nm = grid.metadata.get("mask_margin_nm", 5.0) + 2 * step
    with np.errstate(divide="ignore"):
        f = RegularGridInterpolator((x, z), np.log(np.abs(grid.value)), bounds_error=False)
    th = (np.arange(samples) + 0.5) * 2 * np.pi / samples
    rho = radius_nm + offset_nm
    prof = f(np.stack([rho * np.sin(th), rho * np.cos(th)], axis=1))
    ok = np.isfinite(prof)
    mx = ok & (prof > np.roll(prof, 1)) & (prof > np.roll(prof, -1))
    band = (np.abs(rho * np.cos(th)) < radius_nm / 2) & (np.abs(rho * np.sin(th)) > 1e-9)
    return [float(np.degrees(t)) for t in th[mx & band]], float(offset_nm)


def run_spatial_map(cfg, threads=1):
    """|d|^2-normalized radial-component variance on an xz grid, full mode.

    The value is |(G_eff . d_hat)_r|^2 times the atomic variance, in nm^-2,
    i.e. (Delta E_r)^2 (eps0 c^2 / w_E^2)^2 / |d|^2.
    """
    R = float(cfg.axis("geometry", "radius_nm")[0])
    s = float(cfg.axis("geometry", "s_nm")[0])
    lam = float(cfg.axis("emitter", "lambda_nm")[0])
    xs = cfg.axis("geometry", "x_nm")
    zs = cfg.axis("geometry", "z_nm")
    margin = float(cfg.geometry.get("mask_margin_nm", 5.0))
    comp = cfg.geometry.get("component") or "r"
    i = sq.component_index(comp)
    mode = cfg.mode("full")
    kw = cfg.numeric_kw()
    dr = cfg.drive
    av = float(em.atomic_variance(float(dr.get("delta", 0.0)), float(dr.get("z", 1 / np.sqrt(3))),
                                  float(dr.get("x", 0.0)), float(dr.get("theta_total", 0.0))))
    e = _emitter(cfg, R, s, lam)
    system = _system(cfg, R)
    X, Z = np.meshgrid(xs, zs, indexing="ij")
    pts = np.stack([X.ravel(), np.zeros(X.size), Z.ravel()], axis=1)
    masked = (np.linalg.norm(pts, axis=1) <= R + margin) | (np.linalg.norm(pts - e.r, axis=1) < margin)
    masked |= np.linalg.norm(pts - e.r, axis=1) == 0
    live = np.nonzero(~masked)[0]
    size = int(cfg.numerics.get("chunk_points", 256))
    tasks = [live[a:a + size] for a in range(0, live.size, size)]
    unit = e.omega**2 / (EPS0 * C**2)

    def task(idx):
        g, ok = sq.amplitude_batch(system, pts[idx], e.r, np.asarray(e.orientation), e.omega, mode, **kw)
        gd = g[0, :, i] / unit * 1e-9  # G . d_hat in 1/nm
        return np.abs(gd) ** 2 * av, np.where(ok[0], OK, NOT_CONVERGED)

    results = _run_tasks(_guarded(task, size), tasks, threads)
    value = np.full(pts.shape[0], np.nan)
    err = np.full(pts.shape[0], MASKED)
    for idx, (v, c) in zip(tasks, results):
        value[idx] = v[: idx.size]
        err[idx] = c[: idx.size]
    axes = (Axis("x_nm", "nm", xs), Axis("z_nm", "nm", zs))
    meta = _base_meta(cfg, "x x z (y = 0)", mode)
    meta.update({"component": comp, "lambda_nm": lam, "radius_nm": R, "s_nm": s, "mask_margin_nm": margin,
                 "atomic_variance": av, "emitter_nm": list(e.position_nm),
                 "unit_convention": "(Delta E)^2 (eps0 c^2 / omega_E^2)^2 / |d|^2 in nm^-2"})
    grid = ResultGrid(cfg.name, axes, value, f"variance_{comp}_per_d2", "nm^-2", err, metadata=meta)
    if R > 0:
        angles, off = lateral_lobes(grid, R)
        meta["lateral_lobes"] = {"shell_offset_nm": off, "maxima_deg": angles}
    meta["negative_points"] = int(np.sum(grid.value < 0))
    return _finish(grid)


RUNNERS = {
    "amplitude_map": run_amplitude_map,
    "farfield_pattern": run_farfield_pattern,
    "variance_map": run_variance_map,
    "distance_scan": run_distance_scan,
    "spatial_map": run_spatial_map,
}


def run(cfg, threads=1):
    log.info("running %s (%s) with %d worker(s)", cfg.name, cfg.pipeline, threads)
    return RUNNERS[cfg.pipeline](cfg, threads)


# -- output -------------------------------------------------------------------------------

def _fmt(v):
    return "" if not np.isfinite(v) else repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def grid_to_csv(grid):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([a.name for a in grid.axes] + [grid.value_name] + list(grid.extras) + ["error_code"])
    idx = np.indices(grid.shape).reshape(len(grid.axes), -1).T
    extras = [arr for _, arr in grid.extras.values()]
    for ix in idx:
        t = tuple(ix)
        row = [_fmt(a.values[k]) for a, k in zip(grid.axes, ix)]
        row.append(_fmt(grid.value[t]))
        row.extend(_fmt(arr[t]) for arr in extras)
        row.append(str(int(grid.error[t])))
        w.writerow(row)
    return buf.getvalue()


def grid_to_json(grid):
    doc = {
        "name": grid.name,
        "axes": [{"name": a.name, "unit": a.unit, "values": a.values} for a in grid.axes],
        "value": {"name": grid.value_name, "unit": grid.value_unit, "data": grid.value},
        "extras": {k: {"unit": u, "data": np.asarray(v)} for k, (u, v) in grid.extras.items()},
        "error_code": grid.error,
        "metadata": grid.metadata,
    }
    return json.dumps(_jsonable(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"


def grid_to_svg(grid):
    """Static heatmap or line plot; needs matplotlib."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise NanosqueezeError("SVG output needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.rcParams["svg.hashsalt"] = "nanosqueeze"
    v = grid.value
    lead = grid.axes[0]
    if len(grid.axes) == 3:
        n = lead.values.size
        fig, axs = plt.subplots(1, n, figsize=(4.5 * n, 4), squeeze=False)
        for k in range(n):
            ax = axs[0, k]
            a, b = grid.axes[1], grid.axes[2]
            m = ax.pcolormesh(a.values, b.values, v[k].T, shading="auto", cmap="RdBu_r")
            fig.colorbar(m, ax=ax)
            ax.set_title(f"{lead.name} = {lead.values[k]:g}")
            ax.set_xlabel(f"{a.name} [{a.unit}]")
            ax.set_ylabel(f"{b.name} [{b.unit}]")
    elif len(grid.axes) == 2 and lead.values.size <= 8:
        fig, ax = plt.subplots(figsize=(6, 4))
        b = grid.axes[1]
        for k in range(lead.values.size):
            ax.plot(b.values, v[k], label=f"{lead.name} = {lead.values[k]:g}")
        ax.set_xlabel(f"{b.name} [{b.unit}]")
        ax.set_ylabel(f"{grid.value_name} [{grid.value_unit}]")
        ax.legend(frameon=False)
    elif len(grid.axes) == 2:
        fig, ax = plt.subplots(figsize=(6, 5))
        a, b = grid.axes
        m = ax.pcolormesh(a.values, b.values, v.T, shading="auto", cmap="viridis")
        fig.colorbar(m, ax=ax, label=f"{grid.value_name} [{grid.value_unit}]")
        ax.set_xlabel(f"{a.name} [{a.unit}]")
        ax.set_ylabel(f"{b.name} [{b.unit}]")
    else:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(lead.values, v)
        ax.set_xlabel(f"{lead.name} [{lead.unit}]")
    fig.suptitle(grid.name)
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


_WRITERS = {"csv": grid_to_csv, "json": grid_to_json, "svg": grid_to_svg}


def _atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_outputs(grid, out_dir, formats=("csv", "json"), stem=None):
    """Write the grid in each format via temp file + rename; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or grid.name
    texts = {fmt: _WRITERS[fmt](grid) for fmt in formats}
    paths = []
    for fmt, text in texts.items():
        path = os.path.join(out_dir, f"{stem}.{fmt}")
        _atomic_write(path, text)
        paths.append(path)
    return paths
