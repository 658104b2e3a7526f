import csv
import io
import json

import numpy as np
import pytest

from nanosqueeze import scan
from nanosqueeze import squeeze as sq
from nanosqueeze.emitter import Emitter, atomic_variance
from nanosqueeze.errors import ConfigError, NanosqueezeError
from nanosqueeze.green import SphereSystem


def small(pipeline, **blocks):
    return scan.ScanConfig.from_dict({"name": "t", "pipeline": pipeline, **blocks})


# -- configuration ----------------------------------------------------------------------

def test_axis_values_forms():
    assert scan.axis_values(3).tolist() == [3.0]
    assert scan.axis_values([1, 2.5]).tolist() == [1.0, 2.5]
    np.testing.assert_array_equal(scan.axis_values({"start": 0, "stop": 1, "num": 5}), np.linspace(0, 1, 5))
    assert scan.axis_values({"start": 2, "stop": 9, "num": 1}).tolist() == [2.0]
    for bad in ("x", [], [1, "a"], {"start": 0}, {"start": 0, "stop": 1, "num": 0}, [np.inf], True):
        with pytest.raises(ConfigError):
            scan.axis_values(bad)


@pytest.mark.parametrize("name", scan.preset_names())
def test_preset_round_trip(name):
    cfg = scan.load_preset(name)
    back = scan.ScanConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.digest == cfg.digest
    assert back.to_json() == cfg.to_json()


def test_overrides():
    cfg = scan.load_preset("fig1c")
    new = cfg.with_overrides(tol=1e-6, formats=["svg"])
    assert new.numerics["tol"] == 1e-6 and new.output["formats"] == ["svg"]
    assert new.digest != cfg.digest
    assert cfg.with_overrides() == cfg


def test_unknown_preset():
    with pytest.raises(ConfigError):
        scan.load_preset("nope")


@pytest.mark.parametrize("patch", [
    {"pipeline": "other"},
    {"bogus": 1},
    {"geometry": "x"},
    {"numerics": {"tol": 0}},
    {"numerics": {"tol": "a"}},
    {"numerics": {"n_max_cap": 500}},
    {"numerics": {"quadrature_order": 1}},
    {"numerics": {"mode": "exact"}},
    {"output": {"formats": ["pdf"]}},
    {"output": {"formats": []}},
    {"material": {"model": "silver"}},
    {"material": {"model": "drude_lorentz", "eps_inf": 1}},
    {"material": {"background_permittivity": 2.0}},
    {"geometry": {"radius_nm": -1}},
    {"geometry": {"s_nm": 0}},
    {"geometry": {"component": "x"}},
    {"geometry": {"detection": {"kind": "D9"}}},
    {"geometry": {"detection": {"kind": "custom", "point_nm": [0, 0]}}},
    {"geometry": {"detection": {"kind": "custom", "point_nm": [0, 0, 10]}}},
    {"geometry": {"detection": {"kind": "custom", "point_nm": [0, 0, 70]}}},
    {"emitter": {"lambda_nm": 50}},
    {"emitter": {"dipole_cm": 0}},
    {"emitter": {"gamma_star_over_gamma0": -1}},
])
def test_invalid_configs(patch):
    base = {"name": "t", "pipeline": "amplitude_map"}
    base.update(patch)
    with pytest.raises(ConfigError):
        scan.ScanConfig.from_dict(base)


@pytest.mark.parametrize("pipeline, drive, geometry", [
    ("farfield_pattern", {"theta_samples": 2}, {}),
    ("variance_map", {"delta0": 0, "z0": 1}, {}),
    ("variance_map", {"delta0": [0, 1], "z0": [-1]}, {}),
    ("variance_map", {"delta0": [0, 1], "z0": [1], "reference": "x"}, {}),
    ("variance_map", {"delta0": [0, 1], "z0": [1], "incidence": {"direction": [1, 0, 0], "polarization": [1, 0, 0]}}, {}),
    ("distance_scan", {"omega_over_gamma0": [0]}, {}),
    ("distance_scan", {"omega_over_gamma0": [1]}, {"radius_nm": [10, 20]}),
    ("spatial_map", {}, {"x_nm": [1]}),
    ("spatial_map", {"z": -1}, {"x_nm": [100], "z_nm": [100]}),
])
def test_invalid_pipeline_blocks(pipeline, drive, geometry):
    with pytest.raises(ConfigError):
        small(pipeline, drive=drive, geometry=geometry)


def test_drude_lorentz_material_block():
    cfg = small("amplitude_map", material={"model": "drude_lorentz", "eps_inf": 9.0, "omega_p_ev": 9.0,
                                           "gamma_p_ev": 0.07, "poles_ev": [[1.0, 3.0, 0.5]]})
    assert cfg.model.eps_inf == 9.0 and len(cfg.model.lorentz_poles) == 1


# -- result grid and writers ------------------------------------------------------------------

def one_by_one(value=2.5, code=scan.OK):
    axes = (scan.Axis("a", "nm", np.array([1.0])), scan.Axis("b", "1", np.array([0.1])))
    return scan.ResultGrid("g", axes, [[value]], "v", "1", [[code]], extras={"e": ("1", [[7.0]])})


def test_csv_single_point():
    text = scan.grid_to_csv(one_by_one())
    rows = list(csv.reader(io.StringIO(text)))
    assert rows == [["a", "b", "v", "e", "error_code"], ["1.0", "0.1", "2.5", "7.0", "0"]]


def test_csv_nan_is_empty_with_code():
    g = one_by_one(np.nan, scan.NOT_CONVERGED)
    rows = list(csv.reader(io.StringIO(scan.grid_to_csv(g))))
    assert rows[1][2] == "" and rows[1][-1] == "1"
    assert g.failures == 1
    # a value on a non-OK point is dropped
    assert np.isnan(one_by_one(3.0, scan.MASKED).value[0, 0])


def test_nonfinite_without_code_rejected():
    with pytest.raises(NanosqueezeError):
        one_by_one(np.nan, scan.OK)


def test_json_is_strict_and_complete():
    doc = json.loads(scan.grid_to_json(one_by_one(np.nan, scan.FAILED)))
    assert doc["value"]["data"] == [[None]]
    assert doc["error_code"] == [[3]]
    assert doc["axes"][0]["unit"] == "nm"


def test_svg_is_deterministic():
    pytest.importorskip("matplotlib")
    g = one_by_one()
    a, b = scan.grid_to_svg(g), scan.grid_to_svg(g)
    assert a == b and a.lstrip().startswith("<?xml")


def test_emit_outputs(tmp_path):
    paths = scan.emit_outputs(one_by_one(), tmp_path / "out", ["csv", "json"], "x")
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["x.csv", "x.json"]
    assert not [p for p in (tmp_path / "out").iterdir() if p.name.startswith(".tmp")]


# -- pipelines --------------------------------------------------------------------------------

def test_amplitude_map_matches_single_point():
    cfg = small("amplitude_map", geometry={"radius_nm": [0, 60]}, emitter={"lambda_nm": [540, 560]})
    g = scan.run(cfg)
    assert [a.name for a in g.axes] == ["lambda_nm", "radius_nm"]
    assert g.shape == (2, 2) and g.failures == 0
    np.testing.assert_array_equal(g.value[:, 0], 1.0)
    for j, lam in enumerate((540.0, 560.0)):
        e = Emitter.on_axis(60.0, 10.0, lam)
        ref = sq.amplitude_ratio(e, SphereSystem(60.0), sq.detection_point("D1", 60.0, lam), "theta")
        assert g.value[j, 1] == pytest.approx(ref, rel=1e-8)


def test_amplitude_map_d2_full_mode():
    cfg = small("amplitude_map", geometry={"radius_nm": [60], "detection": {"kind": "D2"}},
                emitter={"lambda_nm": [550]}, numerics={"tol": 1e-6})
    g = scan.run(cfg)
    e = Emitter.on_axis(60.0, 10.0, 550.0)
    ref = sq.amplitude_ratio(e, SphereSystem(60.0), [0, 0, -70.0], "r", mode="full")
    assert g.metadata["mode"] == "full"
    assert g.value[0, 0] == pytest.approx(ref, rel=1e-5)


def test_non_convergence_is_flagged():
    cfg = small("amplitude_map", geometry={"radius_nm": [60], "detection": {"kind": "D2"}},
                emitter={"lambda_nm": [550]}, numerics={"tol": 1e-12, "n_max_cap": 3})
    g = scan.run(cfg)
    assert g.error[0, 0] == scan.NOT_CONVERGED and np.isnan(g.value[0, 0])


def test_farfield_pattern_small():
    cfg = small("farfield_pattern", geometry={"radius_nm": [0, 60]}, drive={"theta_samples": 24})
    g = scan.run(cfg)
    assert g.shape == (2, 24)
    th = g.axes[1].values
    # full circle in the xz plane, offset by half a step
    np.testing.assert_allclose(th, (np.arange(24) + 0.5) * 2 * np.pi / 24)
    # free-space theta amplitude of a z dipole follows |sin(theta)|
    v0 = g.value[0]
    np.testing.assert_allclose(v0 / v0.max(), np.abs(np.sin(th)) / np.abs(np.sin(th)).max(), rtol=1e-6)
    assert np.all(g.value[1] > g.value[0])


def test_variance_map_small():
    cfg = small("variance_map", geometry={"radius_nm": [0]},
                drive={"delta0": [-1.0, 0.0, 1.0], "z0": [0.0, np.sqrt(1 / 3), 2.0]})
    g = scan.run(cfg)
    d, z = np.meshgrid([-1.0, 0.0, 1.0], [0.0, np.sqrt(1 / 3), 2.0], indexing="ij")
    np.testing.assert_allclose(g.value[0], atomic_variance(d, z, 0.0), atol=1e-12)
    assert g.metadata["panels"]["0.0"]["minimum"] == pytest.approx(-1 / 8, abs=1e-12)


def test_distance_scan_small():
    cfg = small("distance_scan", geometry={"s_nm": [10, 20, 40]},
                emitter={"gamma_star_over_gamma0": 0.5}, drive={"omega_over_gamma0": [5]})
    g = scan.run(cfg)
    assert g.shape == (1, 3) and g.failures == 0
    gam = g.extras["gamma_over_gamma0"][1][0]
    assert np.all(np.diff(gam) < 0)
    assert g.metadata["free_space_reference"]["value"] > 0


def test_spatial_map_small():
    cfg = small("spatial_map", geometry={"radius_nm": 60, "s_nm": 10, "component": "r",
                                         "x_nm": [-100, 0, 100], "z_nm": [-100, 0, 72, 100]},
                drive={"z": float(np.sqrt(1 / 3))}, numerics={"tol": 1e-6, "mode": "full"})
    g = scan.run(cfg)
    assert g.error[1, 1] == scan.MASKED  # sphere centre
    assert g.error[1, 2] == scan.MASKED  # 2 nm from the emitter
    ok = g.error == scan.OK
    assert ok.sum() == 10 and np.all(g.value[ok] < 0)


def test_thread_count_does_not_change_bytes():
    cfg = small("amplitude_map", geometry={"radius_nm": [40, 60, 80]}, emitter={"lambda_nm": [540, 560]})
    a = scan.grid_to_csv(scan.run(cfg, threads=1))
    b = scan.grid_to_csv(scan.run(cfg, threads=3))
    assert a == b
