import csv
import json
import math

import numpy as np
import pytest

from nullhorizon import cli
from nullhorizon.cli import (BENCHMARK_CONFIG, SLICE_HEADER, ConfigError, dump_config, main,
                             normalize_config)

TINY = {
    "params": {"D1": 0.05, "D2": 0.05, "D3": 0.05, "v0": 10.0, "U0": 1e-3, "r_min": 0.05},
    "grid": {"nU": 6, "u_first": -40.0, "base_dv": 0.5, "v_max": 50.0},
    "analysis": {"stations": [35.0, 40.0]},
    "outputs": {"slices": True},
}


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _vacuum_cfg(M=1.0, nU=32, levels=2):
    return {
        "params": {"M": M, "D1": 0.0, "D2": 0.0, "D3": 0.0, "v0": 10.0 * M,
                   "U0": 4 * M * math.exp(-11.5 / 4), "r_min": 0.2 * M, "r0": 0.4 * M},
        "grid": {"nU": nU, "U_spacing": "uniform", "base_dv": 2.0 * M / nU, "v_max": 12.0 * M,
                 "max_dw": 1e9, "eta": 1e9, "max_dsigma": 1e9, "eta_U": 0.0,
                 "max_dsigma_U": 0.0, "r_refine_floor": 0.0},
        "convergence": {"levels": levels, "nU": nU, "v_span": 2.0 * M, "u0": -11.5 * M,
                        "r_min": 0.2 * M, "r_cut": 0.3},
    }


def test_config_round_trip_idempotent():
    once = normalize_config(TINY, BENCHMARK_CONFIG)
    text = dump_config(once)
    twice = normalize_config(json.loads(text), BENCHMARK_CONFIG)
    assert dump_config(twice) == text


@pytest.mark.parametrize("bad", [
    {"params": {"Q": 1.0}},
    {"grid": {"nU": 0}},
    {"grid": {"U_spacing": "cubic"}},
    {"params": {"p": 0.5}},
    {"analysis": {"stations": [5.0]}},
    {"grid": 3},
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        normalize_config(bad)


def test_malformed_json_reports_location(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "params": {"M": 1.0,}\n}\n')
    assert main(["rates", "--config", str(path), "--quiet"]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"{path}:2:" in err


def test_unknown_key_exit(tmp_path, capsys):
    assert main(["evolve", "--config", _write(tmp_path, {"grid": {"nu": 4}})]) == cli.EXIT_CONFIG
    assert "grid.nu" in capsys.readouterr().err


def test_vacuum_regression_refuses_matter(tmp_path):
    cfg = _write(tmp_path, {"params": {"D1": 0.01, "D2": 0.01, "D3": 0.01}})
    assert main(["vacuum-regression", "--config", cfg, "--quiet"]) == cli.EXIT_CONFIG


def test_coarse_vacuum_regression_fails_with_report(tmp_path, capsys):
    cfg = _write(tmp_path, _vacuum_cfg(nU=16))
    assert main(["vacuum-regression", "--config", cfg]) == cli.EXIT_FAIL
    out = capsys.readouterr().out
    assert "[FAIL]" in out and "convergence order" in out


def test_vacuum_regression_scale_invariant(tmp_path):
    res = []
    for M in (1.0, 2.0):
        d = tmp_path / f"M{M:g}"
        main(["vacuum-regression", "--config", _write(tmp_path, _vacuum_cfg(M), f"v{M:g}.json"),
              "--out", str(d), "--quiet"])
        res.append(json.loads((d / "vacuum_regression.json").read_text()))
    a, b = res
    assert b["mass_error"] == pytest.approx(a["mass_error"], rel=1e-6)
    assert b["kretschmann_error"] == pytest.approx(a["kretschmann_error"], rel=1e-6)
    for k, v in a["convergence"]["orders"].items():
        np.testing.assert_allclose(b["convergence"]["orders"][k], v, rtol=1e-6)


@pytest.fixture(scope="module")
def evolved(tmp_path_factory):
    base = tmp_path_factory.mktemp("evolve")
    cfg = _write(base, TINY)
    assert main(["evolve", "--config", cfg, "--out", str(base / "a"), "--quiet"]) == cli.EXIT_OK
    assert main(["evolve", "--config", cfg, "--out", str(base / "b"), "--quiet"]) == cli.EXIT_OK
    return base


def test_slice_files(evolved):
    files = sorted((evolved / "a" / "slices").glob("*.csv"))
    assert len(files) == TINY["grid"]["nU"] + 1
    with open(files[3]) as fh:
        rows = list(csv.reader(fh))
    assert ",".join(rows[0]) == SLICE_HEADER
    for cell in rows[1][:14]:
        assert float(cell) == float(f"{float(cell):.17g}")
    mantissa = rows[1][2].lstrip("-").split("e")[0].replace(".", "").lstrip("0")
    assert len(mantissa) <= 17


def test_outputs_are_byte_identical(evolved):
    a, b = evolved / "a", evolved / "b"
    names = sorted(p.relative_to(a) for p in a.rglob("*.csv")) + [
        p.relative_to(a) for p in a.glob("*.json")]
    assert names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_curves_and_rates_written(evolved):
    d = evolved / "a"
    assert (d / "curves.csv").exists()
    doc = json.loads((d / "rates.json").read_text())
    assert {"params", "stations", "fits"} <= set(doc)


def test_rates_from_saved_sheet(evolved, capsys):
    cfg = json.loads((evolved / "a" / "config.json").read_text())
    cfg["analysis"]["evolve_inline"] = False
    path = _write(evolved, cfg, "again.json")
    assert main(["rates", "--config", path, "--out", str(evolved / "a"),
                 "--stations", "35,40"]) == cli.EXIT_OK
    assert "N(v)" in capsys.readouterr().out


def test_missing_data_exit(tmp_path):
    cfg = dict(TINY, analysis={"stations": [35.0], "evolve_inline": False})
    path = _write(tmp_path, cfg)
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["rates", "--config", path, "--out", str(empty), "--quiet"]) == cli.EXIT_MISSING
    assert main(["audit", "--config", path, "--out", str(empty), "--quiet"]) == cli.EXIT_MISSING


def test_slices_disabled(tmp_path):
    cfg = dict(TINY, outputs={"slices": False, "curves": False})
    out = tmp_path / "o"
    assert main(["evolve", "--config", _write(tmp_path, cfg), "--out", str(out),
                 "--quiet"]) == cli.EXIT_OK
    assert not (out / "slices").exists()
    assert (out / "rates.json").exists()


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["evolve", "--config", _write(tmp_path, TINY), "--out", str(blocker / "sub"),
                 "--quiet"]) == cli.EXIT_IO
