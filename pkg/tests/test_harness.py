import copy
import csv
import json
import math

import numpy as np
import pytest
import yaml

from qtrack.errors import ConfigError
from qtrack.harness import (
    EXIT_OK,
    EXIT_SINGULAR,
    TRACE_FIELDS,
    compare,
    load_config,
    parse_config,
    read_trace,
    run,
)

BASE = {
    "system": {"N": 2, "H0": [[1, 0], [0, -1]], "mu": [[0, 1], [1, 0]]},
    "rho0": [[1, 0], [0, 0]],
    "theta": [[1, 0], [0, -1]],
}


def cfg_with(**changes):
    data = copy.deepcopy(BASE)
    for key, value in changes.items():
        data[key] = value
    return data


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


# ------------------------------------------------------------------ config

def test_minimal_config_defaults(tmp_path):
    cfg = load_config(write(tmp_path, BASE))
    assert cfg.grid["q"] == 501 and cfg.grid["p"] == 201 and cfg.grid["ds"] == 0.005
    assert cfg.algorithm == "grad"
    echo = cfg.echo()
    assert echo["grid"]["q"] == 501 and echo["algorithm"] == "grad"


def test_missing_dimension_names_field():
    data = copy.deepcopy(BASE)
    del data["system"]["N"]
    with pytest.raises(ConfigError, match="system.N"):
        parse_config(data)


def test_morph_dimension_mismatch():
    data = copy.deepcopy(BASE)
    data["algorithm"] = "utrack"
    data["system"]["morph"] = {"start": {"H0": [[1, 0], [0, -1]], "mu": [[0, 1], [1, 0]]},
                               "end": {"H0": np.eye(3).tolist(), "mu": [[0, 1], [1, 0]]}}
    with pytest.raises(ConfigError, match="system.morph.end.H0"):
        parse_config(data)


def test_non_hermitian_rejected():
    data = copy.deepcopy(BASE)
    data["system"]["mu"] = [[0, 1], [0, 0]]
    with pytest.raises(ConfigError, match="system.mu"):
        parse_config(data)


def test_complex_entries():
    data = copy.deepcopy(BASE)
    data["system"]["mu"] = [[0, [0, -1]], [[0, 1], 0]]
    cfg = parse_config(data)
    assert np.allclose(cfg.model.mu, [[0, -1j], [1j, 0]])


@pytest.mark.parametrize("bad, path", [
    ({"grid": {"q": 1}}, "grid.q"),
    ({"grid": {"T": -1}}, "grid.T"),
    ({"grid": {"bogus": 1}}, "grid"),
    ({"algorithm": "newton"}, "algorithm"),
    ({"options": {"correction": "maybe"}}, "options.correction"),
    ({"options": {"beta": -1}}, "options.beta"),
    ({"options": {"unknown": 1}}, "options"),
    ({"initial_field": {"kind": "noise"}}, "initial_field.kind"),
    ({"initial_field": {"kind": "samples", "values": [0, 1]}}, "initial_field.values"),
    ({"seed": -3}, "seed"),
    ({"rho0": [[0.5, 0], [0, 0.6]]}, "rho0"),
])
def test_schema_violations(bad, path):
    with pytest.raises(ConfigError, match=path.replace(".", r"\.")):
        parse_config(cfg_with(**bad))


def test_morph_requires_utrack():
    data = copy.deepcopy(BASE)
    ends = {"H0": [[1, 0], [0, -1]], "mu": [[0, 1], [1, 0]]}
    data["system"]["morph"] = {"start": ends, "end": ends}
    with pytest.raises(ConfigError, match="system.morph"):
        parse_config(data)


def test_unreadable_and_unparsable(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("system: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)


# --------------------------------------------------------------------- runs

GRID = {"T": 20, "q": 501, "p": 201}


def test_grad_run(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 501, "ds": 0.5, "s_max": 200},
                    initial_field={"kind": "random"}, seed=4)
    report, trace = run(parse_config(data), tmp_path / "g")
    assert report.exit_code == EXIT_OK
    assert report.final_phi >= 0.999 * report.phi_max
    assert report.pathlength >= 0


def test_utrack_run(tmp_path):
    data = cfg_with(grid=GRID, algorithm="utrack", initial_field={"kind": "resonant"})
    report, _ = run(parse_config(data), tmp_path / "u")
    assert report.exit_code == EXIT_OK
    assert report.final_track_err < 1e-2
    assert abs(report.pathlength - report.geodesic_distance) <= 0.05 * report.geodesic_distance
    assert report.pathlength >= report.geodesic_distance - 1e-9


def test_artifacts_and_schema(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 201, "p": 21}, algorithm="vtrack",
                    options={"observables": "z"}, initial_field={"kind": "resonant",
                                                                 "rotation": 0.2})
    out = tmp_path / "v"
    report, trace = run(parse_config(data), out)
    lines = (out / "trace.jsonl").read_text().splitlines()
    assert len(lines) == len(trace) == 21
    for line in lines:
        assert tuple(json.loads(line)) == TRACE_FIELDS
    with open(out / "field_final.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "epsilon"] and len(rows) == 202
    rep = json.loads((out / "report.json").read_text())
    assert rep["exit_code"] == 0 and rep["config"]["algorithm"] == "vtrack"
    parsed = read_trace(out / "trace.jsonl")
    assert parsed[-1]["s"] == 1.0


def test_trace_numbers_roundtrip(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 201, "p": 11}, algorithm="utrack",
                    initial_field={"kind": "resonant", "rotation": 0.3})
    out = tmp_path / "r"
    _, trace = run(parse_config(data), out)
    parsed = read_trace(out / "trace.jsonl")
    for rec, row in zip(trace.records, parsed):
        assert row["phi"] == rec.phi
        assert row["pathlength_cum"] == rec.pathlength_cum
        assert math.isinf(row["condition"]) == math.isinf(rec.condition)


def test_determinism(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 201, "p": 31}, algorithm="utrack",
                    initial_field={"kind": "random"}, seed=8)
    run(parse_config(data), tmp_path / "a")
    run(parse_config(data), tmp_path / "b")
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()
    assert (tmp_path / "a" / "field_final.csv").read_bytes() == (tmp_path / "b" / "field_final.csv").read_bytes()


def test_seed_override_changes_random_field(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 201, "p": 3, "ds": 0.01}, seed=1)
    cfg = parse_config(data)
    run(cfg, tmp_path / "a")
    rep, _ = run(cfg, tmp_path / "b", seed=2)
    assert rep.seed == 2
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() != (tmp_path / "b" / "trace.jsonl").read_bytes()


def test_singular_strict_exit_code(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 201, "p": 11}, algorithm="utrack",
                    initial_field={"kind": "random"})
    data["system"]["mu"] = [[1, 0], [0, 0]]
    report, trace = run(parse_config(data), tmp_path / "s", strict=True)
    assert report.exit_code == EXIT_SINGULAR
    assert "condition" in report.error
    assert (tmp_path / "s" / "trace.jsonl").exists()


def test_strack_ramp(tmp_path):
    data = cfg_with(grid={"T": 20, "q": 301, "p": 101}, algorithm="strack",
                    options={"target": "ramp", "integrator": "rk4"},
                    initial_field={"kind": "resonant", "rotation": 0.5})
    report, trace = run(parse_config(data), tmp_path / "st")
    assert report.exit_code == EXIT_OK
    assert report.final_phi == pytest.approx(report.phi_max, abs=1e-3)


def test_morphing_run(tmp_path):
    data = cfg_with(grid={"T": 10, "q": 201, "p": 41}, algorithm="utrack",
                    initial_field={"kind": "resonant", "rotation": 0.5})
    data["system"]["morph"] = {"start": {"H0": [[1, 0], [0, -1]], "mu": [[0, 1], [1, 0]]},
                               "end": {"H0": [[1.2, 0], [0, -1.2]], "mu": [[0, 1], [1, 0]]}}
    report, _ = run(parse_config(data), tmp_path / "m")
    assert report.exit_code == EXIT_OK
    assert report.final_track_err < 1e-2


# ----------------------------------------------------------------- compare

def _reports(tmp_path):
    grad = cfg_with(grid={"T": 20, "q": 301, "ds": 0.5, "s_max": 100},
                    initial_field={"kind": "resonant", "rotation": 0.2})
    utrack = cfg_with(grid={"T": 20, "q": 301, "p": 101}, algorithm="utrack",
                      initial_field={"kind": "resonant", "rotation": 0.2})
    run(parse_config(grad), tmp_path / "grad")
    run(parse_config(utrack), tmp_path / "utrack")
    return tmp_path / "grad" / "report.json", tmp_path / "utrack" / "report.json"


def test_compare_identical_zero_variance(tmp_path):
    g, _ = _reports(tmp_path)
    rows = compare([g, g])
    var = {r["path"]: r for r in rows if r["path"].startswith("variance:")}
    assert var["variance:iterations"]["iterations"] == 0.0
    assert var["variance:pathlength"]["pathlength"] == 0.0
    assert var["variance:final_phi"]["final_phi"] == 0.0


def test_compare_grad_vs_utrack(tmp_path):
    g, u = _reports(tmp_path)
    out = tmp_path / "cmp.csv"
    rows = compare([g, u], out)
    assert rows[0]["compatible"] and rows[1]["compatible"]
    assert rows[1]["pathlength"] <= rows[0]["pathlength"]
    with open(out) as fh:
        assert len(list(csv.DictReader(fh))) == 5


def test_compare_missing_and_incompatible(tmp_path):
    g, _ = _reports(tmp_path)
    other = cfg_with(grid={"T": 10, "q": 101, "p": 3, "ds": 0.01})
    run(parse_config(other), tmp_path / "other")
    rows = compare([g, tmp_path / "nope.json", tmp_path / "other"])
    assert "cannot read" in rows[1]["error"] and rows[1]["compatible"] is False
    assert rows[2]["compatible"] is False and "fingerprint" in rows[2]["error"]
    with pytest.raises(ConfigError):
        compare([g])
