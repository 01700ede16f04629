import json
import subprocess
import sys

import numpy as np
import pytest

from metspace.cli import EXIT_ERROR, EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main, parse_chart
from metspace.fields import GridChart, constant_field, random_metric_field
from metspace.rmf import read_field, write_field


@pytest.fixture
def pair(tmp_path):
    c = GridChart.box([0, 0], [1, 1], (9, 9))
    a, b = tmp_path / "a.rmf", tmp_path / "b.rmf"
    write_field(constant_field(c, np.eye(2)), a)
    write_field(constant_field(c, 4 * np.eye(2)), b)
    return str(a), str(b)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_dl_prints_log_two(capsys, pair):
    code, out, _ = run(capsys, "dl", *pair)
    assert code == EXIT_OK
    assert "dl=0.693147" in out


def test_json_report_schema_and_determinism(capsys, pair):
    _, first, _ = run(capsys, "dl", *pair, "--format", "json")
    _, second, _ = run(capsys, "dl", *pair, "--format", "json")
    assert first == second
    rep = json.loads(first)
    assert set(rep) == {"schema_version", "command", "config", "anchors", "results", "violations"}
    assert rep["results"][0]["dl"] == pytest.approx(np.log(2))
    assert rep["violations"] == []


def test_midpoint_writes_field_and_csv(capsys, pair, tmp_path):
    out = tmp_path / "out"
    code, text, _ = run(capsys, "midpoint", *pair, "--out", str(out), "--format", "csv")
    assert code == EXIT_OK
    header, row = text.strip().splitlines()
    assert header.split(",") == ["dl", "dl_g0_mid", "dl_mid_g1", "file"]
    m = read_field(out / "midpoint.rmf")
    np.testing.assert_allclose(m.values[0], 2 * np.eye(2))
    assert (out / "report.csv").read_text() == text


def test_geodesic_distance_measure_laplacian(capsys, pair):
    assert run(capsys, "geodesic", *pair, "--t", "0.5")[0] == EXIT_OK
    code, out, _ = run(capsys, "distance", pair[0], "--pairs", "0:80,0:8")
    assert code == EXIT_OK and "d_g=1.414214" in out
    code, out, _ = run(capsys, "distance", pair[0], "--pairs", "0:80", "--compare", pair[1])
    assert code == EXIT_OK and "ratio=2.000000" in out
    code, out, _ = run(capsys, "measure", pair[1])
    assert "volume=4.000000" in out
    code, out, _ = run(capsys, "laplacian", pair[0], "--format", "json")
    assert code == EXIT_OK
    assert json.loads(out)["results"][0]["dofs"] == 81


def test_heat_and_varadhan(capsys, pair):
    code, out, _ = run(capsys, "heat", pair[0], "--source", "40", "--times", "0.01,0.02", "--format", "json")
    assert code == EXIT_OK
    assert [r["total_heat"] for r in json.loads(out)["results"]] == pytest.approx([1, 1])
    code, _, _ = run(capsys, "varadhan", pair[0], "--source", "40", "--target", "44", "--times", "0.01,0.02")
    assert code == EXIT_OK


def test_smooth_and_poincare(capsys, pair):
    assert run(capsys, "smooth", pair[0], "--eps", "0.2,0.1")[0] == EXIT_OK
    code, out, _ = run(capsys, "poincare", pair[0], "--center", "40", "--radii", "0.45", "--reference", pair[1])
    assert code == EXIT_OK and "C1_propagated" in out


def test_construct_unbounded_certificate(capsys):
    code, out, _ = run(capsys, "construct", "unbounded", "--count", "150", "--format", "json")
    assert code == EXIT_OK
    res = json.loads(out)["results"][0]
    assert res["dl"] == "inf" and res["certificate"]["threshold"] == 50.0


def test_construct_jump_with_chart(capsys, tmp_path):
    code, _, _ = run(capsys, "construct", "nonapprox", "--chart", "2,17x17,0.25,-2x-2", "--out", str(tmp_path))
    assert code == EXIT_OK
    g = read_field(tmp_path / "nonapprox.rmf")
    assert g.chart.shape == (17, 17) and g.values[:, 0, 0].max() == 100.0


def test_verify_reports_violation_exit_code(capsys):
    code, out, _ = run(capsys, "verify", "divform")
    assert code == EXIT_VIOLATION
    assert "VIOLATION divform" in out
    code, _, _ = run(capsys, "verify", "completeness")
    assert code == EXIT_OK


def test_usage_errors_name_the_flag(capsys, pair):
    code, _, err = run(capsys, "dl", *pair, "--bogus")
    assert code == EXIT_USAGE and "--bogus" in err
    code, _, err = run(capsys, "distance", pair[0], "--pairs", "0-3")
    assert code == EXIT_USAGE and "--pairs" in err
    code, _, err = run(capsys, "construct", "nonapprox", "--chart", "2,axb")
    assert code == EXIT_USAGE and "--chart" in err
    code, _, _ = run(capsys)
    assert code == EXIT_USAGE
    code, _, err = run(capsys, "verify", "nope")
    assert code == EXIT_USAGE


def test_runtime_errors(capsys, pair, tmp_path):
    code, _, err = run(capsys, "dl", pair[0], str(tmp_path / "missing.rmf"))
    assert code == EXIT_ERROR
    bad = tmp_path / "bad.rmf"
    bad.write_bytes(b"RMF1 nonsense\n")
    code, _, err = run(capsys, "dl", pair[0], str(bad))
    assert code == EXIT_ERROR and "FormatError" in err
    code, _, err = run(capsys, "construct", "sturm", "--chart", "2,9x9")
    assert code == EXIT_ERROR and "DimensionError" in err


def test_parse_chart():
    c = parse_chart("2,5x3,0.5x0.25,1x-1,1x0")
    assert c.shape == (5, 3) and c.spacing == (0.5, 0.25) and c.origin == (1.0, -1.0)
    assert c.periodic == (True, False)
    assert parse_chart("3,9").spacing == (0.125,) * 3


def test_module_entry_point(tmp_path, pair):
    c = GridChart.box([0, 0], [1, 1], (5, 5))
    g = tmp_path / "g.rmf"
    write_field(random_metric_field(c, np.random.default_rng(0)), g)
    proc = subprocess.run([sys.executable, "-m", "metspace", "dl", str(g), str(g)],
                          capture_output=True, text=True, env={"METSPACE_THREADS": "1", "PATH": ""})
    assert proc.returncode == 0, proc.stderr
    assert "dl=0.000000" in proc.stdout


def test_construct_sturm_writes_pair(capsys, tmp_path):
    code, out, _ = run(capsys, "construct", "sturm", "--m-max", "8", "--out", str(tmp_path), "--format", "json")
    assert code == EXIT_OK
    res = json.loads(out)["results"][0]
    assert res["max_det_deviation"] <= 1e-14 and res["curves"] == 38976
    g, gp = read_field(tmp_path / "pair_g.rmf"), read_field(tmp_path / "pair_gprime.rmf")
    np.testing.assert_allclose(np.linalg.det(g.values), np.linalg.det(gp.values), rtol=1e-14)
