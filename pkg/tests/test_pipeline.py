import csv
import json
import re

import pytest

from nonint.cli import main
from nonint.config import RunConfig, bundled_config, bundled_map, load_config, parse_value
from nonint.errors import InputError
from nonint.pipeline import HYPOTHESES, run_pipeline
from nonint.report import build_document, dumps, emit, strip_timestamp


def cfg_for(name, **over):
    return load_config(bundled_config(name), over)


# ----------------------------------------------------------------- config

def test_bundled_configs_load():
    for name in ("henon-horseshoe.cfg", "linear-saddle.cfg", "normalform-cubic.cfg"):
        cfg = cfg_for(name)
        assert cfg.map_path.endswith(".yaml")


def test_parse_values():
    assert parse_value("i_range", "5,45") == (5, 45)
    assert parse_value("zero_tol", "auto") is None
    assert parse_value("write_svg", "no") is False
    assert parse_value("C", "0.25") == 0.25
    with pytest.raises(InputError):
        parse_value("degree", "six")
    with pytest.raises(InputError):
        parse_value("no_such_key", "1")


@pytest.mark.parametrize("field,value", [("admissibility_tol", 0.0), ("degree", -1),
                                         ("precision", 10), ("zero_tol", -1e-6)])
def test_validation(field, value):
    with pytest.raises(InputError):
        RunConfig(map_path="x.yaml", **{field: value}).validate()


def test_config_section_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[manifold]\ndegree = 3\n")
    with pytest.raises(InputError):
        load_config(p)
    p.write_text("[run]\nmap = m.yaml\n[obstruction]\ncolour = red\n")
    with pytest.raises(InputError):
        load_config(p)


def test_map_path_relative_to_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(f"[run]\nmap = {bundled_map('linear-saddle.yaml')}\n[obstruction]\ndegree = 2\n")
    assert load_config(p).degree == 2


# --------------------------------------------------------------- pipeline

def test_linear_saddle_run():
    res = run_pipeline(cfg_for("linear-saddle.cfg"))
    cert = res.certificate
    assert cert.verdict == "hypotheses_not_met"
    assert cert.failed == ("homoclinic_orbit",)
    assert res.kernel.dimension == 2
    assert [h.name for h in cert.hypotheses] == list(HYPOTHESES)


def test_normal_form_cubic_run():
    res = run_pipeline(cfg_for("normalform-cubic.cfg"))
    status = {h.name: h.status for h in res.certificate.hypotheses}
    assert status["linearization_or_normal_form"] == "pass"
    assert status["homoclinic_orbit"] == "fail"
    assert res.certificate.verdict == "hypotheses_not_met"


def test_stage_isolation():
    up = run_pipeline(cfg_for("henon-horseshoe.cfg", stages=("fixed-point", "manifold")))
    full = run_pipeline(cfg_for("henon-horseshoe.cfg", stages=("fixed-point", "manifold", "homoclinic")))
    assert up.stages["fixed-point"] == full.stages["fixed-point"]
    assert up.stages["manifold"] == full.stages["manifold"]
    assert up.certificate is None and "homoclinic" not in up.stages


def test_graph_portion_consistency(henon_run):
    """Resampled graph points (Lambda(y), y) lie on the transported unstable sheet."""
    import mpmath
    import numpy as np
    from scipy.optimize import brentq

    from nonint.manifold import global_chart_point
    from nonint.mapcore import eval_map

    gp, lc, m = henon_run.graph, henon_run.lin_chart, henon_run.map
    d = henon_run.datum
    k = next(h.details["entry_index"] for h in henon_run.hypotheses if h.name == "graph_portion")
    cu = henon_run.charts["unstable"]

    def sheet(tau):
        q = global_chart_point(cu, m, [tau])[0]
        for _ in range(k):
            q = eval_map(m, q)
        return q

    def y_of(tau):
        return float(lc.to_linear(sheet(tau))[0, -1])

    ys = np.linspace(-gp.domain_radius, gp.domain_radius, 200)
    xs = gp.evaluate(ys)[:, 0]
    # bracket the sheet parameters covering the domain
    t0 = d.unstable_param
    h = 1e-7
    slope = (y_of(t0 + h) - y_of(t0 - h)) / (2 * h)
    span = 1.5 * gp.domain_radius / abs(slope)
    worst = 0.0
    for x, y in zip(xs, ys):
        tau = brentq(lambda t: y_of(t) - y, t0 - span, t0 + span, xtol=1e-15)
        with mpmath.workdps(lc.precision):
            q, _ = lc.to_ambient([x, y], k=0)
        worst = max(worst, float(np.linalg.norm(sheet(tau) - np.array([float(v) for v in q]))))
    assert worst <= 1e-8
    assert abs(gp.x_minus[0] - d.stable_param / lc.scale * float(lc.multipliers[0]) ** k) < 1e-9


# ----------------------------------------------------------------- report

def test_document_round_trip(henon_run):
    doc = build_document(henon_run, "2026-01-01T00:00:00+00:00")
    text = dumps(doc)
    assert json.loads(text) == doc
    assert doc["certificate"]["verdict"] == "forced_trivial_to_degree_6"
    assert doc["tool"]["name"] == "artifact"
    assert all(k in doc["tolerances"] for k in ("admissibility_tol", "transversality_tol",
                                                 "zero_tol", "peel_tol", "resonance_tol"))
    assert strip_timestamp(doc).keys() == set(doc) - {"timestamp"}


def test_emitted_files(henon_run, tmp_path):
    paths = emit(henon_run, tmp_path, timestamp="t")
    with open(paths["csv"], newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["branch", "k", "s", "x0", "x1"]
    doc = json.loads(paths["json"].read_text())
    assert len(rows) - 1 == henon_run.sample_count == doc["stages"]["manifold"]["sample_count"]
    svg = paths["svg"].read_text()
    assert len(re.findall(r'id="(?:stable|unstable)-manifold"', svg)) == 2
    n_data = len(doc["stages"]["homoclinic"]["data"])
    assert len(re.findall(r'id="homoclinic-\d+"', svg)) == n_data


# -------------------------------------------------------------------- cli

def test_cli_json_only(capsys):
    assert main(["oracle", "linear-saddle.cfg", "--no-files", "--timestamp", "t"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["stages"]["oracle"]["dimension"] == 2


def test_cli_writes_files(tmp_path, capsys):
    rc = main(["full", "normalform-cubic.cfg", "--out-dir", str(tmp_path)])
    assert rc == 0
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "hypotheses_not_met"
    assert (tmp_path / "certificate.json").exists()


def test_cli_flags_override(capsys):
    assert main(["fixed-point", "--map", str(bundled_map("henon-1.4.yaml")), "--no-files"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["stages"]["fixed-point"]["point"][0] - 0.631354) < 1e-6


def test_cli_errors_are_json(tmp_path, capsys):
    assert main(["full", str(tmp_path / "missing.cfg")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "InputError"
    bad = tmp_path / "bad.yaml"
    bad.write_text("dimension: 2\ncomponents: 7\n")
    assert main(["fixed-point", "--map", str(bad), "--no-files"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "InputError"
