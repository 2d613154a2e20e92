import json
import math

import numpy as np
import pytest

from lieobserver.cli import CSV_HEADER, emit_csv, format_report, main, read_csv, report
from lieobserver.config import PRESETS, ConfigError, load_preset, parse_config, parse_document, preset_document
from lieobserver.simulate import SimulationTrace, run

FIG1_TOML = """
group = "SE3"
frame = "se3-landmarks"
t_end = 0.2

[gains]
k1 = 2.0
k2 = 10.0

[profile]
name = "se3-circular"
omega_rate = 10.0
v_rate = 0.5

[bias]
omega = [-10.0, 15.0, 8.0]
v = [2.0, 8.0, 5.0]

[noise]
enabled = true
sigma = 0.1
seed = 20220101

[initial.truth]
rotation_vector = [0.0, 0.0, 0.0]
position = [0.0, 0.0, 1.0]

[initial.observer]
rotation_vector = [0.0, 0.0, -0.3141592653589793]
position = [0.0, 0.0, 0.0]
bias_omega = [0.0, 0.0, 0.0]
bias_v = [0.0, 0.0, 0.0]
"""


def test_preset_figure1_contents():
    sc = load_preset("se3-figure1").scenario
    assert (sc.gains.k1, sc.gains.k2) == (2.0, 10.0)
    assert sc.noise.sigma == 0.1 and sc.noise.active
    np.testing.assert_allclose(np.array(sc.bias[:3]) / math.sqrt(2), [-10, 15, 8])
    np.testing.assert_allclose(sc.bias[3:], [2, 8, 5])
    assert sc.t_end == 15.0 and sc.h == 1e-3


def test_all_presets_parse():
    assert set(PRESETS) == {"se3-figure1", "se3-figure1-noiseless", "se3-zero-error", "so3-demo"}
    for name in PRESETS:
        assert load_preset(name).preset == name
    with pytest.raises(ConfigError):
        preset_document("nope")


def test_toml_matches_preset():
    cfg = parse_config(FIG1_TOML)
    ref = load_preset("se3-figure1").scenario
    assert cfg.scenario.bias == ref.bias and cfg.scenario.t_end == 0.2
    assert cfg.scenario.h == 1e-3


def test_json_config():
    doc = preset_document("se3-figure1-noiseless")
    cfg = parse_config(json.dumps(doc), fmt="json")
    assert not cfg.scenario.noise.active


def test_zero_gain_rejected():
    with pytest.raises(ConfigError, match="k1 must be positive"):
        parse_config(FIG1_TOML.replace("k1 = 2.0", "k1 = 0"))
    with pytest.raises(ConfigError, match="k1 must be positive"):
        parse_config("[gains]\nk1 = 0\n")


def test_nonpositive_step_rejected():
    with pytest.raises(ConfigError, match="h must be positive"):
        parse_config(FIG1_TOML.replace("t_end = 0.2", "t_end = 0.2\nh = -1e-3"))


def test_empty_document_lists_all_missing():
    with pytest.raises(ConfigError) as info:
        parse_config("")
    problems = info.value.problems
    for key in ("group", "gains.k1", "gains.k2", "noise.seed", "initial.observer.bias_v", "bias.omega"):
        assert any(repr(key) in p for p in problems), key


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown key 'noise.color'"):
        parse_config(FIG1_TOML.replace("sigma = 0.1", "sigma = 0.1\ncolor = 'white'"))
    with pytest.raises(ConfigError, match="unknown key 'extra'"):
        parse_config("extra = 1\n" + FIG1_TOML)


def test_malformed_document():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("group = [")


def test_so3_rejects_translation_keys():
    doc = preset_document("so3-demo")
    doc["bias"]["v"] = [0.0, 0.0, 0.0]
    with pytest.raises(ConfigError, match="bias.v"):
        parse_document(doc)


def test_bad_values_rejected():
    doc = preset_document("se3-figure1")
    doc["noise"]["seed"] = -1
    doc["bias"]["omega"] = [1.0, 2.0]
    doc["report"] = "xml"
    with pytest.raises(ConfigError) as info:
        parse_document(doc)
    assert len(info.value.problems) == 3


def test_emit_csv_shapes(tmp_path):
    empty = SimulationTrace.from_rows([], 1e-3)
    emit_csv(empty, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_bytes() == (CSV_HEADER + "\n").encode()
    rows = np.arange(24.0).reshape(3, 8) / 7.0
    emit_csv(SimulationTrace.from_rows(rows, 1e-3), tmp_path / "r.csv")
    data = (tmp_path / "r.csv").read_bytes()
    assert b"\r" not in data
    assert data.decode().splitlines()[0] == "t,err_A,err_b,V,membership,sigma_min,sigma_max,xi_norm"
    assert len(data.decode().splitlines()) == 4


def test_csv_roundtrip_bit_exact(tmp_path):
    trace, _ = run(parse_config(FIG1_TOML).scenario)
    emit_csv(trace, tmp_path / "t.csv")
    back = read_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(back.rows(), trace.rows())


def test_report_zero_error_at_floor():
    cfg = load_preset("se3-zero-error")
    trace, assumptions = run(cfg.scenario)
    summary = report(trace, assumptions, cfg)
    assert summary["final_err_A"] <= 1e-9 and summary["final_err_b"] <= 1e-9
    assert summary["rate_fit"]["status"] == "at floor"


def test_report_noiseless_rate(noiseless_config, noiseless_run):
    summary = report(*noiseless_run, noiseless_config)
    assert summary["rate_fit"]["rate"] < 0 and summary["rate_fit"]["r_squared"] > 0.95
    assert summary["config"]["noise"]["seed"] == 20220101
    assert summary["config"]["h"] == 1e-3


def test_report_json_stable(noiseless_config, noiseless_run):
    text = format_report(report(*noiseless_run, noiseless_config, 1.25), "json")
    assert json.dumps(json.loads(text), sort_keys=True, indent=2) == text


def test_report_numbers_recomputable_from_csv(tmp_path, noiseless_config, noiseless_run):
    trace, assumptions = noiseless_run
    emit_csv(trace, tmp_path / "n.csv")
    back = read_csv(tmp_path / "n.csv")
    assert report(back, assumptions, noiseless_config)["rate_fit"] == report(trace, assumptions, noiseless_config)["rate_fit"]


def test_config_echo_reruns_exactly(tmp_path):
    cfg = parse_config(FIG1_TOML)
    trace, _ = run(cfg.scenario)
    again = parse_document(json.loads(json.dumps(report(trace, _, cfg)["config"])))
    np.testing.assert_array_equal(run(again.scenario)[0].rows(), trace.rows())


def test_main_exit_codes(tmp_path, capsys):
    out = tmp_path / "o.csv"
    assert main(["--preset", "se3-figure1", "--duration", "0.1", "--out", str(out)]) == 0
    assert out.read_text().startswith(CSV_HEADER)
    bad = tmp_path / "bad.toml"
    bad.write_text("[gains]\nk1 = 0\n")
    assert main(["--config", str(bad), "--out", str(out)]) == 2
    assert main(["--config", str(tmp_path / "missing.toml")]) == 4
    assert main(["--preset", "se3-figure1", "--duration", "0.1", "--out", str(tmp_path / "no" / "x.csv")]) == 4
    assert main(["--preset", "se3-figure1", "--runs", "0"]) == 2
    diverge = tmp_path / "div.json"
    doc = preset_document("se3-figure1-noiseless")
    doc.update(h=0.1, t_end=100.0, gains={"k1": 50.0, "k2": 10.0})
    diverge.write_text(json.dumps(doc))
    assert main(["--config", str(diverge), "--out", str(tmp_path / "d.csv")]) == 3
    assert len((tmp_path / "d.csv").read_text().splitlines()) > 1
    with pytest.raises(SystemExit):
        main(["--preset", "unknown"])


def test_main_same_seed_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["--preset", "se3-figure1", "--duration", "0.5", "--seed", "9", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c.csv"
    main(["--preset", "se3-figure1", "--duration", "0.5", "--seed", "10", "--out", str(c)])
    assert c.read_bytes() != a.read_bytes()


def test_main_overrides_and_json_report(tmp_path, capsys):
    out = tmp_path / "o.csv"
    code = main(["--preset", "se3-figure1", "--no-noise", "--step", "0.002", "--duration", "0.2", "--out", str(out), "--report", "json"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["rows"] == 101
    assert summary["config"]["noise"]["enabled"] is False
    assert summary["config"]["h"] == 0.002


def test_main_runs_write_suffixed_files(tmp_path, capsys):
    out = tmp_path / "mc.csv"
    assert main(["--preset", "se3-figure1", "--duration", "0.1", "--runs", "2", "--jobs", "2", "--seed", "5", "--out", str(out)]) == 0
    first, second = (tmp_path / "mc_0.csv").read_bytes(), (tmp_path / "mc_1.csv").read_bytes()
    assert first != second
    main(["--preset", "se3-figure1", "--duration", "0.1", "--seed", "6", "--out", str(tmp_path / "s.csv")])
    assert (tmp_path / "s.csv").read_bytes() == second
