"""CLI configuration grammar, dispatch, artifacts, and exit codes."""

import json

import pytest

from qpnls.cli import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_RESOURCE,
    EXIT_VALIDATION,
    ConfigError,
    RunConfig,
    apply_config,
    main,
    parse_config_text,
    _parse_amplitudes,
    _parse_frequencies,
)


def test_parse_config_text():
    text = """
    # comment line
    problem.p = 2          # trailing comment
    problem.delta = 1e-3

    sweep.values = 1e-2, 3e-3
    """
    items = parse_config_text(text)
    assert items == {
        "problem.p": "2",
        "problem.delta": "1e-3",
        "sweep.values": "1e-2, 3e-3",
    }
    with pytest.raises(ConfigError):
        parse_config_text("just some words\n")


def test_parse_frequencies_and_amplitudes():
    assert _parse_frequencies("1 0; 0 1") == ((1, 0), (0, 1))
    assert _parse_frequencies("3") == ((3,),)
    assert _parse_amplitudes("0.01, 0.02") == (0.01 + 0j, 0.02 + 0j)
    assert _parse_amplitudes("1+2j") == (1 + 2j,)
    with pytest.raises(ConfigError):
        _parse_frequencies(" ; ")


def test_apply_config_rejects_unknown_keys():
    cfg = RunConfig()
    apply_config(cfg, {"problem.p": "2", "boxes.n_time": "4", "boxes.n_space": "6"})
    assert cfg.p == 2
    assert cfg.box().n_time == 4 and cfg.box().n_space == 6
    with pytest.raises(ConfigError):
        apply_config(cfg, {"problem.unknown": "1"})
    with pytest.raises(ConfigError):
        apply_config(cfg, {"problem.p": "not-an-int"})


def test_box_requires_both_halves():
    cfg = RunConfig(n_time=3)
    with pytest.raises(ConfigError):
        cfg.box()


def test_solve_qp_single_mode_run(tmp_path):
    out = tmp_path / "run"
    code = main(["solve-qp", "--preset", "single-mode", "--out", str(out)])
    assert code == EXIT_OK
    doc = json.loads((out / "solve-qp.json").read_text())
    assert doc["accepted"] is True
    assert doc["residual_norm"] <= 1e-12
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "solve-qp"
    assert manifest["exit_code"] == 0
    assert manifest["config"]["p"] == 1
    assert "timestamp" in manifest


def test_resonance_preset_projection(tmp_path):
    out = tmp_path / "res"
    code = main(["resonance", "--preset", "cubic-d1-b2", "--out", str(out)])
    assert code == EXIT_OK
    doc = json.loads((out / "resonance.json").read_text())
    assert doc["certificate"]["is_generic"] is True
    projection = {
        tuple(j) for comp in doc["components"] for j in comp["spatial_projection"]
    }
    assert projection == {(-2,), (-1,), (1,), (2,)}


def test_genericity_runs_are_deterministic(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        code = main(
            ["genericity", "--preset", "cubic-d1-b2", "--rng-seed", "7",
             "--samples", "5", "--out", str(out)]
        )
        assert code == EXIT_OK
    assert (out1 / "genericity.json").read_bytes() == (
        out2 / "genericity.json"
    ).read_bytes()


def test_sweep_writes_csv(tmp_path):
    out = tmp_path / "sweep"
    code = main(
        ["sweep", "--preset", "cubic-d1-b2", "--vary", "delta",
         "--values", "1e-2,3e-3", "--format", "csv", "--format", "json",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    csv = (out / "sweep.csv").read_text().splitlines()
    assert csv[0] == (
        "delta_or_K,first_correction_norm,omega_shift_norm,det_jacobian,remainder"
    )
    assert len(csv) == 3
    doc = json.loads((out / "sweep.json").read_text())
    assert all(row["accepted"] for row in doc["rows"])


def test_validation_error_exit_code(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("problem.frequencies = 1; 2\nproblem.amplitudes = 0.01\n")
    code = main(["solve-qp", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_VALIDATION
    assert main(["solve-qp", "--config", "/nonexistent.cfg"]) == EXIT_VALIDATION


def test_excision_failure_exit_code(tmp_path):
    cfg = tmp_path / "exc.cfg"
    cfg.write_text(
        "problem.frequencies = 2\nproblem.amplitudes = 0.01\n"
        "tolerances.excision_c = 1e9\n"
    )
    out = tmp_path / "o"
    code = main(["solve-qp", "--config", str(cfg), "--out", str(out)])
    assert code == EXIT_NUMERICAL
    doc = json.loads((out / "solve-qp.json").read_text())
    assert doc["accepted"] is False
    assert "excision" in doc["reject_reason"]


def test_resource_cap_exit_code(tmp_path):
    cfg = tmp_path / "big.cfg"
    cfg.write_text(
        "problem.frequencies = 1 0; 0 1\nproblem.amplitudes = 0.01, 0.01\n"
        "boxes.n_time = 40\nboxes.n_space = 40\n"
    )
    code = main(["solve-qp", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert code == EXIT_RESOURCE


def test_surface_flat_control(tmp_path):
    out = tmp_path / "surf"
    code = main(
        ["surface", "--metric", "flat", "--k-list", "16,32,64", "--out", str(out)]
    )
    assert code == EXIT_OK
    doc = json.loads((out / "surface.json").read_text())
    assert doc["slope"] == 0.0
    assert len(doc["records"]) == 3


def test_config_echo_reflects_overrides(tmp_path):
    out = tmp_path / "echo"
    code = main(
        ["solve-qp", "--preset", "single-mode", "--delta", "0.5",
         "--threads", "1", "--out", str(out)]
    )
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["delta"] == 0.5
    assert manifest["config"]["out"] == str(out)
