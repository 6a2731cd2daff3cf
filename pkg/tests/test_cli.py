"""Config validation and the command-line entry point."""

import json
import logging

import pytest

from ris_sim.cli import ConfigError, main, validate_config


@pytest.fixture(autouse=True)
def _restore_root_handlers():
    # main() rebinds root logging to the stderr capture of whichever test
    # is running; put the previous handlers back afterwards so the rest
    # of the suite keeps its logging setup.
    root = logging.getLogger()
    saved = root.handlers[:]
    yield
    root.handlers[:] = saved


def _cfg(tmp_path, text, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# validate_config


def test_minimal_rank_config_fills_defaults():
    cfg = validate_config("experiment: rank\n")
    assert cfg.experiment == "rank"
    assert cfg.seed == 0 and cfg.trials == 1
    assert cfg.output_path is None
    assert cfg.scenario["n_elements"] == 64
    assert cfg.scenario["wavefront"] == "planar"
    assert cfg.scenario["include_direct"] is False


def test_unknown_top_level_field_rejected():
    with pytest.raises(ConfigError, match="trails"):
        validate_config("experiment: rank\ntrails: 100\n")


def test_unknown_scenario_field_rejected_with_path():
    with pytest.raises(ConfigError, match=r"scenario\.n_element\b"):
        validate_config("experiment: rank\nscenario:\n  n_element: 8\n")


def test_negative_noise_rejected_at_dotted_path():
    text = "experiment: multiuser\nscenario:\n  noise_power: -1.0\n"
    with pytest.raises(ConfigError, match=r"scenario\.noise_power"):
        validate_config(text)


def test_yaml_syntax_error_reports_line_and_column():
    with pytest.raises(ConfigError) as err:
        validate_config("experiment: rank\nscenario: {m_antennas: 4\n")
    assert "line" in str(err.value) and "column" in str(err.value)


def test_empty_config_rejected():
    with pytest.raises(ConfigError, match="empty"):
        validate_config("")


def test_non_mapping_top_level_rejected():
    with pytest.raises(ConfigError, match="mapping"):
        validate_config("- 1\n- 2\n")


def test_experiment_field_required_and_checked():
    with pytest.raises(ConfigError, match="experiment"):
        validate_config("seed: 3\n")
    with pytest.raises(ConfigError, match="warp"):
        validate_config("experiment: warp\n")


def test_seed_and_trials_bounds():
    with pytest.raises(ConfigError, match="seed"):
        validate_config("experiment: rank\nseed: -1\n")
    with pytest.raises(ConfigError, match="64 bits"):
        validate_config(f"experiment: rank\nseed: {1 << 64}\n")
    with pytest.raises(ConfigError, match="trials"):
        validate_config("experiment: rank\ntrials: 0\n")
    cfg = validate_config(f"experiment: rank\nseed: {(1 << 64) - 1}\n")
    assert cfg.seed == (1 << 64) - 1


def test_wavefront_choice_enforced():
    with pytest.raises(ConfigError, match="wavefront"):
        validate_config("experiment: rank\nscenario:\n  wavefront: flat\n")


def test_boolean_field_rejects_integers():
    with pytest.raises(ConfigError, match="true or false"):
        validate_config("experiment: rank\nscenario:\n  include_direct: 1\n")


def test_measurement_times_must_be_ordered():
    text = "experiment: coexist\nscenario:\n  t1: 5\n  t2: 1\n"
    with pytest.raises(ConfigError, match=r"scenario\.t2"):
        validate_config(text)


def test_qos_weight_count_must_match_users():
    text = (
        "experiment: multiuser\n"
        "scenario:\n  n_users: 4\n  qos_weights: [1.0, 0.5]\n"
    )
    with pytest.raises(ConfigError, match=r"scenario\.qos_weights"):
        validate_config(text)


def test_deploy_threshold_is_required():
    with pytest.raises(ConfigError, match=r"scenario\.threshold_db"):
        validate_config("experiment: deploy\n")


def test_station_fields_validated_with_nested_path():
    text = (
        "experiment: deploy\n"
        "scenario:\n"
        "  threshold_db: 24.0\n"
        "  base_stations:\n"
        "    - position: [10.0, 30.0]\n"
        "      tx_power_dbm: 30.0\n"
        "      height: 10.0\n"
    )
    with pytest.raises(ConfigError, match=r"base_stations\[0\]\.height"):
        validate_config(text)


def test_output_path_must_be_a_string():
    with pytest.raises(ConfigError, match="output"):
        validate_config("experiment: rank\noutput: 3\n")


# ---------------------------------------------------------------------------
# main() entry point

_SMALL_RANK = "experiment: rank\ntrials: 3\nscenario:\n  n_elements: 8\n"


def test_main_writes_outputs_and_keeps_stdout_clean(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    out = tmp_path / "res.csv"
    rc = main(["rank", "--config", cfg, "--out", str(out)])
    captured = capsys.readouterr()
    assert rc == 0
    assert out.exists()
    assert (tmp_path / "res.json").exists()
    assert (tmp_path / "res.meta.json").exists()
    assert captured.out == ""
    assert "wrote" in captured.err


def test_main_streams_csv_to_stdout_without_out(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    rc = main(["rank", "--config", cfg])
    captured = capsys.readouterr()
    assert rc == 0
    lines = captured.out.split("\n")
    assert lines[0] == "trial,metric,value"
    assert len(lines) == 1 + 3 * 3 + 1
    # logs never leak into the data stream and data never leaks into logs
    assert "INFO" not in captured.out
    assert "trial,metric,value" not in captured.err


def test_main_two_runs_byte_identical(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["rank", "--config", cfg, "--out", str(a)]) == 0
    assert main(["rank", "--config", cfg, "--out", str(b)]) == 0
    capsys.readouterr()
    assert a.read_bytes() == b.read_bytes()


def test_main_seed_override_lands_in_sidecar(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    out = tmp_path / "res.csv"
    assert main(["rank", "--config", cfg, "--seed", "123", "--out", str(out)]) == 0
    capsys.readouterr()
    meta = json.loads((tmp_path / "res.meta.json").read_text())
    assert meta["seed"] == 123


def test_main_validation_failure_exits_one(tmp_path, capsys):
    cfg = _cfg(tmp_path, "experiment: rank\ntrails: 100\n")
    rc = main(["rank", "--config", cfg])
    captured = capsys.readouterr()
    assert rc == 1
    assert captured.out == ""
    assert "invalid config" in captured.err and "trails" in captured.err


def test_main_subcommand_must_match_experiment(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    rc = main(["beamform", "--config", cfg])
    captured = capsys.readouterr()
    assert rc == 1
    assert "rank" in captured.err and "beamform" in captured.err


def test_main_rejects_bad_thread_count(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    rc = main(["rank", "--config", cfg, "--threads", "0"])
    captured = capsys.readouterr()
    assert rc == 1
    assert "--threads" in captured.err


def test_main_unreadable_config_exits_two(tmp_path, capsys):
    rc = main(["rank", "--config", str(tmp_path / "missing.yaml")])
    captured = capsys.readouterr()
    assert rc == 2
    assert "cannot read config" in captured.err


def test_main_unwritable_output_exits_two(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    out = tmp_path / "no_such_dir" / "res.csv"
    rc = main(["rank", "--config", cfg, "--out", str(out)])
    captured = capsys.readouterr()
    assert rc == 2
    assert "cannot write results" in captured.err


def test_main_bad_seed_text_is_a_usage_error(tmp_path, capsys):
    cfg = _cfg(tmp_path, _SMALL_RANK)
    with pytest.raises(SystemExit) as err:
        main(["rank", "--config", cfg, "--seed", "twelve"])
    capsys.readouterr()
    assert err.value.code == 2
