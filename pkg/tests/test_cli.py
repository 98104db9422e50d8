"""Config-format and command-line tests: strict key validation with full key
paths in error messages, config round-trips, run modes, exit codes, and
byte-stable output files.
"""

import json
import subprocess
import sys

import numpy as np
import pytest

from dedsim.cli import (
    ConfigError,
    _initial_state,
    config_from_dict,
    config_to_dict,
    main,
    parse_config,
    run_scenario,
)
from dedsim.scenarios import builtin_config, builtin_names


def toy_dict(**overrides):
    d = builtin_config("two-unit-toy")
    d.update(overrides)
    return d


# ------------------------------------------------------------- validation

def test_unknown_keys_are_rejected_with_paths():
    with pytest.raises(ConfigError, match=r"config\.bogus: unknown key"):
        config_from_dict(toy_dict(bogus={}))
    d = toy_dict()
    d["units"]["cost_q"] = [1.0, 1.0]
    with pytest.raises(ConfigError, match=r"units\.cost_q: unknown key"):
        config_from_dict(d)
    d = toy_dict()
    d["gains"]["gamma"] = 3.0
    with pytest.raises(ConfigError, match=r"gains\.gamma: unknown key"):
        config_from_dict(d)
    d = toy_dict()
    d["run"]["steps"] = 10
    with pytest.raises(ConfigError, match=r"run\.steps: unknown key"):
        config_from_dict(d)


def test_missing_sections_are_named():
    d = toy_dict()
    del d["units"]
    with pytest.raises(ConfigError, match=r"config\.units: missing"):
        config_from_dict(d)
    d = toy_dict()
    del d["run"]["dt"]
    with pytest.raises(ConfigError, match=r"run\.dt: missing"):
        config_from_dict(d)
    d = toy_dict()
    del d["units"]["cost_a"]
    with pytest.raises(ConfigError, match=r"units\.cost_a: missing"):
        config_from_dict(d)


def test_instance_errors_are_wrapped():
    d = toy_dict()
    d["units"]["cost_c"] = [-1.0, 0.75]
    with pytest.raises(ConfigError, match="units/demand"):
        config_from_dict(d)


def test_graph_errors_are_wrapped():
    d = toy_dict()
    d["graph"]["edges"] = [[1, 1, 1.0]]
    with pytest.raises(ConfigError, match=r"graph\.edges"):
        config_from_dict(d)


def test_gain_errors_are_wrapped():
    d = toy_dict()
    d["gains"]["alpha"] = 0.0
    with pytest.raises(ConfigError, match="gains"):
        config_from_dict(d)


def test_initial_explicit_arrays():
    d = toy_dict(initial={"kind": "explicit",
                          "injections": [[1.0, 2.0], [3.0, 4.0]]})
    cfg = config_from_dict(d)
    st = _initial_state(cfg)
    assert np.array_equal(st.I, [[1.0, 2.0], [3.0, 4.0]])
    assert not st.S.any() and not st.v.any()
    d["initial"]["injections"] = [[1.0], [2.0]]
    with pytest.raises(ConfigError, match=r"initial\.injections"):
        _initial_state(config_from_dict(d))


def test_builtin_names():
    assert builtin_names() == ["new-england-10", "two-unit-toy"]
    with pytest.raises(KeyError, match="unknown scenario"):
        builtin_config("three-bus")


@pytest.mark.parametrize("name", ["two-unit-toy", "new-england-10"])
def test_config_round_trip(name):
    d1 = config_to_dict(config_from_dict(builtin_config(name)))
    d2 = config_to_dict(config_from_dict(d1))
    assert d1 == d2


def test_round_trip_preserves_per_slot_costs():
    d = toy_dict()
    d["units"]["cost_b"] = [[-4.0, -3.0], [-6.0, -5.0]]  # varies per slot
    cfg = config_from_dict(d)
    back = config_to_dict(cfg)
    assert back["units"]["cost_b"] == [[-4.0, -3.0], [-6.0, -5.0]]
    assert back["units"]["cost_a"] == [10.0, 14.0]  # constant stays flat


# ------------------------------------------------------------ run_scenario

def test_run_scenario_writes_outputs(tmp_path):
    cfg = config_from_dict(toy_dict())
    code, summary, record = run_scenario(cfg, t_final=0.5, out_dir=tmp_path)
    assert code == 0
    assert summary["completed"] and not summary["diverged"]
    assert summary["backend"] in ("native", "fallback")
    assert summary["rejected"] is None if "rejected" in summary else True
    assert (tmp_path / "summary.json").exists()
    assert (tmp_path / "trajectory.schema.json").exists()
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert lines[0].split(",") == (
        ["time", "inj_total_k1", "inj_total_k2", "cost", "penalized",
         "lyapunov", "max_abs_mismatch", "conservation"])
    assert len(lines) == 1 + len(record.times)
    # every numeric field reparses to the exact double that was recorded
    first = lines[1].split(",")
    assert float(first[0]) == record.times[0]
    assert float(first[3]) == record.cost[0]


def test_run_scenario_full_state(tmp_path):
    cfg = config_from_dict(toy_dict())
    run_scenario(cfg, t_final=0.2, out_dir=tmp_path, emit_full_state=True)
    lines = (tmp_path / "full_state.csv").read_text().splitlines()
    cols = lines[0].split(",")
    assert cols[0] == "time"
    assert cols[1] == "I_u1_k1"
    assert len(cols) == 1 + 4 * 2 * 2
    schema = json.loads((tmp_path / "trajectory.schema.json").read_text())
    assert "full_state.csv" in schema


def test_run_scenario_outputs_are_byte_stable(tmp_path):
    cfg = config_from_dict(toy_dict())
    a, b = tmp_path / "a", tmp_path / "b"
    run_scenario(cfg, t_final=0.3, out_dir=a)
    run_scenario(cfg, t_final=0.3, out_dir=b)
    for fname in ("summary.json", "trajectory.csv", "trajectory.schema.json"):
        assert (a / fname).read_bytes() == (b / fname).read_bytes(), fname


def test_run_scenario_rejects_bad_gains(tmp_path):
    d = toy_dict()
    d["gains"]["nu1"] = 1000.0
    cfg = config_from_dict(d)
    code, summary, record = run_scenario(cfg, t_final=0.1, out_dir=tmp_path)
    assert code == 2
    assert summary["rejected"] == "gain-condition"
    assert record is None
    assert not (tmp_path / "trajectory.csv").exists()
    assert (tmp_path / "summary.json").exists()
    code, summary, record = run_scenario(cfg, t_final=0.1,
                                         override_gain_check=True)
    assert code == 0 and record is not None


def test_run_scenario_rejects_biased_v0():
    d = toy_dict(initial={"kind": "explicit",
                          "injections": [[2.0, 3.0], [2.0, 3.0]],
                          "v": [[1.0, 0.0], [1.0, 0.0]]})
    cfg = config_from_dict(d)
    code, summary, _ = run_scenario(cfg, t_final=0.1)
    assert code == 2
    assert summary["rejected"] == "v0-column-sums"


def test_run_scenario_flags_divergence():
    cfg = config_from_dict(toy_dict())
    with np.errstate(all="ignore"):
        code, summary, record = run_scenario(cfg, dt=1e5, t_final=1e7)
    assert code == 3
    assert summary["diverged"] is True
    assert record.diverged
    assert any("stiff" in w.lower() or "chattering" in w.lower()
               for w in summary["warnings"])


def test_run_scenario_agents_matches_monolithic():
    cfg = config_from_dict(toy_dict())
    code_m, sum_m, rec_m = run_scenario(cfg, mode="monolithic", t_final=0.4)
    code_a, sum_a, rec_a = run_scenario(cfg, mode="agents", t_final=0.4)
    assert code_m == code_a == 0
    assert sum_a["final_cost"] == sum_m["final_cost"]  # bitwise, not approx
    assert sum_a["message_stats"]["count"] == 2 * 400
    assert np.array_equal(rec_a.I, rec_m.I)


def test_run_scenario_validate_mode():
    cfg = config_from_dict(toy_dict())
    code, summary, record = run_scenario(cfg, mode="validate")
    assert code == 0 and record is None
    ec = summary["epsilon_check"]
    assert ec["available"] and ec["verified"]
    assert ec["eps"] == 0.05
    assert ec["bound_estimate"] > ec["eps"]
    d = toy_dict()
    d["gains"]["nu1"] = 1000.0
    code, summary, _ = run_scenario(config_from_dict(d), mode="validate")
    assert code == 2 and summary["rejected"] == "gain-condition"


def test_run_scenario_oracle_mode():
    d = toy_dict()
    d["run"]["oracle_max_iters"] = 20000
    cfg = config_from_dict(d)
    code, summary, record = run_scenario(cfg, mode="oracle")
    assert code == 0 and record is None
    assert summary["final_cost"] == pytest.approx(8.0, rel=0.02)
    assert summary["feasibility"]["feasible"]
    totals = np.array(summary["per_slot_injection_totals"])
    assert np.allclose(totals, summary["target_load"], atol=1e-6)


def test_run_scenario_unknown_mode():
    cfg = config_from_dict(toy_dict())
    with pytest.raises(ConfigError, match="mode"):
        run_scenario(cfg, mode="turbo")


# -------------------------------------------------------------------- main

def test_main_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "--scenario" in capsys.readouterr().out


def test_main_usage_errors_exit_four(capsys):
    assert main([]) == 4
    assert main(["--scenario", "two-unit-toy", "--mode", "turbo"]) == 4
    assert main(["--scenario", "two-unit-toy", "--dt", "abc"]) == 4


def test_main_config_errors_exit_four(tmp_path, capsys):
    assert main(["--scenario", "no-such-scenario"]) == 4
    assert main(["--config", str(tmp_path / "absent.json")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["--config", str(bad)]) == 4
    empty = tmp_path / "empty.json"
    empty.write_text("{}")
    assert main(["--config", str(empty)]) == 4
    err = capsys.readouterr().err
    assert "config error" in err


def test_main_negative_dt_exits_four(capsys):
    assert main(["--scenario", "two-unit-toy", "--dt", "-0.001",
                 "--t-final", "0.1"]) == 4
    assert "config error" in capsys.readouterr().err


def test_main_dump_config_round_trips(tmp_path, capsys):
    out = tmp_path / "dumped.json"
    assert main(["--scenario", "two-unit-toy", "--dump-config", str(out)]) == 0
    cfg = parse_config(out)
    assert config_to_dict(cfg) == config_to_dict(
        config_from_dict(builtin_config("two-unit-toy")))
    assert main(["--dump-config", str(out)]) == 4  # needs --scenario


def test_main_runs_and_prints_summary(tmp_path, capsys):
    code = main(["--scenario", "two-unit-toy", "--t-final", "0.2",
                 "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    summary = json.loads(out)
    assert summary["scenario"] == "two-unit-toy"
    assert (tmp_path / "summary.json").exists()
    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == summary


def test_main_gain_rejection_exit_two(tmp_path):
    d = builtin_config("two-unit-toy")
    d["gains"]["nu1"] = 1000.0
    path = tmp_path / "bad_gains.json"
    path.write_text(json.dumps(d))
    assert main(["--config", str(path), "--t-final", "0.1"]) == 2
    assert main(["--config", str(path), "--t-final", "0.1",
                 "--override-gain-check"]) == 0


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "dedsim.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "--scenario" in out.stdout
