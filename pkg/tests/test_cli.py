import csv
import json
import os

import pytest
from click.testing import CliRunner

from casebandit import cli
from casebandit.config import ExperimentConfig, load_config, parse_config
from casebandit.errors import ConfigError

SMALL = {"env": {"d_q": 2}, "policy": {"m": 16, "d_out": 8}, "run": {"T": 10, "seeds": [0]}}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def invoke(*args, env=None):
    return CliRunner().invoke(cli.main, list(args), env=env, catch_exceptions=False)


# --- config ----------------------------------------------------------------

def test_empty_config_is_valid():
    cfg = parse_config({})
    assert cfg.policy.kind == "NeuralLinLogUCB" and cfg.policy.K == 32 and cfg.policy.H == 32
    assert cfg.run.window == 200


@pytest.mark.parametrize("data, path", [
    ({"bogus": 1}, "bogus"),
    ({"policy": {"alpha": [0.0, 0.1]}}, "policy.alpha"),
    ({"policy": {"H": 3.5}}, "policy.H"),
    ({"policy": {"kind": "Oracle"}}, "policy.kind"),
    ({"env": {"p_min": 1.5}}, "env"),
    ({"run": {"seeds": []}}, "run.seeds"),
    ({"policy": {"k": 40}}, "policy.k"),
    ({"env": {"kind": "latent"}, "discovery": {}}, "discovery"),
    ({"policy": {"theory": {"extra": 1}}}, "policy.theory.extra"),
    ({"run": None}, "run"),
])
def test_config_rejections(data, path):
    with pytest.raises(ConfigError) as info:
        parse_config(data)
    assert info.value.key_path == path


def test_config_digest_stable():
    a, b = parse_config(SMALL), parse_config(json.loads(json.dumps(SMALL)))
    assert a.digest() == b.digest()
    assert a.digest() != parse_config({**SMALL, "run": {"T": 11}}).digest()


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


# --- run ----------------------------------------------------------------

def test_run_smoke(tmp_path):
    out = tmp_path / "out"
    res = invoke("run", "--config", write(tmp_path / "c.json", SMALL), "--out", str(out))
    assert res.exit_code == 0, res.output
    rows = list(csv.reader((out / "trace_seed0.csv").open()))
    assert len(rows) == 11
    summary = json.loads((out / "summary.json").read_text())
    assert summary["per_seed"][0]["T"] == 10
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == parse_config(SMALL).digest()
    assert set(man["files"]) == {"trace_seed0.csv", "summary.json"}


def test_run_twice_identical_and_replay_from_manifest(tmp_path):
    cfg = write(tmp_path / "c.json", {**SMALL, "run": {"T": 60, "seeds": [1, 2]},
                                      "discovery": {"metric_kind": "UCB", "budget": 0.1}})
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert invoke("run", "--config", cfg, "--out", str(a)).exit_code == 0
    assert invoke("run", "--config", cfg, "--out", str(b)).exit_code == 0
    assert invoke("run", "--config", str(a / "manifest.json"), "--out", str(c)).exit_code == 0
    for name in ("trace_seed1.csv", "trace_seed2.csv", "summary.json", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_seed_offset(tmp_path):
    res = invoke("run", "--config", write(tmp_path / "c.json", SMALL), "--out", str(tmp_path / "o"),
                 "--seed-offset", "5")
    assert res.exit_code == 0
    assert (tmp_path / "o" / "trace_seed5.csv").exists()
    # the manifest records the effective seeds so a replay does not shift twice
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["seeds"] == [5] and man["config"]["run"]["seeds"] == [5]


def test_out_env_var(tmp_path):
    target = tmp_path / "from_env"
    res = invoke("run", "--config", write(tmp_path / "c.json", SMALL), env={cli.OUT_ENV_VAR: str(target)})
    assert res.exit_code == 0
    assert (target / "trace_seed0.csv").exists()


def test_run_rejects_grid_in_config(tmp_path):
    res = invoke("run", "--config", write(tmp_path / "c.json", {"policy": {"alpha": [0.0, 0.1]}}),
                 "--out", str(tmp_path / "o"))
    assert res.exit_code == 1
    assert "policy.alpha" in res.output and "sweep" in res.output


def test_run_missing_config(tmp_path):
    assert invoke("run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)).exit_code == 1


def test_internal_error_exit_code_and_partial_trace(tmp_path, monkeypatch):
    from casebandit import bandit as bd
    from casebandit.errors import ConsistencyError

    real, calls = bd.observe, {"n": 0}

    def flaky(*a, **kw):
        calls["n"] += 1
        if calls["n"] == 3:
            raise ConsistencyError("injected")
        return real(*a, **kw)

    monkeypatch.setattr(bd, "observe", flaky)
    out = tmp_path / "o"
    res = invoke("run", "--config", write(tmp_path / "c.json", {**SMALL, "run": {"T": 40}}), "--out", str(out))
    assert res.exit_code == 2
    assert (out / "trace_seed0.partial.csv").exists()


# --- sweep ----------------------------------------------------------------

def test_sweep_cross_product(tmp_path):
    out = tmp_path / "s"
    res = invoke("sweep", "--config", write(tmp_path / "c.json", {**SMALL, "run": {"T": 20, "seeds": [0, 1]}}),
                 "--grid", '{"policy.alpha": [0.0, 0.1]}', "--out", str(out))
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert len(rows) == 4
    assert {(r["policy.alpha"], r["seed"]) for r in rows} == {("0.0", "0"), ("0.0", "1"), ("0.1", "0"), ("0.1", "1")}
    assert json.loads((out / "manifest.json").read_text())["grid"] == {"policy.alpha": [0.0, 0.1]}


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = write(tmp_path / "c.json", {**SMALL, "run": {"T": 20, "seeds": [0, 1]}})
    grid = '{"policy.kind": ["NPCBR", "Random"]}'
    assert invoke("sweep", "--config", cfg, "--grid", grid, "--out", str(tmp_path / "a")).exit_code == 0
    assert invoke("sweep", "--config", cfg, "--grid", grid, "--out", str(tmp_path / "b"),
                  "--jobs", "2").exit_code == 0
    assert (tmp_path / "a" / "sweep.csv").read_bytes() == (tmp_path / "b" / "sweep.csv").read_bytes()


@pytest.mark.parametrize("grid, needle", [
    ("{}", "empty"),
    ('{"policy.H": [1, 2]}', "grid.policy.H"),
    ('{"policy.alpha": 0.1}', "grid.policy.alpha"),
    ("[1]", "grid"),
    ("{oops", "invalid JSON"),
])
def test_sweep_grid_errors(tmp_path, grid, needle):
    res = invoke("sweep", "--config", write(tmp_path / "c.json", SMALL), "--grid", grid, "--out", str(tmp_path))
    assert res.exit_code == 1 and needle in res.output


def test_sweep_run_cap(tmp_path):
    res = invoke("sweep", "--config", write(tmp_path / "c.json", SMALL), "--grid",
                 json.dumps({"policy.alpha": [0.1 * i for i in range(11)]}), "--max-runs", "10",
                 "--out", str(tmp_path))
    assert res.exit_code == 1 and "11" in res.output


# --- report ----------------------------------------------------------------

def test_report_mean_and_sd(tmp_path):
    out = tmp_path / "o"
    invoke("run", "--config", write(tmp_path / "c.json", {**SMALL, "run": {"T": 30, "seeds": [0, 1, 2, 3, 4],
                                                                          "window": 10}}), "--out", str(out))
    traces = [str(out / f"trace_seed{s}.csv") for s in range(5)]
    res = invoke("report", *traces, "--out", str(tmp_path / "rep"))
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader((tmp_path / "rep" / "success_curve.csv").open()))
    assert len(rows) == 21 and rows[0]["step"] == "10" and rows[0]["n"] == "5"
    reg = list(csv.DictReader((tmp_path / "rep" / "regret_curve.csv").open()))
    assert len(reg) == 30 and any(float(r["sd"]) > 0 for r in reg)


def test_report_single_trace_zero_sd(tmp_path):
    out = tmp_path / "o"
    invoke("run", "--config", write(tmp_path / "c.json", SMALL), "--out", str(out))
    res = invoke("report", str(out / "trace_seed0.csv"), "--out", str(tmp_path / "rep"))
    assert res.exit_code == 0
    for name in ("success_curve.csv", "regret_curve.csv"):
        assert all(float(r["sd"]) == 0.0 for r in csv.DictReader((tmp_path / "rep" / name).open()))


def test_report_refuses_mixed_configs(tmp_path):
    invoke("run", "--config", write(tmp_path / "a.json", SMALL), "--out", str(tmp_path / "a"))
    other = {**SMALL, "policy": {"m": 16, "d_out": 8, "alpha": 0.5}}
    invoke("run", "--config", write(tmp_path / "b.json", other), "--out", str(tmp_path / "b"))
    res = invoke("report", str(tmp_path / "a" / "trace_seed0.csv"), str(tmp_path / "b" / "trace_seed0.csv"),
                 "--out", str(tmp_path / "rep"))
    assert res.exit_code == 1 and "policy.alpha" in res.output


# --- validate ----------------------------------------------------------------

def test_validate_passes_and_is_repeatable():
    a, b = invoke("validate"), invoke("validate")
    assert a.exit_code == 0 and "all suites passed" in a.output
    assert a.output == b.output
    assert a.output.count("PASS") == 4


def test_validate_injected_fault():
    res = invoke("validate", "--inject-inverse-fault")
    assert res.exit_code == 2
    assert any(line.startswith("FAIL sherman-morrison") for line in res.output.splitlines())


def test_version():
    assert invoke("--version").exit_code == 0
