import io
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from varmix import cli, harness
from varmix.checks import CHECKS
from varmix.harness import ConfigError, parse_config
from varmix.traces import RegretTrace

MINIMAL = """
kind = "bandit"
horizon = 50
seed_count = 2

[[agent]]
algorithm = "oful"
"""


def test_minimal_bandit_config_parses():
    cfg = parse_config(MINIMAL)
    assert cfg.kind == "bandit"
    assert cfg.seed_list() == [0, 1]
    assert cfg.env["dim"] == 8
    assert cfg.agents[0]["lam"] == 1.0


def test_delta_out_of_range_names_field_and_constraint():
    with pytest.raises(ConfigError) as exc:
        parse_config(MINIMAL + "delta = 1.5\n")
    (msg,) = exc.value.errors
    assert msg.startswith("agent[0].delta")
    assert "(0.0, 1.0)" in msg and "1.5" in msg


def test_every_error_is_reported():
    text = """
kind = "bandit"
horizon = "long"
colour = 3
[env]
dim = 0
sigma_kind = "wavy"
[[agent]]
algorithm = "greedy"
lam = -1.0
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    paths = {e.split(":")[0] for e in exc.value.errors}
    assert {"horizon", "colour", "env.dim", "env.sigma_kind", "agent[0].algorithm", "agent[0].lam"} <= paths


def test_syntax_and_kind_errors():
    with pytest.raises(ConfigError, match="syntax"):
        parse_config("kind = ")
    with pytest.raises(ConfigError, match="kind"):
        parse_config('kind = "poker"\nhorizon = 3\n')
    with pytest.raises(ConfigError, match="seed_count"):
        parse_config(MINIMAL.replace("seed_count = 2", "seeds = [1]\nseed_count = 2"))


def test_concentration_rejects_agents():
    with pytest.raises(ConfigError, match="no agents"):
        parse_config('kind = "concentration"\nhorizon = 10\n[[agent]]\nalgorithm = "oful"\n')


finite = st.floats(0.01, 10.0, allow_nan=False)


@st.composite
def bandit_configs(draw):
    R = draw(st.floats(0.1, 2.0))
    agents = []
    for i in range(draw(st.integers(1, 3))):
        agents.append({"name": f"a{i}", "algorithm": draw(st.sampled_from(["oful", "weighted-oful"])),
                       "lam": draw(finite), "delta": draw(st.floats(0.001, 0.999)),
                       "param_bound": draw(st.floats(0.0, 5.0)), "noise_bound": draw(finite)})
    use_list = draw(st.booleans())
    return {
        "kind": "bandit", "horizon": draw(st.integers(1, 10**6)), "base_seed": draw(st.integers(0, 2**40)),
        "seeds": draw(st.lists(st.integers(0, 1000), unique=True, min_size=1, max_size=5)) if use_list else [],
        "seed_count": 0 if use_list else draw(st.integers(0, 50)),
        "out": draw(st.text("abc/_-", min_size=1, max_size=12)),
        "env": {"seed": draw(st.integers(0, 99)), "dim": draw(st.integers(1, 32)),
                "n_actions": draw(st.integers(1, 50)), "param_bound": draw(st.floats(0.0, 1.0)),
                "noise_bound": R, "sigma_kind": draw(st.sampled_from(["constant", "cyclic", "action"])),
                "sigma_values": draw(st.lists(st.floats(0.0, R), min_size=1, max_size=4))},
        "agent": agents,
    }


@given(bandit_configs())
def test_round_trip_is_identity(data):
    cfg = harness.config_from_dict(data)
    again = parse_config(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()
    assert again.fingerprint() == cfg.fingerprint()


@pytest.mark.parametrize("kind", harness.KINDS)
def test_defaults_round_trip(kind):
    cfg = harness.default_config(kind)
    assert parse_config(cfg.dumps()) == cfg


def test_fingerprint_ignores_output_path_only():
    a = parse_config(MINIMAL)
    b = harness.config_from_dict({**a.to_dict(), "out": "elsewhere"})
    c = harness.config_from_dict({**a.to_dict(), "horizon": 51})
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


# summarize -------------------------------------------------------------------------------


def trace(seed, values):
    values = np.asarray(values, dtype=float)
    return RegretTrace(seed, {"t": np.arange(1, len(values) + 1), "cum": values}, "cum")


def test_single_trace_summary():
    header, rows = harness.summarize([trace(0, [0.5, 1.0, 4.0])])
    assert header == ["t", "n", "mean", "std", "min", "max"]
    assert [r[2] for r in rows] == [0.5, 1.0, 4.0]
    assert all(r[3] == 0.0 for r in rows)


def test_two_constant_traces():
    _, rows = harness.summarize([trace(0, [1.0] * 4), trace(1, [3.0] * 4)])
    assert all(r[2] == 2.0 and r[4] == 1.0 and r[5] == 3.0 and r[1] == 2 for r in rows)


def test_twenty_random_traces_match_two_pass_oracle(rng):
    M = np.cumsum(rng.random((20, 30)), axis=1)
    _, rows = harness.summarize([trace(i, m) for i, m in enumerate(M)])
    for j, row in enumerate(rows):
        col = [float(x) for x in M[:, j]]
        mean = sum(col) / len(col)
        var = sum((x - mean) ** 2 for x in col) / len(col)
        assert row[2] == pytest.approx(mean, rel=1e-12)
        assert row[3] == pytest.approx(var**0.5, rel=1e-9)


def test_summarize_rejects_mismatched_grids():
    with pytest.raises(ValueError):
        harness.summarize([trace(0, [1, 2]), trace(1, [1, 2, 3])])
    assert harness.summarize([]) == ([], [])


# run_suite -------------------------------------------------------------------------------


SMALL_EPISODIC = """
kind = "episodic"
horizon = 6
seed_count = 3
[env]
n_states = 3
n_actions = 2
horizon = 2
[[agent]]
algorithm = "ucrl-vtr+"
[[agent]]
algorithm = "ucrl-vtr"
"""


def read_all(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))}


def test_parallel_output_is_byte_identical(tmp_path):
    cfg = parse_config(SMALL_EPISODIC)
    log = io.StringIO()
    assert harness.run_suite(cfg, 1, str(tmp_path / "one"), log) == 0
    assert harness.run_suite(cfg, 3, str(tmp_path / "three"), log) == 0
    one, three = read_all(tmp_path / "one"), read_all(tmp_path / "three")
    assert set(one) == {"ucrl-vtr+.csv", "ucrl-vtr+_summary.csv", "ucrl-vtr.csv", "ucrl-vtr_summary.csv", "run.json"}
    assert one == three
    lines = one["ucrl-vtr.csv"].decode().splitlines()
    assert lines[0] == "seed,k,episode_regret,cumulative_regret,min_sigma_bar,max_bonus,optimistic_flag"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0"] * 6 + ["1"] * 6 + ["2"] * 6


def test_zero_seeds_is_an_empty_success(tmp_path):
    cfg = parse_config(MINIMAL.replace("seed_count = 2", "seed_count = 0"))
    out = tmp_path / "none"
    assert harness.run_suite(cfg, 2, str(out), io.StringIO()) == 0
    assert not out.exists()


def test_concentration_suite_emits_coverage(tmp_path):
    cfg = parse_config('kind = "concentration"\nhorizon = 100\nseed_count = 1\n[env]\nreplicas = 40\n')
    log = io.StringIO()
    assert harness.run_suite(cfg, 2, str(tmp_path / "a"), log) == 0
    assert harness.run_suite(cfg, 1, str(tmp_path / "b"), log) == 0
    a = read_all(tmp_path / "a")
    assert a == read_all(tmp_path / "b")
    assert len(a["coverage.csv"].decode().splitlines()) == 41
    assert "violation fraction" in log.getvalue()


def test_io_failure_gives_nonzero_status(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = parse_config(MINIMAL)
    assert harness.run_suite(cfg, 1, str(blocker / "sub"), io.StringIO()) == 2


def test_per_seed_failure_is_isolated(tmp_path, monkeypatch):
    cfg = parse_config(MINIMAL.replace("seed_count = 2", "seed_count = 3").replace("horizon = 50", "horizon = 20"))
    real = harness.run_seed

    def flaky(cfg, env, agent, seed):
        if seed == 1:
            raise RuntimeError("boom")
        return real(cfg, env, agent, seed)

    monkeypatch.setattr(harness, "run_seed", flaky)
    log = io.StringIO()
    assert harness.run_suite(cfg, 1, str(tmp_path), log) == 1
    assert "seed 1 failed" in log.getvalue() and "boom" in log.getvalue()
    seeds = {ln.split(",")[0] for ln in (tmp_path / "oful.csv").read_text().splitlines()[1:]}
    assert seeds == {"0", "2"}


# CLI -------------------------------------------------------------------------------------


def test_cli_runs_config_with_overrides(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text(MINIMAL)
    out = tmp_path / "out"
    assert cli.main(["bandit", "--config", str(path), "--seeds", "1", "--base-seed", "3", "--out", str(out)]) == 0
    body = (out / "oful.csv").read_text().splitlines()
    assert len(body) == 51
    assert '"base_seed": 3' in (out / "run.json").read_text()


def test_cli_reports_config_errors(tmp_path, capsys):
    path = tmp_path / "c.toml"
    path.write_text(MINIMAL + "delta = 1.5\nlam = 0.0\n")
    assert cli.main(["bandit", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "agent[0].delta" in err and "agent[0].lam" in err
    assert cli.main(["episodic", "--config", str(path)]) == 2
    assert cli.main(["bandit", "--jobs", "0"]) == 2
    assert cli.main(["bandit", "--config", str(tmp_path / "missing.toml")]) == 2


def test_cli_check_passes(capsys):
    assert cli.main(["check"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == len(CHECKS) and "FAIL" not in out


def test_zero_param_bound_selects_the_environment_bound():
    cfg = harness.config_from_dict({"kind": "episodic", "horizon": 2, "seeds": [0],
                                    "env": {"n_states": 3, "n_actions": 2, "horizon": 2}, "agent": [{}]})
    assert cfg.agents[0]["param_bound"] == 0.0
    env = harness.build_env(cfg)
    assert env.param_bound > 1.0
    auto = harness.run_seed(cfg, env, cfg.agents[0], 0)
    explicit = harness.config_from_dict({**cfg.to_dict(), "agent": [{"param_bound": env.param_bound}]})
    same = harness.run_seed(explicit, env, explicit.agents[0], 0)
    assert auto.to_csv() == same.to_csv()


CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


@pytest.mark.parametrize("name", sorted(f for f in os.listdir(CONFIG_DIR) if f.endswith(".toml")))
def test_example_configs_parse(name):
    with open(os.path.join(CONFIG_DIR, name), encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    assert cfg.seed_list()
    harness.build_env(cfg) if cfg.kind != "concentration" else harness.scenario(cfg)


def test_csv_cells():
    from varmix.traces import fmt

    assert [fmt(True), fmt(3), fmt(0.1), fmt("R/sqrt(d)")] == ["1", "3", "0.10000000000000001", "R/sqrt(d)"]
    with pytest.raises(ValueError):
        fmt("a,b")
