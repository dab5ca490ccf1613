import json

import pytest

from asyncnet import cli
from asyncnet.config import FIXTURES, ConfigError, config_from_dict, fixture_path, load_fixture, parse_config


def base():
    return json.loads(fixture_path("ring3_bernoulli").read_text())


def errors_of(data):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    return exc.value.errors


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_parse(name):
    cfg = load_fixture(name)
    assert cfg.n_agents == 3
    assert cfg.graph.is_connected()


def test_overfull_column_is_rejected_with_field_path():
    data = base()
    data["network"] = {"n_agents": 3, "edges": [[0, 1], [2, 1], [1, 0], [1, 2]]}
    data["combination_model"] = {"links": [
        {"from": 0, "to": 1, "type": "bernoulli_link", "eta": 0.5, "a": 0.6},
        {"from": 2, "to": 1, "type": "bernoulli_link", "eta": 0.5, "a": 0.6},
        {"from": 1, "to": 0, "type": "bernoulli_link", "eta": 0.5, "a": 0.5},
        {"from": 1, "to": 2, "type": "bernoulli_link", "eta": 0.5, "a": 0.5},
    ]}
    (path, msg), = errors_of(data)
    assert "combination_model" in path and "links[0]" in path and "links[1]" in path
    assert "1.2" in msg


def test_zero_bernoulli_probability_is_rejected():
    data = base()
    data["step_model"]["q"] = 0
    assert errors_of(data)[0][0] == "step_model.q"


def test_unknown_keys_are_rejected():
    data = base()
    data["run"]["trails"] = 3
    data["extra"] = 1
    paths = [p for p, _ in errors_of(data)]
    assert "extra" in paths


def test_nested_unknown_key_reports_path():
    data = base()
    data["run"]["trails"] = 3
    assert errors_of(data) == [("run.trails", "unknown key")]


def test_covariance_must_be_positive_definite():
    data = base()
    data["cost"]["R_u"] = {"diag": [1.0, -1.0]}
    assert errors_of(data)[0][0] == "cost.R_u"


def test_parse_error_reports_line_and_column(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "network": {\n    "n_agents": 3,,\n')
    with pytest.raises(ConfigError, match=r"line 3, column 19"):
        parse_config(p)


def test_complex_minimizer_and_per_agent_noise():
    data = base()
    data["cost"]["sigma_n_sq"] = [0.01, 0.02, 0.03]
    data["noise"] = {"method": "analytic"}
    cfg = config_from_dict(data)
    assert cfg.costs[0].w_opt[1] == 0.8j
    assert cfg.noise().sigma_v_sq == pytest.approx(0.06)
    assert cfg.noise().alpha == pytest.approx(2.0)


def test_stability_exit_codes(tmp_path, capsys):
    assert cli.main(["stability", "--config", "ring3_bernoulli", "--out", str(tmp_path / "a")]) == 0
    assert "beta=0.915" in capsys.readouterr().out
    assert cli.main(["stability", "--config", "ring3_beta", "--out", str(tmp_path / "b")]) == 0
    data = base()
    data["step_model"] = {"type": "constant", "mu": 0.5}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(data))
    assert cli.main(["stability", "--config", str(p), "--out", str(tmp_path / "c")]) == 1


def test_usage_and_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["stability", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["verify", "nonsense", "--config", "ring3_bernoulli"])
    assert exc.value.code == 2
    data = base()
    data["step_model"]["q"] = 0
    p = tmp_path / "q.json"
    p.write_text(json.dumps(data))
    assert cli.main(["simulate", "--config", str(p)]) == 2
    assert "step_model.q" in capsys.readouterr().err


def test_simulate_is_byte_reproducible(tmp_path):
    args = ["simulate", "--config", "ring3_bernoulli", "--trials", "20", "--horizon", "300"]
    cli.main(args + ["--out", str(tmp_path / "a")])
    cli.main(args + ["--out", str(tmp_path / "b")])
    for name in ("timeseries.csv", "network_timeseries.csv", "trials.csv", "summary.csv", "network.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "timeseries.csv").read_text().splitlines()[0]
    assert header == "iter,agent,msd,msd_se,disagreement,disagreement_se,m4,m4_se"


def test_simulate_horizon_zero(tmp_path):
    out = tmp_path / "z"
    assert cli.main(["simulate", "--config", "ring3_bernoulli", "--horizon", "0", "--out", str(out)]) == 0
    rows = (out / "timeseries.csv").read_text().splitlines()
    assert len(rows) == 1 + 3
    assert "msd_max_initial,1.0" in (out / "summary.csv").read_text()


def test_seed_override_changes_results(tmp_path):
    base_args = ["simulate", "--config", "ring3_bernoulli", "--trials", "3", "--horizon", "20"]
    cli.main(base_args + ["--out", str(tmp_path / "a")])
    cli.main(base_args + ["--out", str(tmp_path / "b"), "--seed", "7"])
    assert (tmp_path / "a" / "timeseries.csv").read_bytes() != (tmp_path / "b" / "timeseries.csv").read_bytes()
    assert "7," in (tmp_path / "b" / "trials.csv").read_text().splitlines()[1]


def test_verify_lemmas_and_recursion_pass(tmp_path, capsys):
    assert cli.main(["verify", "lemmas", "--config", "ring3_bernoulli", "--out", str(tmp_path)]) == 0
    assert cli.main(["verify", "recursion", "--config", "ring3_bernoulli", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert (tmp_path / "verify_lemmas.csv").exists()


def test_verify_bounds_on_unstable_config_observes_divergence(tmp_path, capsys):
    assert cli.main(["verify", "bounds", "--config", "unstable_large_step", "--out", str(tmp_path)]) == 0
    assert "divergence flagged" in capsys.readouterr().out


def test_moments_command(tmp_path):
    assert cli.main(["moments", "--config", "ring3_bernoulli", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "step_moments.csv").read_text().splitlines()
    assert lines[0] == "agent,m1,m2,m4,c_mu" and len(lines) == 4
