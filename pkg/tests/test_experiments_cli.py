import textwrap

import pytest
import yaml

from qaoi import cli, experiments
from qaoi.experiments import ConfigError, format_csv, parse_config, run_experiment
from qaoi.lp import LpSolution, LpStatus, SolverFailure

BASE = """
system:
  N: 3
  p: 0.9
  lambda: 0.9
  gamma_tr: 0.5
  gamma_sm: 0.3
  sources:
    - {kind: random_arrival, mu: 0.6, rho: 0.7, rho_bar: 0.4}
    - {kind: generate_at_will, rho: 0.7, rho_bar: 0.4}
sweep: {param: gamma_tr, values: [0.2, 0.5]}
policies: [optimal, baseline]
sim: {replications: 50, seed: 1, tail_tolerance: 1e-4}
"""


def doc(**changes):
    d = experiments.parse_yaml(BASE)
    d.update(changes)
    return d


def write(tmp_path, d, name="c.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(d))
    return str(path)


def test_unknown_keys_rejected():
    d = doc()
    d["sweep"]["valeus"] = [1]
    with pytest.raises(ConfigError, match="valeus"):
        parse_config(d)
    d = doc()
    d["system"]["sources"][0]["typo"] = 1
    assert experiments.lint(d)


def test_mu_rules_and_grid_domains():
    d = doc()
    del d["system"]["sources"][0]["mu"]
    assert any("mu is required" in e for e in experiments.lint(d))
    d = doc(sweep={"param": "p", "values": [0.5, 1.5]})
    assert any("p=1.5" in e for e in experiments.lint(d))
    d = doc(sweep={"param": "source_count", "values": [2, 2.5]})
    assert experiments.lint(d)


def test_empty_policy_list_rejected():
    with pytest.raises(ConfigError):
        parse_config(doc(policies=[]))


def test_scientific_notation_without_dot(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(BASE.replace("tail_tolerance: 1e-4", "tail_tolerance: 1e-6"))
    assert experiments.load_config(path).sim.tail_tolerance == 1e-6


def test_two_points_two_policies_four_rows():
    rows = run_experiment(parse_config(doc()))
    assert [(r.sweep_param, r.policy) for r in rows] == [
        (0.2, "optimal"), (0.2, "baseline"), (0.5, "optimal"), (0.5, "baseline")]
    assert all(r.status == "ok" for r in rows)
    text = format_csv(rows)
    assert text.splitlines()[0] == ",".join(experiments.CSV_HEADER)
    assert len(text.splitlines()) == 5


def test_byte_identical_rerun_and_thread_order():
    a = format_csv(run_experiment(parse_config(doc())))
    b = format_csv(run_experiment(parse_config(doc(), threads=2)))
    assert a == b


def test_source_count_sweep_cycles_sources():
    cfg = parse_config(doc(sweep={"param": "source_count", "values": [1, 3]},
                           policies=["truncated"]))
    kinds = [[s.kind.value for s in spec.sources] for _, spec in cfg.points()]
    assert kinds == [["random_arrival"], ["random_arrival", "generate_at_will", "random_arrival"]]


def test_joint_guard():
    d = doc(sweep={"param": "source_count", "values": [2, 3]})
    d["system"]["N"] = 20  # 882^2 states pass, 882^3 do not
    with pytest.raises(ConfigError, match="truncated and lower_bound"):
        parse_config(d)
    assert parse_config(d, allow_large_joint=True).allow_large_joint


def test_failures_are_recorded(monkeypatch):
    def boom(spec):
        raise SolverFailure(LpSolution(LpStatus.NUMERICAL_FAILURE, None, 0, 1, 1), "no luck")

    monkeypatch.setattr(experiments, "solve_joint", boom)
    rows = run_experiment(parse_config(doc()))
    assert [r.status.split(":")[0] for r in rows] == ["solver_failure", "ok"] * 2


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    good = write(tmp_path, doc())
    out = tmp_path / "r.csv"
    assert cli.main(["validate", "--config", good]) == 0
    assert cli.main(["sweep", "--config", good, "--out", str(out), "--seed", "3"]) == 0
    first = out.read_bytes()
    assert cli.main(["sweep", "--config", good, "--out", str(out), "--seed", "3",
                     "--threads", "2"]) == 0
    assert out.read_bytes() == first

    bad = write(tmp_path, doc(policies=["optimal", "magic"]), "bad.yaml")
    assert cli.main(["validate", "--config", bad]) == 1
    assert cli.main(["sweep", "--config", bad]) == 1
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.yaml")]) == 1

    pol = tmp_path / "pol.txt"
    assert cli.main(["solve", "--config", good, "--out", str(pol)]) == 0
    assert cli.main(["simulate", "--config", good, "--policy", str(pol)]) == 0
    assert cli.main(["simulate", "--config", good, "--policy", str(tmp_path / "none.txt")]) == 1

    def boom(spec):
        raise SolverFailure(LpSolution(LpStatus.NUMERICAL_FAILURE, None, 0, 1, 1), "no luck")

    monkeypatch.setattr(cli, "solve_joint", boom)
    assert cli.main(["solve", "--config", good, "--out", str(pol)]) == 2
    monkeypatch.setattr(experiments, "solve_joint", boom)
    assert cli.main(["sweep", "--config", good, "--out", str(out)]) == 3
