import json
from pathlib import Path

import pytest

from spiralsim.cli import main, parse_seeds


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_tune_shard_size(capsys):
    code, out, _ = run_cli(capsys, "tune", "--network", "2000", "--shard-size", "100",
                           "--f", "0.25", "--fb", "0.125")
    d = json.loads(out)
    assert code == 0 and d["group_size"] == 5 and d["solved_for"] == "group_size"
    assert set(d["failure"]) == {"case1", "case2", "case3", "per_group", "system"}
    assert d["failure"]["system"] <= d["eps"]


def test_tune_group_size(capsys):
    code, out, _ = run_cli(capsys, "tune", "--network", "3000", "--group-size", "2",
                           "--f", "0.25", "--fb", "0.125")
    assert code == 0 and json.loads(out)["shard_size"] == 300


def test_tune_infeasible(capsys):
    code, out, err = run_cli(capsys, "tune", "--network", "100", "--shard-size", "100",
                             "--f", "0.5", "--fb", "0.5")
    assert code == 2 and "infeasible" in err and out == ""


def test_tune_needs_exactly_one_size(capsys):
    assert run_cli(capsys, "tune", "--network", "100")[0] == 4
    assert run_cli(capsys, "tune", "--network", "100", "--shard-size", "10", "--group-size", "2")[0] == 4


def test_tune_rejects_non_divisor(capsys):
    code, _, err = run_cli(capsys, "tune", "--network", "1000", "--shard-size", "300")
    assert code == 4 and "divide" in err


def test_tables_parameter_rows(capsys):
    code, out, _ = run_cli(capsys, "tables", "--which", "paper-params")
    rows = [line.split(",") for line in out.splitlines()]
    assert rows[0] == ["network_size", "shard_size", "group_size", "failure_prob"]
    assert [r[2] for r in rows[1:]] == ["4", "5", "6", "6"]


def test_tables_baseline(capsys):
    code, out, _ = run_cli(capsys, "tables", "--which", "baseline")
    assert [line.split(",")[1] for line in out.splitlines()[1:]] == ["420", "500", "600", "600"]


def test_tables_are_byte_stable(capsys):
    a = run_cli(capsys, "tables", "--which", "reference")[1]
    b = run_cli(capsys, "tables", "--which", "reference")[1]
    assert a == b and len(a.splitlines()) == 46


def test_baseline_fallback(capsys):
    code, out, _ = run_cli(capsys, "baseline", "--network", "800", "--f", str(1 / 3))
    assert code == 0 and json.loads(out)["shard_size"] == 800


def test_simulate_and_replay(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "simulate", "--scenario", "fork_elimination", "--out", str(tmp_path))
    assert code == 0
    for name in ("report.json", "metrics.csv", "trace.csv"):
        assert (tmp_path / name).is_file()
    code, out, _ = run_cli(capsys, "replay", "--trace", str(tmp_path / "trace.csv"))
    assert code == 0 and out.startswith("pass")


def test_replay_detects_injected_conflict(capsys, tmp_path):
    assert run_cli(capsys, "simulate", "--scenario", "fork_elimination", "--out", str(tmp_path))[0] == 0
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    # turn the discard of the losing sibling into a second finalization
    i = next(i for i, l in enumerate(lines) if ",Prepared,Discarded," in l)
    lines[i] = lines[i].replace(",Prepared,Discarded,", ",Prepared,Finalized,")
    (tmp_path / "bad.csv").write_text("\n".join(lines) + "\n")
    code, out, _ = run_cli(capsys, "replay", "--trace", str(tmp_path / "bad.csv"))
    assert code == 3 and f"line {i + 1}:" in out and "conflicting" in out


def test_replay_truncated_trace(capsys, tmp_path):
    assert run_cli(capsys, "simulate", "--scenario", "fork_elimination", "--out", str(tmp_path))[0] == 0
    text = (tmp_path / "trace.csv").read_text()
    (tmp_path / "cut.csv").write_text(text[: len(text) // 2])
    assert run_cli(capsys, "replay", "--trace", str(tmp_path / "cut.csv"))[0] == 4
    assert run_cli(capsys, "replay", "--trace", str(tmp_path / "missing.csv"))[0] == 4


def test_simulate_violation_exit_code(capsys, tmp_path):
    scen = {"n_nodes": 30, "shard_size": 10, "group_size": 3, "run_ticks": 800,
            "adversary": {"placement": "pinned", "abc_votes_invalid": True, "pinned": [
                {"shard": 0, "byzantine": 4, "abc": 3, "byzantine_leader": True,
                 "behavior": "invalid_tx"}]}}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(scen))
    code, _, err = run_cli(capsys, "simulate", "--scenario", str(p), "--out", str(tmp_path / "o"))
    assert code == 3 and "violation" in err
    assert (tmp_path / "o" / "trace.csv").is_file()


@pytest.mark.parametrize("content", ["{not json", '{"n_nodes": 30}', '{"n_nodes": 30, "shard_size": 7, '
                                     '"group_size": 1, "run_ticks": 10}'])
def test_simulate_bad_input(capsys, tmp_path, content):
    p = tmp_path / "s.json"
    p.write_text(content)
    assert run_cli(capsys, "simulate", "--scenario", str(p), "--out", str(tmp_path / "o"))[0] == 4


def test_seed_env_override(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("SPIRALSIM_SEED", "42")
    assert run_cli(capsys, "simulate", "--scenario", "pipelining", "--out", str(tmp_path))[0] == 0
    assert json.loads((tmp_path / "report.json").read_text())["seed"] == 42
    monkeypatch.setenv("SPIRALSIM_SEED", "x")
    assert run_cli(capsys, "simulate", "--scenario", "pipelining", "--out", str(tmp_path))[0] == 4


def test_batch(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "simulate", "--scenario", "pipelining", "--out", str(tmp_path),
                           "--batch", "3-5", "--workers", "1")
    assert code == 0 and json.loads(out) == {"failed_seeds": [], "ok": True, "runs": 3}
    seeds = [json.loads((tmp_path / f"seed_{s}" / "report.json").read_text())["seed"] for s in (3, 4, 5)]
    assert seeds == [3, 4, 5]


def test_parse_seeds():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("2-4,9") == [2, 3, 4, 9]


# -- regression goldens (outputs of this implementation, checked in) ------------------------

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("which", ["reference", "paper-params", "baseline"])
def test_tables_match_golden(capsys, which):
    out = run_cli(capsys, "tables", "--which", which)[1]
    assert out == (GOLDEN / f"table_{which}.csv").read_text()


def test_fork_elimination_matches_golden(capsys, tmp_path):
    assert run_cli(capsys, "simulate", "--scenario", "fork_elimination", "--out", str(tmp_path))[0] == 0
    for name in ("trace.csv", "report.json"):
        assert (tmp_path / name).read_bytes() == (GOLDEN / f"fork_elimination_{name}").read_bytes()
