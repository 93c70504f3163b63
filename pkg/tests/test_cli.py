import csv
import io
import json

import pytest

from bcmix import cli


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _config(tmp_path, **fields):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(fields))
    return str(path)


def test_elect(capsys):
    code, out, _ = _run(capsys, "elect", "--seed", "1")
    doc = json.loads(out)
    assert code == 0 and doc["verified"] and doc["mix_nodes"] == len(doc["cascade"]) >= 1


def test_mix_clean_round(capsys, tmp_path):
    msgs = tmp_path / "m.txt"
    msgs.write_bytes(b"hello\nworld\n")
    cfg = _config(tmp_path, n=2, batch_size=2)
    code, out, _ = _run(capsys, "mix", "--seed", "2", "--config", cfg, "--messages", str(msgs))
    doc = json.loads(out)
    assert code == 0 and doc["verdict"]["kind"] == "Clean"
    assert sorted(bytes.fromhex(m) for m in doc["messages_out"]) == [b"hello", b"world"]


def test_mix_fault_attributed(capsys, tmp_path):
    out_path = tmp_path / "round.json"
    code, _, _ = _run(capsys, "mix", "--seed", "3", "--inject-fault", "2:realtime_mix", "--out", str(out_path),
                      "--emit-transcript")
    doc = json.loads(out_path.read_text())
    assert code == 0
    assert doc["verdict"] == {"kind": "Malicious", "node": 2, "step": "realtime_mix"}
    assert doc["removed"] and "transcript" in doc
    assert (tmp_path / "round.json.trace.jsonl").exists()


def test_wrong_batch_size(capsys, tmp_path):
    msgs = tmp_path / "m.txt"
    msgs.write_bytes(b"only one\n")
    code, _, err = _run(capsys, "mix", "--seed", "1", "--messages", str(msgs))
    assert code == 2 and "expected 4 messages" in err


@pytest.mark.parametrize("spec", ["9:realtime_mix", "1:bogus", "x"])
def test_bad_fault_spec(capsys, spec):
    assert _run(capsys, "mix", "--seed", "1", "--inject-fault", spec)[0] == 2


def test_empty_dataset(capsys, tmp_path):
    data = tmp_path / "pools.csv"
    data.write_text("name,ips,hashrate_ehs,share\n")
    code, _, _ = _run(capsys, "elect", "--seed", "1", "--config", _config(tmp_path, dataset=str(data)))
    assert code == 2


@pytest.mark.parametrize("fields", [
    {"bogus": 1},
    {"vote_difficulty": 1e12},
    {"curve": "p256"},
    {"attacker_powers": [1.5]},
    {"n": 0},
])
def test_bad_config(capsys, tmp_path, fields):
    assert _run(capsys, "analyze", "poisson", "--config", _config(tmp_path, **fields))[0] == 2


def test_unknown_experiment(capsys):
    code, _, err = _run(capsys, "analyze", "nonsense", "--seed", "1")
    assert code == 2 and "poisson" in err


def test_ci_requires_seed(capsys, monkeypatch):
    monkeypatch.setenv("CI", "1")
    assert _run(capsys, "analyze", "poisson")[0] == 2
    assert _run(capsys, "analyze", "poisson", "--seed", "0")[0] == 0


def test_analyze_poisson(capsys):
    code, out, _ = _run(capsys, "analyze", "poisson", "--seed", "0")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and [r["window"] for r in rows] == ["10", "20", "30", "60"]
    assert float(rows[2]["expected_solutions"]) == pytest.approx(124e18 * 30 / (1e11 * 2**32))
    assert all(float(r["p_ge_1"]) >= float(r["p_ge_2"]) for r in rows)


def test_analyze_sybil_small(capsys, tmp_path):
    cfg = _config(tmp_path, trials=10, difficulties=[1e12], attacker_powers=[0.7480])
    code, out, _ = _run(capsys, "analyze", "sybil", "--seed", "0", "--config", cfg)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 1 and rows[0]["kind"] == "sybil"


def test_attack_cmix(capsys):
    code, out, _ = _run(capsys, "attack-cmix", "--seed", "4")
    doc = json.loads(out)
    assert code == 0 and doc["success"] and doc["commitments_verified"]


def test_attack_cmix_honest_only(capsys, tmp_path):
    code, out, _ = _run(capsys, "attack-cmix", "--seed", "4", "--config", _config(tmp_path, honest_only=True))
    doc = json.loads(out)
    assert code == 0 and not doc["success"] and doc["outputs_match_inputs"]


def test_parallel_trials_must_be_positive(capsys):
    assert _run(capsys, "analyze", "poisson", "--parallel-trials", "0")[0] == 2
