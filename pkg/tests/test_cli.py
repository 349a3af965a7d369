"""End-to-end command-line checks through the real entry point."""

import json

import pytest

from phoenix.cli import main


def run_cli(*argv):
    return main([str(a) for a in argv])


SCENARIO = """
seed 3
bulk 40 c
random-ops 50
checkpoint
random-ops 30
verify
"""

FAULTY = SCENARIO.replace("checkpoint\n",
                          "checkpoint\nfault 1..5 1 bitflip\nevict\n")


def test_init_run_verify(tmp_path):
    d = tmp_path / "store"
    sc = tmp_path / "s.txt"
    sc.write_text(SCENARIO)
    rep = tmp_path / "events.jsonl"
    assert run_cli("init", d, "--pages", 32) == 0
    assert run_cli("run", d, "--scenario", sc, "--report", rep) == 0
    assert run_cli("verify", d) == 0
    lines = [json.loads(l) for l in rep.read_text().splitlines()]
    assert all("event" in doc for doc in lines)
    assert any(doc["event"] == "checkpoint" for doc in lines)


def test_inject_recovers_and_reports(tmp_path, capsys):
    d = tmp_path / "store"
    sc = tmp_path / "s.txt"
    sc.write_text(FAULTY)
    assert run_cli("init", d, "--pages", 32) == 0
    assert run_cli("inject", d, "--scenario", sc, "--seed", 9) == 0
    out = capsys.readouterr().out
    assert run_cli("verify", d) == 0


def test_checkpoint_every_inserts_checkpoints(tmp_path):
    d = tmp_path / "store"
    sc = tmp_path / "s.txt"
    puts = "".join(f"put z{i:03d} v{i}\n" for i in range(35))
    sc.write_text("seed 1\n" + puts + "verify\n")
    rep = tmp_path / "events.jsonl"
    assert run_cli("init", d, "--pages", 32) == 0
    assert run_cli("run", d, "--scenario", sc, "--checkpoint-every", 10,
                   "--report", rep) == 0
    lines = [json.loads(l) for l in rep.read_text().splitlines()]
    assert sum(doc["event"] == "checkpoint" for doc in lines) >= 3


def test_bench_smoke(tmp_path, capsys):
    rep = tmp_path / "bench.json"
    assert run_cli("bench", "--pages", 300, "--keys", 400,
                   "--recoveries", 5, "--io-delay-us", 1,
                   "--report", rep) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["single_page"]["mean_backup_reads"] <= 1
    assert doc["single_page"]["max_log_reads"] <= 100
    assert doc["media_recover_s"] > 0
