import csv
import json
import subprocess
import sys

import pytest

from navmem.cli import main, replay_log


def rows(path):
    lines = [l for l in open(path) if not l.startswith("#")]
    return list(csv.DictReader(lines))


def test_gen_scenes_manifest_and_stable_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-scenes", "--count", "2", "--out-dir", str(a)]) == 0
    assert main(["gen-scenes", "--count", "2", "--out-dir", str(b)]) == 0
    manifest = json.loads((a / "manifest.json").read_text())
    assert [e["file"] for e in manifest["scenes"]] == ["scene_0.json", "scene_1.json"]
    assert "build" in manifest and "run_config" in manifest
    assert (a / "scene_1.json").read_bytes() == (b / "scene_1.json").read_bytes()


def test_run_and_replay(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--seed", "0", "--seed", "3", "--out-dir", str(out)]) == 0
    assert sorted(p.name for p in out.glob("episode_*.jsonl")) == ["episode_0.jsonl", "episode_3.jsonl"]
    summary = rows(out / "summary.csv")
    assert len(summary) == 1 and float(summary[0]["sr"]) <= 1.0
    assert (out / "summary.csv").read_text().startswith("# build:")
    assert main(["replay", str(out / "episode_3.jsonl")]) == 0
    same, original, replayed = replay_log(out / "episode_0.jsonl")
    assert same


def test_replay_detects_tampering(tmp_path):
    out = tmp_path / "run"
    main(["run", "--seed", "1", "--out-dir", str(out)])
    log = out / "episode_1.jsonl"
    lines = log.read_text().splitlines()
    lines[-1] = lines[-1].replace('"success":', '"success" :')
    log.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(log)]) == 3


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seeds": [2], "system": {"mode": "baseline-recompute", "step_cap": 7}}))
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--mode", "offload-per-decode", "--out-dir", str(out)]) == 0
    header = json.loads((out / "episode_2.jsonl").read_text().splitlines()[0])
    assert header["run_config"]["system"]["mode"] == "offload-per-decode"
    assert header["run_config"]["system"]["step_cap"] == 7


def test_bench_budget_and_ablate(tmp_path):
    out = tmp_path / "b"
    assert main(["bench-budget", "--seeds", "2", "--fractions", "0.5", "1.0", "--out-dir", str(out)]) == 0
    assert [r["budget_fraction"] for r in rows(out / "bench_budget.csv")] == ["0.5", "1.0"]
    assert main(["bench-budget", "--seeds", "1", "--budgets", "4194304", "--out-dir", str(out)]) == 0
    assert len(rows(out / "bench_budget.csv")) == 1
    assert main(["ablate", "--seeds", "2", "--out-dir", str(out)]) == 0
    assert [r["row"] for r in rows(out / "ablation.csv")] == ["1", "2", "3", "4"]


@pytest.mark.parametrize("argv,code", [
    ([], 1),
    (["run", "--mode", "vllm"], 1),
    (["frobnicate"], 1),
    (["run", "--budget-bytes", "10"], 2),
    (["run", "--budget-bytes", "-5"], 2),
    (["run", "--config", "/nonexistent/cfg.json"], 1),
    (["replay", "/nonexistent/log.jsonl"], 1),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + (["--out-dir", str(tmp_path)] if argv[:1] == ["run"] else [])) == code


def test_bad_config_key_is_infeasible(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"system": {"warp_drive": True}}))
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "navmem.cli", "run", "--budget-bytes", "10", "--out-dir",
                           str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "infeasible" in proc.stderr
