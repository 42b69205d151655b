import json
import subprocess
import sys

import pytest

from mdphom import cli
from mdphom import experiments as ex
from mdphom.core import InconsistentPartition, Partition
from mdphom.partitioning import PartitionResult, ProjectionError


def run(tmp_path, *args, config=None):
    argv = list(args) + ["--out-dir", str(tmp_path)]
    if config is not None:
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return cli.main(argv)


SMALL_GRID = {"block_size_thresholds": [0, 1], "confidence_thresholds": [0.0, 0.9], "seeds": 2,
              "base": {"collector": {"episodes": 200}, "eval_episodes": 10}}


def test_abstract_then_evaluate(tmp_path, capsys):
    assert run(tmp_path, "abstract", config={"eval_episodes": 20}) == 0
    report = json.loads((tmp_path / "evaluation.json").read_text())
    assert report["blocks"] == 3 and report["mean_reward"] == 10.0
    for name in ("quotient.json", "classifier.json", "qvalues.json", "partition.json", "trace.jsonl",
                 "config.json"):
        assert (tmp_path / name).exists()
    ev = tmp_path / "ev"
    assert cli.main(["evaluate", "--artifacts", str(tmp_path), "--out-dir", str(ev)]) == 0
    assert json.loads((ev / "evaluation.json").read_text())["mean_reward"] == 10.0
    assert "blocks=3" in capsys.readouterr().out


def test_gridsearch_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    assert run(a, "gridsearch", config=SMALL_GRID) == 0
    assert run(b, "gridsearch", "--threads", "2", config=SMALL_GRID) == 0
    for name in ("gridsearch.csv", "gridsearch_summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
        meta = json.loads((a / f"{name}.meta.json").read_text())
        assert meta["seeds"] == [0, 1]
        assert meta["config_sha256"] == ex.config_hash(ex.load_config("gridsearch", json.dumps(SMALL_GRID)))


def test_seed_flag_shifts_seed_list(tmp_path):
    assert run(tmp_path, "gridsearch", "--seed", "7", config=SMALL_GRID) == 0
    meta = json.loads((tmp_path / "gridsearch.csv.meta.json").read_text())
    assert meta["seeds"] == [7, 8]


def test_blocksworld_outputs(tmp_path):
    assert run(tmp_path, "blocksworld", config={"runs": 2, "budget": 2000, "segment": 1000}) == 0
    summary = json.loads((tmp_path / "blocksworld_summary.json").read_text())
    assert summary["runs"] == 2
    assert set(summary) == {"runs", "monotone_fraction", "max_blocks", "trivial_runs"}
    lines = (tmp_path / "blocksworld.csv").read_text().splitlines()
    assert len(lines) == 1 + 2 * 2
    assert (tmp_path / "blocksworld_segments.csv.meta.json").exists()


def test_transfer_outputs(tmp_path):
    config = {"seeds": 2, "agent": {"episodes": 100},
              "source": {"env": {"name": "pucks", "size": 3, "n_pucks": 2, "task": "stack"},
                         "collector": {"episodes": 200}},
              "target": {"name": "pucks", "size": 3, "n_pucks": 3, "task": "stack"}}
    assert run(tmp_path, "transfer", config=config) == 0
    rows = (tmp_path / "transfer.csv").read_text().splitlines()
    assert rows[0] == "seed,condition,steps_to_criterion,option_executions"
    assert len(rows) == 5
    assert "options" in json.loads((tmp_path / "transfer_report.json").read_text())


@pytest.mark.parametrize("config", [{"bogus": 1}, {"partition": {"max_blocks": 0}}])
def test_bad_config_exits_2(tmp_path, config, capsys):
    assert run(tmp_path, "abstract", config=config) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["abstract", "--config", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)]) == 2


def test_bad_thread_count_exits_2(tmp_path):
    assert run(tmp_path, "gridsearch", "--threads", "0") == cli.EXIT_CONFIG


def test_inconsistent_partition_exits_3_with_trace(tmp_path, monkeypatch):
    def boom(*a, **k):
        exc = InconsistentPartition("cell clash")
        exc.result = PartitionResult(Partition.trivial(1), None, None, trace=[{"iteration": 1}])
        raise exc

    monkeypatch.setattr(ex, "abstract", boom)
    assert run(tmp_path, "abstract", config={"collector": {"episodes": 5}}) == cli.EXIT_INCONSISTENT
    assert json.loads((tmp_path / "trace.jsonl").read_text()) == {"iteration": 1}


def test_projection_error_exits_4(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ProjectionError("unseen pair")

    monkeypatch.setattr(ex, "run_gridsearch", boom)
    assert run(tmp_path, "gridsearch") == cli.EXIT_PROJECTION


def test_print_defaults(capsys):
    assert cli.main(["config", "--print-defaults"]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(json.dumps(ex.DEFAULTS))
    assert cli.main(["config", "--print-defaults", "transfer"]) == 0
    assert json.loads(capsys.readouterr().out)["alpha_mc"] == 0.1


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "mdphom.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("abstract", "evaluate", "gridsearch", "blocksworld", "transfer", "config"):
        assert cmd in out.stdout
