"""
命令行测试: 小规模配置下跑通每个子命令

用法: pytest test_cli.py
"""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from app.main import main
from app.services import experiment
from app.services.checkpoint_store import load_checkpoint
from app.services.datasets import file_checksum, load_dataset
from app.services.report_store import AblationStore, read_report

TINY = [
    "--set", "dataset.per_class=15",
    "--set", "model.hidden=8",
    "--set", "model.classifier_hidden=8",
    "--set", "schedule.pretrain_iterations=10",
    "--set", "schedule.cycles=2",
    "--set", "schedule.steps=3",
    "--set", "schedule.resample_period=2",
    "--set", "mcd.iterations=3",
    "--set", "batch.size=16",
]


def test_show_config_prints_every_key(capsys):
    assert main(["show-config", "--dss-ada", "both", "--set", "dss.epsilon=0.1"]) == 0
    out = capsys.readouterr().out
    assert "dss.adapt" in out and "both" in out
    assert "0.1" in out
    assert "# config hash " in out


def test_unknown_key_exits_with_error():
    assert main(["show-config", "--set", "schedule.epochs=3"]) == 2
    assert main(["show-config", "--set", "mcd.iterations=1"]) == 2


def test_generate_is_reproducible(tmp_path, capsys):
    assert main(["generate", "--kinds", "blobs,moons", "--out", str(tmp_path / "a")] + TINY) == 0
    first = capsys.readouterr().out.splitlines()
    assert main(["generate", "--kinds", "blobs,moons", "--out", str(tmp_path / "b")] + TINY) == 0
    second = capsys.readouterr().out.splitlines()

    assert len(first) == 4
    assert [line.split()[0] for line in first] == [line.split()[0] for line in second]
    for kind in ("blobs", "moons"):
        for domain in ("source_0", "target"):
            path = tmp_path / "a" / kind / f"{domain}.ubrds"
            assert load_dataset(path).descriptor.domain == domain
    assert load_dataset(tmp_path / "a" / "moons" / "target.ubrds").num_classes == 2


def test_run_reports_are_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert main(["run", "--seed", "4", "--reweigh", "none", "--out", str(tmp_path / name)] + TINY) == 0
    first = (tmp_path / "a" / "report_seed4.jsonl").read_bytes()
    assert first == (tmp_path / "b" / "report_seed4.jsonl").read_bytes()

    manifest, report = read_report(tmp_path / "a" / "report_seed4.jsonl")
    assert manifest.seed == report.seed == 4
    assert manifest.config["reweigh"] == "none"
    assert "out_dir" not in manifest.config
    assert [d.domain for d in manifest.data] == ["source_0", "target"]
    assert len(report.cycles) == 2
    assert report.source_only is not None and report.adapted is not None
    assert (tmp_path / "a" / "config.txt").read_text(encoding="utf-8").startswith("# config hash ")
    assert "seed 4:" in capsys.readouterr().out


def test_run_several_seeds_writes_summary(tmp_path):
    assert main(["run", "--seeds", "2", "--out", str(tmp_path)] + TINY) == 0
    assert (tmp_path / "report_seed0.jsonl").exists()
    assert (tmp_path / "report_seed1.jsonl").exists()
    header, row = (tmp_path / "summary.tsv").read_text(encoding="utf-8").splitlines()
    assert row.split("\t")[header.split("\t").index("seeds")] == "0,1"


def test_run_reads_generated_data_without_changing_it(tmp_path):
    assert main(["generate", "--out", str(tmp_path / "data")] + TINY) == 0
    data_dir = tmp_path / "data" / "blobs"
    before = {p.name: file_checksum(p) for p in data_dir.iterdir()}

    assert main(["run", "--data", str(data_dir), "--checkpoints", "--out", str(tmp_path / "out")] + TINY) == 0
    assert {p.name: file_checksum(p) for p in data_dir.iterdir()} == before
    assert (tmp_path / "out" / "adapted_seed0.npz").exists()
    assert (tmp_path / "out" / "pretrained_seed0.npz").exists()


def test_run_rejects_data_that_disagrees_with_config(tmp_path):
    assert main(["generate", "--kinds", "moons", "--out", str(tmp_path / "data")] + TINY) == 0
    data_dir = str(tmp_path / "data" / "moons")

    assert main(["run", "--data", data_dir, "--out", str(tmp_path / "blobs")] + TINY) == 2
    assert not (tmp_path / "blobs" / "report_seed0.jsonl").exists()

    args = ["run", "--data", data_dir, "--set", "dataset.kind=moons", "--checkpoints", "--out", str(tmp_path / "moons")]
    assert main(args + TINY) == 0
    manifest, _ = read_report(tmp_path / "moons" / "report_seed0.jsonl")
    assert manifest.config["dataset.kind"] == "moons"
    assert {d.kind.value for d in manifest.data} == {"moons"}
    assert load_checkpoint(tmp_path / "moons" / "adapted_seed0.npz").num_classes == 2


def test_eval_scores_a_checkpoint(tmp_path, capsys):
    assert main(["generate", "--kinds", "blobs,moons", "--out", str(tmp_path / "data")] + TINY) == 0
    assert main(["run", "--checkpoints", "--out", str(tmp_path / "out")] + TINY) == 0
    capsys.readouterr()

    checkpoint = str(tmp_path / "out" / "adapted_seed0.npz")
    assert main(["eval", "--checkpoint", checkpoint, "--data", str(tmp_path / "data" / "blobs" / "target.ubrds")]) == 0
    out = capsys.readouterr().out
    assert out.startswith("accuracy ")
    assert "mean_class_accuracy " in out

    assert main(["eval", "--checkpoint", checkpoint, "--data", str(tmp_path / "data" / "moons" / "target.ubrds")]) == 2
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.npz"), "--data", str(tmp_path / "data" / "blobs" / "target.ubrds")]) == 2


def test_ablation_resumes_from_store(tmp_path, monkeypatch):
    args = ["ablate", "--grid", "dss", "--seeds", "1", "--out", str(tmp_path)] + TINY
    assert main(args) == 0
    table = (tmp_path / "ablation.tsv").read_text(encoding="utf-8")
    lines = table.splitlines()
    assert len(lines) == 9
    labels = [line.split("\t")[lines[0].split("\t").index("label")] for line in lines[1:]]
    assert labels[0] == "baseline" and labels[-1] == "reweigh_de_sl"
    assert AblationStore(tmp_path / "ablation.db").total_cells == 8

    def fail(payload):
        raise AssertionError("completed cells must not run again")

    monkeypatch.setattr(experiment, "_run_cell", fail)
    assert main(args) == 0
    assert (tmp_path / "ablation.tsv").read_text(encoding="utf-8") == table
