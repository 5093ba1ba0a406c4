from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from reviewbench.cli import main
from reviewbench.fixtures import make_workspace


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def workspace(tmp_path) -> Path:
    return make_workspace(tmp_path / "ws", size="small")


def _invoke(runner, manifest, *args):
    return runner.invoke(main, ["--manifest", str(manifest), *args], catch_exceptions=False)


def _hash_tree(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_make_fixtures_and_ingest_counts(runner, tmp_path):
    result = runner.invoke(
        main, ["make-fixtures", "--out", str(tmp_path / "w"), "--size", "full"]
    )
    assert result.exit_code == 0
    result = _invoke(runner, tmp_path / "w" / "manifest.yaml", "ingest")
    assert result.exit_code == 0
    assert "humaneval_like: accepted 148 of 164" in result.output
    assert "mbpp_like: accepted 476 of 500" in result.output
    assert "securityeval_like: accepted 36 of 121" in result.output


def test_reingest_is_byte_identical(runner, workspace):
    out_dir = workspace.parent / "out"
    assert _invoke(runner, workspace, "ingest").exit_code == 0
    first = _hash_tree(out_dir)
    assert _invoke(runner, workspace, "ingest").exit_code == 0
    assert _hash_tree(out_dir) == first


def test_ingest_empty_file_fails(runner, workspace):
    data = workspace.parent / "data" / "humaneval_like.jsonl"
    data.write_text("", encoding="utf-8")
    result = runner.invoke(main, ["--manifest", str(workspace), "ingest"])
    assert result.exit_code != 0
    assert "empty dataset file" in result.output


def test_missing_manifest_fails(runner, tmp_path):
    result = runner.invoke(main, ["--manifest", str(tmp_path / "nope.yaml"), "ingest"])
    assert result.exit_code != 0


def test_perturb_subcommand(runner, workspace, tmp_path):
    _invoke(runner, workspace, "ingest")
    corpus_file = workspace.parent / "out" / "corpus.jsonl"
    out_file = tmp_path / "perturbed.jsonl"
    result = runner.invoke(
        main,
        ["perturb", "--in", str(corpus_file), "--out", str(out_file), "--seed", "3"],
    )
    assert result.exit_code == 0
    lines = [json.loads(l) for l in out_file.read_text().splitlines()]
    assert lines[0]["_meta"] == {"seed": 3, "run_index": 0}
    records = lines[1:]
    assert all("perturbation" in rec for rec in records)
    assert any(rec["perturbation"]["changed"] for rec in records)
    # determinism: same seed, same bytes
    out2 = tmp_path / "perturbed2.jsonl"
    runner.invoke(main, ["perturb", "--in", str(corpus_file), "--out", str(out2), "--seed", "3"])
    assert out2.read_bytes() == out_file.read_bytes()


def test_run_cot_without_priors_fails(runner, workspace):
    _invoke(runner, workspace, "ingest")
    _invoke(runner, workspace, "pair")
    result = runner.invoke(
        main,
        ["--manifest", str(workspace), "run", "--backend", "stub-oracle", "--rq", "rq3-cot", "--runs", "1"],
    )
    assert result.exit_code != 0
    assert "missing rq1/rq2" in result.output


def test_staged_rq_runs_share_priors(runner, workspace):
    ws = workspace
    _invoke(runner, ws, "ingest")
    _invoke(runner, ws, "pair")
    _invoke(runner, ws, "run", "--backend", "stub-oracle", "--rq", "rq1", "--rq", "rq2", "--runs", "1")
    result = _invoke(
        runner, ws, "run", "--backend", "stub-oracle", "--rq", "rq3-cot", "--runs", "1"
    )
    assert result.exit_code == 0
    assert "complete=True" in result.output


def test_run_refuses_seed_mismatch_on_resume(runner, workspace):
    ws = workspace
    _invoke(runner, ws, "ingest")
    _invoke(runner, ws, "pair")
    _invoke(runner, ws, "run", "--backend", "stub-oracle", "--rq", "rq1", "--runs", "1", "--seed", "1")
    result = runner.invoke(
        main,
        ["--manifest", str(ws), "run", "--backend", "stub-oracle", "--rq", "rq1", "--runs", "1", "--seed", "2"],
    )
    assert result.exit_code != 0
    assert "recorded with seed" in result.output


def test_report_before_score_fails(runner, workspace):
    _invoke(runner, workspace, "ingest")
    result = runner.invoke(main, ["--manifest", str(workspace), "report"])
    assert result.exit_code != 0
    assert "no scored backends" in result.output


def test_cwe_stats_output(runner, workspace):
    _invoke(runner, workspace, "ingest")
    result = _invoke(runner, workspace, "cwe-stats")
    assert result.exit_code == 0
    assert "retained weaknesses: 958" in result.output
    assert "mean relations: 3.09" in result.output
    stats = json.loads((workspace.parent / "out" / "cwe_stats.json").read_text())
    assert stats["retained"] == 958
    assert "manifest_hash" in stats and "seed" in stats


def test_per_dataset_breakdown(runner, workspace):
    ws = workspace
    _invoke(runner, ws, "ingest")
    _invoke(runner, ws, "pair")
    _invoke(runner, ws, "run", "--backend", "stub-oracle", "--runs", "1")
    result = _invoke(
        runner, ws, "score", "--backend", "stub-oracle", "--runs", "1", "--per-dataset"
    )
    assert result.exit_code == 0
    out_dir = ws.parent / "out"
    assert (out_dir / "runreport_stub-oracle__humaneval_like.json").exists()
    assert (out_dir / "runreport_stub-oracle__securityeval_like.json").exists()
    result = _invoke(runner, ws, "report", "--backend", "stub-oracle", "--per-dataset")
    assert result.exit_code == 0
    assert "**securityeval_like**" in result.output
    # clean datasets have no description stage; their tables omit that column
    md = (out_dir / "report.md").read_text()
    humaneval_section = md.split("**humaneval_like**")[1].split("**")[0]
    assert "RQ4 Match Rate" not in humaneval_section
    securityeval_section = md.split("**securityeval_like**")[1]
    assert "RQ4 Match Rate" in securityeval_section


def test_end_to_end_small_pipeline(runner, workspace):
    ws = workspace
    assert _invoke(runner, ws, "ingest").exit_code == 0
    assert _invoke(runner, ws, "pair").exit_code == 0
    result = _invoke(runner, ws, "run", "--backend", "stub-oracle", "--runs", "2")
    assert result.exit_code == 0
    assert "complete=True" in result.output
    assert _invoke(runner, ws, "score", "--backend", "stub-oracle", "--runs", "2").exit_code == 0
    result = _invoke(runner, ws, "report", "--backend", "stub-oracle")
    assert result.exit_code == 0
    assert "100.0 (0.0)" in result.output
    report_csv = (ws.parent / "out" / "report.csv").read_text()
    assert report_csv.startswith("# manifest_hash=")
    payload = json.loads((ws.parent / "out" / "runreport_stub-oracle.json").read_text())
    assert payload["manifest_hash"] and "seed" in payload
