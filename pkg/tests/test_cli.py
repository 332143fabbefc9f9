"""CLI surface tests: verify, queries list, store inspect."""

from __future__ import annotations

import json

import pytest
from click.testing import CliRunner

from codealign.cli import main

from conftest import FIXTURES, zip_from_dir


@pytest.fixture(scope="module")
def consistent_zip(tmp_path_factory):
    return zip_from_dir(tmp_path_factory.mktemp("clizips") / "consistent.zip",
                        FIXTURES / "code_consistent")


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


class TestVerifyCommand:
    def test_offline_golden(self, consistent_zip, tmp_path):
        out = tmp_path / "out"
        result = invoke(
            "verify", "--paper", FIXTURES / "toy_paper.md",
            "--code", consistent_zip, "--out", out,
            "--offline", "--mock-script", FIXTURES / "mock_consistent.json",
            "--stable-output",
        )
        assert result.exit_code == 0, result.output
        assert (out / "report.json").is_file()
        assert (out / "report.md").is_file()
        assert (out / "report.html").is_file()
        assert "alignment score: 1.0000" in result.output

    def test_format_subset(self, consistent_zip, tmp_path):
        out = tmp_path / "out"
        result = invoke(
            "verify", "--paper", FIXTURES / "toy_paper.md",
            "--code", consistent_zip, "--out", out,
            "--offline", "--mock-script", FIXTURES / "mock_consistent.json",
            "--format", "json",
        )
        assert result.exit_code == 0, result.output
        assert [p.name for p in sorted(out.iterdir())] == ["report.json"]

    def test_offline_endpoint_conflict_exits_2(self, consistent_zip, tmp_path):
        result = invoke(
            "verify", "--paper", FIXTURES / "toy_paper.md",
            "--code", consistent_zip, "--out", tmp_path / "out",
            "--offline", "--mock-script", FIXTURES / "mock_consistent.json",
            "--embed-endpoint", "http://example.invalid/v1",
        )
        assert result.exit_code == 2
        assert "offline" in result.output

    def test_missing_inputs_exit_2(self, tmp_path):
        result = invoke(
            "verify", "--paper", tmp_path / "nope.md",
            "--code", tmp_path / "nope.zip", "--out", tmp_path / "out",
            "--offline", "--mock-script", FIXTURES / "mock_consistent.json",
        )
        assert result.exit_code == 2
        assert "error:" in result.output

    def test_missing_required_flag(self):
        result = invoke("verify", "--paper", "x.md")
        assert result.exit_code != 0

    def test_custom_queries_file(self, consistent_zip, tmp_path):
        queries = tmp_path / "queries.json"
        queries.write_text(json.dumps([
            {"query_id": "seed", "question": "What random seed is used?"},
        ]))
        script = json.loads((FIXTURES / "mock_consistent.json").read_text())
        script["seed"] = [json.dumps({
            "paper_summary": "seed 1234", "code_summary": "SEED = 1234",
            "verdict": "match", "explanation": "same seed",
            "paper_evidence": [], "code_evidence": [],
        })]
        mock = tmp_path / "mock.json"
        mock.write_text(json.dumps(script))
        out = tmp_path / "out"
        result = invoke(
            "verify", "--paper", FIXTURES / "toy_paper.md",
            "--code", consistent_zip, "--out", out,
            "--offline", "--mock-script", mock, "--queries", queries,
        )
        assert result.exit_code == 0, result.output
        report = json.loads((out / "report.json").read_text())
        assert [f["query_id"] for f in report["findings"]][-1] == "seed"


class TestQueriesCommand:
    def test_list_all(self):
        result = invoke("queries", "list")
        assert result.exit_code == 0
        for qid in ("arch", "hparams", "algorithm", "custom_method"):
            assert qid in result.output

    def test_list_offtheshelf(self):
        result = invoke("queries", "list", "--preset", "offtheshelf")
        assert result.exit_code == 0
        assert "custom_method" not in result.output
        assert "What hyperparameters are suggested for training?" in result.output


class TestStoreCommand:
    def test_inspect_round_trip(self, consistent_zip, tmp_path):
        cache = tmp_path / "cache"
        result = invoke(
            "verify", "--paper", FIXTURES / "toy_paper.md",
            "--code", consistent_zip, "--out", tmp_path / "out",
            "--offline", "--mock-script", FIXTURES / "mock_consistent.json",
            "--cache", cache,
        )
        assert result.exit_code == 0, result.output
        store_dirs = sorted(cache.iterdir())
        assert len(store_dirs) == 2
        for store_dir in store_dirs:
            result = invoke("store", "inspect", store_dir)
            assert result.exit_code == 0, result.output
            assert "fingerprint: fnv1a-hash:384:1" in result.output
            assert "records:" in result.output

    def test_inspect_missing_dir(self, tmp_path):
        result = invoke("store", "inspect", tmp_path / "empty")
        assert result.exit_code == 2
        assert "error:" in result.output


class TestHelp:
    def test_top_level_help(self):
        result = invoke("--help")
        assert result.exit_code == 0
        for sub in ("verify", "queries", "store"):
            assert sub in result.output
