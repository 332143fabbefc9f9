"""Tests for per-aspect analysis: schema validation, retries, overrides."""

from __future__ import annotations

import json

import pytest

from codealign.analyzer import (
    AspectFinding,
    ScriptedMockBackend,
    analyze_aspect,
    build_messages,
    run_battery,
)
from codealign.embed_store import ScoredHit
from codealign.errors import MockMissingScript
from codealign.retriever import EvidenceBundle, QuerySpec

QUERY = QuerySpec("arch", "What is the model architecture described?")


def make_bundle(query_id="arch", n_paper=2, n_code=2) -> EvidenceBundle:
    paper_hits = tuple(
        ScoredHit(f"paper:fix:{i:04d}", 0.9 - i * 0.1,
                  {"section_path": "Methodology > Architecture"},
                  f"paper body {i}")
        for i in range(n_paper)
    )
    code_hits = tuple(
        ScoredHit(f"code:fix:{i:04d}", 0.8 - i * 0.1,
                  {"rel_path": "model.py", "line_start": "1", "line_end": "10"},
                  f"code body {i}")
        for i in range(n_code)
    )
    return EvidenceBundle(
        query_id=query_id,
        paper_hits=paper_hits,
        code_hits=code_hits,
        rerank_mode="lexical",
        context_char_budget=8000,
    )


def valid_response(verdict="match", paper_ev=(), code_ev=()) -> str:
    return json.dumps({
        "paper_summary": "two conv blocks then a linear head",
        "code_summary": "model.py builds the same stack",
        "verdict": verdict,
        "explanation": "the layer structure agrees",
        "paper_evidence": list(paper_ev),
        "code_evidence": list(code_ev),
    })


# ------------------------------------------------------------------
# analyze_aspect
# ------------------------------------------------------------------
class TestAnalyzeAspect:
    def test_valid_response_passes_through(self):
        bundle = make_bundle()
        backend = ScriptedMockBackend({"arch": [
            valid_response(paper_ev=["paper:fix:0000"], code_ev=["code:fix:0001"]),
        ]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "match"
        assert finding.paper_evidence == ("paper:fix:0000",)
        assert finding.code_evidence == ("code:fix:0001",)
        assert finding.warnings == ()

    def test_two_failures_then_valid(self):
        bundle = make_bundle()
        backend = ScriptedMockBackend({"arch": [
            "this is not json",
            '{"still": "wrong shape"}',
            valid_response(),
        ]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "match"
        retry_warnings = [w for w in finding.warnings if "failed validation" in w]
        assert len(retry_warnings) == 2
        assert backend.calls == 3

    def test_persistent_garbage_goes_unverifiable(self):
        bundle = make_bundle()
        backend = ScriptedMockBackend({"arch": [
            "garbage one", "garbage two", "garbage three",
        ]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "unverifiable"
        assert any("garbage three" in w for w in finding.warnings)
        assert backend.calls == 3

    def test_repair_conversation_grows(self):
        seen: list[list[dict]] = []

        class Recording(ScriptedMockBackend):
            def complete(self, messages, *, query_id=None):
                seen.append(messages)
                return super().complete(messages, query_id=query_id)

        bundle = make_bundle()
        backend = Recording({"arch": ["nope", valid_response()]})
        analyze_aspect(bundle, QUERY, backend)
        assert len(seen) == 2
        assert len(seen[1]) == len(seen[0]) + 2
        assert seen[1][-2]["role"] == "assistant"
        assert seen[1][-2]["content"] == "nope"
        assert "Validation error" in seen[1][-1]["content"]

    def test_unknown_evidence_ids_stripped(self):
        bundle = make_bundle()
        backend = ScriptedMockBackend({"arch": [
            valid_response(paper_ev=["paper:fix:0000", "paper:invented:9999"],
                           code_ev=["code:other:0001"]),
        ]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.paper_evidence == ("paper:fix:0000",)
        assert finding.code_evidence == ()
        assert any("paper:invented:9999" in w for w in finding.warnings)
        assert any("code:other:0001" in w for w in finding.warnings)

    def test_empty_code_evidence_overrides_match(self):
        bundle = make_bundle(n_code=0)
        backend = ScriptedMockBackend({"arch": [valid_response("match")]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "missing_in_code"
        assert any("overridden" in w for w in finding.warnings)

    def test_empty_paper_evidence_overrides_match(self):
        bundle = make_bundle(n_paper=0)
        backend = ScriptedMockBackend({"arch": [valid_response("match")]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "missing_in_paper"

    def test_empty_paper_evidence_allows_unverifiable(self):
        bundle = make_bundle(n_paper=0)
        backend = ScriptedMockBackend({"arch": [valid_response("unverifiable")]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "unverifiable"

    def test_both_empty_forces_unverifiable(self):
        bundle = make_bundle(n_paper=0, n_code=0)
        backend = ScriptedMockBackend({"arch": [valid_response("match")]})
        finding = analyze_aspect(bundle, QUERY, backend)
        assert finding.verdict == "unverifiable"
        assert finding.warnings

    def test_extra_key_fails_schema(self):
        obj = json.loads(valid_response())
        obj["confidence"] = 0.9
        backend = ScriptedMockBackend({"arch": [json.dumps(obj), valid_response()]})
        finding = analyze_aspect(make_bundle(), QUERY, backend)
        assert finding.verdict == "match"
        assert backend.calls == 2

    def test_fenced_json_accepted(self):
        fenced = "```json\n" + valid_response() + "\n```"
        backend = ScriptedMockBackend({"arch": [fenced]})
        finding = analyze_aspect(make_bundle(), QUERY, backend)
        assert finding.verdict == "match"
        assert backend.calls == 1

    def test_model_unverifiable_gets_reason(self):
        backend = ScriptedMockBackend({"arch": [valid_response("unverifiable")]})
        finding = analyze_aspect(make_bundle(), QUERY, backend)
        assert finding.verdict == "unverifiable"
        assert finding.warnings  # invariant: reason recorded

    def test_bundle_query_mismatch(self):
        backend = ScriptedMockBackend({"arch": [valid_response()]})
        with pytest.raises(ValueError):
            analyze_aspect(make_bundle(query_id="other"), QUERY, backend)

    def test_mock_missing_script(self):
        backend = ScriptedMockBackend({})
        with pytest.raises(MockMissingScript):
            analyze_aspect(make_bundle(), QUERY, backend)

    def test_mock_exhausted_script(self):
        backend = ScriptedMockBackend({"arch": ["bad json"]})
        with pytest.raises(MockMissingScript):
            analyze_aspect(make_bundle(), QUERY, backend)


# ------------------------------------------------------------------
# prompt assembly
# ------------------------------------------------------------------
class TestPrompts:
    def test_messages_carry_ids_and_provenance(self):
        bundle = make_bundle()
        messages = build_messages(QUERY, bundle)
        assert messages[0]["role"] == "system"
        user = messages[1]["content"]
        assert QUERY.question in user
        assert "[paper:fix:0000] section: Methodology > Architecture" in user
        assert "[code:fix:0001] model.py:1-10" in user
        assert "{question}" not in user
        assert "{paper_evidence}" not in user

    def test_empty_evidence_placeholder(self):
        bundle = make_bundle(n_paper=0, n_code=0)
        user = build_messages(QUERY, bundle)[1]["content"]
        assert "(no paper evidence retrieved)" in user
        assert "(no code evidence retrieved)" in user


# ------------------------------------------------------------------
# finding schema closure
# ------------------------------------------------------------------
class TestFindingRoundTrip:
    def test_to_from_dict_equal(self):
        finding = AspectFinding(
            query_id="loss",
            paper_summary="cross entropy",
            code_summary="nn.CrossEntropyLoss",
            verdict="match",
            explanation="same objective",
            paper_evidence=("paper:a:0001",),
            code_evidence=("code:b:0002",),
            warnings=("something minor",),
        )
        assert AspectFinding.from_dict(finding.to_dict()) == finding

    def test_unverifiable_requires_warning(self):
        with pytest.raises(ValueError):
            AspectFinding(
                query_id="q", paper_summary="", code_summary="",
                verdict="unverifiable", explanation="", paper_evidence=(),
                code_evidence=(), warnings=(),
            )

    def test_unknown_verdict_rejected(self):
        with pytest.raises(ValueError):
            AspectFinding(
                query_id="q", paper_summary="", code_summary="",
                verdict="sort_of", explanation="", paper_evidence=(),
                code_evidence=(), warnings=(),
            )


# ------------------------------------------------------------------
# run_battery
# ------------------------------------------------------------------
class TestRunBattery:
    def make_battery(self, n=4):
        queries = [QuerySpec(f"q{i}", f"question {i}?") for i in range(n)]
        bundles = [make_bundle(query_id=f"q{i}") for i in range(n)]
        return queries, bundles

    def test_findings_in_query_order(self):
        queries, bundles = self.make_battery(7)
        script = {f"q{i}": [valid_response()] for i in range(7)}
        findings = run_battery(queries, bundles, ScriptedMockBackend(script),
                               max_concurrency=4)
        assert [f.query_id for f in findings] == [q.query_id for q in queries]

    def test_isolation_with_keep_going(self):
        queries, bundles = self.make_battery(4)
        script = {f"q{i}": [valid_response()] for i in range(4) if i != 2}
        findings = run_battery(queries, bundles, ScriptedMockBackend(script),
                               keep_going=True)
        assert [f.verdict for f in findings] == [
            "match", "match", "unverifiable", "match"]
        assert findings[2].warnings

    def test_failure_without_keep_going_raises(self):
        queries, bundles = self.make_battery(3)
        script = {"q0": [valid_response()], "q1": [valid_response()]}
        with pytest.raises(MockMissingScript):
            run_battery(queries, bundles, ScriptedMockBackend(script))

    def test_deterministic_across_runs(self):
        def once():
            queries, bundles = self.make_battery(6)
            script = {f"q{i}": [valid_response()] for i in range(6)}
            findings = run_battery(queries, bundles, ScriptedMockBackend(script),
                                   max_concurrency=3)
            return json.dumps([f.to_dict() for f in findings], sort_keys=True)
        assert once() == once()

    def test_evidence_soundness(self):
        queries, bundles = self.make_battery(5)
        script = {
            f"q{i}": [valid_response(
                paper_ev=["paper:fix:0000", "paper:bogus:1111"],
                code_ev=["code:fix:0000"],
            )] for i in range(5)
        }
        findings = run_battery(queries, bundles, ScriptedMockBackend(script))
        for finding, bundle in zip(findings, bundles):
            paper_ids = {h.chunk_id for h in bundle.paper_hits}
            code_ids = {h.chunk_id for h in bundle.code_hits}
            assert set(finding.paper_evidence) <= paper_ids
            assert set(finding.code_evidence) <= code_ids

    def test_length_mismatch_rejected(self):
        queries, bundles = self.make_battery(3)
        with pytest.raises(ValueError):
            run_battery(queries, bundles[:2], ScriptedMockBackend({}))
