"""Per-aspect comparison: one structured LLM call per evidence bundle.

A single prompt carries the question plus both evidence blocks; the model
must answer with one JSON object holding both summaries, a verdict, and the
chunk ids it relied on. Responses are schema-validated; a failing response
is retried up to two times with the validation error quoted back, and a
final failure produces an ``unverifiable`` finding instead of aborting the
battery.

Two backends: a remote chat-completions client (temperature pinned to 0 for
reproducible runs) and a scripted mock that replays canned responses keyed
by query id, consumed in order so retry paths can be exercised.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import jsonschema
import requests

from .embed_store import ScoredHit
from .embedding import _post_json
from .errors import (
    BackendUnreachable,
    CodeAlignError,
    InputError,
    MockMissingScript,
    ProviderRejected,
    ProviderUnreachable,
)
from .retriever import EvidenceBundle, QuerySpec

logger = logging.getLogger(__name__)

VERDICTS = (
    "match",
    "partial",
    "mismatch",
    "missing_in_code",
    "missing_in_paper",
    "unverifiable",
)

MAX_REPAIR_RETRIES = 2

PROMPT_VERSION = "v1"

RESPONSE_SCHEMA: dict = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "paper_summary",
        "code_summary",
        "verdict",
        "explanation",
        "paper_evidence",
        "code_evidence",
    ],
    "properties": {
        "paper_summary": {"type": "string"},
        "code_summary": {"type": "string"},
        "verdict": {"enum": list(VERDICTS)},
        "explanation": {"type": "string"},
        "paper_evidence": {"type": "array", "items": {"type": "string"}},
        "code_evidence": {"type": "array", "items": {"type": "string"}},
    },
}

_REPAIR_INSTRUCTION = (
    "Your previous reply was not a valid response object. "
    "Validation error: {error}\n"
    "Reply again with ONLY the corrected JSON object, no other text."
)


@dataclass(frozen=True)
class AspectFinding:
    """Outcome of one verification aspect."""

    query_id: str
    paper_summary: str
    code_summary: str
    verdict: str
    explanation: str
    paper_evidence: tuple[str, ...]
    code_evidence: tuple[str, ...]
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == "unverifiable" and not self.warnings:
            raise ValueError("unverifiable findings must record a reason in warnings")

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "paper_summary": self.paper_summary,
            "code_summary": self.code_summary,
            "verdict": self.verdict,
            "explanation": self.explanation,
            "paper_evidence": list(self.paper_evidence),
            "code_evidence": list(self.code_evidence),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AspectFinding":
        return cls(
            query_id=obj["query_id"],
            paper_summary=obj["paper_summary"],
            code_summary=obj["code_summary"],
            verdict=obj["verdict"],
            explanation=obj["explanation"],
            paper_evidence=tuple(obj["paper_evidence"]),
            code_evidence=tuple(obj["code_evidence"]),
            warnings=tuple(obj.get("warnings", ())),
        )


class LlmBackend(Protocol):
    mode: str

    def complete(self, messages: list[dict], *, query_id: str | None = None) -> str: ...


class ScriptedMockBackend:
    """Replays canned responses per query id, consumed front to back."""

    mode = "scripted_mock"

    def __init__(self, script: dict[str, list[str]]):
        self._script: dict[str, list[str]] = {}
        for query_id, responses in script.items():
            if isinstance(responses, str):
                responses = [responses]
            if not isinstance(responses, list) or not all(isinstance(r, str) for r in responses):
                raise InputError(
                    f"mock script entry {query_id!r} must be a string or list of strings"
                )
            self._script[query_id] = list(responses)
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedMockBackend":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read mock script {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise InputError(f"mock script {path} must be a JSON object")
        return cls(raw)

    def complete(self, messages: list[dict], *, query_id: str | None = None) -> str:
        with self._lock:
            self.calls += 1
            queue = self._script.get(query_id or "")
            if not queue:
                raise MockMissingScript(
                    f"scripted mock has no response (left) for query {query_id!r}"
                )
            return queue.pop(0)


class RemoteChatBackend:
    """Chat-completions-over-HTTP client; temperature pinned to 0."""

    mode = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.0,
        max_output_tokens: int = 1024,
        api_key_env: str = "LLM_API_KEY",
        timeout: float = 120.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.max_output_tokens = max_output_tokens
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session = session or requests.Session()

    def complete(self, messages: list[dict], *, query_id: str | None = None) -> str:
        payload = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_output_tokens,
            "response_format": {"type": "json_object"},
        }
        try:
            body = _post_json(
                self._session,
                self.endpoint,
                payload,
                api_key=os.environ.get(self.api_key_env),
                timeout=self.timeout,
                max_attempts=self.max_attempts,
                backoff=self.backoff,
            )
        except ProviderUnreachable as exc:
            raise BackendUnreachable(str(exc)) from exc
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderRejected(
                "chat response lacks choices[0].message.content"
            ) from exc


# --- prompt assembly ---------------------------------------------------------

def _load_prompt(name: str) -> str:
    return (resources.files("codealign") / "prompts" / name).read_text(encoding="utf-8")


def build_messages(query: QuerySpec, bundle: EvidenceBundle) -> list[dict]:
    system = _load_prompt(f"aspect_system_{PROMPT_VERSION}.txt")
    user = _load_prompt(f"aspect_user_{PROMPT_VERSION}.txt")
    user = (
        user.replace("{question}", query.question)
            .replace("{paper_evidence}", _format_paper_evidence(bundle.paper_hits))
            .replace("{code_evidence}", _format_code_evidence(bundle.code_hits))
    )
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": user},
    ]


def _format_paper_evidence(hits: Sequence[ScoredHit]) -> str:
    if not hits:
        return "(no paper evidence retrieved)"
    blocks = []
    for hit in hits:
        section = hit.metadata.get("section_path") or "(preamble)"
        blocks.append(f"[{hit.chunk_id}] section: {section}\n{hit.body}")
    return "\n\n".join(blocks)


def _format_code_evidence(hits: Sequence[ScoredHit]) -> str:
    if not hits:
        return "(no code evidence retrieved)"
    blocks = []
    for hit in hits:
        where = "{}:{}-{}".format(
            hit.metadata.get("rel_path", "?"),
            hit.metadata.get("line_start", "?"),
            hit.metadata.get("line_end", "?"),
        )
        blocks.append(f"[{hit.chunk_id}] {where}\n{hit.body}")
    return "\n\n".join(blocks)


def _parse_response(raw: str) -> dict:
    text = raw.strip()
    if text.startswith("```"):
        m = re.search(r"```(?:json)?\s*\n?(.*?)```", text, re.DOTALL)
        if not m:
            raise ValueError("unterminated markdown fence in response")
        text = m.group(1)
    obj = json.loads(text)
    if not isinstance(obj, dict):
        raise ValueError("response is valid JSON but not an object")
    return obj


# --- analysis ----------------------------------------------------------------

def analyze_aspect(
    bundle: EvidenceBundle,
    query: QuerySpec,
    backend: LlmBackend,
    max_repair_retries: int = MAX_REPAIR_RETRIES,
) -> AspectFinding:
    """Ask the backend to compare paper vs code for one aspect."""
    if bundle.query_id != query.query_id:
        raise ValueError(
            f"bundle {bundle.query_id!r} does not belong to query {query.query_id!r}"
        )

    messages = build_messages(query, bundle)
    warnings: list[str] = []
    parsed: dict | None = None
    raw = ""
    for attempt in range(1 + max_repair_retries):
        raw = backend.complete(messages, query_id=query.query_id)
        try:
            candidate = _parse_response(raw)
            jsonschema.validate(candidate, RESPONSE_SCHEMA)
            parsed = candidate
            break
        except (ValueError, jsonschema.ValidationError) as exc:
            error = _one_line(str(exc), 240)
            warnings.append(f"response attempt {attempt + 1} failed validation: {error}")
            messages = messages + [
                {"role": "assistant", "content": raw},
                {"role": "user", "content": _REPAIR_INSTRUCTION.replace("{error}", error)},
            ]

    if parsed is None:
        warnings.append(f"raw response after final attempt: {_one_line(raw, 500)}")
        finding = AspectFinding(
            query_id=query.query_id,
            paper_summary="",
            code_summary="",
            verdict="unverifiable",
            explanation="the model never produced a schema-valid response",
            paper_evidence=(),
            code_evidence=(),
            warnings=tuple(warnings),
        )
        return _enforce_evidence_rules(finding, bundle)

    paper_ids = [h.chunk_id for h in bundle.paper_hits]
    code_ids = [h.chunk_id for h in bundle.code_hits]
    paper_cited, paper_dropped = _filter_ids(parsed["paper_evidence"], paper_ids)
    code_cited, code_dropped = _filter_ids(parsed["code_evidence"], code_ids)
    if paper_dropped:
        warnings.append(
            "dropped cited paper ids not in the retrieved set: " + ", ".join(paper_dropped)
        )
    if code_dropped:
        warnings.append(
            "dropped cited code ids not in the retrieved set: " + ", ".join(code_dropped)
        )

    finding = AspectFinding(
        query_id=query.query_id,
        paper_summary=parsed["paper_summary"],
        code_summary=parsed["code_summary"],
        verdict=parsed["verdict"],
        explanation=parsed["explanation"],
        paper_evidence=paper_cited,
        code_evidence=code_cited,
        warnings=tuple(
            warnings if parsed["verdict"] != "unverifiable" or warnings
            else ["model judged the aspect unverifiable from the provided evidence"]
        ),
    )
    return _enforce_evidence_rules(finding, bundle)


def _filter_ids(cited: list[str], allowed: list[str]) -> tuple[tuple[str, ...], list[str]]:
    allowed_set = set(allowed)
    kept, dropped, seen = [], [], set()
    for cid in cited:
        if cid in seen:
            continue
        seen.add(cid)
        (kept if cid in allowed_set else dropped).append(cid)
    return tuple(kept), dropped


def _enforce_evidence_rules(finding: AspectFinding, bundle: EvidenceBundle) -> AspectFinding:
    """Empty retrieved evidence caps the verdict, whatever the model said."""
    if bundle.paper_hits and bundle.code_hits:
        return finding
    if not bundle.paper_hits and not bundle.code_hits:
        allowed, forced = {"unverifiable"}, "unverifiable"
        reason = "no evidence retrieved from either store"
    elif not bundle.paper_hits:
        allowed, forced = {"missing_in_paper", "unverifiable"}, "missing_in_paper"
        reason = "no paper evidence retrieved"
    else:
        allowed, forced = {"missing_in_code", "unverifiable"}, "missing_in_code"
        reason = "no code evidence retrieved"
    if finding.verdict in allowed:
        return finding
    warnings = finding.warnings + (
        f"verdict {finding.verdict!r} overridden to {forced!r}: {reason}",
    )
    return AspectFinding(
        query_id=finding.query_id,
        paper_summary=finding.paper_summary,
        code_summary=finding.code_summary,
        verdict=forced,
        explanation=finding.explanation,
        paper_evidence=finding.paper_evidence,
        code_evidence=finding.code_evidence,
        warnings=warnings,
    )


def _one_line(text: str, limit: int) -> str:
    flat = " ".join(text.split())
    return flat[:limit] + ("..." if len(flat) > limit else "")


def _failure_finding(query_id: str, exc: Exception) -> AspectFinding:
    return AspectFinding(
        query_id=query_id,
        paper_summary="",
        code_summary="",
        verdict="unverifiable",
        explanation="analysis failed before the model produced a finding",
        paper_evidence=(),
        code_evidence=(),
        warnings=(f"analysis error: {exc}",),
    )


def run_battery(
    queries: Sequence[QuerySpec],
    bundles: Sequence[EvidenceBundle],
    backend: LlmBackend,
    keep_going: bool = False,
    max_concurrency: int = 4,
) -> list[AspectFinding]:
    """Analyze every aspect; findings come back in query order.

    With ``keep_going`` a failing aspect becomes an ``unverifiable`` finding
    instead of aborting the whole battery.
    """
    if len(queries) != len(bundles):
        raise ValueError("need exactly one bundle per query")
    for q, b in zip(queries, bundles):
        if q.query_id != b.query_id:
            raise ValueError(f"bundle order mismatch at {q.query_id!r} vs {b.query_id!r}")

    results: list[AspectFinding | None] = [None] * len(queries)
    with ThreadPoolExecutor(max_workers=max(1, max_concurrency)) as pool:
        futures = [
            pool.submit(analyze_aspect, bundles[i], queries[i], backend)
            for i in range(len(queries))
        ]
        for i, future in enumerate(futures):
            try:
                results[i] = future.result()
            except CodeAlignError as exc:
                if not keep_going:
                    pool.shutdown(wait=False, cancel_futures=True)
                    raise
                logger.warning("aspect %s failed, continuing: %s", queries[i].query_id, exc)
                results[i] = _failure_finding(queries[i].query_id, exc)
    return [f for f in results if f is not None]
