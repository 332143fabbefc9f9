"""Alignment scoring and report rendering (JSON, Markdown, HTML).

The alignment score is the weighted mean of verdict values over verifiable
findings: match = 1.0, partial = 0.5, mismatch and both missing verdicts =
0.0. Unverifiable findings are excluded from numerator and denominator so a
provider outage does not masquerade as a code mismatch; when everything is
unverifiable the score is undefined and rendered "n/a".

``report.json`` is the canonical artifact (schema version 1, committed at
``schemas/report_v1.json``); Markdown and HTML are human-facing views. The
HTML is a single self-contained file: inline styles, native ``<details>``
collapsing, no scripts, no external resources.
"""

from __future__ import annotations

import html
import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .analyzer import AspectFinding
from .errors import OutDirUnwritable
from .retriever import EvidenceBundle

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

VERDICT_VALUES = {
    "match": 1.0,
    "partial": 0.5,
    "mismatch": 0.0,
    "missing_in_code": 0.0,
    "missing_in_paper": 0.0,
}

MATCH_VERDICTS = frozenset({"match"})
UNVERIFIED_VERDICTS = frozenset({"unverifiable"})
DISCREPANCY_VERDICTS = frozenset({"partial", "mismatch", "missing_in_code", "missing_in_paper"})

FORMATS = ("json", "markdown", "html")
FILE_NAMES = {"json": "report.json", "markdown": "report.md", "html": "report.html"}


@dataclass(frozen=True)
class AlignmentReport:
    """The single serialized output of a verification run."""

    meta: dict
    findings: tuple[AspectFinding, ...]
    alignment_score: float | None
    score_breakdown: tuple[dict, ...]
    retrieval_stats: dict
    evidence: dict
    warnings: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "meta": dict(self.meta),
            "findings": [f.to_dict() for f in self.findings],
            "alignment_score": self.alignment_score,
            "score_breakdown": [dict(b) for b in self.score_breakdown],
            "retrieval_stats": self.retrieval_stats,
            "evidence": self.evidence,
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AlignmentReport":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported report schema_version {obj.get('schema_version')!r}"
            )
        return cls(
            meta=dict(obj["meta"]),
            findings=tuple(AspectFinding.from_dict(f) for f in obj["findings"]),
            alignment_score=obj["alignment_score"],
            score_breakdown=tuple(dict(b) for b in obj["score_breakdown"]),
            retrieval_stats=obj["retrieval_stats"],
            evidence=obj["evidence"],
            warnings=tuple(obj["warnings"]),
        )


def report_schema() -> dict:
    """The committed JSON schema for report.json (version 1)."""
    text = (resources.files("codealign") / "schemas" / "report_v1.json").read_text("utf-8")
    return json.loads(text)


# --- scoring -----------------------------------------------------------------

def compute_score(
    findings: Sequence[AspectFinding],
    weights: Mapping[str, float] | None = None,
) -> tuple[float | None, list[dict]]:
    """Weighted mean of verdict values; unverifiable findings are excluded.

    Returns (score, breakdown). Score is None when every finding is
    unverifiable. Each breakdown row carries weight, value, and the additive
    contribution (weight * value / total weight), so the score is
    recomputable from the serialized report.
    """
    if not findings:
        raise ValueError("findings must be non-empty")
    weights = weights or {}

    total_weight = 0.0
    weighted_sum = 0.0
    rows: list[dict] = []
    for finding in findings:
        weight = float(weights.get(finding.query_id, 1.0))
        if finding.verdict == "unverifiable":
            rows.append({
                "query_id": finding.query_id,
                "weight": weight,
                "value": None,
                "contribution": "excluded",
            })
            continue
        value = VERDICT_VALUES[finding.verdict]
        total_weight += weight
        weighted_sum += weight * value
        rows.append({
            "query_id": finding.query_id,
            "weight": weight,
            "value": value,
            "contribution": None,  # filled below once total_weight is known
        })

    if total_weight == 0.0:
        return None, rows
    score = weighted_sum / total_weight
    for row in rows:
        if row["contribution"] is None:
            row["contribution"] = row["weight"] * row["value"] / total_weight
    return score, rows


def recompute_score(report: dict | AlignmentReport) -> float | None:
    """Recompute the alignment score from a serialized report."""
    obj = report.to_dict() if isinstance(report, AlignmentReport) else report
    weights = {row["query_id"]: row["weight"] for row in obj["score_breakdown"]}
    findings = [AspectFinding.from_dict(f) for f in obj["findings"]]
    score, _ = compute_score(findings, weights)
    return score


def partition_findings(
    findings: Iterable[AspectFinding],
) -> tuple[list[AspectFinding], list[AspectFinding], list[AspectFinding]]:
    """Split findings into (matches, discrepancies, unverified); exhaustive."""
    matches, discrepancies, unverified = [], [], []
    for f in findings:
        if f.verdict in MATCH_VERDICTS:
            matches.append(f)
        elif f.verdict in UNVERIFIED_VERDICTS:
            unverified.append(f)
        else:
            discrepancies.append(f)
    return matches, discrepancies, unverified


def evidence_from_bundles(bundles: Iterable[EvidenceBundle]) -> dict:
    """Report evidence section: retrieved hits with cosine scores, per query."""
    out: dict = {}
    for bundle in bundles:
        entry: dict = {}
        for source, hits in (("paper", bundle.paper_hits), ("code", bundle.code_hits)):
            entry[source] = [{
                "chunk_id": h.chunk_id,
                "score": h.score,
                "provenance": _provenance(source, h.metadata),
                "body": h.body,
            } for h in hits]
        out[bundle.query_id] = entry
    return out


def _provenance(source: str, metadata: Mapping[str, str]) -> str:
    if source == "paper":
        return metadata.get("section_path") or "(preamble)"
    rel = metadata.get("rel_path", "?")
    return f"{rel}:{metadata.get('line_start', '?')}-{metadata.get('line_end', '?')}"


# --- rendering ---------------------------------------------------------------

def canonical_json(report: AlignmentReport) -> str:
    """Stable-key, UTF-8, newline-terminated serialization."""
    return json.dumps(report.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def render(report: AlignmentReport, formats: Iterable[str], out_dir: str | Path) -> list[Path]:
    """Write the requested report files into ``out_dir``; returns the paths."""
    wanted = []
    for fmt in formats:
        name = "markdown" if fmt == "md" else fmt
        if name not in FORMATS:
            raise ValueError(f"unknown report format {fmt!r}")
        if name not in wanted:
            wanted.append(name)
    if not wanted:
        raise ValueError("no report formats requested")

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutDirUnwritable(f"cannot create {out}: {exc}") from exc

    renderers = {
        "json": canonical_json,
        "markdown": render_markdown,
        "html": render_html,
    }
    written: list[Path] = []
    for name in FORMATS:
        if name not in wanted:
            continue
        path = out / FILE_NAMES[name]
        try:
            path.write_text(renderers[name](report), encoding="utf-8")
        except OSError as exc:
            raise OutDirUnwritable(f"cannot write {path}: {exc}") from exc
        written.append(path)
    return written


def _fmt_score(score: float | None) -> str:
    return "n/a" if score is None else f"{score:.4f}"


def _verdict_counts(findings: Sequence[AspectFinding]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for f in findings:
        counts[f.verdict] = counts.get(f.verdict, 0) + 1
    return counts


def _md_cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", " ").strip()


def render_markdown(report: AlignmentReport) -> str:
    meta = report.meta
    matches, discrepancies, unverified = partition_findings(report.findings)
    lines: list[str] = []
    add = lines.append

    add(f"# Alignment Report: {meta.get('paper_title', '')}")
    add("")
    add("## Metadata")
    add("")
    add("| Field | Value |")
    add("| --- | --- |")
    for key in ("paper_title", "paper_path", "code_archive", "created_at",
                "tool_version", "preset", "k", "rerank_mode"):
        add(f"| {key} | {_md_cell(str(meta.get(key, '')))} |")
    for name, fp in sorted(meta.get("provider_fingerprints", {}).items()):
        add(f"| provider: {name} | {_md_cell(fp)} |")
    add("")

    add("## Alignment Summary")
    add("")
    add(f"Alignment score: **{_fmt_score(report.alignment_score)}**")
    add("")
    add("| Verdict | Count |")
    add("| --- | --- |")
    for verdict, count in sorted(_verdict_counts(report.findings).items()):
        add(f"| {verdict} | {count} |")
    add("")

    add("## Matches")
    add("")
    if matches:
        add("| Aspect | Paper | Code |")
        add("| --- | --- | --- |")
        for f in matches:
            add(f"| {f.query_id} | {_md_cell(f.paper_summary)} | {_md_cell(f.code_summary)} |")
    else:
        add("_No fully matching aspects._")
    add("")

    add("## Discrepancies")
    add("")
    if discrepancies:
        add("| Aspect | Verdict | Paper | Code | Explanation |")
        add("| --- | --- | --- | --- | --- |")
        for f in discrepancies:
            add(f"| {f.query_id} | {f.verdict} | {_md_cell(f.paper_summary)} "
                f"| {_md_cell(f.code_summary)} | {_md_cell(f.explanation)} |")
    else:
        add("_No discrepancies found._")
    add("")

    add("## Unverified")
    add("")
    if unverified:
        add("| Aspect | Reason |")
        add("| --- | --- |")
        for f in unverified:
            reason = f.warnings[0] if f.warnings else f.explanation
            add(f"| {f.query_id} | {_md_cell(reason)} |")
    else:
        add("_All aspects were verifiable._")
    add("")

    add("## Appendix: Evidence")
    add("")
    for f in report.findings:
        add(f"<details><summary><strong>{f.query_id}</strong> ({f.verdict})</summary>")
        add("")
        per_query = report.evidence.get(f.query_id, {})
        for source, cited in (("paper", set(f.paper_evidence)), ("code", set(f.code_evidence))):
            hits = per_query.get(source, [])
            add(f"**{source.capitalize()} evidence** ({len(hits)} retrieved)")
            add("")
            if not hits:
                add("_none retrieved_")
                add("")
            for hit in hits:
                mark = " — cited" if hit["chunk_id"] in cited else ""
                add(f"- `{hit['chunk_id']}` (cosine {hit['score']:.4f}) "
                    f"{_md_cell(hit['provenance'])}{mark}")
                add("")
                add("````")
                add(hit["body"])
                add("````")
                add("")
        add("</details>")
        add("")
    if report.warnings:
        add("## Warnings")
        add("")
        for w in report.warnings:
            add(f"- {_md_cell(w)}")
        add("")
    return "\n".join(lines)


_HTML_STYLE = """
body { font-family: -apple-system, "Segoe UI", Roboto, Helvetica, Arial, sans-serif;
       margin: 2rem auto; max-width: 60rem; padding: 0 1rem; color: #1c1c1c; }
h1 { border-bottom: 2px solid #444; padding-bottom: .3rem; }
table { border-collapse: collapse; margin: .5rem 0 1rem; }
td, th { border: 1px solid #bbb; padding: .25rem .6rem; text-align: left; }
.score { font-size: 1.3rem; }
.badge { display: inline-block; padding: .1rem .5rem; border-radius: .6rem;
         color: #fff; font-size: .85rem; margin-right: .4rem; }
.v-match { background: #2e7d32; }
.v-partial { background: #f9a825; color: #222; }
.v-mismatch { background: #c62828; }
.v-missing_in_code { background: #ad1457; }
.v-missing_in_paper { background: #6a1b9a; }
.v-unverifiable { background: #616161; }
details.finding { border: 1px solid #ccc; border-radius: .4rem;
                  margin: .6rem 0; padding: .4rem .8rem; }
details.finding > summary { cursor: pointer; font-weight: 600; }
details.evidence { margin: .3rem 0 .3rem 1rem; }
pre { background: #f6f6f6; border: 1px solid #ddd; padding: .6rem;
      overflow-x: auto; white-space: pre-wrap; }
.prov { color: #555; font-size: .85rem; }
.warn { color: #8a5300; }
""".strip()


def render_html(report: AlignmentReport) -> str:
    esc = html.escape
    meta = report.meta
    parts: list[str] = []
    add = parts.append

    add("<!DOCTYPE html>")
    add('<html lang="en"><head><meta charset="utf-8">')
    add(f"<title>Alignment report: {esc(str(meta.get('paper_title', '')))}</title>")
    add(f"<style>{_HTML_STYLE}</style>")
    add("</head><body>")
    add(f"<h1>Alignment Report: {esc(str(meta.get('paper_title', '')))}</h1>")
    add(f'<p class="score">Alignment score: <strong>{_fmt_score(report.alignment_score)}</strong></p>')

    add("<h2>Metadata</h2><table>")
    for key in ("paper_title", "paper_path", "code_archive", "created_at",
                "tool_version", "preset", "k", "rerank_mode"):
        add(f"<tr><th>{esc(key)}</th><td>{esc(str(meta.get(key, '')))}</td></tr>")
    for name, fp in sorted(meta.get("provider_fingerprints", {}).items()):
        add(f"<tr><th>provider: {esc(name)}</th><td>{esc(fp)}</td></tr>")
    add("</table>")

    add("<h2>Verdicts</h2><table><tr><th>Verdict</th><th>Count</th></tr>")
    for verdict, count in sorted(_verdict_counts(report.findings).items()):
        add(f"<tr><td>{esc(verdict)}</td><td>{count}</td></tr>")
    add("</table>")

    add("<h2>Findings</h2>")
    for f in report.findings:
        add('<details class="finding">')
        add(f'<summary><span class="badge v-{esc(f.verdict)}">{esc(f.verdict)}</span>'
            f"<code>{esc(f.query_id)}</code></summary>")
        add("<dl>")
        add(f"<dt>Paper</dt><dd>{esc(f.paper_summary) or '&mdash;'}</dd>")
        add(f"<dt>Code</dt><dd>{esc(f.code_summary) or '&mdash;'}</dd>")
        add(f"<dt>Explanation</dt><dd>{esc(f.explanation) or '&mdash;'}</dd>")
        add("</dl>")
        per_query = report.evidence.get(f.query_id, {})
        for source, cited in (("paper", set(f.paper_evidence)), ("code", set(f.code_evidence))):
            hits = per_query.get(source, [])
            add(f"<h4>{esc(source.capitalize())} evidence ({len(hits)} retrieved)</h4>")
            if not hits:
                add("<p><em>none retrieved</em></p>")
            for hit in hits:
                mark = " &middot; cited" if hit["chunk_id"] in cited else ""
                add('<details class="evidence">')
                add(f"<summary><code>{esc(hit['chunk_id'])}</code> "
                    f'<span class="prov">{esc(hit["provenance"])} '
                    f"(cosine {hit['score']:.4f}){mark}</span></summary>")
                add(f"<pre>{esc(hit['body'])}</pre>")
                add("</details>")
        if f.warnings:
            add('<p class="warn">Warnings:</p><ul class="warn">')
            for w in f.warnings:
                add(f"<li>{esc(w)}</li>")
            add("</ul>")
        add("</details>")

    if report.warnings:
        add("<h2>Run warnings</h2><ul>")
        for w in report.warnings:
            add(f"<li>{esc(w)}</li>")
        add("</ul>")
    add("</body></html>")
    return "\n".join(parts) + "\n"
