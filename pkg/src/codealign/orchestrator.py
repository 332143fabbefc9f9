"""End-to-end pipeline: ingest both sides, embed, retrieve, analyze, report.

Stages run sequentially; per-query retrieval and analysis fan out over a
bounded thread pool (``max_concurrency``). Stores are cached under
``cache_dir`` keyed by input content hash, chunking parameters, and provider
fingerprint, so a warm second run does no embedding work. Report files are
rendered into a temp directory inside ``out_dir`` and moved into place, so
the output directory never holds a partial report set.

Exit codes: 0 success, 2 input/configuration error, 3 provider abort,
4 report written but contains unverifiable findings under ``keep_going``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analyzer import LlmBackend, RemoteChatBackend, ScriptedMockBackend, run_battery
from .code_ingest import (
    DEFAULT_IGNORE_GLOBS,
    DEFAULT_INCLUDE_EXTS,
    DEFAULT_MAX_CHUNK_LINES,
    DEFAULT_MAX_FILE_BYTES,
    DEFAULT_OVERLAP_LINES,
    CodeChunk,
    segment_code,
    unpack_codebase,
)
from .embed_store import (
    DEFAULT_BATCH_SIZE,
    VectorStore,
    build_store,
    load_store,
    persist_store,
)
from .embedding import EmbeddingProvider, HashingEmbedder, RemoteEmbedder, DEFAULT_DIM
from .errors import CodeAlignError, ConfigError, InputError, ProviderError
from .paper_ingest import (
    DEFAULT_MAX_CHUNK_CHARS,
    DEFAULT_OVERLAP_CHARS,
    PaperChunk,
    load_paper,
    segment_paper,
)
from .reporter import (
    AlignmentReport,
    compute_score,
    evidence_from_bundles,
    render,
)
from .retriever import (
    DEFAULT_CONTEXT_CHAR_BUDGET,
    DEFAULT_FETCH_MULTIPLIER,
    DEFAULT_K,
    QuerySpec,
    RemoteReranker,
    default_query_set,
    load_query_file,
    merge_queries,
    retrieve,
)

logger = logging.getLogger(__name__)

STABLE_CREATED_AT = "1970-01-01T00:00:00+00:00"

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_PROVIDER_ERROR = 3
EXIT_UNVERIFIABLE = 4


@dataclass
class RunConfig:
    """Every knob of a verification run; defaults mirror the module defaults."""

    paper_path: Path
    code_zip_path: Path
    out_dir: Path
    preset: str = "offtheshelf"
    k: int = DEFAULT_K
    formats: tuple[str, ...] = ("json", "markdown", "html")
    offline: bool = False
    embed_endpoint: str | None = None
    embed_model: str | None = None
    embed_dim: int | None = None
    llm_endpoint: str | None = None
    llm_model: str | None = None
    rerank_endpoint: str | None = None
    rerank_model: str | None = None
    converter: str | None = None
    max_concurrency: int = 4
    keep_going: bool = False
    cache_dir: Path | None = None
    stable_output: bool = False
    mock_script: Path | None = None
    queries_file: Path | None = None
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS
    overlap_chars: int = DEFAULT_OVERLAP_CHARS
    max_chunk_lines: int = DEFAULT_MAX_CHUNK_LINES
    overlap_lines: int = DEFAULT_OVERLAP_LINES
    include_exts: frozenset[str] = DEFAULT_INCLUDE_EXTS
    ignore_globs: tuple[str, ...] = DEFAULT_IGNORE_GLOBS
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES
    batch_size: int = DEFAULT_BATCH_SIZE
    fetch_multiplier: int = DEFAULT_FETCH_MULTIPLIER
    context_char_budget: int = DEFAULT_CONTEXT_CHAR_BUDGET
    max_output_tokens: int = 1024


@dataclass(frozen=True)
class RunOutcome:
    exit_code: int
    files: tuple[Path, ...]
    report: AlignmentReport | None
    error: str | None = None


def _validate(config: RunConfig) -> None:
    if config.offline:
        remote = {
            "--embed-endpoint": config.embed_endpoint,
            "--llm-endpoint": config.llm_endpoint,
            "--rerank-endpoint": config.rerank_endpoint,
        }
        configured = [flag for flag, value in remote.items() if value]
        if configured:
            raise ConfigError(
                f"offline mode forbids remote endpoints, but {', '.join(configured)} "
                "is configured",
                hint="drop --offline or remove the endpoint flags",
            )
    if config.preset not in ("offtheshelf", "custom", "all"):
        raise ConfigError(f"unknown preset {config.preset!r}")
    if config.k < 1:
        raise ConfigError("k must be >= 1")
    if config.max_concurrency < 1:
        raise ConfigError("max_concurrency must be >= 1")


def _make_embedder(config: RunConfig) -> EmbeddingProvider:
    if config.embed_endpoint:
        return RemoteEmbedder(
            endpoint=config.embed_endpoint,
            model=config.embed_model or "default",
            dim=config.embed_dim,
        )
    return HashingEmbedder(dim=config.embed_dim or DEFAULT_DIM)


def _make_llm_backend(config: RunConfig) -> LlmBackend:
    if config.mock_script:
        return ScriptedMockBackend.from_file(config.mock_script)
    if config.llm_endpoint:
        return RemoteChatBackend(
            endpoint=config.llm_endpoint,
            model=config.llm_model or "default",
            max_output_tokens=config.max_output_tokens,
        )
    raise ConfigError(
        "no LLM backend configured",
        hint="pass --llm-endpoint/--llm-model, or --mock-script for offline runs",
    )


def _llm_fingerprint(backend: LlmBackend) -> str:
    model = getattr(backend, "model", None)
    return f"{backend.mode}:{model}" if model else backend.mode


def _paper_payloads(chunks: list[PaperChunk]) -> list[tuple[str, str, dict[str, str]]]:
    return [(
        c.chunk_id,
        c.body,
        {
            "section_path": " > ".join(c.section_path),
            "heading_level": str(c.heading_level),
            "char_start": str(c.char_start),
            "char_end": str(c.char_end),
            "seq": str(c.seq),
        },
    ) for c in chunks]


def _code_payloads(chunks: list[CodeChunk]) -> list[tuple[str, str, dict[str, str]]]:
    return [(
        c.chunk_id,
        c.embedding_text,
        {
            "rel_path": c.rel_path,
            "unit_kind": c.unit_kind,
            "unit_name": c.unit_name or "",
            "line_start": str(c.line_start),
            "line_end": str(c.line_end),
            "seq": str(c.seq),
        },
    ) for c in chunks]


def _cached_store(
    source: str,
    payloads: list[tuple[str, str, dict[str, str]]],
    content_hash: str,
    params: dict,
    embedder: EmbeddingProvider,
    config: RunConfig,
) -> VectorStore:
    fingerprint = embedder.fingerprint
    store_dir: Path | None = None
    if config.cache_dir:
        key_material = json.dumps(
            {"source": source, "content": content_hash, "params": params,
             "fingerprint": fingerprint},
            sort_keys=True,
        )
        key = hashlib.sha256(key_material.encode("utf-8")).hexdigest()[:16]
        store_dir = Path(config.cache_dir) / f"{source}-{key}"
        if store_dir.is_dir():
            try:
                store = load_store(store_dir, expected_fingerprint=fingerprint)
                logger.info("reusing cached %s store (%d records) from %s",
                            source, len(store), store_dir)
                return store
            except InputError as exc:
                logger.warning("cached %s store unusable (%s); rebuilding", source, exc)
                shutil.rmtree(store_dir, ignore_errors=True)
    store = build_store(payloads, source, embedder, batch_size=config.batch_size)
    if store_dir is not None:
        persist_store(store, store_dir)
    return store


def _hash_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def run(
    config: RunConfig,
    embedder: EmbeddingProvider | None = None,
    llm_backend: LlmBackend | None = None,
    reranker: RemoteReranker | None = None,
) -> RunOutcome:
    """Execute the full verification pipeline.

    Backends may be injected (tests, library embedding); otherwise they are
    built from the configuration. Never raises for expected failure modes:
    the outcome carries the exit code and a stage-annotated error message.
    """
    stage = "configuration"
    try:
        _validate(config)

        stage = "load paper"
        doc = load_paper(config.paper_path, converter=config.converter)

        stage = "segment paper"
        paper_chunks = segment_paper(doc, config.max_chunk_chars, config.overlap_chars)

        stage = "unpack codebase"
        code_files = unpack_codebase(
            config.code_zip_path,
            include_exts=config.include_exts,
            ignore_globs=config.ignore_globs,
            max_file_bytes=config.max_file_bytes,
        )

        stage = "segment code"
        code_chunks = [
            chunk
            for code_file in code_files
            for chunk in segment_code(code_file, config.max_chunk_lines, config.overlap_lines)
        ]
        if not code_chunks:
            raise InputError("codebase produced no chunks (all files empty?)")

        stage = "build embedder"
        if embedder is None:
            embedder = _make_embedder(config)

        stage = "build paper store"
        paper_store = _cached_store(
            "paper",
            _paper_payloads(paper_chunks),
            _hash_file(Path(config.paper_path)),
            {"max_chunk_chars": config.max_chunk_chars,
             "overlap_chars": config.overlap_chars},
            embedder,
            config,
        )

        stage = "build code store"
        code_store = _cached_store(
            "code",
            _code_payloads(code_chunks),
            _hash_file(Path(config.code_zip_path)),
            {"max_chunk_lines": config.max_chunk_lines,
             "overlap_lines": config.overlap_lines,
             "include_exts": sorted(config.include_exts),
             "ignore_globs": list(config.ignore_globs),
             "max_file_bytes": config.max_file_bytes},
            embedder,
            config,
        )

        stage = "select queries"
        queries = default_query_set(config.preset)
        if config.queries_file:
            queries = merge_queries(queries, load_query_file(config.queries_file))

        stage = "retrieve evidence"
        if reranker is None and config.rerank_endpoint:
            reranker = RemoteReranker(config.rerank_endpoint, model=config.rerank_model)
        bundles = _retrieve_all(queries, paper_store, code_store, embedder,
                                reranker, config)

        stage = "analyze aspects"
        if llm_backend is None:
            llm_backend = _make_llm_backend(config)
        findings = run_battery(
            queries, bundles, llm_backend,
            keep_going=config.keep_going,
            max_concurrency=config.max_concurrency,
        )

        stage = "compute score"
        weights = {q.query_id: q.weight for q in queries}
        score, breakdown = compute_score(findings, weights)

        stage = "assemble report"
        overall_mode = "remote" if bundles and all(
            b.rerank_mode == "remote" for b in bundles) else "lexical"
        created_at = STABLE_CREATED_AT if config.stable_output else (
            datetime.now(timezone.utc).isoformat(timespec="seconds")
        )
        report = AlignmentReport(
            meta={
                "paper_title": doc.title,
                "paper_path": str(config.paper_path),
                "code_archive": str(config.code_zip_path),
                "created_at": created_at,
                "tool_version": __version__,
                "provider_fingerprints": {
                    "embedding": embedder.fingerprint,
                    "llm": _llm_fingerprint(llm_backend),
                    "rerank": config.rerank_endpoint or "lexical",
                },
                "preset": config.preset,
                "k": config.k,
                "rerank_mode": overall_mode,
            },
            findings=tuple(findings),
            alignment_score=score,
            score_breakdown=tuple(breakdown),
            retrieval_stats={b.query_id: dict(b.stats) for b in bundles},
            evidence=evidence_from_bundles(bundles),
            warnings=tuple(w for b in bundles for w in b.warnings),
        )

        stage = "render report"
        files = _atomic_render(report, config)

        unverifiable = any(f.verdict == "unverifiable" for f in findings)
        exit_code = EXIT_UNVERIFIABLE if (config.keep_going and unverifiable) else EXIT_OK
        return RunOutcome(exit_code, tuple(files), report)

    except ProviderError as exc:
        return RunOutcome(EXIT_PROVIDER_ERROR, (), None, error=_describe(stage, exc))
    except (InputError, FileNotFoundError, ValueError) as exc:
        return RunOutcome(EXIT_INPUT_ERROR, (), None, error=_describe(stage, exc))


def _describe(stage: str, exc: Exception) -> str:
    hint = getattr(exc, "hint", None)
    message = f"[{stage}] {exc}"
    return f"{message} (hint: {hint})" if hint else message


def _retrieve_all(
    queries: list[QuerySpec],
    paper_store: VectorStore,
    code_store: VectorStore,
    embedder: EmbeddingProvider,
    reranker: RemoteReranker | None,
    config: RunConfig,
):
    def one(query: QuerySpec):
        return retrieve(
            query,
            paper_store,
            code_store,
            embedder,
            k=config.k,
            reranker=reranker,
            fetch_multiplier=config.fetch_multiplier,
            context_char_budget=config.context_char_budget,
        )

    with ThreadPoolExecutor(max_workers=max(1, config.max_concurrency)) as pool:
        futures = [pool.submit(one, q) for q in queries]
        bundles = []
        for future in futures:
            bundles.append(future.result())
    return bundles


def _atomic_render(report: AlignmentReport, config: RunConfig) -> list[Path]:
    out_dir = Path(config.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out_dir}: {exc}") from exc

    tmp_dir = Path(tempfile.mkdtemp(prefix=".report-", dir=out_dir))
    try:
        tmp_files = render(report, config.formats, tmp_dir)
        final: list[Path] = []
        for tmp_file in tmp_files:
            target = out_dir / tmp_file.name
            os.replace(tmp_file, target)
            final.append(target)
        return final
    finally:
        shutil.rmtree(tmp_dir, ignore_errors=True)
