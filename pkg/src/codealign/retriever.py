"""Verification queries, candidate re-ranking, and evidence assembly.

Each aspect of the methodology is probed by one predefined query run against
both stores. Candidates are over-fetched (``fetch_multiplier`` times k),
re-ranked, truncated to k, then greedily packed into a per-source character
budget.

The lexical reranker is the always-available fallback:
``score = |tokens(question) ∩ tokens(body)| / |tokens(question)|`` over
lowercased alphanumeric tokens of length >= 3. A remote reranker speaks
``POST {"query": ..., "passages": [...]}`` and answers with
``{"results": [{"index": i, "relevance_score": s}, ...]}``; if it cannot be
reached the bundle silently degrades to lexical mode with a recorded warning.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .embed_store import ScoredHit, VectorStore, search
from .embedding import EmbeddingProvider, embed_texts, _post_json
from .errors import FingerprintMismatch, InputError, ProviderError, RerankUnavailable

logger = logging.getLogger(__name__)

DEFAULT_K = 5
DEFAULT_FETCH_MULTIPLIER = 3
DEFAULT_CONTEXT_CHAR_BUDGET = 8000

_LEX_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class QuerySpec:
    """One verification aspect to check across paper and code."""

    query_id: str
    question: str
    weight: float = 1.0
    targets: frozenset[str] = frozenset({"paper", "code"})
    preset_tags: frozenset[str] = frozenset()

    def __post_init__(self):
        if not self.query_id:
            raise ValueError("query_id must be non-empty")
        if not self.question.strip():
            raise ValueError(f"query {self.query_id}: question must be non-empty")
        if self.weight <= 0:
            raise ValueError(f"query {self.query_id}: weight must be > 0")


# The first three questions are the stock verification prompts; the rest
# cover preprocessing, evaluation, the objective, and novel procedures so a
# custom method gets probed step by step.
BUILTIN_QUERIES: tuple[QuerySpec, ...] = (
    QuerySpec("arch", "What is the model architecture described?",
              preset_tags=frozenset({"offtheshelf", "common"})),
    QuerySpec("hparams", "What hyperparameters are suggested for training?",
              preset_tags=frozenset({"offtheshelf", "common"})),
    QuerySpec("algorithm", "What training algorithm is used?",
              preset_tags=frozenset({"offtheshelf", "common"})),
    QuerySpec("data_prep", "What data preprocessing steps are applied?",
              preset_tags=frozenset({"common"})),
    QuerySpec("evaluation", "What evaluation metrics and procedures are used?",
              preset_tags=frozenset({"common"})),
    QuerySpec("loss", "What loss/objective function is optimized?",
              preset_tags=frozenset({"common"})),
    QuerySpec("custom_method",
              "What novel algorithm or procedure does the work introduce, step by step?",
              preset_tags=frozenset({"custom"})),
)

PRESETS = ("offtheshelf", "custom", "all")


def default_query_set(preset: str = "all") -> list[QuerySpec]:
    """The built-in battery filtered by preset tag (order preserved)."""
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}, expected one of {PRESETS}")
    if preset == "all":
        return list(BUILTIN_QUERIES)
    wanted = {preset, "common"}
    return [q for q in BUILTIN_QUERIES if q.preset_tags & wanted]


def load_query_file(path: str | Path) -> list[QuerySpec]:
    """Parse a user query file: a JSON list of QuerySpec field objects."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read query file {path}: {exc}") from exc
    if not isinstance(raw, list):
        raise InputError(f"query file {path} must contain a JSON list")
    out: list[QuerySpec] = []
    seen: set[str] = set()
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise InputError(f"query file {path} entry {i} is not an object")
        try:
            spec = QuerySpec(
                query_id=item["query_id"],
                question=item["question"],
                weight=float(item.get("weight", 1.0)),
                targets=frozenset(item.get("targets", ("paper", "code"))),
                preset_tags=frozenset(item.get("preset_tags", ())),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"query file {path} entry {i} is invalid: {exc}") from exc
        if not spec.targets <= {"paper", "code"}:
            raise InputError(
                f"query file {path} entry {i}: targets must be subset of paper/code"
            )
        if spec.query_id in seen:
            raise InputError(f"query file {path}: duplicate query_id {spec.query_id}")
        seen.add(spec.query_id)
        out.append(spec)
    return out


def merge_queries(base: list[QuerySpec], overrides: list[QuerySpec]) -> list[QuerySpec]:
    """Overlay user queries on the battery: same id replaces, new id appends."""
    by_id = {q.query_id: q for q in overrides}
    merged = [by_id.pop(q.query_id, q) for q in base]
    merged.extend(q for q in overrides if q.query_id in by_id)
    return merged


# --- re-ranking -------------------------------------------------------------

def lexical_tokens(text: str) -> set[str]:
    return {t for t in _LEX_TOKEN_RE.findall(text.lower()) if len(t) >= 3}


def lexical_rerank(question: str, hits: list[ScoredHit]) -> list[ScoredHit]:
    """Order hits by token-overlap score, then cosine, then chunk_id."""
    q_tokens = lexical_tokens(question)
    denom = len(q_tokens)

    def score(hit: ScoredHit) -> float:
        if denom == 0:
            return 0.0
        return len(q_tokens & lexical_tokens(hit.body)) / denom

    return sorted(hits, key=lambda h: (-score(h), -h.score, h.chunk_id))


class RemoteReranker:
    """Rerank-over-HTTP client; failures raise RerankUnavailable."""

    def __init__(
        self,
        endpoint: str,
        model: str | None = None,
        api_key_env: str = "RERANK_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session = session or requests.Session()

    def rerank(self, question: str, hits: list[ScoredHit]) -> list[ScoredHit]:
        if not hits:
            return []
        payload: dict = {"query": question, "passages": [h.body for h in hits]}
        if self.model:
            payload["model"] = self.model
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
        except ProviderError as exc:
            raise RerankUnavailable(str(exc)) from exc

        results = body.get("results") if isinstance(body, dict) else None
        if not isinstance(results, list):
            raise RerankUnavailable("rerank response lacks a 'results' list")
        scores: dict[int, float] = {}
        for item in results:
            try:
                idx = int(item["index"])
                rel = float(item.get("relevance_score", item.get("score")))
            except (KeyError, TypeError, ValueError) as exc:
                raise RerankUnavailable(f"malformed rerank result: {item!r}") from exc
            scores[idx] = rel
        if set(scores) != set(range(len(hits))):
            raise RerankUnavailable(
                f"rerank response covered indices {sorted(scores)} "
                f"for {len(hits)} passages"
            )
        order = sorted(range(len(hits)),
                       key=lambda i: (-scores[i], -hits[i].score, hits[i].chunk_id))
        return [hits[i] for i in order]


# --- evidence assembly ------------------------------------------------------

@dataclass(frozen=True)
class EvidenceBundle:
    """Per-query retrieval result: budget-packed hits from each store."""

    query_id: str
    paper_hits: tuple[ScoredHit, ...]
    code_hits: tuple[ScoredHit, ...]
    rerank_mode: str  # remote | lexical
    context_char_budget: int
    warnings: tuple[str, ...] = ()
    stats: dict[str, dict[str, int]] = field(default_factory=dict)


def retrieve(
    query: QuerySpec,
    paper_store: VectorStore | None,
    code_store: VectorStore | None,
    provider: EmbeddingProvider,
    k: int = DEFAULT_K,
    reranker: RemoteReranker | None = None,
    fetch_multiplier: int = DEFAULT_FETCH_MULTIPLIER,
    context_char_budget: int = DEFAULT_CONTEXT_CHAR_BUDGET,
) -> EvidenceBundle:
    """Run one query against its target stores and pack the evidence."""
    if k < 1:
        raise ValueError("k must be >= 1")
    stores = {"paper": paper_store, "code": code_store}
    for name in sorted(query.targets):
        store = stores[name]
        if store is None:
            raise ValueError(f"query {query.query_id} targets {name} but no store given")
        if store.provider_fingerprint != provider.fingerprint:
            raise FingerprintMismatch(
                f"{name} store was embedded with {store.provider_fingerprint!r}, "
                f"current provider is {provider.fingerprint!r}"
            )

    qvec = embed_texts([query.question], provider)[0]
    warnings: list[str] = []

    fetched: dict[str, list[ScoredHit]] = {}
    for name in ("paper", "code"):
        store = stores[name]
        if name in query.targets and store is not None:
            fetched[name] = search(store, qvec, k * fetch_multiplier)
        else:
            fetched[name] = []

    mode = "lexical"
    ordered: dict[str, list[ScoredHit]] = {}
    if reranker is not None:
        try:
            ordered = {name: reranker.rerank(query.question, hits)
                       for name, hits in fetched.items()}
            mode = "remote"
        except RerankUnavailable as exc:
            warnings.append(
                f"{query.query_id}: remote rerank unavailable ({exc}); "
                "falling back to lexical"
            )
            logger.warning(warnings[-1])
            ordered = {}
    if mode == "lexical":
        ordered = {name: lexical_rerank(query.question, hits)
                   for name, hits in fetched.items()}

    packed: dict[str, tuple[ScoredHit, ...]] = {}
    stats: dict[str, dict[str, int]] = {}
    for name in ("paper", "code"):
        kept, drops = _pack_budget(ordered[name][:k], context_char_budget)
        packed[name] = tuple(kept)
        stats[name] = {
            "fetched": len(fetched[name]),
            "kept": len(kept),
            "budget_drops": drops,
        }

    return EvidenceBundle(
        query_id=query.query_id,
        paper_hits=packed["paper"],
        code_hits=packed["code"],
        rerank_mode=mode,
        context_char_budget=context_char_budget,
        warnings=tuple(warnings),
        stats=stats,
    )


def _pack_budget(hits: list[ScoredHit], budget: int) -> tuple[list[ScoredHit], int]:
    total = 0
    kept: list[ScoredHit] = []
    drops = 0
    for hit in hits:
        if total + len(hit.body) <= budget:
            kept.append(hit)
            total += len(hit.body)
        else:
            drops += 1
    return kept, drops
