"""codealign: check that a codebase implements what its paper describes.

The pipeline ingests a research paper (markdown, or PDF via an external
converter) and a codebase ZIP, embeds both into separate vector stores, runs
a battery of verification queries against each store, has an LLM backend
compare the retrieved evidence per aspect, and renders a scored,
evidence-linked alignment report.
"""

__version__ = "0.1.0"

from .analyzer import (
    AspectFinding,
    LlmBackend,
    RemoteChatBackend,
    ScriptedMockBackend,
    analyze_aspect,
    run_battery,
)
from .code_ingest import CodeChunk, CodeFile, segment_code, unpack_codebase
from .embed_store import (
    EmbeddingRecord,
    ScoredHit,
    VectorStore,
    build_store,
    load_store,
    persist_store,
    search,
)
from .embedding import HashingEmbedder, RemoteEmbedder, embed_texts
from .errors import CodeAlignError, InputError, ProviderError
from .orchestrator import RunConfig, RunOutcome, run
from .paper_ingest import PaperChunk, PaperDocument, load_paper, segment_paper
from .reporter import (
    AlignmentReport,
    compute_score,
    recompute_score,
    render,
    report_schema,
)
from .retriever import (
    EvidenceBundle,
    QuerySpec,
    RemoteReranker,
    default_query_set,
    lexical_rerank,
    retrieve,
)

__all__ = [
    "__version__",
    "AlignmentReport",
    "AspectFinding",
    "CodeAlignError",
    "CodeChunk",
    "CodeFile",
    "EmbeddingRecord",
    "EvidenceBundle",
    "HashingEmbedder",
    "InputError",
    "LlmBackend",
    "PaperChunk",
    "PaperDocument",
    "ProviderError",
    "QuerySpec",
    "RemoteChatBackend",
    "RemoteEmbedder",
    "RemoteReranker",
    "RunConfig",
    "RunOutcome",
    "ScoredHit",
    "ScriptedMockBackend",
    "VectorStore",
    "analyze_aspect",
    "build_store",
    "compute_score",
    "default_query_set",
    "embed_texts",
    "lexical_rerank",
    "load_paper",
    "load_store",
    "persist_store",
    "recompute_score",
    "render",
    "report_schema",
    "retrieve",
    "run",
    "run_battery",
    "search",
    "segment_code",
    "segment_paper",
    "unpack_codebase",
]
