"""Dual vector stores: exact cosine search plus JSONL persistence.

One store per source (paper, code). Search is brute-force cosine over the
full record matrix: corpora here are a few thousand chunks at most, and the
exact ranking keeps results reproducible. Ties break by ascending chunk id.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import EmbeddingProvider, embed_texts
from .errors import (
    CorruptRecord,
    DimensionMismatch,
    EmptyTextError,
    FingerprintMismatch,
    ManifestMissing,
    VersionUnsupported,
)

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_BATCH_SIZE = 32

MANIFEST_NAME = "manifest.json"
RECORDS_NAME = "records.jsonl"


@dataclass(frozen=True, eq=False)
class EmbeddingRecord:
    chunk_id: str
    source: str  # paper | code
    vector: np.ndarray
    dim: int
    metadata: dict[str, str]
    body: str


@dataclass(frozen=True)
class ScoredHit:
    """One search result; ``score`` is the cosine of query and record."""

    chunk_id: str
    score: float
    metadata: dict[str, str]
    body: str


class VectorStore:
    """Immutable collection of unit-norm embedding records for one source."""

    def __init__(self, source: str, dim: int, provider_fingerprint: str,
                 records: Sequence[EmbeddingRecord]):
        if source not in ("paper", "code"):
            raise ValueError(f"source must be 'paper' or 'code', got {source!r}")
        seen: set[str] = set()
        for rec in records:
            if rec.dim != dim:
                raise DimensionMismatch(
                    f"record {rec.chunk_id} has dim {rec.dim}, store dim {dim}"
                )
            if rec.chunk_id in seen:
                raise ValueError(f"duplicate chunk_id in store: {rec.chunk_id}")
            seen.add(rec.chunk_id)
        self.source = source
        self.dim = dim
        self.provider_fingerprint = provider_fingerprint
        self.records: tuple[EmbeddingRecord, ...] = tuple(records)
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.records:
                self._matrix = np.vstack([r.vector for r in self.records])
            else:
                self._matrix = np.zeros((0, self.dim), dtype=np.float64)
        return self._matrix

    def search(self, query_vector: np.ndarray, k: int) -> list[ScoredHit]:
        return search(self, query_vector, k)


def build_store(
    chunks: Iterable[tuple[str, str, dict[str, str]]],
    source: str,
    provider: EmbeddingProvider,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> VectorStore:
    """Embed (chunk_id, body, metadata) triples in batches into a store."""
    items = list(chunks)
    if not items:
        raise ValueError("cannot build a store from zero chunks")

    records: list[EmbeddingRecord] = []
    dim: int | None = None
    for batch_start in range(0, len(items), batch_size):
        batch = items[batch_start:batch_start + batch_size]
        try:
            vectors = embed_texts([body for _, body, _ in batch], provider)
        except EmptyTextError as exc:
            offender = batch[exc.index][0] if exc.index is not None else "?"
            raise EmptyTextError(
                f"chunk {offender} cannot be embedded: {exc}", index=exc.index
            ) from exc
        if dim is None:
            dim = int(vectors.shape[1])
        elif vectors.shape[1] != dim:
            raise DimensionMismatch(
                f"batch at offset {batch_start} came back with dim "
                f"{vectors.shape[1]}, store dim {dim}"
            )
        for (chunk_id, body, metadata), vec in zip(batch, vectors):
            records.append(EmbeddingRecord(
                chunk_id=chunk_id,
                source=source,
                vector=vec,
                dim=dim,
                metadata=dict(metadata),
                body=body,
            ))
    assert dim is not None
    return VectorStore(source, dim, provider.fingerprint, records)


def search(store: VectorStore, query_vector: np.ndarray, k: int) -> list[ScoredHit]:
    """Top-k records by cosine score, ties broken by ascending chunk_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vector, dtype=np.float64).reshape(-1)
    if q.shape[0] != store.dim:
        raise DimensionMismatch(
            f"query dim {q.shape[0]} != store dim {store.dim}"
        )
    qnorm = np.linalg.norm(q)
    if qnorm == 0.0:
        raise ValueError("query vector has zero norm")
    scores = store.matrix @ (q / qnorm)
    np.clip(scores, -1.0, 1.0, out=scores)
    order = sorted(range(len(store.records)),
                   key=lambda i: (-scores[i], store.records[i].chunk_id))
    hits = []
    for i in order[:min(k, len(order))]:
        rec = store.records[i]
        hits.append(ScoredHit(rec.chunk_id, float(scores[i]), rec.metadata, rec.body))
    return hits


# --- persistence ------------------------------------------------------------

def persist_store(store: VectorStore, dir: str | Path) -> None:
    """Write manifest.json + records.jsonl; floats keep round-trip precision."""
    out = Path(dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "source": store.source,
        "dim": store.dim,
        "provider_fingerprint": store.provider_fingerprint,
        "record_count": len(store.records),
        "format_version": FORMAT_VERSION,
    }
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    with (out / RECORDS_NAME).open("w", encoding="utf-8") as fh:
        for rec in store.records:
            fh.write(json.dumps({
                "chunk_id": rec.chunk_id,
                "metadata": rec.metadata,
                "body": rec.body,
                "vector": [float(x) for x in rec.vector],
            }, ensure_ascii=False, sort_keys=True) + "\n")


def load_store(dir: str | Path, expected_fingerprint: str | None = None) -> VectorStore:
    """Load a persisted store; search results match the original exactly."""
    root = Path(dir)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise ManifestMissing(f"no {MANIFEST_NAME} in {root}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (ValueError, OSError) as exc:
        raise ManifestMissing(f"unreadable manifest in {root}: {exc}") from exc

    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionUnsupported(
            f"store format_version {version!r} unsupported (expected {FORMAT_VERSION})"
        )
    fingerprint = manifest.get("provider_fingerprint", "")
    if expected_fingerprint is not None and fingerprint != expected_fingerprint:
        raise FingerprintMismatch(
            f"store built with provider {fingerprint!r}, "
            f"current provider is {expected_fingerprint!r}"
        )
    source = manifest.get("source")
    dim = manifest.get("dim")
    if source not in ("paper", "code") or not isinstance(dim, int):
        raise VersionUnsupported(f"manifest in {root} is malformed")

    records: list[EmbeddingRecord] = []
    records_path = root / RECORDS_NAME
    if not records_path.is_file():
        raise CorruptRecord(f"missing {RECORDS_NAME} in {root}")
    with records_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                vector = np.asarray(obj["vector"], dtype=np.float64)
                chunk_id = obj["chunk_id"]
                metadata = obj["metadata"]
                body = obj["body"]
            except (ValueError, KeyError, TypeError) as exc:
                raise CorruptRecord(
                    f"{records_path} line {lineno}: {exc}"
                ) from exc
            if vector.ndim != 1 or vector.shape[0] != dim:
                raise CorruptRecord(
                    f"{records_path} line {lineno}: vector dim "
                    f"{vector.shape} != store dim {dim}"
                )
            records.append(EmbeddingRecord(
                chunk_id=chunk_id, source=source, vector=vector,
                dim=dim, metadata=metadata, body=body,
            ))
    expected_count = manifest.get("record_count")
    if expected_count is not None and expected_count != len(records):
        raise CorruptRecord(
            f"{records_path}: {len(records)} records, manifest says {expected_count}"
        )
    return VectorStore(source, dim, fingerprint, records)
