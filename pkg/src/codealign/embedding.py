"""Embedding providers: a deterministic offline hasher and an HTTP client.

The offline embedder is normative for reproducible runs: lowercase the text,
split on runs of non-alphanumeric characters, hash each token with FNV-1a
(64-bit), bucket by ``hash mod dim`` with the sign taken from bit 63, then
L2-normalize. It is a pure function of (text, dim).

The remote provider speaks an OpenAI-compatible embeddings protocol:
``POST {"model": ..., "input": [...]}`` returning one float array per input
under ``data[i].embedding``. Retries (3 attempts, exponential backoff from
500 ms) apply only to timeouts and HTTP 5xx.
"""

from __future__ import annotations

import logging
import os
import re
import time
from typing import Protocol, Sequence

import numpy as np
import requests

from .errors import (
    DimensionMismatch,
    EmptyTextError,
    ProviderRejected,
    ProviderUnreachable,
)

logger = logging.getLogger(__name__)

DEFAULT_DIM = 384

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class EmbeddingProvider(Protocol):
    """Anything that turns a batch of texts into row vectors."""

    @property
    def fingerprint(self) -> str: ...

    @property
    def dim(self) -> int | None: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


class HashingEmbedder:
    """Deterministic offline feature-hash embedder (FNV-1a, signed buckets)."""

    name = "fnv1a-hash"
    version = "1"

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise ValueError("dim must be positive")
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def fingerprint(self) -> str:
        return f"{self.name}:{self._dim}:{self.version}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self._dim), dtype=np.float64)
        for i, text in enumerate(texts):
            tokens = _TOKEN_RE.findall(text.lower())
            if not tokens:
                raise EmptyTextError(
                    f"text at index {i} has no alphanumeric tokens", index=i
                )
            row = out[i]
            for token in tokens:
                h = fnv1a_64(token.encode("utf-8"))
                sign = 1.0 if (h >> 63) == 0 else -1.0
                row[h % self._dim] += sign
            norm = np.linalg.norm(row)
            if norm == 0.0:
                # opposite-sign collisions cancelled every bucket
                raise EmptyTextError(
                    f"text at index {i} hashed to the zero vector", index=i
                )
            row /= norm
        return out


class RemoteEmbedder:
    """Embeddings-over-HTTP client (OpenAI-compatible wire format)."""

    version = "http-1"

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int | None = None,
        api_key_env: str = "EMBEDDING_API_KEY",
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self._dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._session = session or requests.Session()

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def fingerprint(self) -> str:
        return f"{self.model}:{self._dim if self._dim else 'auto'}:{self.version}"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        payload = {"model": self.model, "input": list(texts)}
        body = _post_json(
            self._session,
            self.endpoint,
            payload,
            api_key=os.environ.get(self.api_key_env),
            timeout=self.timeout,
            max_attempts=self.max_attempts,
            backoff=self.backoff,
        )
        vectors = _parse_embedding_response(body)
        if len(vectors) != len(texts):
            raise ProviderRejected(
                f"provider returned {len(vectors)} vectors for {len(texts)} inputs"
            )
        mat = np.asarray(vectors, dtype=np.float64)
        if mat.ndim != 2:
            raise ProviderRejected("provider returned ragged or non-array embeddings")
        if self._dim is None:
            self._dim = int(mat.shape[1])
        elif mat.shape[1] != self._dim:
            raise DimensionMismatch(
                f"provider returned dim {mat.shape[1]}, expected {self._dim}"
            )
        return mat


def _parse_embedding_response(body: dict) -> list[list[float]]:
    if isinstance(body, dict) and "data" in body:
        items = body["data"]
        try:
            items = sorted(items, key=lambda it: it["index"]) if all(
                isinstance(it, dict) and "index" in it for it in items
            ) else items
            return [it["embedding"] for it in items]
        except (TypeError, KeyError) as exc:
            raise ProviderRejected(f"malformed embeddings response: {exc}") from exc
    if isinstance(body, dict) and "embeddings" in body:
        return list(body["embeddings"])
    raise ProviderRejected("embeddings response has neither 'data' nor 'embeddings'")


def _post_json(
    session: requests.Session,
    url: str,
    payload: dict,
    api_key: str | None,
    timeout: float,
    max_attempts: int,
    backoff: float,
) -> dict:
    """POST with retries on timeout/5xx only; 4xx fails fast."""
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_error: str = ""
    for attempt in range(max_attempts):
        if attempt > 0 and backoff > 0:
            time.sleep(backoff * (2 ** (attempt - 1)))
        try:
            resp = session.post(url, json=payload, headers=headers, timeout=timeout)
        except (requests.Timeout, requests.ConnectionError) as exc:
            last_error = f"{type(exc).__name__}: {exc}"
            logger.warning("request to %s failed (attempt %d/%d): %s",
                           url, attempt + 1, max_attempts, last_error)
            continue
        if 400 <= resp.status_code < 500:
            raise ProviderRejected(
                f"{url} answered {resp.status_code}: {resp.text[:300]}",
                hint="check endpoint URL, model name, and API key",
            )
        if resp.status_code >= 500:
            last_error = f"HTTP {resp.status_code}"
            logger.warning("request to %s failed (attempt %d/%d): %s",
                           url, attempt + 1, max_attempts, last_error)
            continue
        try:
            return resp.json()
        except ValueError as exc:
            raise ProviderRejected(f"{url} returned non-JSON body") from exc
    raise ProviderUnreachable(
        f"{url} unreachable after {max_attempts} attempts ({last_error})"
    )


def embed_texts(texts: Sequence[str], provider: EmbeddingProvider) -> np.ndarray:
    """Embed a batch, returning one unit-norm float64 row per input text."""
    if len(texts) == 0:
        return np.zeros((0, provider.dim or 0), dtype=np.float64)
    for i, text in enumerate(texts):
        if not text.strip():
            raise EmptyTextError(f"text at index {i} is empty", index=i)
    mat = np.asarray(provider.embed(texts), dtype=np.float64)
    norms = np.linalg.norm(mat, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise EmptyTextError(
            f"text at index {int(zero[0])} embedded to the zero vector",
            index=int(zero[0]),
        )
    return mat / norms[:, None]
