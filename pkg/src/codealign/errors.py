"""Exception hierarchy for the alignment pipeline.

Two broad families matter for exit-code mapping: ``InputError`` (bad user
input or configuration, exit 2) and ``ProviderError`` (a remote backend
failed, exit 3). Everything else is a plain ``CodeAlignError``.
"""

from __future__ import annotations


class CodeAlignError(Exception):
    """Base class for all errors raised by this package.

    ``hint`` carries an optional remediation message surfaced by the CLI.
    """

    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message)
        self.hint = hint


class InputError(CodeAlignError):
    """User-supplied input or configuration is unusable."""


class ProviderError(CodeAlignError):
    """A remote provider (embeddings, rerank, chat) failed."""


# --- paper ingestion -------------------------------------------------------

class PdfWithoutConverter(InputError):
    """A PDF was given but no external converter command is configured."""


class ConverterFailed(InputError):
    """The external converter exited nonzero or produced no output."""


class EmptyDocument(InputError):
    """The paper text is empty after whitespace trimming."""


# --- code ingestion --------------------------------------------------------

class ArchiveUnreadable(InputError):
    """The codebase archive is not a readable ZIP."""


class ZipSlipDetected(InputError):
    """An archive entry attempts path traversal; the archive is hostile."""


class EmptyCodebase(InputError):
    """No archive entry survived the extension/size/binary filters."""


# --- embedding and stores --------------------------------------------------

class EmptyTextError(InputError):
    """A text handed to the embedder is empty or has no tokens."""

    def __init__(self, message: str, index: int | None = None, hint: str | None = None):
        super().__init__(message, hint)
        self.index = index


class ProviderUnreachable(ProviderError):
    """Network failure or HTTP 5xx persisting after retries."""


class ProviderRejected(ProviderError):
    """HTTP 4xx from a provider; almost always a misconfiguration."""


class DimensionMismatch(ProviderError):
    """A vector's dimensionality differs from the store's."""


class ManifestMissing(InputError):
    """A store directory has no manifest.json."""


class VersionUnsupported(InputError):
    """A persisted store uses an unknown format_version."""


class CorruptRecord(InputError):
    """A records.jsonl line failed to parse or has the wrong dimension."""


class FingerprintMismatch(InputError):
    """A persisted store was built with a different embedding provider."""


# --- retrieval and analysis ------------------------------------------------

class RerankUnavailable(ProviderError):
    """The remote reranker could not be used; callers degrade to lexical."""


class BackendUnreachable(ProviderError):
    """The chat backend failed after retries."""


class MockMissingScript(InputError):
    """The scripted mock has no (remaining) response for a query id."""


# --- reporting and orchestration -------------------------------------------

class OutDirUnwritable(InputError):
    """The output directory cannot be created or written."""


class ConfigError(InputError):
    """Mutually inconsistent or incomplete run configuration."""
