"""Code-side ingestion: unpack a codebase ZIP and chunk files by structure.

Files are read in memory straight from the archive; nothing is extracted to
disk. Structural boundaries are detected with line-pattern heuristics
(``def``/``class`` for Python, block-opening braces for brace languages),
not full parsers. Oversized units fall back to fixed-size line windows with
overlap.
"""

from __future__ import annotations

import hashlib
import logging
import re
import zipfile
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from .errors import ArchiveUnreadable, EmptyCodebase, ZipSlipDetected

logger = logging.getLogger(__name__)

DEFAULT_INCLUDE_EXTS = frozenset({
    "py", "js", "ts", "java", "c", "cc", "cpp", "h", "hpp", "go", "rs", "sh",
    "md", "txt", "json", "yaml", "yml", "toml", "ini", "cfg",
})
DEFAULT_IGNORE_GLOBS = (
    ".git/**",
    "**/node_modules/**",
    "**/__pycache__/**",
    "**/*.min.js",
)
DEFAULT_MAX_FILE_BYTES = 1 * 1024 * 1024
DEFAULT_MAX_CHUNK_LINES = 120
DEFAULT_OVERLAP_LINES = 20

_PYTHON_EXTS = {"py"}
_BRACE_EXTS = {"js", "ts", "java", "c", "cc", "cpp", "h", "hpp", "go", "rs", "sh"}
_CONFIG_EXTS = {"json", "yaml", "yml", "toml", "ini", "cfg", "ipynb"}
_TEXT_EXTS = {"md", "txt"}

_PY_BOUNDARY_RE = re.compile(r"^[ \t]{0,8}(?:async[ \t]+)?(def|class)[ \t]")
_PY_NAME_RE = re.compile(r"^[ \t]*(?:async[ \t]+)?(def|class)[ \t]+([A-Za-z_]\w*)")
_BRACE_SIG_RE = re.compile(r"\w+\s*\([^;]*\)\s*$")
_BRACE_CLASS_RE = re.compile(
    r"^(?:\w+\s+)*?(class|struct|interface|enum)\s+([A-Za-z_]\w*)"
)


@dataclass(frozen=True)
class CodeFile:
    """One eligible file pulled from the archive."""

    rel_path: str
    language_tag: str  # python | brace_language | config | text | unknown
    content: str
    line_count: int


@dataclass(frozen=True)
class CodeChunk:
    """A structure-aware span of a code file (1-based inclusive line range)."""

    chunk_id: str
    rel_path: str
    unit_kind: str  # function | class | config_whole | line_window | file_whole
    unit_name: str | None
    line_start: int
    line_end: int
    body: str
    seq: int

    @property
    def embedding_text(self) -> str:
        """Body with the file banner; used for embedding, never for offsets."""
        return f"// file: {self.rel_path}\n{self.body}"


def language_tag_for(rel_path: str) -> str:
    ext = _extension(rel_path)
    if ext in _PYTHON_EXTS:
        return "python"
    if ext in _BRACE_EXTS:
        return "brace_language"
    if ext in _CONFIG_EXTS:
        return "config"
    if ext in _TEXT_EXTS:
        return "text"
    return "unknown"


def _extension(name: str) -> str:
    return Path(name).suffix.lstrip(".").lower()


def _glob_to_regex(pattern: str) -> re.Pattern[str]:
    out: list[str] = []
    i, n = 0, len(pattern)
    while i < n:
        c = pattern[i]
        if c == "*":
            if pattern.startswith("**/", i):
                out.append("(?:[^/]+/)*")
                i += 3
            elif pattern.startswith("**", i):
                out.append(".*")
                i += 2
            else:
                out.append("[^/]*")
                i += 1
        elif c == "?":
            out.append("[^/]")
            i += 1
        else:
            out.append(re.escape(c))
            i += 1
    return re.compile("^" + "".join(out) + "$")


def _is_traversal(name: str) -> bool:
    if name.startswith("/"):
        return True
    if len(name) >= 2 and name[1] == ":":  # windows drive letter
        return True
    return ".." in PurePosixPath(name).parts


def unpack_codebase(
    zip_path: str | Path,
    include_exts: frozenset[str] | set[str] = DEFAULT_INCLUDE_EXTS,
    ignore_globs: tuple[str, ...] | list[str] = DEFAULT_IGNORE_GLOBS,
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES,
) -> list[CodeFile]:
    """List eligible text files from a ZIP archive, sorted by path.

    Filters by extension, ignore globs, and size; skips binaries (NUL byte in
    the first 8 KiB). Any entry with a traversal path aborts the whole unpack
    with ZipSlipDetected. Raises ArchiveUnreadable or EmptyCodebase.
    """
    include = {e.lstrip(".").lower() for e in include_exts}
    ignore_res = [_glob_to_regex(g) for g in ignore_globs]

    try:
        archive = zipfile.ZipFile(zip_path)
    except (zipfile.BadZipFile, OSError) as exc:
        raise ArchiveUnreadable(f"cannot read ZIP archive {zip_path}: {exc}") from exc

    by_path: dict[str, CodeFile] = {}
    with archive:
        for info in archive.infolist():
            name = info.filename.replace("\\", "/")
            if _is_traversal(name):
                raise ZipSlipDetected(
                    f"archive entry escapes the extraction root: {info.filename!r}",
                    hint="the archive looks hostile; refuse to process it",
                )
            if info.is_dir() or name.endswith("/"):
                continue
            rel = str(PurePosixPath(name))
            if _extension(rel) not in include:
                continue
            if any(rx.match(rel) for rx in ignore_res):
                continue
            if info.file_size > max_file_bytes:
                logger.debug("skipping %s: %d bytes over limit", rel, info.file_size)
                continue
            data = archive.read(info)
            if b"\x00" in data[:8192]:
                logger.debug("skipping %s: binary content", rel)
                continue
            content = data.decode("utf-8", errors="replace")
            by_path[rel] = CodeFile(
                rel_path=rel,
                language_tag=language_tag_for(rel),
                content=content,
                line_count=len(content.splitlines()),
            )

    if not by_path:
        raise EmptyCodebase(
            f"no eligible files in {zip_path}",
            hint="check include_exts / ignore_globs; the archive may be empty",
        )
    return [by_path[k] for k in sorted(by_path)]


# --- segmentation ----------------------------------------------------------

def segment_code(
    file: CodeFile,
    max_chunk_lines: int = DEFAULT_MAX_CHUNK_LINES,
    overlap_lines: int = DEFAULT_OVERLAP_LINES,
) -> list[CodeChunk]:
    """Split one file into structure-aware, line-bounded chunks.

    Unit regions longer than ``max_chunk_lines`` are re-split into line
    windows with ``overlap_lines`` overlap. Every line of the file lands in
    at least one chunk.
    """
    if max_chunk_lines < 20:
        raise ValueError("max_chunk_lines must be >= 20")
    if not 0 <= overlap_lines < max_chunk_lines:
        raise ValueError("overlap_lines must be in [0, max_chunk_lines)")

    lines = file.content.splitlines()
    n = len(lines)
    if n == 0:
        return []

    regions = _regions_for(file, lines)

    src_tag = hashlib.sha1(file.rel_path.encode("utf-8")).hexdigest()[:8]
    chunks: list[CodeChunk] = []
    seq = 0
    for start, end, kind, name in regions:
        if end - start + 1 <= max_chunk_lines:
            spans = [(start, end)]
            span_kind = kind
        else:
            spans = _line_windows(start, end, max_chunk_lines, overlap_lines)
            span_kind = "line_window"
        for ls, le in spans:
            chunks.append(CodeChunk(
                chunk_id=f"code:{src_tag}:{seq:04d}",
                rel_path=file.rel_path,
                unit_kind=span_kind,
                unit_name=name,
                line_start=ls,
                line_end=le,
                body="\n".join(lines[ls - 1:le]),
                seq=seq,
            ))
            seq += 1
    return chunks


def _regions_for(file: CodeFile, lines: list[str]) -> list[tuple[int, int, str, str | None]]:
    """1-based inclusive (start, end, kind, name) regions covering the file."""
    n = len(lines)
    if file.language_tag == "config":
        return [(1, n, "config_whole", None)]

    if file.language_tag == "python":
        boundaries = _python_boundaries(lines)
    elif file.language_tag == "brace_language":
        boundaries = _brace_boundaries(lines)
    else:
        boundaries = []

    if not boundaries:
        return [(1, n, "file_whole", None)]

    regions: list[tuple[int, int, str, str | None]] = []
    first = boundaries[0][0]
    if first > 0:
        regions.append((1, first, "line_window", None))
    for i, (idx, kind, name) in enumerate(boundaries):
        end = boundaries[i + 1][0] if i + 1 < len(boundaries) else n
        regions.append((idx + 1, end, kind, name))
    return regions


def _python_boundaries(lines: list[str]) -> list[tuple[int, str, str | None]]:
    found = []
    for i, line in enumerate(lines):
        if _PY_BOUNDARY_RE.match(line):
            m = _PY_NAME_RE.match(line)
            kind = "class" if (m and m.group(1) == "class") else "function"
            found.append((i, kind, m.group(2) if m else None))
    return found


def _brace_boundaries(lines: list[str]) -> list[tuple[int, str, str | None]]:
    n = len(lines)
    found = []
    for i, line in enumerate(lines):
        if not line or not (line[0].isalpha() or line[0] == "_"):
            continue
        stripped = line.rstrip()
        opens_here = stripped.endswith("{")
        opens_soon = False
        if not opens_here and _BRACE_SIG_RE.search(stripped):
            for j in (i + 1, i + 2):
                if j < n and (lines[j].lstrip().startswith("{") or lines[j].rstrip().endswith("{")):
                    opens_soon = True
                    break
        if not (opens_here or opens_soon):
            continue
        cm = _BRACE_CLASS_RE.match(stripped)
        if cm:
            found.append((i, "class", cm.group(2)))
        else:
            nm = re.search(r"([A-Za-z_]\w*)\s*\(", stripped)
            found.append((i, "function", nm.group(1) if nm else None))
    return found


def _line_windows(start: int, end: int, max_lines: int, overlap: int) -> list[tuple[int, int]]:
    stride = max_lines - overlap
    windows = []
    s = start
    while True:
        e = min(s + max_lines - 1, end)
        windows.append((s, e))
        if e >= end:
            return windows
        s += stride
