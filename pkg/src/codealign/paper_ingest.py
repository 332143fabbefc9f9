"""Paper-side ingestion: load a markdown paper and cut it into bounded chunks.

Markdown and plain-text files are read verbatim (modulo line-ending and
setext-heading normalization); PDFs are delegated to a user-configured
external converter command that must emit markdown on stdout.

Segmentation splits at every ATX heading line (``#`` .. ``######`` at column
0, outside fenced code blocks). Oversized sections are re-split at paragraph
boundaries, falling back to hard character splits, and continuation chunks
carry a verbatim overlap prefix from their predecessor. All offsets index
into ``PaperDocument.raw_text``, so ``chunk.body == raw_text[start:end]``
holds for every chunk, continuations included.
"""

from __future__ import annotations

import bisect
import hashlib
import logging
import re
import shlex
import subprocess
from dataclasses import dataclass
from pathlib import Path

from .errors import ConverterFailed, EmptyDocument, PdfWithoutConverter

logger = logging.getLogger(__name__)

DEFAULT_MAX_CHUNK_CHARS = 4000
DEFAULT_OVERLAP_CHARS = 200

_ATX_RE = re.compile(r"^(#{1,6})(?:[ \t]+(.*))?$")
_SETEXT_H1_RE = re.compile(r"^ {0,3}=+\s*$")
_SETEXT_H2_RE = re.compile(r"^ {0,3}-{2,}\s*$")


@dataclass(frozen=True)
class PaperDocument:
    """A loaded paper: normalized markdown text plus basic identity."""

    source_path: Path
    title: str
    raw_text: str
    byte_length: int


@dataclass(frozen=True)
class PaperChunk:
    """One retrievable span of the paper.

    ``section_path`` lists heading titles from the document root down to the
    heading owning this chunk; level 0 marks preamble text before the first
    heading. ``char_start``/``char_end`` index ``raw_text`` and include any
    overlap prefix, so the body is always an exact slice of the source.
    """

    chunk_id: str
    section_path: tuple[str, ...]
    heading_level: int
    body: str
    char_start: int
    char_end: int
    seq: int


def load_paper(path: str | Path, converter: str | None = None) -> PaperDocument:
    """Read a paper from ``path`` into a PaperDocument.

    ``converter`` is a shell command template for PDF input; every ``{}``
    placeholder is replaced with the input path (appended if absent) and the
    command must print markdown on stdout.

    Raises FileNotFoundError, PdfWithoutConverter, ConverterFailed, or
    EmptyDocument.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"paper file not found: {path}")

    if path.suffix.lower() == ".pdf":
        if not converter:
            raise PdfWithoutConverter(
                f"{path} is a PDF and no converter command is configured",
                hint='pass --converter "<cmd {}>" (the command must print markdown on stdout)',
            )
        text = _run_converter(converter, path)
    else:
        text = path.read_bytes().decode("utf-8", errors="replace")

    text = _normalize_text(text)
    if not text.strip():
        raise EmptyDocument(f"{path} contains no text after trimming")

    title = _first_h1_title(text) or path.stem
    return PaperDocument(
        source_path=path,
        title=title,
        raw_text=text,
        byte_length=len(text.encode("utf-8")),
    )


def _run_converter(template: str, path: Path) -> str:
    argv = shlex.split(template)
    if any("{}" in a for a in argv):
        argv = [a.replace("{}", str(path)) for a in argv]
    else:
        argv.append(str(path))
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=300)
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise ConverterFailed(f"converter {argv[0]!r} could not run: {exc}") from exc
    if proc.returncode != 0:
        stderr = proc.stderr.decode("utf-8", errors="replace").strip()
        raise ConverterFailed(
            f"converter {argv[0]!r} exited {proc.returncode}: {stderr[:500]}"
        )
    out = proc.stdout.decode("utf-8", errors="replace")
    if not out.strip():
        raise ConverterFailed(f"converter {argv[0]!r} produced no output")
    return out


def _normalize_text(text: str) -> str:
    """Normalize line endings to \\n and setext headings to ATX."""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    lines = text.split("\n")
    out: list[str] = []
    i = 0
    in_fence = False

    # Leave a leading YAML frontmatter block untouched; its closing "---"
    # must not be mistaken for a setext underline.
    if lines and lines[0].strip() == "---":
        out.append(lines[0])
        i = 1
        while i < len(lines):
            out.append(lines[i])
            if lines[i].strip() == "---":
                i += 1
                break
            i += 1

    while i < len(lines):
        line = lines[i]
        if line.lstrip().startswith("```"):
            in_fence = not in_fence
            out.append(line)
            i += 1
            continue
        if not in_fence and i + 1 < len(lines):
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                nxt = lines[i + 1]
                if _SETEXT_H1_RE.fullmatch(nxt):
                    out.append("# " + stripped)
                    i += 2
                    continue
                if _SETEXT_H2_RE.fullmatch(nxt):
                    out.append("## " + stripped)
                    i += 2
                    continue
        out.append(line)
        i += 1
    return "\n".join(out)


def _heading_title(line: str) -> str:
    m = _ATX_RE.match(line)
    rest = (m.group(2) or "") if m else ""
    rest = rest.strip()
    # drop a trailing closing hash run ("## Title ##")
    rest = re.sub(r"\s+#+$", "", rest).strip()
    return rest


def _first_h1_title(text: str) -> str | None:
    in_fence = False
    for line in text.split("\n"):
        if line.lstrip().startswith("```"):
            in_fence = not in_fence
            continue
        if in_fence:
            continue
        m = _ATX_RE.match(line)
        if m and len(m.group(1)) == 1:
            title = _heading_title(line)
            if title:
                return title
    return None


# --- segmentation ----------------------------------------------------------

@dataclass(frozen=True)
class _Region:
    start: int
    end: int
    level: int
    path: tuple[str, ...]


def _fence_regions(text: str) -> list[tuple[int, int]]:
    """Char ranges covering fenced code blocks, opening line to closing line.

    An unclosed fence extends to the end of the text.
    """
    regions: list[tuple[int, int]] = []
    pos = 0
    open_start: int | None = None
    for line in text.split("\n"):
        line_end = pos + len(line) + 1  # include the newline (or one past EOF)
        if line.lstrip().startswith("```"):
            if open_start is None:
                open_start = pos
            else:
                regions.append((open_start, min(line_end, len(text))))
                open_start = None
        pos = line_end
    if open_start is not None:
        regions.append((open_start, len(text)))
    return regions


def _inside(offset: int, regions: list[tuple[int, int]]) -> tuple[int, int] | None:
    for r in regions:
        if r[0] < offset < r[1]:
            return r
    return None


def _paragraph_starts(text: str, fences: list[tuple[int, int]]) -> list[int]:
    starts = []
    for m in re.finditer(r"\n(?:[ \t]*\n)+", text):
        b = m.end()
        if _inside(b, fences) is None:
            starts.append(b)
    return starts


def _split_points(text: str, start: int, end: int, max_chars: int,
                  para_starts: list[int], fences: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Cut [start, end) into pieces of at most ``max_chars`` characters.

    Prefers the last paragraph boundary at or before the limit; hard-splits
    otherwise, shifting the cut to a fence opening so code blocks survive
    intact unless a single fence is itself over the limit.
    """
    pieces: list[tuple[int, int]] = []
    pos = start
    while pos < end:
        if end - pos <= max_chars:
            pieces.append((pos, end))
            break
        limit = pos + max_chars
        # last paragraph start in (pos, limit]
        idx = bisect.bisect_right(para_starts, limit) - 1
        cut = para_starts[idx] if idx >= 0 and para_starts[idx] > pos else None
        if cut is None:
            cut = limit
            fence = _inside(cut, fences)
            if fence is not None and fence[0] > pos and fence[1] - fence[0] <= max_chars:
                cut = fence[0]
        pieces.append((pos, cut))
        pos = cut
    return pieces


def segment_paper(
    doc: PaperDocument,
    max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
    overlap_chars: int = DEFAULT_OVERLAP_CHARS,
) -> list[PaperChunk]:
    """Cut the paper at ATX headings into size-bounded chunks.

    Every chunk body is at most ``max_chunk_chars + overlap_chars`` long;
    continuation chunks start with the trailing ``overlap_chars`` of their
    predecessor and repeat its section path. Deterministic for a given
    (raw_text, max_chunk_chars, overlap_chars).
    """
    if max_chunk_chars < 200:
        raise ValueError("max_chunk_chars must be >= 200")
    if not 0 <= overlap_chars < max_chunk_chars:
        raise ValueError("overlap_chars must be in [0, max_chunk_chars)")

    text = doc.raw_text
    if not text:
        return []

    fences = _fence_regions(text)
    para_starts = _paragraph_starts(text, fences)
    regions = _heading_regions(text, fences)

    # content-addressed prefix: identical raw_text yields identical ids
    src_tag = hashlib.sha1(text.encode("utf-8")).hexdigest()[:8]
    chunks: list[PaperChunk] = []
    seq = 0
    for region in regions:
        pieces = _split_points(text, region.start, region.end, max_chunk_chars,
                               para_starts, fences)
        first_piece = True
        for piece_start, piece_end in pieces:
            char_start = piece_start
            if not first_piece and overlap_chars > 0:
                # verbatim trailing slice of the predecessor chunk body
                char_start = max(piece_start - overlap_chars, chunks[-1].char_start)
            body = text[char_start:piece_end]
            chunks.append(PaperChunk(
                chunk_id=f"paper:{src_tag}:{seq:04d}",
                section_path=region.path,
                heading_level=region.level,
                body=body,
                char_start=char_start,
                char_end=piece_end,
                seq=seq,
            ))
            seq += 1
            first_piece = False
    return chunks


def _heading_regions(text: str, fences: list[tuple[int, int]]) -> list[_Region]:
    """Partition the text at heading lines, tracking the heading stack."""
    headings: list[tuple[int, int, str]] = []  # (offset, level, title)
    pos = 0
    for line in text.split("\n"):
        m = _ATX_RE.match(line)
        if m and _is_outside_fences(pos, fences):
            headings.append((pos, len(m.group(1)), _heading_title(line)))
        pos += len(line) + 1

    regions: list[_Region] = []
    if not headings:
        return [_Region(0, len(text), 0, ())]
    first = headings[0][0]
    if first > 0:
        regions.append(_Region(0, first, 0, ()))

    stack: list[tuple[int, str]] = []
    for i, (offset, level, title) in enumerate(headings):
        while stack and stack[-1][0] >= level:
            stack.pop()
        stack.append((level, title))
        end = headings[i + 1][0] if i + 1 < len(headings) else len(text)
        regions.append(_Region(offset, end, level, tuple(t for _, t in stack)))
    return regions


def _is_outside_fences(offset: int, fences: list[tuple[int, int]]) -> bool:
    return all(not (s <= offset < e) for s, e in fences)


def reconstruct_text(chunks: list[PaperChunk]) -> str:
    """Concatenate chunk bodies, dropping each continuation's overlap prefix.

    Inverse of segmentation: equals the original raw_text.
    """
    out: list[str] = []
    prev_end = 0
    for chunk in chunks:
        skip = max(0, prev_end - chunk.char_start)
        out.append(chunk.body[skip:])
        prev_end = chunk.char_end
    return "".join(out)
