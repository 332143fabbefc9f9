"""Command-line interface: ``verify``, ``queries list``, ``store inspect``."""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from . import __version__
from .embed_store import load_store
from .errors import CodeAlignError
from .orchestrator import RunConfig, run
from .retriever import BUILTIN_QUERIES, default_query_set

logger = logging.getLogger(__name__)


@click.group()
@click.version_option(version=__version__, prog_name="codealign")
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Verify that a codebase implements what its research paper describes."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--paper", "paper_path", required=True,
              type=click.Path(path_type=Path),
              help="Research paper: markdown/plain text, or PDF with --converter.")
@click.option("--code", "code_zip_path", required=True,
              type=click.Path(path_type=Path),
              help="Codebase as a ZIP archive.")
@click.option("--out", "out_dir", required=True, type=click.Path(path_type=Path),
              help="Output directory for report files.")
@click.option("--preset", type=click.Choice(["offtheshelf", "custom", "all"]),
              default="offtheshelf", show_default=True,
              help="Which verification query battery to run.")
@click.option("--k", default=5, show_default=True, help="Top-K chunks per store per query.")
@click.option("--format", "formats", default="json,md,html", show_default=True,
              help="Comma-separated report formats (json, md, html).")
@click.option("--offline", is_flag=True,
              help="Deterministic offline mode: hash embedder, no remote endpoints.")
@click.option("--mock-script", type=click.Path(path_type=Path),
              help="Scripted LLM mock: JSON map of query_id to canned responses.")
@click.option("--queries", "queries_file", type=click.Path(path_type=Path),
              help="JSON file of QuerySpec objects overriding/extending the battery.")
@click.option("--converter", help='PDF converter command template, e.g. "pdf2md {}".')
@click.option("--max-concurrency", default=4, show_default=True,
              help="Bound on concurrent provider requests.")
@click.option("--keep-going", is_flag=True,
              help="Record failed aspects as unverifiable instead of aborting.")
@click.option("--cache", "cache_dir", type=click.Path(path_type=Path),
              help="Cache directory for embedded stores.")
@click.option("--stable-output", is_flag=True,
              help="Pin created_at to a fixed sentinel (for golden comparisons).")
@click.option("--embed-endpoint", help="Embeddings HTTP endpoint (full URL).")
@click.option("--embed-model", help="Embeddings model name.")
@click.option("--embed-dim", type=int, help="Embedding dimensionality (default 384 offline).")
@click.option("--llm-endpoint", help="Chat-completions HTTP endpoint (full URL).")
@click.option("--llm-model", help="Chat model name.")
@click.option("--rerank-endpoint", help="Rerank HTTP endpoint (full URL).")
@click.option("--rerank-model", help="Rerank model name.")
def verify(paper_path: Path, code_zip_path: Path, out_dir: Path, preset: str, k: int,
           formats: str, offline: bool, mock_script: Path | None,
           queries_file: Path | None, converter: str | None, max_concurrency: int,
           keep_going: bool, cache_dir: Path | None, stable_output: bool,
           embed_endpoint: str | None, embed_model: str | None, embed_dim: int | None,
           llm_endpoint: str | None, llm_model: str | None,
           rerank_endpoint: str | None, rerank_model: str | None):
    """Run the full paper-vs-code verification pipeline."""
    config = RunConfig(
        paper_path=paper_path,
        code_zip_path=code_zip_path,
        out_dir=out_dir,
        preset=preset,
        k=k,
        formats=tuple(f.strip() for f in formats.split(",") if f.strip()),
        offline=offline,
        embed_endpoint=embed_endpoint,
        embed_model=embed_model,
        embed_dim=embed_dim,
        llm_endpoint=llm_endpoint,
        llm_model=llm_model,
        rerank_endpoint=rerank_endpoint,
        rerank_model=rerank_model,
        converter=converter,
        max_concurrency=max_concurrency,
        keep_going=keep_going,
        cache_dir=cache_dir,
        stable_output=stable_output,
        mock_script=mock_script,
        queries_file=queries_file,
    )
    outcome = run(config)
    if outcome.error:
        click.echo(f"error: {outcome.error}", err=True)
    for path in outcome.files:
        click.echo(str(path))
    if outcome.report is not None:
        score = outcome.report.alignment_score
        click.echo(f"alignment score: {'n/a' if score is None else f'{score:.4f}'}")
    sys.exit(outcome.exit_code)


@main.group()
def queries():
    """Inspect the verification query battery."""


@queries.command("list")
@click.option("--preset", type=click.Choice(["offtheshelf", "custom", "all"]),
              default="all", show_default=True)
def queries_list(preset: str):
    """Print the built-in queries for a preset."""
    for spec in default_query_set(preset):
        tags = ",".join(sorted(spec.preset_tags)) or "-"
        click.echo(f"{spec.query_id:15s} w={spec.weight:<4g} [{tags}] {spec.question}")


@main.group()
def store():
    """Inspect persisted vector stores."""


@store.command("inspect")
@click.argument("directory", type=click.Path(path_type=Path))
def store_inspect(directory: Path):
    """Summarize a persisted store directory (manifest + record sample)."""
    try:
        vs = load_store(directory)
    except CodeAlignError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(f"source:      {vs.source}")
    click.echo(f"dim:         {vs.dim}")
    click.echo(f"fingerprint: {vs.provider_fingerprint}")
    click.echo(f"records:     {len(vs)}")
    for rec in vs.records[:5]:
        where = rec.metadata.get("section_path") or rec.metadata.get("rel_path") or ""
        click.echo(f"  {rec.chunk_id}  {where}")
    if len(vs) > 5:
        click.echo(f"  ... and {len(vs) - 5} more")


if __name__ == "__main__":
    main()
