"""Command-line pipeline: ingest -> pair -> run -> score -> report.

Stages hand off through files under the manifest's output directories so
partial reruns and audits stay cheap. Every command exits non-zero on
error and stamps outputs with the manifest hash and seed.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import fixtures as fixtures_mod
from ._util import atomic_write_text, write_jsonl
from .corpus import DatasetKind
from .cwe import CweFilter, UnknownIdError, load_catalog
from .experiment import RQ, TranscriptStore, is_run_complete, oracle_answers, run_protocol
from .gateway import Gateway
from .manifest import ManifestError, RunManifest, load_manifest
from .metrics import BackendReport, MissingCellError, render_report, score_backend
from .pairing import build_pairs, read_pairs, write_pairs
from .perturb import perturb_snippet

_RQ_CHOICES = [rq.value for rq in RQ]


def _manifest(ctx: click.Context) -> RunManifest:
    try:
        return load_manifest(ctx.obj["manifest_path"])
    except ManifestError as exc:
        raise click.ClickException(str(exc)) from exc


def _fail(exc: Exception) -> click.ClickException:
    return click.ClickException(f"{type(exc).__name__}: {exc}")


@click.group()
@click.option(
    "--manifest",
    "manifest_path",
    type=click.Path(path_type=Path),
    default=Path("manifest.yaml"),
    show_default=True,
    help="run manifest file",
)
@click.pass_context
def main(ctx: click.Context, manifest_path: Path) -> None:
    ctx.obj = {"manifest_path": manifest_path}


@main.command()
@click.pass_context
def ingest(ctx: click.Context) -> None:
    """Filter raw dataset files into the normalized corpus."""
    manifest = _manifest(ctx)
    manifest.output_dir.mkdir(parents=True, exist_ok=True)
    combined = []
    for spec in manifest.datasets:
        records = corpus_mod.load_raw_records(spec.path)
        if not records:
            raise click.ClickException(f"empty dataset file: {spec.path}")
        try:
            snippets, report = corpus_mod.filter_dataset(records, spec.rules())
        except corpus_mod.MalformedRecordError as exc:
            raise _fail(exc) from exc
        corpus_mod.write_corpus(manifest.corpus_path(spec.kind), snippets, meta=manifest.meta)
        atomic_write_text(
            manifest.filter_report_path(spec.kind),
            json.dumps({**manifest.meta, **report.to_dict()}, indent=2) + "\n",
        )
        combined.extend(snippets)
        click.echo(
            f"{spec.kind.value}: accepted {report.accepted} of {report.considered} "
            f"(rejected {len(report.rejected)})"
        )
    corpus_mod.write_corpus(manifest.corpus_path(), combined, meta=manifest.meta)
    dirty = sum(1 for s in combined if s.is_dirty)
    click.echo(f"corpus: {len(combined)} snippets ({dirty} dirty) -> {manifest.corpus_path()}")


@main.command()
@click.pass_context
def pair(ctx: click.Context) -> None:
    """Build the balanced correct/wrong task-description pairs."""
    manifest = _manifest(ctx)
    corpus_file = manifest.corpus_path()
    if not corpus_file.exists():
        raise click.ClickException(f"corpus missing, run ingest first: {corpus_file}")
    snippets = corpus_mod.read_corpus(corpus_file)
    gateway = Gateway(embedder=manifest.embedder.build(), cache_dir=manifest.cache_dir)
    try:
        pairs = build_pairs(snippets, gateway.embed_fn())
    except Exception as exc:
        raise _fail(exc) from exc
    write_pairs(manifest.pairs_path(), pairs, meta=manifest.meta)
    degenerate = sum(1 for p in pairs if p.degenerate)
    positives = sum(1 for p in pairs if p.is_correct)
    click.echo(
        f"pairs: {len(pairs)} total, {positives} positive, {degenerate} degenerate "
        f"-> {manifest.pairs_path()}"
    )


@main.command()
@click.option("--in", "in_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--out", "out_path", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--run-index", type=int, default=0, show_default=True)
def perturb(in_path: Path, out_path: Path, seed: int, run_index: int) -> None:
    """Perturb a corpus file once (debugging aid for the run protocol)."""
    snippets = corpus_mod.read_corpus(in_path)
    records = []
    changed = 0
    for snippet in snippets:
        text, record = perturb_snippet(snippet, seed=seed, run_index=run_index)
        changed += record.changed
        rec = snippet.to_dict()
        rec["source_text"] = text
        rec["perturbation"] = record.to_dict()
        records.append(rec)
    write_jsonl(out_path, records, meta={"seed": seed, "run_index": run_index})
    click.echo(f"perturbed {len(records)} snippets ({changed} changed) -> {out_path}")


def _load_graph(manifest: RunManifest, disallowed: tuple[str, ...] = ()):
    if manifest.cwe_catalog is None:
        return None
    return load_catalog(manifest.cwe_catalog, CweFilter(disallowed_ids=frozenset(disallowed)))


@main.command()
@click.option("--backend", "backend_ids", multiple=True, help="backend ids (default: all)")
@click.option("--rq", "rq_values", multiple=True, type=click.Choice(_RQ_CHOICES))
@click.option("--runs", type=int, default=None, help="override manifest run count")
@click.option("--seed", type=int, default=None, help="override manifest seed")
@click.pass_context
def run(
    ctx: click.Context,
    backend_ids: tuple[str, ...],
    rq_values: tuple[str, ...],
    runs: int | None,
    seed: int | None,
) -> None:
    """Execute the review protocol, resuming completed cases."""
    manifest = _manifest(ctx)
    corpus_file = manifest.corpus_path()
    if not corpus_file.exists():
        raise click.ClickException(f"corpus missing, run ingest first: {corpus_file}")
    snippets = corpus_mod.read_corpus(corpus_file)
    selected_rqs = [RQ(v) for v in rq_values] if rq_values else list(RQ)
    needs_pairs = any(rq in (RQ.RQ2, RQ.RQ3_ZS, RQ.RQ3_COT) for rq in selected_rqs)
    pairs = []
    if needs_pairs:
        if not manifest.pairs_path().exists():
            raise click.ClickException(f"pairs missing, run pair first: {manifest.pairs_path()}")
        pairs = read_pairs(manifest.pairs_path())

    run_count = runs if runs is not None else manifest.runs
    run_seed = seed if seed is not None else manifest.seed
    specs = (
        [manifest.backend_spec(b) for b in backend_ids] if backend_ids else manifest.backends
    )
    cwe_names: dict[str, str] = {}
    if any(s.type == "stub" and s.policy == "oracle" for s in specs) and manifest.cwe_catalog:
        graph = _load_graph(manifest)
        cwe_names = {cid: e.name for cid, e in graph.entries.items()}

    for spec in specs:
        answers = (
            oracle_answers(snippets, pairs, cwe_names)
            if spec.type == "stub" and spec.policy == "oracle"
            else None
        )
        backend = spec.build(oracle_answers=answers)
        gateway = Gateway(backend=backend, cache_dir=manifest.cache_dir)
        store = TranscriptStore(
            manifest.transcript_dir, spec.backend_id, meta={**manifest.meta, "run_seed": run_seed}
        )
        stored = store.stored_meta()
        if stored is not None and stored.get("run_seed") not in (None, run_seed):
            raise click.ClickException(
                f"{spec.backend_id}: transcript store was recorded with seed "
                f"{stored['run_seed']}, not {run_seed}; resuming would mix "
                f"perturbations (use a fresh transcript_dir or matching --seed)"
            )
        try:
            summaries = run_protocol(
                snippets, pairs, gateway, store, seed=run_seed, runs=run_count, rqs=selected_rqs
            )
        except Exception as exc:
            raise _fail(exc) from exc
        executed = sum(s.executed for s in summaries)
        skipped = sum(s.skipped for s in summaries)
        complete = all(
            is_run_complete(store, i, snippets, rqs=selected_rqs) for i in range(run_count)
        )
        click.echo(
            f"{spec.backend_id}: {run_count} runs, {executed} cases executed, "
            f"{skipped} resumed, complete={complete}"
        )
        if not complete:
            raise click.ClickException(f"{spec.backend_id}: runs incomplete")


@main.command()
@click.option("--backend", "backend_ids", multiple=True, help="backend ids (default: all)")
@click.option("--rq", "rq_values", multiple=True, type=click.Choice(_RQ_CHOICES))
@click.option("--runs", type=int, default=None)
@click.option(
    "--per-dataset",
    is_flag=True,
    help="also score each dataset separately (extra runreport files)",
)
@click.option(
    "--exclude-degenerate",
    is_flag=True,
    help="drop snippets whose wrong description duplicates the correct one",
)
@click.pass_context
def score(
    ctx: click.Context,
    backend_ids: tuple[str, ...],
    rq_values: tuple[str, ...],
    runs: int | None,
    per_dataset: bool,
    exclude_degenerate: bool,
) -> None:
    """Turn persisted transcripts into per-run metrics."""
    manifest = _manifest(ctx)
    snippets = corpus_mod.read_corpus(manifest.corpus_path())
    pairs = read_pairs(manifest.pairs_path()) if manifest.pairs_path().exists() else []
    selected_rqs = [RQ(v) for v in rq_values] if rq_values else list(RQ)
    run_count = runs if runs is not None else manifest.runs

    graph = None
    embed_fn = None
    if RQ.RQ4 in selected_rqs and manifest.cwe_catalog is not None:
        graph = _load_graph(manifest)
        gateway = Gateway(embedder=manifest.embedder.build(), cache_dir=manifest.cache_dir)
        embed_fn = gateway.embed_fn()
        graph.embed_names(embed_fn)

    specs = (
        [manifest.backend_spec(b) for b in backend_ids] if backend_ids else manifest.backends
    )
    slices: list[DatasetKind | None] = [None]
    if per_dataset:
        slices += sorted({s.dataset for s in snippets}, key=lambda k: k.value)
    for spec in specs:
        store = TranscriptStore(manifest.transcript_dir, spec.backend_id)
        for dataset in slices:
            try:
                report = score_backend(
                    store,
                    snippets,
                    pairs,
                    runs=run_count,
                    rqs=selected_rqs,
                    graph=graph,
                    embed_fn=embed_fn,
                    dataset=dataset,
                    exclude_degenerate=exclude_degenerate,
                )
            except Exception as exc:
                raise _fail(exc) from exc
            payload = {**manifest.meta, **report.to_dict()}
            if dataset is None:
                path = manifest.run_report_path(spec.backend_id)
            else:
                payload["dataset"] = dataset.value
                payload["backend_id"] = f"{spec.backend_id} [{dataset.value}]"
                path = manifest.output_dir / f"runreport_{spec.backend_id}__{dataset.value}.json"
            atomic_write_text(path, json.dumps(payload, indent=2) + "\n")
            scored = ", ".join(sorted(report.cells)) or "nothing"
            click.echo(f"{payload['backend_id']}: scored {scored} -> {path}")


def _read_report(path: Path) -> BackendReport:
    if not path.exists():
        raise click.ClickException(f"runreport missing: {path}")
    with open(path, encoding="utf-8") as fh:
        return BackendReport.from_dict(json.load(fh))


@main.command()
@click.option("--backend", "backend_ids", multiple=True, help="backend ids (default: scored)")
@click.option("--rq", "rq_values", multiple=True, type=click.Choice(_RQ_CHOICES))
@click.option("--per-dataset", is_flag=True, help="append per-dataset breakdown tables")
@click.pass_context
def report(
    ctx: click.Context,
    backend_ids: tuple[str, ...],
    rq_values: tuple[str, ...],
    per_dataset: bool,
) -> None:
    """Render the aggregated results table (CSV and markdown)."""
    manifest = _manifest(ctx)
    ids = list(backend_ids) or [
        spec.backend_id
        for spec in manifest.backends
        if manifest.run_report_path(spec.backend_id).exists()
    ]
    if not ids:
        raise click.ClickException("no scored backends found; run score first")
    reports = [_read_report(manifest.run_report_path(backend_id)) for backend_id in ids]
    selected_rqs = [RQ(v) for v in rq_values] if rq_values else list(RQ)
    try:
        csv_text, md_text = render_report(reports, rqs=selected_rqs)
    except MissingCellError as exc:
        raise click.ClickException(str(exc)) from exc

    if per_dataset:
        snippets = corpus_mod.read_corpus(manifest.corpus_path())
        kinds = sorted({s.dataset for s in snippets}, key=lambda k: k.value)
        for kind in kinds:
            slice_reports = [
                _read_report(manifest.output_dir / f"runreport_{bid}__{kind.value}.json")
                for bid in ids
            ]
            slice_rqs = [
                rq
                for rq in selected_rqs
                if rq is not RQ.RQ4 or any(s.is_dirty for s in snippets if s.dataset is kind)
            ]
            try:
                slice_csv, slice_md = render_report(slice_reports, rqs=slice_rqs)
            except MissingCellError as exc:
                raise click.ClickException(f"{kind.value}: {exc}") from exc
            csv_text += f"\n# dataset: {kind.value}\n{slice_csv}"
            md_text += f"\n**{kind.value}**\n\n{slice_md}"

    stamp = f"manifest_hash={manifest.manifest_hash} seed={manifest.seed}"
    csv_path = manifest.output_dir / "report.csv"
    md_path = manifest.output_dir / "report.md"
    atomic_write_text(csv_path, f"# {stamp}\n{csv_text}")
    atomic_write_text(md_path, f"<!-- {stamp} -->\n{md_text}")
    click.echo(md_text)
    click.echo(f"wrote {csv_path} and {md_path}")


@main.command("cwe-stats")
@click.pass_context
def cwe_stats(ctx: click.Context) -> None:
    """Print catalog statistics: retained count and mean relation counts."""
    manifest = _manifest(ctx)
    if manifest.cwe_catalog is None:
        raise click.ClickException("no cwe_catalog configured in manifest")
    try:
        graph = _load_graph(manifest)
    except Exception as exc:
        raise _fail(exc) from exc
    stats = graph.stats()
    click.echo(f"retained weaknesses: {stats.retained}")
    click.echo(f"mean relations: {stats.mean_relations:.2f}")
    click.echo(f"dangling relation targets: {stats.dangling_targets}")
    payload = {
        **manifest.meta,
        "retained": stats.retained,
        "mean_relations": stats.mean_relations,
        "dangling_targets": stats.dangling_targets,
    }
    corpus_file = manifest.corpus_path()
    if corpus_file.exists():
        dirty_cwes = [
            s.true_cwe for s in corpus_mod.read_corpus(corpus_file) if s.true_cwe is not None
        ]
        if dirty_cwes:
            try:
                mean_dirty = graph.mean_relations_for(dirty_cwes)
            except UnknownIdError as exc:
                click.echo(f"dirty-snippet weaknesses missing from catalog: {exc}")
            else:
                click.echo(
                    f"mean relations over {len(dirty_cwes)} dirty-snippet weaknesses: {mean_dirty:.2f}"
                )
                payload["dirty_mean_relations"] = mean_dirty
                payload["dirty_count"] = len(dirty_cwes)
    manifest.output_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(
        manifest.output_dir / "cwe_stats.json", json.dumps(payload, indent=2) + "\n"
    )
    graph.save(manifest.output_dir / "cwe_graph.json")
    click.echo(f"normalized graph -> {manifest.output_dir / 'cwe_graph.json'}")


@main.command("make-fixtures")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--size", type=click.Choice(sorted(fixtures_mod.SIZES)), default="full", show_default=True)
@click.option("--seed", type=int, default=1234, show_default=True)
@click.option("--runs", type=int, default=10, show_default=True)
def make_fixtures(out_dir: Path, size: str, seed: int, runs: int) -> None:
    """Generate synthetic dataset files, a catalog, and a ready manifest."""
    manifest_path = fixtures_mod.make_workspace(out_dir, size=size, seed=seed, runs=runs)
    click.echo(f"wrote fixture workspace with manifest {manifest_path}")


if __name__ == "__main__":
    sys.exit(main())
