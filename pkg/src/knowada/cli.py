"""Single entry point exposing every stage as a subcommand plus the two
pipeline presets.

Exit codes: 0 success, 1 validation/configuration error, 2 backend or
transport error, 3 preset halted after completing at least one stage.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import click

from . import __version__, analysis, pipeline
from .adapt import adapt_dataset, save_robustness, verify_dataset
from .backends.prompts import DEFAULT_LIBRARY
from .config import RunConfig, build_handles, load_config, prompt_library
from .dnli import CorpusScore, entail_dataset, score_pair
from .errors import BackendError, StageError, ValidationError
from .probe import SkipEntry, classify_dataset, generate_dataset_questions, probe_dataset
from .records import (
    load_adapted,
    load_annotations,
    load_classifications,
    load_dataset,
    load_difficulty,
    load_propositions,
    load_questions,
    parse_ratio,
    save_adapted,
    save_answers,
    save_classifications,
    save_difficulty,
    save_propositions,
    save_questions,
)

log = logging.getLogger(__name__)


@dataclass
class CliContext:
    config: RunConfig
    jobs: int
    force: bool


def guarded(fn):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except StageError as exc:
            click.echo(f"error: {exc}", err=True)
            completed = len(exc.manifest.stages) if exc.manifest else 0
            if completed:
                raise SystemExit(3)
            raise SystemExit(2 if isinstance(exc.cause, BackendError) else 1)
        except BackendError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(2)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(1)

    return wrapper


def _echo_skips(skipped: list[SkipEntry]) -> None:
    for entry in skipped:
        click.echo(f"skipped [{entry.stage}] {entry.item_id}: {entry.reason}", err=True)


def _prompts(ctx: CliContext):
    return prompt_library(ctx.config) if ctx.config.prompt_dir else DEFAULT_LIBRARY


@click.group()
@click.version_option(version=__version__, prog_name="knowada")
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None, help="Run configuration file (YAML).")
@click.option("--jobs", type=int, default=1, show_default=True, help="Worker threads for backend-bound stages.")
@click.option("--force", is_flag=True, help="Recompute stages even when outputs are reusable.")
@click.option("--cache-dir", type=click.Path(path_type=Path), default=None, help="Override the response cache directory.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("-v", "--verbose", is_flag=True, help="Log stage progress.")
@click.pass_context
@guarded
def main(ctx, config_path, jobs, force, cache_dir, seed, verbose):
    """Probe a model's knowledge of dense captions, adapt the captions, and
    score generated captions by proposition-level entailment."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    config = load_config(config_path)
    if cache_dir is not None:
        config.cache_dir = cache_dir
    if seed is not None:
        config.seed = seed
    if jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    ctx.obj = CliContext(config=config, jobs=jobs, force=force)


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(path_type=Path), help="captions.jsonl input.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path), help="questions.jsonl output.")
@click.option("--cap", type=int, default=None, help="Max questions per caption (default from config).")
@click.pass_obj
@guarded
def questions(ctx: CliContext, in_path, out_path, cap):
    """Generate visual questions for every caption."""
    handle = build_handles(ctx.config, roles=("question_gen",))["question_gen"]
    records = load_dataset(in_path)
    generated, skipped = generate_dataset_questions(
        records, handle.backend, cap or ctx.config.max_questions_per_caption,
        model_id=handle.model_id, prompts=_prompts(ctx), jobs=ctx.jobs,
    )
    save_questions(generated, out_path)
    _echo_skips(skipped)
    click.echo(f"wrote {len(generated)} questions for {len(records) - len(skipped)} records to {out_path}")


@main.command()
@click.option("--captions", "captions_path", required=True, type=click.Path(path_type=Path))
@click.option("--questions", "questions_path", required=True, type=click.Path(path_type=Path))
@click.option("--answers-out", required=True, type=click.Path(path_type=Path))
@click.option("--difficulty-out", required=True, type=click.Path(path_type=Path))
@click.option("-m", "m", type=int, default=None, help="Answer samples per question (default from config).")
@click.option("--temperature", type=float, default=None, help="Answer sampling temperature (default from config).")
@click.pass_obj
@guarded
def probe(ctx: CliContext, captions_path, questions_path, answers_out, difficulty_out, m, temperature):
    """Sample and judge answers, emitting per-question difficulty counts."""
    handles = build_handles(ctx.config, roles=("vlm", "judge"))
    result = probe_dataset(
        load_dataset(captions_path), load_questions(questions_path),
        handles["vlm"].backend, handles["judge"].backend,
        m=m or ctx.config.m,
        temperature=ctx.config.temperature if temperature is None else temperature,
        vlm_model_id=handles["vlm"].model_id, judge_model_id=handles["judge"].model_id,
        prompts=_prompts(ctx), jobs=ctx.jobs,
    )
    save_answers(result.answers, answers_out)
    save_difficulty(result.reports, difficulty_out)
    _echo_skips(result.skipped)
    click.echo(f"judged {len(result.reports)} questions; wrote {answers_out} and {difficulty_out}")


@main.command()
@click.option("--questions", "questions_path", required=True, type=click.Path(path_type=Path))
@click.option("--difficulty", "difficulty_path", required=True, type=click.Path(path_type=Path))
@click.option("--threshold", default=None, help='Unknown threshold, e.g. "20%" or "0.2" (default from config).')
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.pass_obj
@guarded
def classify(ctx: CliContext, questions_path, difficulty_path, threshold, out_path):
    """Partition each record's questions into known and unknown."""
    value = ctx.config.threshold if threshold is None else parse_ratio(threshold)
    rows = classify_dataset(load_questions(questions_path), load_difficulty(difficulty_path), value)
    save_classifications(rows, out_path)
    click.echo(f"classified {len(rows)} records at threshold {value} into {out_path}")


@main.command()
@click.option("--mode", type=click.Choice(["knowada", "random", "trim", "simplify"]), required=True)
@click.option("--in", "in_path", required=True, type=click.Path(path_type=Path))
@click.option("--classification", "classification_path", type=click.Path(path_type=Path), default=None)
@click.option("--questions", "questions_path", type=click.Path(path_type=Path), default=None)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--k", type=int, default=None, help="Questions to remove (random) or sentences to drop (trim).")
@click.option("--degree", type=int, default=3, show_default=True, help="Simplification degree 1-5.")
@click.option("--seed", type=int, default=None, help="Selection seed for random mode.")
@click.pass_obj
@guarded
def adapt(ctx: CliContext, mode, in_path, classification_path, questions_path, out_path, k, degree, seed):
    """Rewrite captions with the chosen method."""
    records = load_dataset(in_path)
    classifications = load_classifications(classification_path) if classification_path else None
    questions_list = load_questions(questions_path) if questions_path else None
    if mode in ("knowada", "random") and questions_list is None:
        raise ValidationError(f"--questions is required for mode {mode}")
    if mode == "knowada" and classifications is None:
        raise ValidationError("--classification is required for mode knowada")
    rewrite_backend = model_id = None
    if mode in ("knowada", "random", "simplify"):
        handle = build_handles(ctx.config, roles=("rewriter",))["rewriter"]
        rewrite_backend, model_id = handle.backend, handle.model_id
    result = adapt_dataset(
        records, mode,
        classifications=classifications, questions=questions_list,
        rewrite_backend=rewrite_backend, k=k, degree=degree,
        seed=ctx.config.seed if seed is None else seed,
        model_id=model_id or "default", prompts=_prompts(ctx), jobs=ctx.jobs,
    )
    save_adapted(result.adapted, out_path)
    _echo_skips(result.skipped)
    click.echo(f"adapted {len(result.adapted)} records ({mode}) into {out_path}")


@main.command()
@click.option("--original", "original_path", required=True, type=click.Path(path_type=Path))
@click.option("--adapted", "adapted_path", required=True, type=click.Path(path_type=Path))
@click.option("--questions", "questions_path", required=True, type=click.Path(path_type=Path))
@click.option("--classification", "classification_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.pass_obj
@guarded
def verify(ctx: CliContext, original_path, adapted_path, questions_path, classification_path, out_path):
    """Check how much unknown information a rewrite removed and how much
    known information it kept."""
    handles = build_handles(ctx.config, roles=("vlm", "nli"))
    reports, skipped = verify_dataset(
        load_dataset(original_path), load_adapted(adapted_path),
        load_questions(questions_path), load_classifications(classification_path),
        handles["vlm"].backend, handles["nli"].backend,
        answer_model_id=handles["vlm"].model_id, nli_model_id=handles["nli"].model_id,
        prompts=_prompts(ctx), jobs=ctx.jobs,
    )
    save_robustness(reports, out_path)
    _echo_skips(skipped)
    click.echo(f"verified {len(reports)} rewrites into {out_path}")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(path_type=Path), help="captions.jsonl to decompose.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path), help="props.jsonl output.")
@click.pass_obj
@guarded
def decompose(ctx: CliContext, in_path, out_path):
    """Decompose captions into atomic propositions."""
    from .dnli import decompose_dataset

    handle = build_handles(ctx.config, roles=("decomposer",))["decomposer"]
    props, skipped = decompose_dataset(
        load_dataset(in_path), handle.backend, model_id=handle.model_id, prompts=_prompts(ctx), jobs=ctx.jobs
    )
    save_propositions(props, out_path)
    _echo_skips(skipped)
    click.echo(f"decomposed into {len(props)} propositions at {out_path}")


@main.command()
@click.option("--props", "props_path", required=True, type=click.Path(path_type=Path))
@click.option("--premises", "premises_path", required=True, type=click.Path(path_type=Path),
              help="captions.jsonl whose caption is the premise for matching parent ids.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.pass_obj
@guarded
def entail(ctx: CliContext, props_path, premises_path, out_path):
    """Label propositions against per-record premises."""
    handle = build_handles(ctx.config, roles=("nli",))["nli"]
    premises = {r.record_id: r.caption for r in load_dataset(premises_path)}
    labeled = entail_dataset(
        load_propositions(props_path), premises, handle.backend,
        model_id=handle.model_id, prompts=_prompts(ctx), jobs=ctx.jobs,
    )
    save_propositions(labeled, out_path)
    click.echo(f"labeled {len(labeled)} propositions into {out_path}")


@main.command()
@click.option("--generated", "generated_path", required=True, type=click.Path(path_type=Path))
@click.option("--reference", "reference_path", required=True, type=click.Path(path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path), help="Per-pair scores (JSONL).")
@click.option("--aggregate", "aggregate_path", required=True, type=click.Path(path_type=Path), help="Corpus summary (JSON).")
@click.option("--model-id", default="model", show_default=True, help="Label for the scored model.")
@click.option("--caption-set", default="captions", show_default=True, help="Label for the caption set.")
@click.pass_obj
@guarded
def score(ctx: CliContext, generated_path, reference_path, out_path, aggregate_path, model_id, caption_set):
    """Score generated captions against references, pair by record_id."""
    handles = build_handles(ctx.config, roles=("decomposer", "nli"))
    generated = load_dataset(generated_path)
    reference = {r.record_id: r for r in load_dataset(reference_path)}
    corpus = CorpusScore()
    for record in generated:
        if record.record_id not in reference:
            corpus.skipped.append(SkipEntry("score", record.record_id, "no reference caption"))
            continue
        try:
            pair_score = score_pair(
                record.caption, reference[record.record_id].caption,
                handles["decomposer"].backend, handles["nli"].backend,
                pair_id=record.record_id,
                decomposer_model_id=handles["decomposer"].model_id,
                nli_model_id=handles["nli"].model_id,
                prompts=_prompts(ctx), jobs=ctx.jobs,
            )
            corpus.per_pair.append((record.record_id, pair_score))
        except (ValidationError, BackendError) as exc:
            corpus.skipped.append(SkipEntry("score", record.record_id, str(exc)))
    if not corpus.per_pair:
        raise ValidationError("no pair survived scoring")
    orientation = ctx.config.contradiction_orientation
    from .records import write_jsonl

    write_jsonl(out_path, (pipeline.score_row(rid, s, orientation) for rid, s in corpus.per_pair))
    summary = pipeline.corpus_summary(corpus, orientation, model=model_id, captions=caption_set)
    Path(aggregate_path).parent.mkdir(parents=True, exist_ok=True)
    Path(aggregate_path).write_text(json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    _echo_skips(corpus.skipped)
    click.echo(f"scored {len(corpus.per_pair)} pairs; summary at {aggregate_path}")


@main.command()
@click.option("--annotations", "annotations_path", required=True, type=click.Path(path_type=Path))
@click.option("--auto", "auto_path", required=True, type=click.Path(path_type=Path),
              help="Labeled props.jsonl from the automatic pipeline.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@guarded
def agree(annotations_path, auto_path, out_path):
    """Aggregate human annotations and correlate them with automatic labels."""
    annotations = load_annotations(annotations_path)
    auto_labels = {p.prop_id: p.label for p in load_propositions(auto_path)}
    per_label = analysis.agreement_stats(annotations)
    votes = {a.prop_id: analysis.majority_vote(a) for a in annotations}
    no_majority = sum(1 for v in votes.values() if v.no_majority)
    pairs = []
    for prop_id, vote in votes.items():
        auto = auto_labels.get(prop_id)
        if auto is None or auto == "unlabeled":
            log.warning("proposition %s has no automatic label; excluded from phi", prop_id)
            continue
        pairs.append((vote.label, auto))
    phi: dict[str, float | None] = {}
    phi_errors: dict[str, str] = {}
    for mode in analysis.BINARIZE_MODES:
        bits = [b for human, auto in pairs if (b := analysis.binarize_labels(human, auto, mode)) is not None]
        try:
            phi[mode] = analysis.phi_coefficient(analysis.contingency_from_pairs(bits))
        except ValidationError as exc:
            phi[mode] = None
            phi_errors[mode] = str(exc)
    payload = {
        "annotations": len(annotations),
        "paired_with_auto": len(pairs),
        "per_label_agreement": {label: float(value) for label, value in sorted(per_label.items())},
        "no_majority": no_majority,
        "phi": phi,
        "phi_errors": phi_errors,
    }
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    click.echo(f"agreement report at {out_path}")


@main.command()
@click.option("--captions", "captions_path", required=True, type=click.Path(path_type=Path))
@click.option("--adapted", "adapted_path", required=True, type=click.Path(path_type=Path))
@click.option("--classification", "classification_path", required=True, type=click.Path(path_type=Path))
@click.option("--model-id", default="model", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@guarded
def stats(captions_path, adapted_path, classification_path, model_id, out_path):
    """Mean word counts and unknown-question counts per caption source."""
    rows = analysis.dataset_stats(
        load_dataset(captions_path), load_adapted(adapted_path),
        load_classifications(classification_path), model_id,
    )
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(pipeline.STATS_COLUMNS)
        for row in rows:
            writer.writerow(
                [row.source, row.model, float(row.mean_words_original), float(row.mean_words_adapted),
                 float(row.mean_unknown_questions), row.records]
            )
    click.echo(f"stats for {sum(r.records for r in rows)} records at {out_path}")


@main.command()
@click.option("--set", "sets", multiple=True, required=True, metavar="NAME=CLASSIFICATION",
              help="Model name and its classification.jsonl; repeatable.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@guarded
def overlap(sets, out_path):
    """Overlap of unknown-question sets across probed models."""
    unknown_sets: dict[str, set[str]] = {}
    for item in sets:
        name, _, path = item.partition("=")
        if not name or not path:
            raise ValidationError(f"--set expects NAME=PATH, got {item!r}")
        ids: set[str] = set()
        for row in load_classifications(Path(path)):
            ids |= row.unknown_question_ids
        unknown_sets[name] = ids
    result = analysis.unknown_overlap(unknown_sets)
    payload = {
        "models": result.models,
        "union_size": result.union_size,
        "regions": result.regions,
        "pairwise": result.pairwise,
        "notice": result.notice,
    }
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    Path(out_path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    click.echo(f"overlap report at {out_path}")


@main.command()
@click.option("--difficulty", "difficulty_path", required=True, type=click.Path(path_type=Path))
@click.option("--thresholds", required=True, help='Comma-separated ascending list, e.g. "0.2,0.5,0.8".')
@click.option("--point", "points", multiple=True, metavar="T=SUMMARY_JSON",
              help="Attach a score summary's precision/recall to a threshold; repeatable.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@guarded
def sweep(difficulty_path, thresholds, points, out_path):
    """Classification sizes (and optional PR points) across thresholds."""
    reports = load_difficulty(difficulty_path)
    values = [parse_ratio(part.strip()) for part in thresholds.split(",") if part.strip()]
    pr_by_threshold: dict[Fraction, tuple[float, float]] = {}
    for item in points:
        raw, _, path = item.partition("=")
        if not raw or not path:
            raise ValidationError(f"--point expects T=PATH, got {item!r}")
        summary = json.loads(Path(path).read_text(encoding="utf-8"))
        micro = summary["micro"]
        pr_by_threshold[parse_ratio(raw)] = (micro["desc_precision"], micro["desc_recall"])
    rows = analysis.threshold_sweep(reports, values, scorer=pr_by_threshold.get if pr_by_threshold else None)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "known", "unknown", "desc_precision", "desc_recall"])
        for row in rows:
            writer.writerow(
                [str(row.threshold), row.known, row.unknown,
                 "" if row.desc_precision is None else row.desc_precision,
                 "" if row.desc_recall is None else row.desc_recall]
            )
    click.echo(f"sweep over {len(rows)} thresholds at {out_path}")


@main.command()
@click.option("--props", "props_path", required=True, type=click.Path(path_type=Path),
              help="Labeled props.jsonl.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@guarded
def locations(props_path, out_path):
    """Histogram of where contradicted propositions sit in their caption."""
    histogram = analysis.contradiction_locations(load_propositions(props_path))
    bins = len(histogram)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "low", "high", "count"])
        for i, count in enumerate(histogram, start=1):
            writer.writerow([i, (i - 1) / bins, i / bins, count])
    click.echo(f"location histogram at {out_path}")


@main.command()
@click.option("--scores", "score_paths", multiple=True, required=True, type=click.Path(path_type=Path),
              help="Corpus summary JSON; repeatable.")
@click.option("--stats", "stats_path", type=click.Path(path_type=Path), default=None,
              help="stats.csv to fold into the report.")
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@guarded
def report(score_paths, stats_path, out_dir):
    """Emit the results table, PR-curve CSV, and a readable summary."""
    summaries = [json.loads(Path(p).read_text(encoding="utf-8")) for p in score_paths]
    stats_rows: list[analysis.StatsRow] = []
    if stats_path:
        with open(stats_path, newline="", encoding="utf-8") as fh:
            for raw in csv.DictReader(fh):
                stats_rows.append(
                    analysis.StatsRow(
                        source=raw["source"], model=raw["model"],
                        mean_words_original=Fraction(raw["mean_words_original"]),
                        mean_words_adapted=Fraction(raw["mean_words_adapted"]),
                        mean_unknown_questions=Fraction(raw["mean_unknown_questions"]),
                        records=int(raw["records"]),
                    )
                )
    written = pipeline.report(summaries, stats_rows, out_dir)
    click.echo(f"report written to {written['results'].parent}")


@main.command()
@click.option("--preset", type=click.Choice(list(pipeline.PRESETS)), required=True)
@click.option("--captions", "captions_path", type=click.Path(path_type=Path), default=None,
              help="curate: captions.jsonl to adapt.")
@click.option("--generated", "generated_path", type=click.Path(path_type=Path), default=None,
              help="evaluate: generated captions.")
@click.option("--reference", "reference_path", type=click.Path(path_type=Path), default=None,
              help="evaluate: ground-truth captions.")
@click.option("--classification", "classification_path", type=click.Path(path_type=Path), default=None,
              help="evaluate: optional classification.jsonl for the stats table.")
@click.option("--model-id", default="model", show_default=True)
@click.option("--caption-set", default="captions", show_default=True)
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
@click.pass_obj
@guarded
def run(ctx: CliContext, preset, captions_path, generated_path, reference_path,
        classification_path, model_id, caption_set, out_dir):
    """Run a preset pipeline end to end, with stage reuse and a manifest."""
    if preset == "curate":
        if captions_path is None:
            raise ValidationError("curate preset requires --captions")
        inputs = {"captions": captions_path}
    else:
        if generated_path is None or reference_path is None:
            raise ValidationError("evaluate preset requires --generated and --reference")
        inputs = {"generated": generated_path, "reference": reference_path}
        if classification_path:
            inputs["classification"] = classification_path
    manifest = pipeline.run_pipeline(
        preset, ctx.config, inputs, out_dir,
        labels={"model": model_id, "captions": caption_set},
        jobs=ctx.jobs, force=ctx.force,
    )
    for stage in manifest.stages:
        state = "reused" if stage.reused else f"{stage.seconds:.2f}s"
        click.echo(f"stage {stage.name}: {state}, {len(stage.skipped)} skipped")
    click.echo(
        f"run {manifest.run_id} completed; {manifest.backend_calls} backend calls "
        f"({manifest.backend_cache_hits} cache hits); manifest at {Path(out_dir) / 'manifest.json'}"
    )


if __name__ == "__main__":
    main()
