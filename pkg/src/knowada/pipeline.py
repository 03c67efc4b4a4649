"""Preset pipelines, the run manifest, stage resumability, and reports.

The curate preset chains questions -> probe -> classify -> adapt -> verify;
the evaluate preset chains decompose -> entail -> score -> report. Stage
outputs are reused on re-run when input digests match, unless forced, so
expensive backend stages never silently re-execute.
"""

from __future__ import annotations

import csv
import json
import logging
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .adapt import adapt_dataset, save_robustness, verify_dataset
from .analysis import StatsRow, caption_stats
from .backends import innermost
from .backends.prompts import DEFAULT_LIBRARY, PromptLibrary
from .config import RoleHandle, RunConfig, build_handles, prompt_library
from .dnli import CorpusScore, decompose_dataset, entail_dataset, score_from_labeled
from .errors import KnowadaError, StageError, ValidationError
from .probe import SkipEntry, classify_dataset, generate_dataset_questions, probe_dataset
from .records import (
    load_adapted,
    load_classifications,
    load_dataset,
    load_difficulty,
    load_propositions,
    load_questions,
    save_adapted,
    save_answers,
    save_classifications,
    save_difficulty,
    save_propositions,
    save_questions,
    sha256_file,
    write_jsonl,
)

log = logging.getLogger(__name__)

PRESETS = ("curate", "evaluate")

RESULTS_COLUMNS = (
    "model",
    "captions",
    "contradiction_precision",
    "contradiction_recall",
    "descriptiveness_precision",
    "descriptiveness_recall",
    "words",
)
STATS_COLUMNS = (
    "source",
    "model",
    "mean_words_original",
    "mean_words_adapted",
    "mean_unknown_questions",
    "records",
)


@dataclass
class StageRecord:
    name: str
    reused: bool
    seconds: float
    outputs: dict[str, str]
    skipped: list[dict] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "reused": self.reused,
            "seconds": round(self.seconds, 3),
            "outputs": self.outputs,
            "skipped": self.skipped,
            "warnings": self.warnings,
        }


@dataclass
class RunManifest:
    """Provenance of one pipeline run.

    Output files stay byte-reproducible across runs, so attribution runs
    through the manifest (it references every output file and its digest)
    rather than stamping run ids into the data files.
    """

    run_id: str
    preset: str
    tool_version: str
    config_hash: str
    inputs: dict[str, str] = field(default_factory=dict)
    stages: list[StageRecord] = field(default_factory=list)
    backend_requests: int = 0
    backend_cache_hits: int = 0
    backend_calls: int = 0
    completed: bool = False
    error: str | None = None

    def as_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "preset": self.preset,
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "inputs": self.inputs,
            "stages": [s.as_dict() for s in self.stages],
            "backend_requests": self.backend_requests,
            "backend_cache_hits": self.backend_cache_hits,
            "backend_calls": self.backend_calls,
            "completed": self.completed,
            "error": self.error,
        }

    def save(self, path: Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


class _CallCounters:
    """Request/hit/call deltas across the distinct backends of a handle map."""

    def __init__(self, handles: dict[str, RoleHandle]):
        self.backends = {id(h.backend): h.backend for h in handles.values()}.values()
        self.start = self._totals()

    def _totals(self) -> tuple[int, int, int]:
        requests = hits = calls = 0
        for backend in self.backends:
            requests += getattr(backend, "requests", 0)
            hits += getattr(backend, "hits", 0)
            calls += getattr(innermost(backend), "calls", 0)
        return requests, hits, calls

    def deltas(self) -> tuple[int, int, int]:
        now = self._totals()
        return tuple(n - s for n, s in zip(now, self.start))


class _Runner:
    def __init__(self, out_dir: Path, force: bool):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.force = force
        self.state_path = self.out_dir / "state.json"
        self.state: dict = {}
        if self.state_path.exists():
            try:
                self.state = json.loads(self.state_path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                log.warning("unreadable state file %s; recomputing all stages", self.state_path)
        self.state.setdefault("stages", {})

    def _digests(self, paths: list[Path]) -> dict[str, str]:
        return {str(p): sha256_file(p) for p in paths}

    def _reusable(self, name: str, input_digests: dict[str, str], outputs: list[Path]) -> bool:
        if self.force:
            return False
        saved = self.state["stages"].get(name)
        if not saved or saved.get("inputs") != input_digests:
            return False
        for out in outputs:
            if not out.exists() or sha256_file(out) != saved.get("outputs", {}).get(str(out)):
                return False
        return True

    def run_stage(self, manifest: RunManifest, name: str, inputs: list[Path], outputs: list[Path], fn) -> None:
        started = time.monotonic()
        try:
            for path in inputs:
                if not Path(path).exists():
                    raise ValidationError(f"stage '{name}': input file {path} does not exist")
            input_digests = self._digests(inputs)
            if self._reusable(name, input_digests, outputs):
                log.info("stage %s: reusing existing outputs", name)
                manifest.stages.append(
                    StageRecord(name=name, reused=True, seconds=0.0, outputs=self._digests(outputs))
                )
                return
            log.info("stage %s: running", name)
            skipped = fn() or []
        except KnowadaError as exc:
            manifest.error = f"{name}: {exc}"
            raise StageError(name, exc, manifest) from exc
        elapsed = time.monotonic() - started
        output_digests = self._digests(outputs)
        record = StageRecord(
            name=name,
            reused=False,
            seconds=elapsed,
            outputs=output_digests,
            skipped=[s.as_dict() for s in skipped],
        )
        manifest.stages.append(record)
        self.state["stages"][name] = {"inputs": input_digests, "outputs": output_digests}
        self.state_path.write_text(json.dumps(self.state, indent=2) + "\n", encoding="utf-8")


def run_pipeline(
    preset: str,
    config: RunConfig,
    inputs: dict[str, Path],
    out_dir: Path,
    *,
    handles: dict[str, RoleHandle] | None = None,
    prompts: PromptLibrary | None = None,
    labels: dict[str, str] | None = None,
    jobs: int = 1,
    force: bool = False,
) -> RunManifest:
    """Run a preset end to end, writing stage outputs and a manifest under
    out_dir. On stage failure the manifest still records completed stages."""
    if preset not in PRESETS:
        raise ValidationError(f"preset must be one of {PRESETS}, got {preset!r}")
    handles = handles if handles is not None else build_handles(config)
    prompts = prompts or (prompt_library(config) if config.prompt_dir else DEFAULT_LIBRARY)
    labels = labels or {}
    out_dir = Path(out_dir)
    manifest = RunManifest(
        run_id=uuid.uuid4().hex[:12],
        preset=preset,
        tool_version=__version__,
        config_hash=config.config_hash(),
    )
    counters = _CallCounters(handles)
    runner = _Runner(out_dir, force)
    try:
        if preset == "curate":
            _run_curate(runner, manifest, config, inputs, out_dir, handles, prompts, jobs)
        else:
            _run_evaluate(runner, manifest, config, inputs, out_dir, handles, prompts, labels, jobs)
        manifest.completed = True
    finally:
        manifest.backend_requests, manifest.backend_cache_hits, manifest.backend_calls = counters.deltas()
        manifest.inputs = {str(p): sha256_file(p) for p in inputs.values() if p and Path(p).exists()}
        manifest.save(out_dir / "manifest.json")
    return manifest


def _run_curate(runner, manifest, config, inputs, out_dir, handles, prompts, jobs):
    captions_path = Path(inputs["captions"])
    questions_path = out_dir / "questions.jsonl"
    answers_path = out_dir / "answers.jsonl"
    difficulty_path = out_dir / "difficulty.jsonl"
    classification_path = out_dir / "classification.jsonl"
    adapted_path = out_dir / "adapted.jsonl"
    robustness_path = out_dir / "robustness.jsonl"

    def stage_questions():
        records = load_dataset(captions_path)
        questions, skipped = generate_dataset_questions(
            records, handles["question_gen"].backend, config.max_questions_per_caption,
            model_id=handles["question_gen"].model_id, prompts=prompts, jobs=jobs,
        )
        save_questions(questions, questions_path)
        return skipped

    def stage_probe():
        records = load_dataset(captions_path)
        questions = load_questions(questions_path)
        result = probe_dataset(
            records, questions, handles["vlm"].backend, handles["judge"].backend,
            m=config.m, temperature=config.temperature,
            vlm_model_id=handles["vlm"].model_id, judge_model_id=handles["judge"].model_id,
            prompts=prompts, jobs=jobs,
        )
        save_answers(result.answers, answers_path)
        save_difficulty(result.reports, difficulty_path)
        return result.skipped

    def stage_classify():
        questions = load_questions(questions_path)
        reports = load_difficulty(difficulty_path)
        save_classifications(classify_dataset(questions, reports, config.threshold), classification_path)
        return []

    def stage_adapt():
        records = load_dataset(captions_path)
        result = adapt_dataset(
            records, "knowada",
            classifications=load_classifications(classification_path),
            questions=load_questions(questions_path),
            rewrite_backend=handles["rewriter"].backend,
            model_id=handles["rewriter"].model_id, prompts=prompts, jobs=jobs,
        )
        save_adapted(result.adapted, adapted_path)
        return result.skipped

    def stage_verify():
        reports, skipped = verify_dataset(
            load_dataset(captions_path), load_adapted(adapted_path),
            load_questions(questions_path), load_classifications(classification_path),
            handles["vlm"].backend, handles["nli"].backend,
            answer_model_id=handles["vlm"].model_id, nli_model_id=handles["nli"].model_id,
            prompts=prompts, jobs=jobs,
        )
        save_robustness(reports, robustness_path)
        return skipped

    runner.run_stage(manifest, "questions", [captions_path], [questions_path], stage_questions)
    runner.run_stage(manifest, "probe", [captions_path, questions_path], [answers_path, difficulty_path], stage_probe)
    runner.run_stage(manifest, "classify", [questions_path, difficulty_path], [classification_path], stage_classify)
    runner.run_stage(
        manifest, "adapt", [captions_path, classification_path, questions_path], [adapted_path], stage_adapt
    )
    runner.run_stage(
        manifest, "verify",
        [captions_path, adapted_path, questions_path, classification_path], [robustness_path], stage_verify,
    )


def _run_evaluate(runner, manifest, config, inputs, out_dir, handles, prompts, labels, jobs):
    generated_path = Path(inputs["generated"])
    reference_path = Path(inputs["reference"])
    classification_path = inputs.get("classification")
    props_gen_path = out_dir / "props_generated.jsonl"
    props_ref_path = out_dir / "props_reference.jsonl"
    labeled_gen_path = out_dir / "labeled_generated.jsonl"
    labeled_ref_path = out_dir / "labeled_reference.jsonl"
    scores_path = out_dir / "scores.jsonl"
    summary_path = out_dir / "summary.json"
    report_dir = out_dir / "report"

    def paired_records():
        generated = load_dataset(generated_path)
        reference = load_dataset(reference_path)
        ref_ids = {r.record_id for r in reference}
        gen_ids = {r.record_id for r in generated}
        paired_gen = [r for r in generated if r.record_id in ref_ids]
        paired_ref = [r for r in reference if r.record_id in gen_ids]
        one_sided = (gen_ids | ref_ids) - (gen_ids & ref_ids)
        return paired_gen, paired_ref, sorted(one_sided)

    def stage_decompose():
        paired_gen, paired_ref, one_sided = paired_records()
        handle = handles["decomposer"]
        gen_props, skipped_gen = decompose_dataset(
            paired_gen, handle.backend, model_id=handle.model_id, prompts=prompts, jobs=jobs
        )
        ref_props, skipped_ref = decompose_dataset(
            paired_ref, handle.backend, model_id=handle.model_id, prompts=prompts, jobs=jobs
        )
        save_propositions(gen_props, props_gen_path)
        save_propositions(ref_props, props_ref_path)
        skipped = skipped_gen + skipped_ref
        skipped.extend(SkipEntry("decompose", rid, "record present on one side only") for rid in one_sided)
        return skipped

    def stage_entail():
        paired_gen, paired_ref, _ = paired_records()
        handle = handles["nli"]
        labeled_gen = entail_dataset(
            load_propositions(props_gen_path), {r.record_id: r.caption for r in paired_ref},
            handle.backend, model_id=handle.model_id, prompts=prompts, jobs=jobs,
        )
        labeled_ref = entail_dataset(
            load_propositions(props_ref_path), {r.record_id: r.caption for r in paired_gen},
            handle.backend, model_id=handle.model_id, prompts=prompts, jobs=jobs,
        )
        save_propositions(labeled_gen, labeled_gen_path)
        save_propositions(labeled_ref, labeled_ref_path)
        return []

    def stage_score():
        paired_gen, _, _ = paired_records()
        gen_by_parent: dict[str, list] = {}
        for prop in load_propositions(labeled_gen_path):
            gen_by_parent.setdefault(prop.parent_id, []).append(prop)
        ref_by_parent: dict[str, list] = {}
        for prop in load_propositions(labeled_ref_path):
            ref_by_parent.setdefault(prop.parent_id, []).append(prop)
        corpus = CorpusScore()
        for record in paired_gen:
            rid = record.record_id
            try:
                score = score_from_labeled(
                    gen_by_parent.get(rid, []), ref_by_parent.get(rid, []), record.caption
                )
                corpus.per_pair.append((rid, score))
            except ValidationError as exc:
                corpus.skipped.append(SkipEntry("score", rid, str(exc)))
        if not corpus.per_pair:
            raise ValidationError("no pair survived scoring")
        write_jsonl(scores_path, (score_row(rid, s, config.contradiction_orientation) for rid, s in corpus.per_pair))
        summary = corpus_summary(
            corpus, config.contradiction_orientation,
            model=labels.get("model", "model"), captions=labels.get("captions", "captions"),
        )
        summary_path.write_text(json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return corpus.skipped

    def stage_report():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        reference = load_dataset(reference_path)
        generated_text = {r.record_id: r.caption for r in load_dataset(generated_path)}
        unknown_by_record: dict[str, int] = {}
        if classification_path:
            unknown_by_record = {
                c.record_id: len(c.unknown_question_ids)
                for c in load_classifications(Path(classification_path))
            }
        stats = caption_stats(reference, generated_text, unknown_by_record, labels.get("model", "model"))
        report([summary], stats, report_dir)
        return []

    runner.run_stage(
        manifest, "decompose", [generated_path, reference_path], [props_gen_path, props_ref_path], stage_decompose
    )
    runner.run_stage(
        manifest, "entail",
        [props_gen_path, props_ref_path, generated_path, reference_path],
        [labeled_gen_path, labeled_ref_path], stage_entail,
    )
    runner.run_stage(
        manifest, "score", [labeled_gen_path, labeled_ref_path, generated_path], [scores_path, summary_path], stage_score
    )
    report_inputs = [summary_path, generated_path, reference_path]
    if classification_path:
        report_inputs.append(Path(classification_path))
    runner.run_stage(
        manifest, "report", report_inputs,
        [report_dir / "results.csv", report_dir / "pr_curve.csv", report_dir / "stats.csv", report_dir / "summary.txt"],
        stage_report,
    )


# ---------------------------------------------------------------------------
# Score serialization and report files


def score_row(pair_id: str, score, orientation: str = "formulas") -> dict:
    ratios = score.ratios(orientation)
    return {
        "record_id": pair_id,
        "gen_total": score.gen_total,
        "gen_entailed": score.gen_entailed,
        "gen_contradicted": score.gen_contradicted,
        "gen_neutral": score.gen_neutral,
        "gt_total": score.gt_total,
        "gt_entailed": score.gt_entailed,
        "gt_contradicted": score.gt_contradicted,
        "gt_neutral": score.gt_neutral,
        "word_count": score.word_count,
        **{name: float(value) for name, value in ratios.items()},
    }


def corpus_summary(corpus: CorpusScore, orientation: str, model: str, captions: str) -> dict:
    micro = corpus.micro
    return {
        "model": model,
        "captions": captions,
        "orientation": orientation,
        "pairs": len(corpus.per_pair),
        "skipped": [s.as_dict() for s in corpus.skipped],
        "micro": {
            "gen_total": micro.gen_total,
            "gen_entailed": micro.gen_entailed,
            "gen_contradicted": micro.gen_contradicted,
            "gen_neutral": micro.gen_neutral,
            "gt_total": micro.gt_total,
            "gt_entailed": micro.gt_entailed,
            "gt_contradicted": micro.gt_contradicted,
            "gt_neutral": micro.gt_neutral,
            **{name: float(value) for name, value in micro.ratios(orientation).items()},
        },
        "macro": {name: float(value) for name, value in corpus.macro(orientation).items()},
        "mean_word_count": float(corpus.mean_word_count),
    }


def report(score_summaries: list[dict], stats_rows: list[StatsRow], out_dir: Path) -> dict[str, Path]:
    """Write the results table, PR-curve points, stats table, and a
    human-readable summary. Requires at least one score summary."""
    if not score_summaries:
        raise ValidationError("no scores to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    pr_path = out_dir / "pr_curve.csv"
    stats_path = out_dir / "stats.csv"
    text_path = out_dir / "summary.txt"

    with open(results_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULTS_COLUMNS)
        for summary in score_summaries:
            micro = summary["micro"]
            writer.writerow(
                [
                    summary.get("model", "model"),
                    summary.get("captions", "captions"),
                    micro["contra_precision"],
                    micro["contra_recall"],
                    micro["desc_precision"],
                    micro["desc_recall"],
                    summary["mean_word_count"],
                ]
            )

    with open(pr_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "descriptiveness_precision", "descriptiveness_recall"])
        for summary in score_summaries:
            label = f"{summary.get('model', 'model')}/{summary.get('captions', 'captions')}"
            writer.writerow([label, summary["micro"]["desc_precision"], summary["micro"]["desc_recall"]])

    with open(stats_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for row in stats_rows:
            writer.writerow(
                [
                    row.source,
                    row.model,
                    float(row.mean_words_original),
                    float(row.mean_words_adapted),
                    float(row.mean_unknown_questions),
                    row.records,
                ]
            )

    lines = ["Results", "======="]
    for summary in score_summaries:
        micro = summary["micro"]
        lines.append(
            f"{summary.get('model', 'model')} on {summary.get('captions', 'captions')}: "
            f"contradiction P={micro['contra_precision']:.3f} R={micro['contra_recall']:.3f}, "
            f"descriptiveness P={micro['desc_precision']:.3f} R={micro['desc_recall']:.3f}, "
            f"mean words={summary['mean_word_count']:.1f} over {summary['pairs']} pairs"
        )
    if stats_rows:
        lines += ["", "Caption statistics", "=================="]
        for row in stats_rows:
            lines.append(
                f"{row.source}/{row.model}: original {float(row.mean_words_original):.1f} words, "
                f"adapted {float(row.mean_words_adapted):.1f} words, "
                f"{float(row.mean_unknown_questions):.2f} unknown questions per caption "
                f"({row.records} records)"
            )
    text_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {"results": results_path, "pr_curve": pr_path, "stats": stats_path, "summary": text_path}
