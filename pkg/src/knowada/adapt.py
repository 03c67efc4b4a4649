"""Caption adaptation: question-aware rewriting plus the trimming,
simplification, and random-removal baselines, and verification that a
rewrite removed what it should while keeping the rest."""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction

from .backends import BackendRequest
from .backends.prompts import DEFAULT_LIBRARY, PromptLibrary
from .errors import ContractError, StructuredOutputError, UnscriptedRequestError, ValidationError
from .parsing import parse_probability
from .records import (
    AdaptedCaption,
    CaptionRecord,
    KnowledgeClassification,
    ProbeQuestion,
)
from .text import split_sentences
from .workers import parallel_map

log = logging.getLogger(__name__)

_LOST_BELOW = Fraction(1, 2)


@dataclass(frozen=True)
class RobustnessReport:
    """Per-record outcome of the rewrite verification.

    Rates are exact rationals of the stored counts and are undefined (None)
    when the corresponding question set is empty.
    """

    record_id: str
    unknown_removed_count: int
    unknown_total: int
    known_retained_count: int
    known_total: int

    def __post_init__(self):
        if not 0 <= self.unknown_removed_count <= self.unknown_total:
            raise ValidationError("unknown_removed_count outside [0, unknown_total]")
        if not 0 <= self.known_retained_count <= self.known_total:
            raise ValidationError("known_retained_count outside [0, known_total]")

    @property
    def removal_rate(self) -> Fraction | None:
        if self.unknown_total == 0:
            return None
        return Fraction(self.unknown_removed_count, self.unknown_total)

    @property
    def retention_rate(self) -> Fraction | None:
        if self.known_total == 0:
            return None
        return Fraction(self.known_retained_count, self.known_total)


def _rewrite(
    record: CaptionRecord,
    question_texts: list[str],
    backend,
    model_id: str,
    prompts: PromptLibrary,
) -> str:
    bulleted = "\n".join(f"- {text}" for text in question_texts)
    request = BackendRequest(
        role="rewriter",
        prompt=prompts.render("rewrite", caption=record.caption, questions=bulleted),
        model_id=model_id,
        temperature=0.0,
    )
    rewritten = backend.complete(request).text.strip()
    if not rewritten:
        raise StructuredOutputError(f"rewriter returned an empty caption for record {record.record_id}", "")
    return rewritten


def _question_texts(
    questions: list[ProbeQuestion], ids: frozenset[str], record_id: str
) -> list[str]:
    by_id = {q.question_id: q for q in questions if q.record_id == record_id}
    missing = ids - set(by_id)
    if missing:
        raise ValidationError(f"record {record_id}: question ids without texts: {sorted(missing)}")
    # Preserve generation order for a deterministic prompt.
    return [q.text for q in questions if q.record_id == record_id and q.question_id in ids]


def adapt_knowada(
    record: CaptionRecord,
    classification: KnowledgeClassification,
    questions: list[ProbeQuestion],
    rewrite_backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> AdaptedCaption:
    """Rewrite the caption to stop answering the record's unknown questions.

    An empty unknown set is the identity: the original caption is returned
    verbatim and no backend call is made.
    """
    if classification.record_id != record.record_id:
        raise ValidationError(
            f"classification for {classification.record_id!r} applied to record {record.record_id!r}"
        )
    params = {"threshold": str(classification.threshold)}
    if not classification.unknown_question_ids:
        return AdaptedCaption(
            record_id=record.record_id, method="knowada", text=record.caption, params=params
        )
    texts = _question_texts(questions, classification.unknown_question_ids, record.record_id)
    rewritten = _rewrite(record, texts, rewrite_backend, model_id, prompts)
    return AdaptedCaption(
        record_id=record.record_id,
        method="knowada",
        text=rewritten,
        removed_question_ids=classification.unknown_question_ids,
        params=params,
    )


def adapt_random(
    record: CaptionRecord,
    questions: list[ProbeQuestion],
    k: int,
    seed: int,
    rewrite_backend=None,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> AdaptedCaption:
    """Rewrite away k uniformly chosen questions from ALL of the record's
    questions; a pure function of (record, questions, k, seed)."""
    own = [q for q in questions if q.record_id == record.record_id]
    if k < 0 or k > len(own):
        raise ValidationError(f"k={k} outside [0, {len(own)}] for record {record.record_id}")
    rng = random.Random(f"{seed}:{record.record_id}")
    chosen = rng.sample(own, k)
    chosen_ids = frozenset(q.question_id for q in chosen)
    params = {
        "seed": seed,
        "k": k,
        "fraction": str(Fraction(k, len(own))) if own else "0",
        "selected_question_ids": sorted(chosen_ids),
    }
    if k == 0:
        return AdaptedCaption(record_id=record.record_id, method="random", text=record.caption, params=params)
    texts = _question_texts(questions, chosen_ids, record.record_id)
    rewritten = _rewrite(record, texts, rewrite_backend, model_id, prompts)
    return AdaptedCaption(
        record_id=record.record_id,
        method="random",
        text=rewritten,
        removed_question_ids=chosen_ids,
        params=params,
    )


def adapt_trim(record: CaptionRecord, k_sentences: int) -> AdaptedCaption:
    """Drop the last k sentences of the caption, always keeping at least one.

    Later sentences carry the most error-prone detail, so trimming from the
    end is the severity knob.
    """
    if k_sentences < 0:
        raise ValidationError("k_sentences must be >= 0")
    params = {"k_sentences": k_sentences}
    if k_sentences == 0:
        return AdaptedCaption(record_id=record.record_id, method="trim", text=record.caption, params=params)
    sentences = split_sentences(record.caption)
    keep = max(1, len(sentences) - k_sentences)
    return AdaptedCaption(
        record_id=record.record_id, method="trim", text=" ".join(sentences[:keep]), params=params
    )


def adapt_simplify(
    record: CaptionRecord,
    degree: int,
    backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> AdaptedCaption:
    """Prompt the rewriter to strip detail at a 1..5 severity degree."""
    if not 1 <= degree <= 5:
        raise ValidationError(f"degree must be in [1, 5], got {degree}")
    request = BackendRequest(
        role="rewriter",
        prompt=prompts.render("simplify", caption=record.caption, degree=degree),
        model_id=model_id,
        temperature=0.0,
    )
    simplified = backend.complete(request).text.strip()
    if not simplified:
        raise StructuredOutputError(f"simplifier returned an empty caption for record {record.record_id}", "")
    return AdaptedCaption(
        record_id=record.record_id, method="simplify", text=simplified, params={"degree": degree}
    )


def entail_probability(premise: str, hypothesis: str, nli_backend, *, model_id="default",
                       prompts: PromptLibrary = DEFAULT_LIBRARY) -> Fraction:
    """One-directional entailment probability from the numeric NLI backend."""
    request = BackendRequest(
        role="nli",
        prompt=prompts.render("nli_prob", premise=premise, hypothesis=hypothesis),
        model_id=model_id,
        temperature=0.0,
    )
    return parse_probability(nli_backend.complete(request).text)


def verify_rewrite(
    original: str,
    rewritten: str,
    known_questions: list[ProbeQuestion],
    unknown_questions: list[ProbeQuestion],
    answer_backend,
    nli_scorer,
    *,
    record_id: str = "",
    answer_model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> RobustnessReport:
    """Check what a rewrite removed and what it kept.

    For each question, an answer is generated from the original caption and
    from the rewritten caption (temperature 0). The information is counted
    as lost iff the entailment probabilities between the two answers are
    below 1/2 in BOTH directions (strictly). Removal rate is the lost
    fraction of unknown questions; retention rate is the kept fraction of
    known questions.

    `nli_scorer(premise, hypothesis)` must return a probability in [0, 1];
    anything outside that range is a contract error.
    """

    def answer_from(caption: str, question: ProbeQuestion, index: int) -> str:
        request = BackendRequest(
            role="vlm",
            prompt=prompts.render("answer_from_text", caption=caption, question=question.text),
            model_id=answer_model_id,
            temperature=0.0,
            sample_index=index,
        )
        return answer_backend.complete(request).text

    def information_lost(question: ProbeQuestion) -> bool:
        answer_original = answer_from(original, question, 0)
        answer_rewritten = answer_from(rewritten, question, 0)
        forward = _as_probability(nli_scorer(answer_original, answer_rewritten))
        backward = _as_probability(nli_scorer(answer_rewritten, answer_original))
        return forward < _LOST_BELOW and backward < _LOST_BELOW

    lost_unknown = sum(1 for q in unknown_questions if information_lost(q))
    lost_known = sum(1 for q in known_questions if information_lost(q))
    return RobustnessReport(
        record_id=record_id,
        unknown_removed_count=lost_unknown,
        unknown_total=len(unknown_questions),
        known_retained_count=len(known_questions) - lost_known,
        known_total=len(known_questions),
    )


def _as_probability(value) -> Fraction:
    prob = Fraction(value) if not isinstance(value, Fraction) else value
    if not 0 <= prob <= 1:
        raise ContractError(f"entailment scorer returned {value!r}, outside [0, 1]")
    return prob


# ---------------------------------------------------------------------------
# Stage drivers


@dataclass
class AdaptResult:
    adapted: list[AdaptedCaption] = field(default_factory=list)
    skipped: list = field(default_factory=list)


def adapt_dataset(
    records: list[CaptionRecord],
    mode: str,
    *,
    classifications: list[KnowledgeClassification] | None = None,
    questions: list[ProbeQuestion] | None = None,
    rewrite_backend=None,
    k: int | None = None,
    degree: int = 3,
    seed: int = 0,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> AdaptResult:
    """Adapt every record with the chosen method.

    For knowada mode, records without a classification row are skipped and
    reported. For random mode, k defaults to the record's unknown-set size
    so removal volume is comparable to the knowada run.
    """
    from .probe import SkipEntry  # local import to avoid a cycle at module load

    by_record_class = {c.record_id: c for c in classifications or []}
    questions = questions or []

    def one(record: CaptionRecord):
        try:
            if mode == "trim":
                return adapt_trim(record, k if k is not None else 0)
            if mode == "simplify":
                return adapt_simplify(record, degree, rewrite_backend, model_id=model_id, prompts=prompts)
            classification = by_record_class.get(record.record_id)
            if mode == "knowada":
                if classification is None:
                    return SkipEntry("adapt", record.record_id, "no classification for record")
                return adapt_knowada(
                    record, classification, questions, rewrite_backend, model_id=model_id, prompts=prompts
                )
            if mode == "random":
                own = [q for q in questions if q.record_id == record.record_id]
                if k is not None:
                    chosen_k = min(k, len(own))
                elif classification is not None:
                    chosen_k = min(len(classification.unknown_question_ids), len(own))
                else:
                    return SkipEntry("adapt", record.record_id, "random mode needs --k or a classification")
                return adapt_random(
                    record, questions, chosen_k, seed, rewrite_backend, model_id=model_id, prompts=prompts
                )
            raise ValidationError(f"unknown adapt mode {mode!r}")
        except (StructuredOutputError, UnscriptedRequestError) as exc:
            return SkipEntry("adapt", record.record_id, str(exc))

    result = AdaptResult()
    for outcome in parallel_map(one, records, jobs):
        if isinstance(outcome, AdaptedCaption):
            result.adapted.append(outcome)
        else:
            result.skipped.append(outcome)
    return result


def verify_dataset(
    records: list[CaptionRecord],
    adapted: list[AdaptedCaption],
    questions: list[ProbeQuestion],
    classifications: list[KnowledgeClassification],
    answer_backend,
    nli_backend,
    *,
    answer_model_id: str = "default",
    nli_model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> tuple[list[RobustnessReport], list]:
    """Run the rewrite check for every adapted record with a classification."""
    from .probe import SkipEntry

    by_record = {r.record_id: r for r in records}
    by_class = {c.record_id: c for c in classifications}
    by_questions: dict[str, list[ProbeQuestion]] = {}
    for q in questions:
        by_questions.setdefault(q.record_id, []).append(q)

    def scorer(premise: str, hypothesis: str) -> Fraction:
        return entail_probability(premise, hypothesis, nli_backend, model_id=nli_model_id, prompts=prompts)

    def one(row: AdaptedCaption):
        record = by_record.get(row.record_id)
        classification = by_class.get(row.record_id)
        if record is None:
            return SkipEntry("verify", row.record_id, "no original record")
        if classification is None:
            return SkipEntry("verify", row.record_id, "no classification for record")
        own = by_questions.get(row.record_id, [])
        known = [q for q in own if q.question_id in classification.known_question_ids]
        unknown = [q for q in own if q.question_id in classification.unknown_question_ids]
        try:
            return verify_rewrite(
                record.caption, row.text, known, unknown, answer_backend, scorer,
                record_id=row.record_id, answer_model_id=answer_model_id, prompts=prompts,
            )
        except (StructuredOutputError, UnscriptedRequestError) as exc:
            return SkipEntry("verify", row.record_id, str(exc))

    reports: list[RobustnessReport] = []
    skipped: list = []
    for outcome in parallel_map(one, adapted, jobs):
        if isinstance(outcome, RobustnessReport):
            reports.append(outcome)
        else:
            skipped.append(outcome)
    return reports, skipped


def save_robustness(reports: list[RobustnessReport], path) -> None:
    from .records import write_jsonl

    rows = []
    for r in reports:
        row = {
            "record_id": r.record_id,
            "unknown_removed_count": r.unknown_removed_count,
            "unknown_total": r.unknown_total,
            "known_retained_count": r.known_retained_count,
            "known_total": r.known_total,
        }
        if r.removal_rate is not None:
            row["removal_rate"] = str(r.removal_rate)
        if r.retention_rate is not None:
            row["retention_rate"] = str(r.retention_rate)
        rows.append(row)
    write_jsonl(path, rows)
