"""Knowledge probing: question generation, answer sampling, judging, and
difficulty-based classification of questions into known and unknown."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

from .backends import BackendRequest
from .backends.prompts import DEFAULT_LIBRARY, PromptLibrary
from .errors import (
    BackendError,
    NoJudgeableSamplesError,
    StructuredOutputError,
    UnscriptedRequestError,
    ValidationError,
)
from .parsing import parse_string_array, scan_token
from .records import (
    AnswerSample,
    CaptionRecord,
    DifficultyReport,
    KnowledgeClassification,
    ProbeQuestion,
    derived_id,
)
from .workers import parallel_map

log = logging.getLogger(__name__)

_VERDICT_TOKENS = {"correct": "correct", "incorrect": "incorrect"}


def generate_questions(
    record: CaptionRecord,
    backend,
    cap: int,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> list[ProbeQuestion]:
    """Ask the question-generation backend for visual questions about one
    caption.

    Duplicate question texts are dropped (first occurrence kept), at most
    `cap` questions are retained in response order, and question ids are
    derived from (record_id, ordinal) so re-runs join by id. Items that are
    not questions (no trailing '?') are dropped with a warning.
    """
    if cap < 1:
        raise ValidationError("question cap must be >= 1")
    request = BackendRequest(
        role="question_gen",
        prompt=prompts.render("question_gen", caption=record.caption),
        model_id=model_id,
        temperature=0.0,
    )
    response = backend.complete(request)
    texts = parse_string_array(response.text)

    seen: set[str] = set()
    kept: list[str] = []
    for text in texts:
        trimmed = text.strip()
        if not trimmed.endswith("?"):
            log.warning("record %s: dropping non-question item %r", record.record_id, trimmed)
            continue
        if trimmed in seen:
            continue
        seen.add(trimmed)
        kept.append(trimmed)
        if len(kept) == cap:
            break
    if not kept:
        log.warning("record %s: no questions generated; record will be skipped downstream", record.record_id)
    return [
        ProbeQuestion(question_id=derived_id(record.record_id, i), record_id=record.record_id, text=text)
        for i, text in enumerate(kept)
    ]


def sample_answers(
    question: ProbeQuestion,
    image_ref: str,
    backend,
    m: int,
    temperature: float,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> list[AnswerSample]:
    """Sample exactly m answers, one backend call per sample index.

    Any backend failure aborts the whole question: partial samples are
    discarded so a question is never scored on fewer than m answers.
    """
    if m < 1:
        raise ValidationError("m must be >= 1")
    prompt = prompts.render("answer_visual", question=question.text)
    samples = []
    for index in range(m):
        request = BackendRequest(
            role="vlm",
            prompt=prompt,
            model_id=model_id,
            image_ref=image_ref,
            temperature=temperature,
            sample_index=index,
        )
        response = backend.complete(request)
        samples.append(AnswerSample(question_id=question.question_id, sample_index=index, text=response.text))
    return samples


def judge_answer(
    question: ProbeQuestion,
    answer: AnswerSample,
    ground_truth_caption: str,
    judge_backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> str:
    """Judge one sampled answer against the ground-truth caption.

    The judge runs at temperature 0 and must emit CORRECT or INCORRECT
    (case-insensitive, first whole word wins). Anything else leaves the
    sample unjudged, excluded from difficulty counts.
    """
    if answer.verdict != "unjudged":
        raise ValidationError(f"sample {answer.question_id}/{answer.sample_index} already judged")
    request = BackendRequest(
        role="judge",
        prompt=prompts.render(
            "judge", caption=ground_truth_caption, question=question.text, answer=answer.text
        ),
        model_id=model_id,
        temperature=0.0,
        sample_index=answer.sample_index,
    )
    response = judge_backend.complete(request)
    verdict = scan_token(response.text, _VERDICT_TOKENS)
    if verdict is None:
        log.warning(
            "question %s sample %d: judge response has no verdict token (%r)",
            answer.question_id,
            answer.sample_index,
            response.text[:80],
        )
        return "unjudged"
    return verdict


def compute_difficulty(samples: list[AnswerSample]) -> DifficultyReport:
    """Fold judged samples into the incorrect-answer fraction.

    Unjudged samples are excluded from both counts; if nothing was judged
    the question cannot be scored at all.
    """
    if not samples:
        raise ValidationError("no samples given")
    question_ids = {s.question_id for s in samples}
    if len(question_ids) != 1:
        raise ValidationError(f"samples span multiple questions: {sorted(question_ids)}")
    num_correct = sum(1 for s in samples if s.verdict == "correct")
    num_incorrect = sum(1 for s in samples if s.verdict == "incorrect")
    if num_correct + num_incorrect == 0:
        raise NoJudgeableSamplesError(f"no judgeable samples for question {samples[0].question_id}")
    return DifficultyReport(
        question_id=samples[0].question_id, num_correct=num_correct, num_incorrect=num_incorrect
    )


def classify_unknown(
    reports: list[DifficultyReport], threshold: Fraction, record_id: str
) -> KnowledgeClassification:
    """Partition one record's questions: unknown iff difficulty > threshold.

    The comparison is exact rational arithmetic, so boundary difficulties
    equal to the threshold always land on the known side.
    """
    threshold = Fraction(threshold)
    if not 0 <= threshold <= 1:
        raise ValidationError("threshold must be in [0, 1]")
    unknown = frozenset(r.question_id for r in reports if r.difficulty > threshold)
    known = frozenset(r.question_id for r in reports) - unknown
    return KnowledgeClassification(
        record_id=record_id,
        threshold=threshold,
        unknown_question_ids=unknown,
        known_question_ids=known,
    )


def filter_known_qa(
    questions: list[ProbeQuestion],
    reports: list[DifficultyReport],
    threshold: Fraction,
) -> tuple[list[ProbeQuestion], list[ProbeQuestion]]:
    """Split a QA dataset into (known, unknown) lists by the same
    difficulty > threshold rule; every question must carry a report."""
    threshold = Fraction(threshold)
    if not 0 <= threshold <= 1:
        raise ValidationError("threshold must be in [0, 1]")
    by_id = {r.question_id: r for r in reports}
    known: list[ProbeQuestion] = []
    unknown: list[ProbeQuestion] = []
    for question in questions:
        report = by_id.get(question.question_id)
        if report is None:
            raise ValidationError(f"no difficulty report for question {question.question_id}")
        (unknown if report.difficulty > threshold else known).append(question)
    return known, unknown


# ---------------------------------------------------------------------------
# Stage drivers


@dataclass
class SkipEntry:
    stage: str
    item_id: str
    reason: str

    def as_dict(self) -> dict:
        return {"stage": self.stage, "item_id": self.item_id, "reason": self.reason}


@dataclass
class ProbeResult:
    answers: list[AnswerSample] = field(default_factory=list)
    reports: list[DifficultyReport] = field(default_factory=list)
    skipped: list[SkipEntry] = field(default_factory=list)


def generate_dataset_questions(
    records: list[CaptionRecord],
    backend,
    cap: int,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> tuple[list[ProbeQuestion], list[SkipEntry]]:
    """Generate questions for every record; records whose response cannot be
    parsed (or yields nothing) are skipped and reported, transport failures
    propagate."""

    def one(record: CaptionRecord):
        try:
            return generate_questions(record, backend, cap, model_id=model_id, prompts=prompts)
        except (StructuredOutputError, UnscriptedRequestError) as exc:
            return SkipEntry("questions", record.record_id, str(exc))

    questions: list[ProbeQuestion] = []
    skipped: list[SkipEntry] = []
    for record, outcome in zip(records, parallel_map(one, records, jobs)):
        if isinstance(outcome, SkipEntry):
            skipped.append(outcome)
        elif not outcome:
            skipped.append(SkipEntry("questions", record.record_id, "no questions generated"))
        else:
            questions.extend(outcome)
    return questions, skipped


def probe_dataset(
    records: list[CaptionRecord],
    questions: list[ProbeQuestion],
    vlm_backend,
    judge_backend,
    *,
    m: int,
    temperature: float,
    vlm_model_id: str = "default",
    judge_model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> ProbeResult:
    """Sample and judge answers for every question.

    A backend failure while sampling or judging marks that question failed
    (recorded, never silently scored); questions with zero judged samples
    are likewise dropped with a reason. Output is sorted by question id so
    aggregation is order-independent.
    """
    by_record = {r.record_id: r for r in records}

    def one(question: ProbeQuestion):
        record = by_record.get(question.record_id)
        if record is None:
            return SkipEntry("probe", question.question_id, f"unknown record {question.record_id!r}")
        try:
            samples = sample_answers(
                question, record.image_ref, vlm_backend, m, temperature,
                model_id=vlm_model_id, prompts=prompts,
            )
            judged = []
            for sample in samples:
                verdict = judge_answer(
                    question, sample, record.caption, judge_backend,
                    model_id=judge_model_id, prompts=prompts,
                )
                judged.append(sample.with_verdict(verdict) if verdict != "unjudged" else sample)
            report = compute_difficulty(judged)
            return judged, report
        except BackendError as exc:
            return SkipEntry("probe", question.question_id, str(exc))
        except NoJudgeableSamplesError as exc:
            return SkipEntry("probe", question.question_id, str(exc))

    result = ProbeResult()
    for outcome in parallel_map(one, questions, jobs):
        if isinstance(outcome, SkipEntry):
            result.skipped.append(outcome)
        else:
            judged, report = outcome
            result.answers.extend(judged)
            result.reports.append(report)
    result.answers.sort(key=lambda a: (a.question_id, a.sample_index))
    result.reports.sort(key=lambda r: r.question_id)
    return result


def classify_dataset(
    questions: list[ProbeQuestion],
    reports: list[DifficultyReport],
    threshold: Fraction,
) -> list[KnowledgeClassification]:
    """Group difficulty reports by record and classify each record.

    Records whose questions all failed probing still get a row with two
    empty sets, which downstream adaptation treats as the identity.
    """
    reports_by_id = {r.question_id: r for r in reports}
    by_record: dict[str, list[DifficultyReport]] = {}
    order: list[str] = []
    for question in questions:
        if question.record_id not in by_record:
            by_record[question.record_id] = []
            order.append(question.record_id)
        if question.question_id in reports_by_id:
            by_record[question.record_id].append(reports_by_id[question.question_id])
    return [classify_unknown(by_record[rid], threshold, rid) for rid in order]
