"""Domain value objects and line-delimited record file I/O.

All types are immutable after construction and safe to share across worker
threads. Record files hold one JSON object per line, UTF-8, with fixed field
names; loaders enforce the per-type invariants and report the offending line
number on failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import DatasetError, ValidationError

log = logging.getLogger(__name__)

SPLITS = ("train", "eval", "test")
SOURCES = ("human", "synthetic")
VERDICTS = ("correct", "incorrect", "unjudged")
ADAPT_METHODS = ("knowada", "random", "trim", "simplify")
PROP_LABELS = ("entailed", "contradicted", "neutral", "unlabeled")
ANNOTATION_LABELS = ("entailed", "contradicted", "neutral")


def derived_id(*parts: object) -> str:
    """Deterministic 16-hex-char id derived from the given parts."""
    blob = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def parse_ratio(value: object) -> Fraction:
    """Parse a ratio given as a percentage ("20%"), decimal ("0.2"), or
    fraction ("1/5") into an exact rational in [0, 1]."""
    try:
        if isinstance(value, Fraction):
            ratio = value
        elif isinstance(value, bool):
            raise ValueError(value)
        elif isinstance(value, int):
            ratio = Fraction(value)
        elif isinstance(value, float):
            ratio = Fraction(str(value))
        elif isinstance(value, str):
            text = value.strip()
            if text.endswith("%"):
                ratio = Fraction(text[:-1].strip()) / 100
            else:
                ratio = Fraction(text)
        else:
            raise ValueError(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValidationError(f"not a ratio: {value!r}") from exc
    if not 0 <= ratio <= 1:
        raise ValidationError(f"ratio {value!r} outside [0, 1]")
    return ratio


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValidationError(message)


@dataclass(frozen=True)
class CaptionRecord:
    """One image-caption pair of a dense-caption dataset."""

    record_id: str
    image_ref: str
    caption: str
    split: str = "train"
    source: str = "human"

    def __post_init__(self):
        _require(bool(self.record_id), "record_id must be non-empty")
        _require(bool(self.caption), "caption must be non-empty")
        _require(self.split in SPLITS, f"split must be one of {SPLITS}, got {self.split!r}")
        _require(self.source in SOURCES, f"source must be one of {SOURCES}, got {self.source!r}")


@dataclass(frozen=True)
class ProbeQuestion:
    """A visual question generated from one caption."""

    question_id: str
    record_id: str
    text: str

    def __post_init__(self):
        _require(bool(self.question_id), "question_id must be non-empty")
        _require(bool(self.record_id), "record_id must be non-empty")
        _require(self.text.strip().endswith("?"), f"question text must end with '?': {self.text!r}")


@dataclass(frozen=True)
class AnswerSample:
    """One sampled answer to a probe question."""

    question_id: str
    sample_index: int
    text: str
    verdict: str = "unjudged"

    def __post_init__(self):
        _require(self.sample_index >= 0, "sample_index must be non-negative")
        _require(self.verdict in VERDICTS, f"verdict must be one of {VERDICTS}, got {self.verdict!r}")

    def with_verdict(self, verdict: str) -> "AnswerSample":
        """Return a judged copy; only the unjudged -> judged transition is legal."""
        if self.verdict != "unjudged":
            raise ValidationError(
                f"sample {self.question_id}/{self.sample_index} already judged {self.verdict!r}"
            )
        return replace(self, verdict=verdict)


@dataclass(frozen=True)
class DifficultyReport:
    """Judged-answer counts for one question; the difficulty ratio is derived
    from the stored integer pair, never stored as a float."""

    question_id: str
    num_correct: int
    num_incorrect: int

    def __post_init__(self):
        _require(self.num_correct >= 0 and self.num_incorrect >= 0, "counts must be non-negative")
        _require(self.num_correct + self.num_incorrect >= 1, "at least one judged answer required")

    @property
    def difficulty(self) -> Fraction:
        return Fraction(self.num_incorrect, self.num_correct + self.num_incorrect)


@dataclass(frozen=True)
class KnowledgeClassification:
    """Partition of one record's judgeable questions at a threshold."""

    record_id: str
    threshold: Fraction
    unknown_question_ids: frozenset[str]
    known_question_ids: frozenset[str]

    def __post_init__(self):
        _require(0 <= self.threshold <= 1, "threshold must be in [0, 1]")
        overlap = self.unknown_question_ids & self.known_question_ids
        _require(not overlap, f"question ids in both sets: {sorted(overlap)}")


@dataclass(frozen=True)
class AdaptedCaption:
    """A rewritten caption plus provenance of what was removed and why."""

    record_id: str
    method: str
    text: str
    removed_question_ids: frozenset[str] = frozenset()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        _require(self.method in ADAPT_METHODS, f"method must be one of {ADAPT_METHODS}")
        _require(bool(self.text), "adapted text must be non-empty")
        if self.method in ("trim", "simplify"):
            _require(not self.removed_question_ids, f"{self.method} must not remove question ids")


@dataclass(frozen=True)
class Proposition:
    """An atomic claim extracted from a caption."""

    prop_id: str
    parent_id: str
    ordinal: int
    text: str
    label: str = "unlabeled"

    def __post_init__(self):
        _require(self.ordinal >= 0, "ordinal must be non-negative")
        _require(bool(self.text), "proposition text must be non-empty")
        _require(self.label in PROP_LABELS, f"label must be one of {PROP_LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class AnnotationRecord:
    """Three independent human labels for one proposition."""

    prop_id: str
    annotator_labels: tuple[str, str, str]

    def __post_init__(self):
        _require(len(self.annotator_labels) == 3, "exactly three annotator labels required")
        for lab in self.annotator_labels:
            _require(lab in ANNOTATION_LABELS, f"label must be one of {ANNOTATION_LABELS}, got {lab!r}")


# ---------------------------------------------------------------------------
# JSONL I/O


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                raise DatasetError(f"{path}:{lineno}: blank line in record file")
            try:
                obj = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected an object, got {type(obj).__name__}")
            yield lineno, obj


def _take_fields(obj: dict, fields: tuple[str, ...], path: Path, lineno: int) -> dict:
    for name in fields:
        if name not in obj:
            raise DatasetError(f"{path}:{lineno}: missing field '{name}'")
    extra = set(obj) - set(fields)
    if extra:
        raise DatasetError(f"{path}:{lineno}: unknown field(s) {sorted(extra)}")
    return obj


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


CAPTION_FIELDS = ("record_id", "image_ref", "caption", "split", "source")
QUESTION_FIELDS = ("question_id", "record_id", "text")
ANSWER_FIELDS = ("question_id", "sample_index", "text", "verdict")
DIFFICULTY_FIELDS = ("question_id", "num_correct", "num_incorrect")
CLASSIFICATION_FIELDS = ("record_id", "threshold", "unknown_question_ids", "known_question_ids")
ADAPTED_FIELDS = ("record_id", "method", "text", "removed_question_ids", "params")
PROP_FIELDS = ("prop_id", "parent_id", "ordinal", "text", "label")
ANNOTATION_FIELDS = ("prop_id", "annotator_labels")


def load_dataset(path: Path) -> list[CaptionRecord]:
    """Load a caption record file, preserving line order."""
    path = Path(path)
    records: list[CaptionRecord] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, CAPTION_FIELDS, path, lineno)
        try:
            record = CaptionRecord(**obj)
        except (ValidationError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if record.record_id in seen:
            raise DatasetError(
                f"{path}:{lineno}: duplicate record_id {record.record_id!r} "
                f"(first seen on line {seen[record.record_id]})"
            )
        seen[record.record_id] = lineno
        records.append(record)
    return records


def save_records(records: Iterable[CaptionRecord], path: Path) -> None:
    write_jsonl(
        path,
        (
            {
                "record_id": r.record_id,
                "image_ref": r.image_ref,
                "caption": r.caption,
                "split": r.split,
                "source": r.source,
            }
            for r in records
        ),
    )


def load_questions(path: Path) -> list[ProbeQuestion]:
    path = Path(path)
    questions: list[ProbeQuestion] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, QUESTION_FIELDS, path, lineno)
        try:
            question = ProbeQuestion(**obj)
        except (ValidationError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if question.question_id in seen:
            raise DatasetError(
                f"{path}:{lineno}: duplicate question_id {question.question_id!r} "
                f"(first seen on line {seen[question.question_id]})"
            )
        seen[question.question_id] = lineno
        questions.append(question)
    return questions


def save_questions(questions: Iterable[ProbeQuestion], path: Path) -> None:
    write_jsonl(
        path,
        ({"question_id": q.question_id, "record_id": q.record_id, "text": q.text} for q in questions),
    )


def load_answers(path: Path) -> list[AnswerSample]:
    path = Path(path)
    answers: list[AnswerSample] = []
    seen: dict[tuple[str, int], int] = {}
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, ANSWER_FIELDS, path, lineno)
        try:
            sample = AnswerSample(**obj)
        except (ValidationError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        key = (sample.question_id, sample.sample_index)
        if key in seen:
            raise DatasetError(
                f"{path}:{lineno}: duplicate sample_index {sample.sample_index} for question "
                f"{sample.question_id!r} (first seen on line {seen[key]})"
            )
        seen[key] = lineno
        answers.append(sample)
    return answers


def save_answers(answers: Iterable[AnswerSample], path: Path) -> None:
    write_jsonl(
        path,
        (
            {
                "question_id": a.question_id,
                "sample_index": a.sample_index,
                "text": a.text,
                "verdict": a.verdict,
            }
            for a in answers
        ),
    )


def load_difficulty(path: Path) -> list[DifficultyReport]:
    path = Path(path)
    reports: list[DifficultyReport] = []
    seen: dict[str, int] = {}
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, DIFFICULTY_FIELDS, path, lineno)
        try:
            report = DifficultyReport(**obj)
        except (ValidationError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        if report.question_id in seen:
            raise DatasetError(
                f"{path}:{lineno}: duplicate question_id {report.question_id!r} "
                f"(first seen on line {seen[report.question_id]})"
            )
        seen[report.question_id] = lineno
        reports.append(report)
    return reports


def save_difficulty(reports: Iterable[DifficultyReport], path: Path) -> None:
    write_jsonl(
        path,
        (
            {"question_id": r.question_id, "num_correct": r.num_correct, "num_incorrect": r.num_incorrect}
            for r in reports
        ),
    )


def load_classifications(path: Path) -> list[KnowledgeClassification]:
    path = Path(path)
    rows: list[KnowledgeClassification] = []
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, CLASSIFICATION_FIELDS, path, lineno)
        try:
            rows.append(
                KnowledgeClassification(
                    record_id=obj["record_id"],
                    threshold=parse_ratio(obj["threshold"]),
                    unknown_question_ids=frozenset(obj["unknown_question_ids"]),
                    known_question_ids=frozenset(obj["known_question_ids"]),
                )
            )
        except ValidationError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return rows


def save_classifications(rows: Iterable[KnowledgeClassification], path: Path) -> None:
    write_jsonl(
        path,
        (
            {
                "record_id": c.record_id,
                "threshold": str(c.threshold),
                "unknown_question_ids": sorted(c.unknown_question_ids),
                "known_question_ids": sorted(c.known_question_ids),
            }
            for c in rows
        ),
    )


def load_adapted(path: Path) -> list[AdaptedCaption]:
    path = Path(path)
    rows: list[AdaptedCaption] = []
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, ADAPTED_FIELDS, path, lineno)
        try:
            rows.append(
                AdaptedCaption(
                    record_id=obj["record_id"],
                    method=obj["method"],
                    text=obj["text"],
                    removed_question_ids=frozenset(obj["removed_question_ids"]),
                    params=obj["params"],
                )
            )
        except ValidationError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return rows


def save_adapted(rows: Iterable[AdaptedCaption], path: Path) -> None:
    write_jsonl(
        path,
        (
            {
                "record_id": a.record_id,
                "method": a.method,
                "text": a.text,
                "removed_question_ids": sorted(a.removed_question_ids),
                "params": {k: a.params[k] for k in sorted(a.params)},
            }
            for a in rows
        ),
    )


def load_propositions(path: Path) -> list[Proposition]:
    """Load a proposition file; duplicate texts within a parent are dropped
    (first occurrence kept) with a warning."""
    path = Path(path)
    props: list[Proposition] = []
    seen_texts: set[tuple[str, str]] = set()
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, PROP_FIELDS, path, lineno)
        try:
            prop = Proposition(**obj)
        except (ValidationError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
        key = (prop.parent_id, prop.text)
        if key in seen_texts:
            log.warning("%s:%d: duplicate proposition text for parent %s dropped", path, lineno, prop.parent_id)
            continue
        seen_texts.add(key)
        props.append(prop)
    return props


def save_propositions(props: Iterable[Proposition], path: Path) -> None:
    write_jsonl(
        path,
        (
            {
                "prop_id": p.prop_id,
                "parent_id": p.parent_id,
                "ordinal": p.ordinal,
                "text": p.text,
                "label": p.label,
            }
            for p in props
        ),
    )


def load_annotations(path: Path) -> list[AnnotationRecord]:
    path = Path(path)
    rows: list[AnnotationRecord] = []
    for lineno, obj in _iter_jsonl(path):
        obj = _take_fields(obj, ANNOTATION_FIELDS, path, lineno)
        labels = obj["annotator_labels"]
        if not isinstance(labels, list) or len(labels) != 3:
            raise DatasetError(f"{path}:{lineno}: annotator_labels must hold exactly 3 labels")
        try:
            rows.append(AnnotationRecord(prop_id=obj["prop_id"], annotator_labels=tuple(labels)))
        except ValidationError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return rows


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def canonical_json(value: Any) -> str:
    """Stable serialization used for hashing configs and requests."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
