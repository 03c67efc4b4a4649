"""Knowledge-gap probing, caption adaptation, and proposition-level
entailment scoring for dense-caption datasets."""

__version__ = "0.1.0"

from .records import (  # noqa: E402
    AdaptedCaption,
    AnnotationRecord,
    AnswerSample,
    CaptionRecord,
    DifficultyReport,
    KnowledgeClassification,
    ProbeQuestion,
    Proposition,
    load_dataset,
    parse_ratio,
    save_records,
)
from .text import split_sentences, word_count  # noqa: E402

__all__ = [
    "AdaptedCaption",
    "AnnotationRecord",
    "AnswerSample",
    "CaptionRecord",
    "DifficultyReport",
    "KnowledgeClassification",
    "ProbeQuestion",
    "Proposition",
    "__version__",
    "load_dataset",
    "parse_ratio",
    "save_records",
    "split_sentences",
    "word_count",
]
