"""Aggregation and agreement statistics over labels, classifications, and
difficulty tables: majority voting, phi correlation, dataset summary rows,
unknown-question overlap, threshold sweeps, and contradiction locations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Callable, Iterable, NamedTuple

from .errors import ValidationError
from .records import (
    AdaptedCaption,
    AnnotationRecord,
    CaptionRecord,
    DifficultyReport,
    KnowledgeClassification,
    Proposition,
)
from .text import word_count

BINARIZE_MODES = ("contradicted_vs_rest", "entailed_vs_rest", "drop_neutral")


class MajorityVote(NamedTuple):
    label: str
    agreement: Fraction
    no_majority: bool


def majority_vote(record: AnnotationRecord) -> MajorityVote:
    """Label held by at least two of the three annotators.

    When all three labels differ there is no majority: the vote resolves to
    neutral with agreement 1/3 and the no-majority flag set, keeping every
    proposition countable.
    """
    labels = record.annotator_labels
    for label in set(labels):
        count = labels.count(label)
        if count >= 2:
            return MajorityVote(label, Fraction(count, 3), False)
    return MajorityVote("neutral", Fraction(1, 3), True)


def agreement_stats(records: Iterable[AnnotationRecord]) -> dict[str, Fraction]:
    """Mean majority-agreement fraction per majority label."""
    sums: dict[str, Fraction] = {}
    counts: dict[str, int] = {}
    total = 0
    for record in records:
        vote = majority_vote(record)
        sums[vote.label] = sums.get(vote.label, Fraction(0)) + vote.agreement
        counts[vote.label] = counts.get(vote.label, 0) + 1
        total += 1
    if total == 0:
        raise ValidationError("no annotation records")
    return {label: sums[label] / counts[label] for label in sums}


@dataclass(frozen=True)
class ContingencyTable2x2:
    """Counts with rows = human binary label (1 then 0), columns = automatic
    binary label (1 then 0): a=(1,1), b=(1,0), c=(0,1), d=(0,0)."""

    a: int
    b: int
    c: int
    d: int

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValidationError("cell counts must be non-negative")
        if self.a + self.b + self.c + self.d < 1:
            raise ValidationError("table must hold at least one observation")


def phi_coefficient(table: ContingencyTable2x2) -> float:
    """Correlation of a 2x2 table: (ad - bc) / sqrt of the marginal product.

    Undefined when any row or column sum is zero.
    """
    a, b, c, d = table.a, table.b, table.c, table.d
    marginals = [(a + b), (c + d), (a + c), (b + d)]
    if 0 in marginals:
        raise ValidationError("phi undefined: a row or column marginal is zero")
    return (a * d - b * c) / math.sqrt(math.prod(marginals))


def binarize_labels(human_label: str, auto_label: str, mode: str) -> tuple[int, int] | None:
    """Map a 3-class label pair to bits, or None when the pair is excluded.

    contradicted_vs_rest / entailed_vs_rest set the bit when the label is
    the named class; drop_neutral excludes pairs where either side is
    neutral and then sets the bit for contradicted (vs entailed).
    """
    if mode not in BINARIZE_MODES:
        raise ValidationError(f"mode must be one of {BINARIZE_MODES}, got {mode!r}")
    if mode == "drop_neutral":
        if "neutral" in (human_label, auto_label):
            return None
        return int(human_label == "contradicted"), int(auto_label == "contradicted")
    target = "contradicted" if mode == "contradicted_vs_rest" else "entailed"
    return int(human_label == target), int(auto_label == target)


def contingency_from_pairs(pairs: Iterable[tuple[int, int]]) -> ContingencyTable2x2:
    a = b = c = d = 0
    for human_bit, auto_bit in pairs:
        if human_bit and auto_bit:
            a += 1
        elif human_bit:
            b += 1
        elif auto_bit:
            c += 1
        else:
            d += 1
    return ContingencyTable2x2(a=a, b=b, c=c, d=d)


# ---------------------------------------------------------------------------
# Dataset statistics


@dataclass(frozen=True)
class StatsRow:
    source: str
    model: str
    mean_words_original: Fraction
    mean_words_adapted: Fraction
    mean_unknown_questions: Fraction
    records: int


def caption_stats(
    captions: list[CaptionRecord],
    adapted_text_by_record: dict[str, str],
    unknown_by_record: dict[str, int],
    model_id: str = "model",
) -> list[StatsRow]:
    """Per-source summary rows from raw text/count mappings. Records without
    an adapted text count their original caption (the identity case)."""
    groups: dict[str, list[CaptionRecord]] = {}
    for record in captions:
        groups.setdefault(record.source, []).append(record)
    rows = []
    for source in sorted(groups):
        members = groups[source]
        n = len(members)
        rows.append(
            StatsRow(
                source=source,
                model=model_id,
                mean_words_original=Fraction(sum(word_count(r.caption) for r in members), n),
                mean_words_adapted=Fraction(
                    sum(
                        word_count(adapted_text_by_record.get(r.record_id, r.caption)) for r in members
                    ),
                    n,
                ),
                mean_unknown_questions=Fraction(
                    sum(unknown_by_record.get(r.record_id, 0) for r in members), n
                ),
                records=n,
            )
        )
    return rows


def dataset_stats(
    captions: list[CaptionRecord],
    adapted: list[AdaptedCaption],
    classifications: list[KnowledgeClassification],
    model_id: str = "model",
) -> list[StatsRow]:
    """Per-source summary: mean original words, mean adapted words, and mean
    unknown questions per caption, for one probed model's outputs."""
    return caption_stats(
        captions,
        {a.record_id: a.text for a in adapted},
        {c.record_id: len(c.unknown_question_ids) for c in classifications},
        model_id,
    )


# ---------------------------------------------------------------------------
# Unknown-question overlap


@dataclass
class OverlapReport:
    models: list[str]
    union_size: int
    regions: dict[str, int]  # exact region sizes for up to 3 models
    pairwise: dict[str, int]  # intersection sizes keyed "A&B"
    notice: str | None = None


def unknown_overlap(unknown_sets: dict[str, set[str]]) -> OverlapReport:
    """Set-algebra region sizes of per-model unknown-question sets.

    For up to three models the exact region decomposition is emitted; with
    more models only the pairwise intersection matrix is, with a notice.
    """
    if not unknown_sets:
        raise ValidationError("need at least one unknown set")
    models = sorted(unknown_sets)
    union: set[str] = set()
    for ids in unknown_sets.values():
        union |= ids
    pairwise = {
        f"{x}&{y}": len(unknown_sets[x] & unknown_sets[y]) for x, y in combinations(models, 2)
    }
    if len(models) > 3:
        return OverlapReport(
            models=models,
            union_size=len(union),
            regions={},
            pairwise=pairwise,
            notice="more than 3 models: exact region decomposition omitted",
        )
    regions: dict[str, int] = {}
    for r in range(1, len(models) + 1):
        for group in combinations(models, r):
            inside = set(union)
            for name in group:
                inside &= unknown_sets[name]
            for name in models:
                if name not in group:
                    inside -= unknown_sets[name]
            regions["&".join(group) + " only"] = len(inside)
    return OverlapReport(models=models, union_size=len(union), regions=regions, pairwise=pairwise)


# ---------------------------------------------------------------------------
# Threshold sweep


@dataclass(frozen=True)
class SweepPoint:
    threshold: Fraction
    known: int
    unknown: int
    desc_precision: float | None = None
    desc_recall: float | None = None


def threshold_sweep(
    reports: list[DifficultyReport],
    thresholds: list[Fraction],
    scorer: Callable[[Fraction], tuple[float, float] | None] | None = None,
) -> list[SweepPoint]:
    """Classification sizes (and optional downstream precision/recall
    points) across an ascending list of thresholds."""
    if sorted(thresholds) != list(thresholds):
        raise ValidationError("thresholds must be sorted ascending")
    points = []
    for threshold in thresholds:
        if not 0 <= threshold <= 1:
            raise ValidationError("threshold must be in [0, 1]")
        unknown = sum(1 for r in reports if r.difficulty > threshold)
        pr = scorer(threshold) if scorer is not None else None
        points.append(
            SweepPoint(
                threshold=threshold,
                known=len(reports) - unknown,
                unknown=unknown,
                desc_precision=pr[0] if pr else None,
                desc_recall=pr[1] if pr else None,
            )
        )
    return points


# ---------------------------------------------------------------------------
# Contradiction locations


def contradiction_locations(props: list[Proposition], bins: int = 10) -> list[int]:
    """Histogram of where contradicted propositions sit inside their
    decomposition.

    The relative location of a proposition is (ordinal + 1) / parent_total
    in (0, 1]; bin i (1-based) covers ((i-1)/bins, i/bins].
    """
    totals: dict[str, int] = {}
    for prop in props:
        totals[prop.parent_id] = totals.get(prop.parent_id, 0) + 1
    histogram = [0] * bins
    for prop in props:
        if prop.label != "contradicted":
            continue
        total = totals[prop.parent_id]
        location = Fraction(prop.ordinal + 1, total)
        if location > 1:
            raise ValidationError(
                f"proposition {prop.prop_id}: ordinal {prop.ordinal} outside parent total {total}"
            )
        index = math.ceil(location * bins)
        histogram[index - 1] += 1
    return histogram
