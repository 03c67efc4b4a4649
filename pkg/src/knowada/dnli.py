"""Proposition-level entailment scoring of generated captions.

Both captions of a pair are decomposed into atomic propositions. Generated-
side propositions are labeled against the ground-truth caption as premise,
and ground-truth propositions against the generated caption, so all four
precision/recall ratios are computable from stored counts alone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .backends import BackendRequest
from .backends.prompts import DEFAULT_LIBRARY, PromptLibrary
from .errors import KnowadaError, StructuredOutputError, ValidationError
from .parsing import parse_string_array, scan_token
from .records import Proposition, derived_id
from .text import word_count
from .workers import parallel_map

log = logging.getLogger(__name__)

_LABEL_TOKENS = {"entailed": "entailed", "contradicted": "contradicted", "neutral": "neutral"}

RATIO_NAMES = ("desc_precision", "desc_recall", "contra_precision", "contra_recall")


@dataclass(frozen=True)
class DnliScore:
    """Labeled-proposition counts for one (generated, ground-truth) pair.

    gen_* counts come from generated-side propositions judged against the
    ground truth; gt_* counts from ground-truth propositions judged against
    the generated caption. Ratios are derived, never stored.
    """

    gen_total: int
    gen_entailed: int
    gen_contradicted: int
    gen_neutral: int
    gt_total: int
    gt_entailed: int
    gt_contradicted: int
    gt_neutral: int
    word_count: int

    def __post_init__(self):
        if self.gen_entailed + self.gen_contradicted + self.gen_neutral != self.gen_total:
            raise ValidationError("generated-side label counts do not sum to gen_total")
        if self.gt_entailed + self.gt_contradicted + self.gt_neutral != self.gt_total:
            raise ValidationError("ground-truth-side label counts do not sum to gt_total")
        if min(self.gen_total, self.gt_total) < 1:
            raise ValidationError("both sides need at least one labeled proposition")

    @property
    def desc_precision(self) -> Fraction:
        return Fraction(self.gen_entailed, self.gen_total)

    @property
    def desc_recall(self) -> Fraction:
        return Fraction(self.gt_entailed, self.gt_total)

    @property
    def contra_precision(self) -> Fraction:
        return Fraction(self.gt_contradicted, self.gt_total)

    @property
    def contra_recall(self) -> Fraction:
        return Fraction(self.gen_contradicted, self.gen_total)

    def ratios(self, orientation: str = "formulas") -> dict[str, Fraction]:
        """The four metrics. Orientation "formulas" reads the contradiction
        ratios off the ground-truth/generated sides as printed; "prose"
        swaps them so precision describes the generated caption."""
        if orientation not in ("formulas", "prose"):
            raise ValidationError(f"unknown orientation {orientation!r}")
        contra_p, contra_r = self.contra_precision, self.contra_recall
        if orientation == "prose":
            contra_p, contra_r = contra_r, contra_p
        return {
            "desc_precision": self.desc_precision,
            "desc_recall": self.desc_recall,
            "contra_precision": contra_p,
            "contra_recall": contra_r,
        }


def decompose(
    caption: str,
    backend,
    *,
    parent_id: str,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> list[Proposition]:
    """Split a caption into unique atomic propositions via the decomposer
    backend (temperature 0). Duplicates are dropped and ordinals re-densified
    in response order; an empty decomposition is an error."""
    if not caption:
        raise ValidationError("caption must be non-empty")
    request = BackendRequest(
        role="decomposer",
        prompt=prompts.render("decompose", caption=caption),
        model_id=model_id,
        temperature=0.0,
    )
    response = backend.complete(request)
    texts = parse_string_array(response.text)
    unique: list[str] = []
    seen: set[str] = set()
    for text in texts:
        if text not in seen:
            seen.add(text)
            unique.append(text)
    if not unique:
        raise StructuredOutputError("decomposer returned zero propositions", response.text)
    return [
        Proposition(prop_id=derived_id(parent_id, i), parent_id=parent_id, ordinal=i, text=text)
        for i, text in enumerate(unique)
    ]


def classify_proposition(
    prop: Proposition,
    premise: str,
    nli_backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
) -> str:
    """Three-way entailment label for one proposition against a premise.

    Returns "unlabeled" (and logs) when the backend emits none of the three
    tokens; such propositions are excluded from every count.
    """
    if prop.label != "unlabeled":
        raise ValidationError(f"proposition {prop.prop_id} already labeled {prop.label!r}")
    if not premise:
        raise ValidationError("premise must be non-empty")
    request = BackendRequest(
        role="nli",
        prompt=prompts.render("nli_label", premise=premise, proposition=prop.text),
        model_id=model_id,
        temperature=0.0,
    )
    response = nli_backend.complete(request)
    label = scan_token(response.text, _LABEL_TOKENS)
    if label is None:
        log.warning("proposition %s: unrecognized label response %r", prop.prop_id, response.text[:80])
        return "unlabeled"
    return label


def label_propositions(
    props: list[Proposition],
    premise: str,
    nli_backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> list[Proposition]:
    """Label every unlabeled proposition in place-order against one premise."""

    def one(prop: Proposition) -> Proposition:
        if prop.label != "unlabeled":
            return prop
        return replace(prop, label=classify_proposition(
            prop, premise, nli_backend, model_id=model_id, prompts=prompts
        ))

    return parallel_map(one, props, jobs)


def score_from_labeled(
    gen_props: list[Proposition],
    gt_props: list[Proposition],
    generated_caption: str,
) -> DnliScore:
    """Fold already-labeled propositions into a score; unlabeled ones are
    excluded from all counts."""
    gen = [p for p in gen_props if p.label != "unlabeled"]
    gt = [p for p in gt_props if p.label != "unlabeled"]
    if not gen:
        raise ValidationError("no labeled propositions on the generated side")
    if not gt:
        raise ValidationError("no labeled propositions on the ground-truth side")

    def count(props: list[Proposition], label: str) -> int:
        return sum(1 for p in props if p.label == label)

    return DnliScore(
        gen_total=len(gen),
        gen_entailed=count(gen, "entailed"),
        gen_contradicted=count(gen, "contradicted"),
        gen_neutral=count(gen, "neutral"),
        gt_total=len(gt),
        gt_entailed=count(gt, "entailed"),
        gt_contradicted=count(gt, "contradicted"),
        gt_neutral=count(gt, "neutral"),
        word_count=word_count(generated_caption),
    )


def score_pair(
    generated_caption: str,
    ground_truth_caption: str,
    decomposer_backend,
    nli_backend,
    *,
    pair_id: str = "pair",
    decomposer_model_id: str = "default",
    nli_model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> DnliScore:
    """Full scoring of one caption pair: decompose both sides, label each
    side against the other caption as premise, fold into counts."""
    if not generated_caption or not ground_truth_caption:
        raise ValidationError("both captions must be non-empty")
    gen_props = decompose(
        generated_caption, decomposer_backend,
        parent_id=f"{pair_id}/generated", model_id=decomposer_model_id, prompts=prompts,
    )
    gt_props = decompose(
        ground_truth_caption, decomposer_backend,
        parent_id=f"{pair_id}/reference", model_id=decomposer_model_id, prompts=prompts,
    )
    gen_labeled = label_propositions(
        gen_props, ground_truth_caption, nli_backend, model_id=nli_model_id, prompts=prompts, jobs=jobs
    )
    gt_labeled = label_propositions(
        gt_props, generated_caption, nli_backend, model_id=nli_model_id, prompts=prompts, jobs=jobs
    )
    return score_from_labeled(gen_labeled, gt_labeled, generated_caption)


def decompose_dataset(
    records,
    backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> tuple[list[Proposition], list]:
    """Decompose every caption record; parse failures skip the record."""
    from .errors import UnscriptedRequestError
    from .probe import SkipEntry

    def one(record):
        try:
            return decompose(
                record.caption, backend, parent_id=record.record_id, model_id=model_id, prompts=prompts
            )
        except (StructuredOutputError, UnscriptedRequestError) as exc:
            return SkipEntry("decompose", record.record_id, str(exc))

    props: list[Proposition] = []
    skipped: list = []
    for outcome in parallel_map(one, records, jobs):
        if isinstance(outcome, list):
            props.extend(outcome)
        else:
            skipped.append(outcome)
    return props, skipped


def entail_dataset(
    props: list[Proposition],
    premise_by_parent: dict[str, str],
    nli_backend,
    *,
    model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> list[Proposition]:
    """Label a proposition file against per-parent premises.

    Every proposition must find its premise; a missing one is a wiring
    error, not a model failure.
    """
    missing = {p.parent_id for p in props} - set(premise_by_parent)
    if missing:
        raise ValidationError(f"no premise for parent id(s): {sorted(missing)}")

    def one(prop: Proposition) -> Proposition:
        if prop.label != "unlabeled":
            return prop
        label = classify_proposition(
            prop, premise_by_parent[prop.parent_id], nli_backend, model_id=model_id, prompts=prompts
        )
        return replace(prop, label=label)

    return parallel_map(one, props, jobs)


@dataclass
class CorpusScore:
    """Micro-aggregated corpus result plus the per-pair scores."""

    per_pair: list[tuple[str, DnliScore]] = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def micro(self) -> DnliScore:
        if not self.per_pair:
            raise ValidationError("no scored pairs to aggregate")
        scores = [s for _, s in self.per_pair]
        return DnliScore(
            gen_total=sum(s.gen_total for s in scores),
            gen_entailed=sum(s.gen_entailed for s in scores),
            gen_contradicted=sum(s.gen_contradicted for s in scores),
            gen_neutral=sum(s.gen_neutral for s in scores),
            gt_total=sum(s.gt_total for s in scores),
            gt_entailed=sum(s.gt_entailed for s in scores),
            gt_contradicted=sum(s.gt_contradicted for s in scores),
            gt_neutral=sum(s.gt_neutral for s in scores),
            word_count=sum(s.word_count for s in scores),
        )

    def macro(self, orientation: str = "formulas") -> dict[str, Fraction]:
        if not self.per_pair:
            raise ValidationError("no scored pairs to aggregate")
        totals = {name: Fraction(0) for name in RATIO_NAMES}
        for _, score in self.per_pair:
            for name, value in score.ratios(orientation).items():
                totals[name] += value
        return {name: value / len(self.per_pair) for name, value in totals.items()}

    @property
    def mean_word_count(self) -> Fraction:
        if not self.per_pair:
            raise ValidationError("no scored pairs to aggregate")
        return Fraction(sum(s.word_count for _, s in self.per_pair), len(self.per_pair))


def score_corpus(
    pairs: list[tuple[str, str, str]],
    decomposer_backend,
    nli_backend,
    *,
    decomposer_model_id: str = "default",
    nli_model_id: str = "default",
    prompts: PromptLibrary = DEFAULT_LIBRARY,
    jobs: int = 1,
) -> CorpusScore:
    """Score (pair_id, generated, ground_truth) triples.

    Pairs that error are excluded from aggregation and listed in the skip
    report; aggregation over zero surviving pairs is an error.
    """
    from .probe import SkipEntry

    if not pairs:
        raise ValidationError("empty pair list")

    def one(pair: tuple[str, str, str]):
        pair_id, generated, ground_truth = pair
        try:
            return pair_id, score_pair(
                generated, ground_truth, decomposer_backend, nli_backend,
                pair_id=pair_id, decomposer_model_id=decomposer_model_id,
                nli_model_id=nli_model_id, prompts=prompts,
            )
        except KnowadaError as exc:
            return SkipEntry("score", pair_id, str(exc))

    result = CorpusScore()
    for outcome in parallel_map(one, pairs, jobs):
        if isinstance(outcome, tuple):
            result.per_pair.append(outcome)
        else:
            result.skipped.append(outcome)
    if not result.per_pair:
        raise ValidationError("every pair failed to score; nothing to aggregate")
    return result
