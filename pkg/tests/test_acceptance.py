"""Acceptance gate: one test per criterion, each printable as a single
pass/fail line via `pytest tests/test_acceptance.py -v`."""

import json
import random
import time
from fractions import Fraction
from itertools import product

import pytest

from knowada.adapt import adapt_random, adapt_trim, verify_rewrite
from knowada.analysis import ContingencyTable2x2, majority_vote, phi_coefficient
from knowada.backends import MockBackend, PatternRule
from knowada.config import RunConfig
from knowada.dnli import score_corpus, score_pair
from knowada.pipeline import RESULTS_COLUMNS, STATS_COLUMNS, run_pipeline
from knowada.probe import classify_unknown, compute_difficulty
from knowada.records import (
    AnnotationRecord,
    AnswerSample,
    CaptionRecord,
    DifficultyReport,
    ProbeQuestion,
    derived_id,
    load_adapted,
    save_records,
)
from knowada.text import split_sentences

from conftest import build_dnli_mocks, curate_mock, handles_for, make_records

LABELS = ("entailed", "contradicted", "neutral")


def oracle_ratios(gen_labels, gt_labels):
    """Independent recount of the four metrics from raw label lists."""
    return {
        "desc_precision": Fraction(gen_labels.count("entailed"), len(gen_labels)),
        "desc_recall": Fraction(gt_labels.count("entailed"), len(gt_labels)),
        "contra_precision": Fraction(gt_labels.count("contradicted"), len(gt_labels)),
        "contra_recall": Fraction(gen_labels.count("contradicted"), len(gen_labels)),
    }


def random_reports(rng, max_questions=12):
    reports = []
    for i in range(rng.randint(1, max_questions)):
        correct = rng.randint(0, 10)
        incorrect = rng.randint(1 if correct == 0 else 0, 10)
        reports.append(DifficultyReport(f"q{i}", correct, incorrect))
    return reports


def test_criterion_01_difficulty_formula_and_boundary():
    started = time.monotonic()
    samples = [AnswerSample("q1", i, "a", "correct") for i in range(6)]
    samples += [AnswerSample("q1", 6 + i, "a", "incorrect") for i in range(4)]
    assert compute_difficulty(samples).difficulty == Fraction(4, 10)

    samples = [AnswerSample("q2", i, "a", "correct") for i in range(4)]
    samples += [AnswerSample("q2", 4 + i, "a", "incorrect") for i in range(6)]
    assert compute_difficulty(samples).difficulty == Fraction(6, 10)

    # df exactly equal to T stays known: strict inequality.
    boundary = [DifficultyReport("qb", num_correct=4, num_incorrect=1)]  # df = 1/5
    result = classify_unknown(boundary, Fraction(1, 5), "rec")
    assert result.known_question_ids == {"qb"}
    assert result.unknown_question_ids == frozenset()
    assert time.monotonic() - started < 1.0


def test_criterion_02_threshold_monotonicity_500_tables():
    rng = random.Random(202)
    violations = 0
    for _ in range(500):
        reports = random_reports(rng)
        t1 = Fraction(rng.randint(0, 1000), 1000)
        t2 = Fraction(rng.randint(0, 1000), 1000)
        t1, t2 = min(t1, t2), max(t1, t2)
        unknown_low = classify_unknown(reports, t1, "rec").unknown_question_ids
        unknown_high = classify_unknown(reports, t2, "rec").unknown_question_ids
        if not unknown_high <= unknown_low:
            violations += 1
    assert violations == 0


def test_criterion_03_dnli_counting_oracle_200_fixtures():
    rng = random.Random(303)
    for case in range(200):
        gen_labels = [rng.choice(LABELS) for _ in range(rng.randint(1, 10))]
        gt_labels = [rng.choice(LABELS) for _ in range(rng.randint(1, 10))]
        captions, decomposer, nli = build_dnli_mocks([(f"fx{case}", gen_labels, gt_labels)])
        generated, reference = captions[f"fx{case}"]
        score = score_pair(generated, reference, decomposer, nli, pair_id=f"fx{case}")
        assert score.ratios() == oracle_ratios(gen_labels, gt_labels), f"fixture {case}"

    # Identity case with an ideal entail-everything NLI.
    caption = "A red van is parked by a mural of fish."
    decomposer = MockBackend(
        patterns=[PatternRule(role="decomposer", contains=caption,
                              response=json.dumps(["A van is parked.", "The van is red.", "A mural shows fish."]))]
    )
    nli = MockBackend(patterns=[PatternRule(role="nli", contains="Hypothesis:", response="ENTAILED")])
    score = score_pair(caption, caption, decomposer, nli)
    assert score.desc_precision == 1 and score.desc_recall == 1
    assert score.contra_precision == 0 and score.contra_recall == 0


def test_criterion_04_micro_aggregation_50_corpora():
    rng = random.Random(404)
    for corpus_index in range(50):
        specs = []
        for p in range(rng.randint(1, 6)):
            gen_labels = [rng.choice(LABELS) for _ in range(rng.randint(1, 8))]
            gt_labels = [rng.choice(LABELS) for _ in range(rng.randint(1, 8))]
            specs.append((f"c{corpus_index}p{p}", gen_labels, gt_labels))
        captions, decomposer, nli = build_dnli_mocks(specs)
        pairs = [(pid, *captions[pid]) for pid, _, _ in specs]
        result = score_corpus(pairs, decomposer, nli)

        # Oracle: ratio of summed counts, straight off the label lists.
        gen_all = [lab for _, gl, _ in specs for lab in gl]
        gt_all = [lab for _, _, tl in specs for lab in tl]
        micro = result.micro
        assert micro.ratios() == oracle_ratios(gen_all, gt_all), f"corpus {corpus_index}"


def test_criterion_05_phi_examples_and_symmetry():
    assert phi_coefficient(ContingencyTable2x2(5, 0, 0, 5)) == pytest.approx(1.0, abs=1e-12)
    assert phi_coefficient(ContingencyTable2x2(2, 2, 2, 2)) == pytest.approx(0.0, abs=1e-12)
    assert phi_coefficient(ContingencyTable2x2(3, 1, 1, 3)) == pytest.approx(0.5, abs=1e-12)

    rng = random.Random(505)
    checked = 0
    while checked < 500:
        a, b, c, d = (rng.randint(0, 40) for _ in range(4))
        table = ContingencyTable2x2(a, b, c, d)
        if 0 in (a + b, c + d, a + c, b + d):
            continue
        swapped = ContingencyTable2x2(d, c, b, a)
        assert phi_coefficient(table) == pytest.approx(phi_coefficient(swapped), abs=1e-12)
        checked += 1


def test_criterion_06_robustness_rates_nine_of_ten():
    unknown = [ProbeQuestion(derived_id("u", i), "rec", f"Unknown {i}?") for i in range(10)]
    known = [ProbeQuestion(derived_id("k", i), "rec", f"Known {i}?") for i in range(10)]
    lost_texts = {q.text for q in unknown[:9]} | {known[0].text}

    patterns = [
        PatternRule(role="vlm", contains=text, response=f"gone {text}") for text in sorted(lost_texts)
    ]
    patterns.append(PatternRule(role="vlm", contains="Question:", response="same answer"))
    answer_backend = MockBackend(patterns=patterns)

    def scorer(premise, hypothesis):
        # Bi-directional probabilities: both low only for the lost items.
        if premise.startswith("gone") or hypothesis.startswith("gone"):
            return Fraction(1, 10)
        return Fraction(9, 10)

    report = verify_rewrite("ORIGINAL text", "REWRITTEN text", known, unknown, answer_backend, scorer, record_id="rec")
    assert report.removal_rate == Fraction(9, 10)
    assert report.retention_rate == Fraction(9, 10)
    # Both-below-1/2 is strict in both directions.
    mixed = verify_rewrite(
        "ORIGINAL text", "REWRITTEN text", [], unknown[:1], answer_backend,
        lambda p, h: Fraction(1, 2), record_id="rec",
    )
    assert mixed.removal_rate == 0


def test_criterion_07_curate_preset_20_records_cached_rerun(tmp_path):
    records = make_records(20)
    captions = tmp_path / "captions.jsonl"
    save_records(records, captions)
    mock = curate_mock()
    cache_dir = tmp_path / "cache"
    config = RunConfig(m=10, cache_dir=cache_dir)

    started = time.monotonic()
    manifest1 = run_pipeline(
        "curate", config, {"captions": captions}, tmp_path / "run1",
        handles=handles_for(mock, cache_dir),
    )
    elapsed = time.monotonic() - started
    assert elapsed < 60, f"curate preset took {elapsed:.1f}s"
    assert manifest1.completed
    assert len(load_adapted(tmp_path / "run1" / "adapted.jsonl")) == 20

    calls_after_first = mock.calls
    assert calls_after_first > 0
    manifest2 = run_pipeline(
        "curate", config, {"captions": captions}, tmp_path / "run2",
        handles=handles_for(mock, cache_dir), force=True,
    )
    names = ["questions.jsonl", "answers.jsonl", "difficulty.jsonl",
             "classification.jsonl", "adapted.jsonl", "robustness.jsonl"]
    for name in names:
        assert (tmp_path / "run1" / name).read_bytes() == (tmp_path / "run2" / name).read_bytes(), name
    assert mock.calls == calls_after_first, "second run must make zero backend calls"
    assert manifest2.backend_calls == 0
    assert manifest2.backend_requests > 0


def test_criterion_08_ablation_determinism():
    record = CaptionRecord(
        "rec-1", "img.jpg",
        "A tall clock tower rises over the square. Pigeons gather at its base. A cafe with green chairs sits "
        "to the left! Is the fountain running? It was earlier.",
    )
    questions = [ProbeQuestion(derived_id("rec-1", i), "rec-1", f"Q{i}?") for i in range(7)]
    rewriter = MockBackend(patterns=[PatternRule(role="rewriter", contains="Questions:", response="A square scene.")])
    runs = [adapt_random(record, questions, 3, seed=99, rewrite_backend=rewriter) for _ in range(10)]
    assert all(run == runs[0] for run in runs)

    sentences = split_sentences(record.caption)
    for k in range(8):
        trimmed = split_sentences(adapt_trim(record, k).text)
        assert trimmed == sentences[: len(trimmed)]
        assert len(trimmed) == (len(sentences) if k == 0 else max(1, len(sentences) - k))


def test_criterion_09_report_shape(tmp_path):
    specs = [("p1", ["entailed", "contradicted"], ["entailed", "neutral"])]
    captions, decomposer, nli = build_dnli_mocks(specs)
    generated, reference = captions["p1"]
    base = make_records(1)[0]
    save_records([base.__class__(record_id="p1", image_ref="i", caption=generated, source="synthetic")],
                 tmp_path / "gen.jsonl")
    save_records([base.__class__(record_id="p1", image_ref="i", caption=reference, source="human")],
                 tmp_path / "ref.jsonl")
    mock = MockBackend(patterns=decomposer.patterns + nli.patterns)
    config = RunConfig(cache_dir=tmp_path / "cache")
    manifest = run_pipeline(
        "evaluate", config, {"generated": tmp_path / "gen.jsonl", "reference": tmp_path / "ref.jsonl"},
        tmp_path / "eval", handles=handles_for(mock, tmp_path / "cache"),
        labels={"model": "vlm-demo", "captions": "human"},
    )
    assert manifest.completed

    results_header = (tmp_path / "eval" / "report" / "results.csv").read_text().splitlines()[0].split(",")
    assert results_header == list(RESULTS_COLUMNS) == [
        "model", "captions",
        "contradiction_precision", "contradiction_recall",
        "descriptiveness_precision", "descriptiveness_recall", "words",
    ]
    stats_header = (tmp_path / "eval" / "report" / "stats.csv").read_text().splitlines()[0].split(",")
    assert stats_header == list(STATS_COLUMNS) == [
        "source", "model", "mean_words_original", "mean_words_adapted", "mean_unknown_questions", "records",
    ]
    pr_lines = (tmp_path / "eval" / "report" / "pr_curve.csv").read_text().splitlines()
    assert pr_lines[0] == "label,descriptiveness_precision,descriptiveness_recall"
    assert len(pr_lines) == 2


def test_criterion_10_majority_vote_exhaustive():
    no_majority = []
    for combo in product(LABELS, repeat=3):
        vote = majority_vote(AnnotationRecord("p", combo))
        counts = {lab: combo.count(lab) for lab in LABELS}
        best = max(counts.values())
        if best >= 2:
            assert counts[vote.label] == best
            assert vote.agreement == Fraction(best, 3)
            assert vote.no_majority is False
        else:
            assert vote.label == "neutral"
            assert vote.agreement == Fraction(1, 3)
            assert vote.no_majority is True
            no_majority.append(combo)
    assert len(no_majority) == 6
    assert all(len(set(combo)) == 3 for combo in no_majority)
