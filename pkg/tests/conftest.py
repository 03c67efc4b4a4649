"""Shared fixtures: caption corpora and fully scripted mock backends."""

from __future__ import annotations

import json

import pytest

from knowada.backends import CachedBackend, MockBackend, PatternRule
from knowada.config import RoleHandle
from knowada.records import CaptionRecord

QUESTION_TEXTS = [
    "What color is the main object?",
    "How many items are in the scene?",
    "What text is written on the sign?",
]

# Pattern script driving the whole curate preset: one answer per question
# family, the middle question always judged wrong so every record ends up
# with exactly one unknown question at the default threshold.
CURATE_PATTERNS = [
    PatternRule(role="question_gen", contains="Description:", response=json.dumps(QUESTION_TEXTS)),
    PatternRule(role="vlm", contains="Passage:", response="a short grounded answer"),
    PatternRule(role="vlm", contains="What color", response="blue"),
    PatternRule(role="vlm", contains="How many", response="three"),
    PatternRule(role="vlm", contains="What text", response="it says OPEN"),
    PatternRule(role="judge", contains="How many", response="INCORRECT"),
    PatternRule(role="judge", contains="Proposed answer:", response="CORRECT"),
    PatternRule(role="rewriter", contains="Questions:", response="A tidy scene with a few everyday items."),
    PatternRule(role="rewriter", contains="Degree", response="A simple scene."),
    PatternRule(role="nli", contains="probability", response="0.9"),
    PatternRule(role="nli", contains="Hypothesis:", response="ENTAILED"),
]


def make_records(n: int, prefix: str = "rec") -> list[CaptionRecord]:
    records = []
    for i in range(n):
        records.append(
            CaptionRecord(
                record_id=f"{prefix}-{i:03d}",
                image_ref=f"images/{prefix}-{i:03d}.jpg",
                caption=(
                    f"A {['red', 'green', 'blue'][i % 3]} stall stands in a market square numbered {i}. "
                    "Two wooden crates sit beside it. A sign reading \"OPEN\" hangs above the counter."
                ),
                split="train",
                source="human" if i % 2 == 0 else "synthetic",
            )
        )
    return records


def curate_mock() -> MockBackend:
    return MockBackend(patterns=list(CURATE_PATTERNS))


def handles_for(mock: MockBackend, cache_dir) -> dict[str, RoleHandle]:
    cached = CachedBackend(mock, cache_dir)
    return {
        role: RoleHandle(backend=cached, model_id="scripted")
        for role in ("question_gen", "vlm", "judge", "rewriter", "decomposer", "nli")
    }


def build_dnli_mocks(pair_specs):
    """Scripted decomposer/NLI backends for label fixtures.

    pair_specs: list of (pair_id, gen_labels, gt_labels) where labels are
    3-way label names. Returns (captions_by_pair, decomposer, nli) where
    captions_by_pair maps pair_id -> (generated_caption, reference_caption).
    """
    decomp_patterns: list[PatternRule] = []
    nli_patterns: list[PatternRule] = []
    captions: dict[str, tuple[str, str]] = {}
    for pair_id, gen_labels, gt_labels in pair_specs:
        gen_caption = f"GEN {pair_id} scene."
        ref_caption = f"REF {pair_id} scene."
        captions[pair_id] = (gen_caption, ref_caption)
        gen_props = [f"{pair_id} gen claim {i} is stated." for i in range(len(gen_labels))]
        ref_props = [f"{pair_id} ref claim {i} is stated." for i in range(len(gt_labels))]
        decomp_patterns.append(
            PatternRule(role="decomposer", contains=gen_caption, response=json.dumps(gen_props))
        )
        if ref_caption != gen_caption:
            decomp_patterns.append(
                PatternRule(role="decomposer", contains=ref_caption, response=json.dumps(ref_props))
            )
        for prop, label in zip(gen_props, gen_labels):
            nli_patterns.append(PatternRule(role="nli", contains=prop, response=label.upper()))
        for prop, label in zip(ref_props, gt_labels):
            nli_patterns.append(PatternRule(role="nli", contains=prop, response=label.upper()))
    return captions, MockBackend(patterns=decomp_patterns), MockBackend(patterns=nli_patterns)


@pytest.fixture
def records20() -> list[CaptionRecord]:
    return make_records(20)


def write_mock_script(path, patterns=None) -> None:
    rules = []
    for rule in patterns or CURATE_PATTERNS:
        raw = {"response": rule.response}
        if rule.role:
            raw["role"] = rule.role
        if rule.contains:
            raw["contains"] = rule.contains
        if rule.regex:
            raw["regex"] = rule.regex
        rules.append(raw)
    path.write_text(json.dumps({"patterns": rules}, indent=2))


def write_config(tmp_path, *, m=4, extra="") -> "Path":
    script = tmp_path / "mock-script.json"
    write_mock_script(script)
    config = tmp_path / "config.yaml"
    config.write_text(
        f"""
sampling:
  m: {m}
  temperature: 0.4
threshold: "20%"
seed: 7
cache:
  dir: {tmp_path / "cache"}
backends:
  default:
    type: mock
    script: mock-script.json
    model_id: scripted
{extra}"""
    )
    return config
