"""Prompt plans: token sequences with bound [VISUAL]/[REC] slots.

An item appears in a prompt as one segment; what the segment carries depends
on the representation mode:

  image              Title: <title>, Visual Representation: [VISUAL]
  attribute          Title: <title>, Brand: <brand>, Category: <category>
  description        Title: <title>, Description: <description>
  image+description  Title: <title>, Visual Representation: [VISUAL], Description: <description>

History prompts enumerate segments oldest to newest after a fixed preamble.
When a context budget binds, whole segments are dropped oldest-first so a
slot is never orphaned mid-segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import templates, vocab as V
from .data import ItemRecord
from .templates import DEFAULT_TEMPLATES, DESCRIPTION_TARGET_CAP, PROPERTIES, RISATemplateSet

MODE_IMAGE = "image"
MODE_ATTRIBUTE = "attribute"
MODE_DESCRIPTION = "description"
MODE_IMAGE_DESCRIPTION = "image+description"
MODES = (MODE_IMAGE, MODE_ATTRIBUTE, MODE_DESCRIPTION, MODE_IMAGE_DESCRIPTION)

SLOT_VISUAL = "VISUAL"
SLOT_REC = "REC"


@dataclass(frozen=True)
class Slot:
    position: int
    kind: str
    item_id: str | None = None


@dataclass
class PromptPlan:
    tokens: list[int]
    slots: list[Slot]
    target_mask: list[bool]
    mode: str

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def visual_slots(self) -> list[Slot]:
        return [s for s in self.slots if s.kind == SLOT_VISUAL]

    @property
    def rec_position(self) -> int | None:
        recs = [s.position for s in self.slots if s.kind == SLOT_REC]
        return recs[0] if recs else None

    def validate(self) -> None:
        assert len(self.target_mask) == len(self.tokens)
        for s in self.slots:
            want = V.VISUAL if s.kind == SLOT_VISUAL else V.REC
            assert self.tokens[s.position] == want, f"slot at {s.position} does not hold its reserved id"
        recs = [s for s in self.slots if s.kind == SLOT_REC]
        assert len(recs) <= 1
        if recs:
            assert recs[0].position == len(self.tokens) - 1, "[REC] must be the final position"


def _mode_requires(mode: str, item: ItemRecord) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode in (MODE_DESCRIPTION, MODE_IMAGE_DESCRIPTION) and not item.description:
        raise ValueError(f"item {item.item_id}: mode {mode!r} needs a nonempty description")


def _title_scaffold(voc, item: ItemRecord, mode: str) -> list[int]:
    text = f"Title: {item.title},"
    if mode in (MODE_IMAGE, MODE_IMAGE_DESCRIPTION):
        text += " Visual Representation:"
    return V.tokenize(voc, text)


def build_item_segment(voc, item: ItemRecord, mode: str) -> tuple[list[int], list[Slot]]:
    """Render one item segment; slot positions are segment-relative."""
    _mode_requires(mode, item)
    ids = _title_scaffold(voc, item, mode)
    slots: list[Slot] = []
    if mode in (MODE_IMAGE, MODE_IMAGE_DESCRIPTION):
        slots.append(Slot(len(ids), SLOT_VISUAL, item.item_id))
        ids = ids + [V.VISUAL]
    if mode == MODE_ATTRIBUTE:
        ids = ids + V.tokenize(voc, f"Brand: {item.brand}, Category: {item.category}")
    elif mode in (MODE_DESCRIPTION, MODE_IMAGE_DESCRIPTION):
        prefix = ", " if mode == MODE_IMAGE_DESCRIPTION else ""
        ids = ids + V.tokenize(voc, f"{prefix}Description: {item.description}")
    return ids, slots


def count_item_tokens(voc, item: ItemRecord, mode: str) -> tuple[int, int]:
    """(total segment tokens, content-only tokens).

    Content excludes the shared title scaffold (and, in image modes, the
    visual-representation label), so image-mode content is exactly the one
    [VISUAL] token.
    """
    ids, _ = build_item_segment(voc, item, mode)
    return len(ids), len(ids) - len(_title_scaffold(voc, item, mode))


def build_history_prompt(voc, prefix: list[ItemRecord], mode: str,
                         context_budget: int | None = None) -> PromptPlan:
    """Preamble plus item segments oldest to newest, truncated to the budget."""
    if not prefix:
        raise ValueError("history prefix must be nonempty")
    preamble = V.tokenize(voc, templates.HISTORY_PREAMBLE)
    segments = [build_item_segment(voc, item, mode) for item in prefix]
    if context_budget is not None:
        total = len(preamble) + sum(len(ids) for ids, _ in segments)
        drop = 0
        while drop < len(segments) and total > context_budget:
            total -= len(segments[drop][0])
            drop += 1
        segments = segments[drop:]
        if not segments:
            raise ValueError(
                f"context budget {context_budget} cannot fit the scaffold plus one item segment")
    tokens = list(preamble)
    slots: list[Slot] = []
    for ids, seg_slots in segments:
        base = len(tokens)
        tokens.extend(ids)
        slots.extend(replace(s, position=base + s.position) for s in seg_slots)
    plan = PromptPlan(tokens, slots, [False] * len(tokens), mode)
    plan.validate()
    return plan


def build_rec_plan(voc, prefix: list[ItemRecord], mode: str,
                   context_budget: int | None = None) -> PromptPlan:
    """History prompt, the retrieval instruction, then a final [REC] slot."""
    instr = V.tokenize(voc, templates.REC_INSTRUCTION)
    reserve = len(instr) + 1
    inner = None if context_budget is None else context_budget - reserve
    plan = build_history_prompt(voc, prefix, mode, inner)
    tokens = plan.tokens + instr + [V.REC]
    slots = plan.slots + [Slot(len(tokens) - 1, SLOT_REC)]
    out = PromptPlan(tokens, slots, [False] * len(tokens), mode)
    out.validate()
    return out


def build_risa_pair(voc, prefix: list[ItemRecord], next_item: ItemRecord,
                    rng: np.random.Generator, mode: str = MODE_IMAGE,
                    context_budget: int | None = None,
                    template_set: RISATemplateSet = DEFAULT_TEMPLATES,
                    ) -> tuple[PromptPlan, list[int], str]:
    """(input plan ending in a question, target answer ids, property).

    The template is drawn uniformly from the 20 questions; if the drawn
    property is empty on the target item, the draw is retried up to 20 times.
    Description answers are capped at DESCRIPTION_TARGET_CAP tokens.
    """
    if all(not getattr(next_item, p) for p in PROPERTIES):
        raise ValueError(f"item {next_item.item_id}: every alignment property is empty")
    for _ in range(20):
        idx = int(rng.integers(0, len(template_set)))
        prop, question = template_set.question(idx)
        value = getattr(next_item, prop)
        if value:
            break
    else:
        raise ValueError(f"item {next_item.item_id}: no nonempty property after 20 draws")

    question_ids = V.tokenize(voc, question)
    target_ids = V.tokenize(voc, templates.render_answer(prop, value))
    if prop == "description":
        target_ids = target_ids[:DESCRIPTION_TARGET_CAP]
    reserve = len(question_ids) + len(target_ids)
    inner = None if context_budget is None else context_budget - reserve
    history = build_history_prompt(voc, prefix, mode, inner)
    plan = PromptPlan(history.tokens + question_ids, list(history.slots),
                      [False] * (len(history.tokens) + len(question_ids)), mode)
    plan.validate()
    return plan, target_ids, prop


def append_target(plan: PromptPlan, target_ids: list[int]) -> PromptPlan:
    """Teacher-forced training sequence: plan tokens plus the masked target span."""
    tokens = plan.tokens + list(target_ids)
    mask = [False] * len(plan.tokens) + [True] * len(target_ids)
    out = PromptPlan(tokens, list(plan.slots), mask, plan.mode)
    out.validate()
    return out
