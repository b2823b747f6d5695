"""Alignment objective: predict the next item's properties from history.

Each example pairs a history prompt plus one of the 20 question templates
with a rendered answer span; the answer tokens are the only supervised
positions, and gradients reach the adaptor through every [VISUAL] slot in
the history.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import backbone as B
from .features import FeatureStore
from .prompts import MODE_IMAGE, PromptPlan, append_target, build_risa_pair
from .templates import DEFAULT_TEMPLATES


@dataclass
class RISAExample:
    plan: PromptPlan       # history + question, target_mask all false
    target_ids: list[int]
    prop: str
    next_item_id: str


@dataclass
class RISABatch:
    examples: list[RISAExample]

    def __len__(self) -> int:
        return len(self.examples)


def training_pair(split, user_id: str):
    """(history item_ids, target item_id) inside the training prefix.

    The last training item is the prediction target so validation and test
    items never appear in training prompts; users with fewer than two
    training items cannot form a pair.
    """
    prefix = split.train[user_id]
    if len(prefix) < 2:
        raise ValueError(f"user {user_id}: training prefix of {len(prefix)} cannot form a pair")
    return prefix[:-1], prefix[-1]


def make_batch(user_ids, split, items: dict, rng: np.random.Generator,
               size: int | None = None, mode: str = MODE_IMAGE,
               context_budget: int | None = None, voc=None,
               template_set=DEFAULT_TEMPLATES) -> RISABatch:
    """One alignment example per drawn user; template draws are per example."""
    eligible = [u for u in user_ids if len(split.train[u]) >= 2]
    if not eligible:
        raise ValueError("no user has a training prefix of length >= 2")
    if size is None:
        chosen = eligible
    else:
        chosen = [eligible[int(i)] for i in rng.integers(0, len(eligible), size=size)]
    examples = []
    for user in chosen:
        history_ids, target_id = training_pair(split, user)
        prefix = [items[i] for i in history_ids]
        plan, target_ids, prop = build_risa_pair(
            voc, prefix, items[target_id], rng, mode=mode,
            context_budget=context_budget, template_set=template_set)
        examples.append(RISAExample(plan, target_ids, prop, target_id))
    return RISABatch(examples)


def risa_loss(backbone: B.Backbone, adaptor: B.Adaptor, rec: B.RecToken,
              store: FeatureStore | None, batch: RISABatch,
              fallback: bool = False) -> torch.Tensor:
    """Mean over examples of the masked next-token NLL on the answer span."""
    if not batch.examples:
        raise ValueError("batch must be nonempty")
    plans = [append_target(ex.plan, ex.target_ids) for ex in batch.examples]
    embs = [B.assemble_input_embeddings(p, backbone, adaptor, rec, store, fallback)
            for p in plans]
    width = max(e.shape[0] for e in embs)
    stacked = torch.zeros(len(embs), width, embs[0].shape[1], dtype=embs[0].dtype)
    for i, e in enumerate(embs):
        stacked[i, : e.shape[0]] = e
    hidden = backbone.hidden_states(stacked)

    rows, targets, owner = [], [], []
    for i, plan in enumerate(plans):
        for pos, masked in enumerate(plan.target_mask):
            if masked:
                rows.append(hidden[i, pos - 1])
                targets.append(plan.tokens[pos])
                owner.append(i)
    logits = backbone.logits(torch.stack(rows))
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp[torch.arange(len(targets)), torch.tensor(targets, dtype=torch.long)]
    owner_t = torch.tensor(owner, dtype=torch.long)
    per_example = torch.zeros(len(plans), dtype=nll.dtype).index_add_(0, owner_t, nll)
    counts = torch.zeros(len(plans), dtype=nll.dtype).index_add_(
        0, owner_t, torch.ones_like(nll))
    return (per_example / counts).mean()
