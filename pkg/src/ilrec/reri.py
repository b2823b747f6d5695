"""Retrieval head: projectors into a shared space, affinity, loss, ranking.

The user side is always the backbone's last hidden state at the [REC]
position; the item side is the item's stored feature row for the given type.
Each feature type gets its own affine user/item projector pair into a shared
d_s-dimensional space, scores are plain dot products, and multi-type scores
add up. The pairwise loss is binary cross-entropy on a positive and one
sampled negative, evaluated through softplus identities so large scores stay
finite:

  loss = softplus(-r_pos) + softplus(r_neg)     per active type
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import backbone as B
from .features import IMG, JOINT_TEXT, FeatureStore
from .prompts import build_rec_plan

ACTIVE_TYPE_CHOICES = ("Img", "CF", "Text")


@dataclass
class RankedList:
    item_ids: list[str]
    scores: list[float]


class Projectors(nn.Module):
    """Per-type affine user (d -> d_s) and item (dim_type -> d_s) maps."""

    def __init__(self, d_model: int, feature_dims: dict[str, int], d_s: int = 64,
                 dtype=torch.float32):
        super().__init__()
        self.d_s = d_s
        self.feature_dims = dict(feature_dims)
        self.user = nn.ModuleDict()
        self.item = nn.ModuleDict()
        for ftype, dim in feature_dims.items():
            if ftype not in ACTIVE_TYPE_CHOICES:
                raise ValueError(f"no projector for feature type {ftype!r}")
            self.user[ftype] = nn.Linear(d_model, d_s, dtype=dtype)
            self.item[ftype] = nn.Linear(dim, d_s, dtype=dtype)

    def init_params(self, gen: torch.Generator) -> None:
        for ftype in sorted(self.user.keys()):
            B._init_linear(self.user[ftype], gen)
            B._init_linear(self.item[ftype], gen)


def project_user(proj: Projectors, h: torch.Tensor, ftype: str) -> torch.Tensor:
    if ftype not in proj.user:
        raise ValueError(f"unknown feature type {ftype!r}")
    return proj.user[ftype](h)


def project_item(proj: Projectors, feature: torch.Tensor, ftype: str) -> torch.Tensor:
    if ftype not in proj.item:
        raise ValueError(f"unknown feature type {ftype!r}")
    return proj.item[ftype](feature)


def affinity(o_u: torch.Tensor, o_i: torch.Tensor) -> torch.Tensor:
    if o_u.shape != o_i.shape:
        raise ValueError(f"affinity shapes differ: {tuple(o_u.shape)} vs {tuple(o_i.shape)}")
    return (o_u * o_i).sum(-1)


def pair_bce(r_pos: torch.Tensor, r_neg: torch.Tensor) -> torch.Tensor:
    """-log sigmoid(r_pos) - log(1 - sigmoid(r_neg)), numerically stable."""
    return torch.nn.functional.softplus(-r_pos) + torch.nn.functional.softplus(r_neg)


def _item_feature(store: FeatureStore, item_id: str, ftype: str, fallback: bool) -> np.ndarray:
    if ftype == IMG:
        return store.visual_row(item_id, fallback)
    matrix = store.get(ftype)
    if matrix is None or item_id not in matrix:
        raise KeyError(f"item {item_id}: no {ftype} feature row")
    return matrix.row(item_id)


def reri_loss(proj: Projectors, h_user: torch.Tensor, store: FeatureStore,
              pos_item: str, neg_item: str, active_types, fallback: bool = False) -> torch.Tensor:
    """Sum of per-type pairwise BCE terms for one (user, positive, negative)."""
    total = None
    dtype = h_user.dtype
    for ftype in active_types:
        pos = torch.as_tensor(np.asarray(_item_feature(store, pos_item, ftype, fallback)), dtype=dtype)
        neg = torch.as_tensor(np.asarray(_item_feature(store, neg_item, ftype, fallback)), dtype=dtype)
        o_u = project_user(proj, h_user, ftype)
        r_pos = affinity(o_u, project_item(proj, pos, ftype))
        r_neg = affinity(o_u, project_item(proj, neg, ftype))
        term = pair_bce(r_pos, r_neg)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("active_types must be nonempty")
    return total


def sample_negative(user_id: str, catalog, history, rng: np.random.Generator) -> str:
    """Uniform draw over catalog items absent from the user's full history."""
    hist = set(history)
    eligible = [i for i in catalog if i not in hist]
    if not eligible:
        raise ValueError(f"user {user_id}: no never-interacted item to sample")
    return eligible[int(rng.integers(len(eligible)))]


def user_repr(voc, backbone: B.Backbone, adaptor: B.Adaptor, rec: B.RecToken,
              store: FeatureStore | None, prefix_items, mode: str,
              context_budget: int | None = None, fallback: bool = False) -> torch.Tensor:
    """h([REC]): final hidden state at the recommendation token."""
    plan = build_rec_plan(voc, prefix_items, mode, context_budget)
    emb = B.assemble_input_embeddings(plan, backbone, adaptor, rec, store, fallback)
    out = B.forward(backbone, emb)
    return B.last_hidden(out, plan.rec_position)


def score_candidates(proj: Projectors, h_user: torch.Tensor, candidates,
                     store: FeatureStore, active_types, fallback: bool = False) -> dict[str, float]:
    """score(i) = sum over active types of dot(user projection, item projection)."""
    with torch.no_grad():
        dtype = h_user.dtype
        total = torch.zeros(len(candidates), dtype=dtype)
        for ftype in active_types:
            rows = np.stack([np.asarray(_item_feature(store, c, ftype, fallback))
                             for c in candidates])
            o_i = project_item(proj, torch.as_tensor(rows, dtype=dtype), ftype)
            o_u = project_user(proj, h_user, ftype)
            total = total + o_i @ o_u
    return {c: float(s) for c, s in zip(candidates, total)}


def top_k(scores: dict[str, float], k: int) -> RankedList:
    """The k highest-scoring items; ties break by ascending item_id."""
    if k > len(scores):
        raise ValueError(f"k={k} exceeds {len(scores)} scored items")
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return RankedList([i for i, _ in ranked], [s for _, s in ranked])
