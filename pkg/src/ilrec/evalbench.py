"""Metrics, leave-one-out evaluation, overlap analysis, and cost benchmarks.

All report artifacts are plain data (CSV rows and JSON documents) with a
`# key=value` metadata header; figure rendering lives in `figures` and only
consumes these files.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from . import reri
from .data import Dataset, sample_candidates
from .features import FeatureStore
from .model import ModelBundle
from .prompts import (MODE_ATTRIBUTE, MODE_DESCRIPTION, MODE_IMAGE, build_history_prompt,
                      build_item_segment, count_item_tokens)
from .seeding import spawn_rng
from .templates import HISTORY_PREAMBLE
from .vocab import tokenize

# Published reference similarity levels for matched e-commerce
# image/description pairs and for mismatched image/caption pairs under a
# contrastive encoder; reported alongside measured values for orientation.
REFERENCE_POSITIVE_MEAN = 0.31
REFERENCE_NEGATIVE_MEAN = 0.07


def hit_at_k(ranked_ids, truth: str, k: int) -> int:
    if truth not in ranked_ids:
        raise ValueError(f"ground-truth item {truth} is not in the ranked candidate set")
    if k > len(ranked_ids):
        raise ValueError(f"k={k} exceeds {len(ranked_ids)} ranked items")
    return 1 if truth in ranked_ids[:k] else 0


def ndcg_at_k(ranked_ids, truth: str, k: int) -> float:
    """Single-relevant NDCG: 1/log2(rank + 1) for 1-indexed rank <= k, else 0."""
    if truth not in ranked_ids:
        raise ValueError(f"ground-truth item {truth} is not in the ranked candidate set")
    rank = ranked_ids.index(truth) + 1
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


@dataclass
class PerUserResult:
    user_id: str
    truth: str
    rank: int
    history_len: int
    scores: dict[str, float] | None = None


@dataclass
class MetricsReport:
    metrics: dict[str, float]
    n_users: int
    metadata: dict = field(default_factory=dict)
    groups: dict[str, dict] | None = None
    per_user: list[PerUserResult] | None = None


def _metrics_from_ranks(ranks, ks) -> dict[str, float]:
    out = {}
    n = len(ranks)
    for k in ks:
        out[f"hit@{k}"] = sum(1 for r in ranks if r <= k) / n if n else 0.0
        out[f"ndcg@{k}"] = (sum(1.0 / math.log2(r + 1) for r in ranks if r <= k) / n) if n else 0.0
    return out


def evaluate(bundle: ModelBundle, dataset: Dataset, store: FeatureStore,
             ks=(5, 10), n_negatives: int = 100, seed: int = 7,
             mode: str = MODE_IMAGE, context_budget: int | None = None,
             fallback: bool = False, active_types=("Img",), target: str = "test",
             scorer=None, batch_size: int = 32, keep_scores: bool = False) -> MetricsReport:
    """Leave-one-out ranking over ground truth plus n sampled negatives.

    `target` picks the held-out item ("test" or "validation"); the user's
    history is everything before it. A `scorer(user_id, candidates)` callable
    replaces the model path when supplied (metric oracles, chance baselines).
    """
    split = dataset.split
    users = split.users
    catalog = dataset.catalog
    if target == "test":
        prefixes = [[dataset.items[i] for i in split.full_history(u)[:-1]] for u in users]
        truths = [split.test[u] for u in users]
    elif target == "validation":
        prefixes = [[dataset.items[i] for i in split.train[u]] for u in users]
        truths = [split.validation[u] for u in users]
    else:
        raise ValueError(f"unknown target {target!r}")

    reps = None
    if scorer is None:
        with torch.no_grad():
            reps = bundle.user_reprs_batched(prefixes, mode, context_budget,
                                             fallback, store, batch_size)
    per_user: list[PerUserResult] = []
    ranks = []
    for i, user in enumerate(users):
        candidates = sample_candidates(user, split, catalog, n_negatives, seed,
                                       truth=truths[i], salt=target)
        if scorer is not None:
            scores = scorer(user, candidates)
        else:
            scores = reri.score_candidates(bundle.projectors, reps[i], candidates,
                                           store, active_types, fallback)
        ranked = reri.top_k(scores, len(scores)).item_ids
        rank = ranked.index(truths[i]) + 1
        ranks.append(rank)
        per_user.append(PerUserResult(user, truths[i], rank, len(prefixes[i]),
                                      scores if keep_scores else None))

    report = MetricsReport(_metrics_from_ranks(ranks, ks), len(users),
                           metadata={"seed": seed, "mode": mode, "target": target,
                                     "active_types": ",".join(active_types),
                                     "n_negatives": n_negatives,
                                     "context_budget": context_budget if context_budget is not None else "none"},
                           per_user=per_user)
    return report


def group_eval(report: MetricsReport, grouping: dict, by: str = "item",
               ks=(5, 10)) -> dict:
    """Per-group metrics from an evaluated report's per-user rows.

    `by="item"` groups users by their ground-truth item's group id;
    `by="user"` expects a user_id -> group id map. Empty groups are absent.
    """
    if report.per_user is None:
        raise ValueError("report lacks per-user rows; run evaluate() first")
    buckets: dict = {}
    for row in report.per_user:
        key = grouping.get(row.truth if by == "item" else row.user_id)
        if key is None:
            continue
        buckets.setdefault(key, []).append(row.rank)
    out = {}
    for key in sorted(buckets):
        ranks = buckets[key]
        entry = _metrics_from_ranks(ranks, ks)
        entry["n_users"] = len(ranks)
        out[key] = entry
    return out


def length_groups(dataset: Dataset, bounds=(6, 9, 12, 15)) -> dict[str, int]:
    """user_id -> group id by full sequence length; group i is bounded by bounds[i]."""
    groups = {}
    for user in dataset.split.users:
        n = len(dataset.split.full_history(user))
        gid = 1 + sum(1 for b in bounds if n > b)
        groups[user] = gid
    return groups


# -- information-overlap analysis -------------------------------------------

@dataclass
class OverlapReport:
    positive_mean: float
    positive_std: float
    negative_mean: float
    negative_std: float
    positive_hist: list[tuple[float, int]]
    negative_hist: list[tuple[float, int]]
    n_pairs: int
    excluded_zero_rows: int
    ref_positive_mean: float = REFERENCE_POSITIVE_MEAN
    ref_negative_mean: float = REFERENCE_NEGATIVE_MEAN

    @property
    def gap(self) -> float:
        return self.positive_mean - self.negative_mean


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    if np.array_equal(a, b):
        return 1.0
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    return float(a @ b / (na * nb))


def _derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    perm = rng.permutation(n)
    fixed = np.flatnonzero(perm == np.arange(n))
    if len(fixed) == 1:
        j = (fixed[0] + 1) % n
        perm[fixed[0]], perm[j] = perm[j], perm[fixed[0]]
    elif len(fixed) > 1:
        perm[fixed] = perm[np.roll(fixed, 1)]
    return perm


def _histogram(values, width: float = 0.05) -> list[tuple[float, int]]:
    edges = np.arange(-1.0, 1.0 + width, width)
    counts, _ = np.histogram(values, bins=edges)
    return [(round(float(edges[i]), 4), int(c)) for i, c in enumerate(counts) if c > 0]


def overlap_report(img_matrix, joint_matrix, seed: int = 7) -> OverlapReport:
    """Matched-pair vs deranged-pair cosine statistics between the two stores."""
    shared = [i for i in img_matrix.item_ids if i in joint_matrix]
    if len(shared) < 2:
        raise ValueError("need at least two items present in both matrices")
    img = np.stack([img_matrix.row(i) for i in shared]).astype(np.float64)
    joint = np.stack([joint_matrix.row(i) for i in shared]).astype(np.float64)
    ok = (np.linalg.norm(img, axis=1) > 0) & (np.linalg.norm(joint, axis=1) > 0)
    excluded = int((~ok).sum())
    img, joint = img[ok], joint[ok]
    n = img.shape[0]
    pos = np.array([_cosine(img[i], joint[i]) for i in range(n)])
    perm = _derangement(n, spawn_rng(seed, "overlap-derangement"))
    neg = np.array([_cosine(img[i], joint[perm[i]]) for i in range(n)])
    return OverlapReport(float(pos.mean()), float(pos.std()), float(neg.mean()),
                         float(neg.std()), _histogram(pos), _histogram(neg), n, excluded)


# -- token and compute accounting --------------------------------------------

@dataclass
class TokenHistogram:
    mode: str
    lengths: dict[str, int]

    @property
    def mean(self) -> float:
        return sum(self.lengths.values()) / len(self.lengths) if self.lengths else 0.0

    def histogram(self, bin_width: int = 50) -> list[tuple[int, int]]:
        buckets: dict[int, int] = {}
        for n in self.lengths.values():
            start = (n // bin_width) * bin_width
            buckets[start] = buckets.get(start, 0) + 1
        return sorted(buckets.items())


def token_histogram(dataset: Dataset, voc, mode: str) -> TokenHistogram:
    """Per-user prompt length over the evaluation-time history, untruncated."""
    lengths = {}
    for user in dataset.split.users:
        prefix = [dataset.items[i] for i in dataset.split.full_history(user)[:-1]]
        plan = build_history_prompt(voc, prefix, mode, context_budget=None)
        lengths[user] = len(plan)
    return TokenHistogram(mode, lengths)


def complexity_estimate(per_item_tokens: float, seq_len: float, d: float) -> float:
    """Attention-cost proxy: (per_item_tokens * seq_len)^2 * d."""
    if per_item_tokens < 0 or seq_len < 0 or d <= 0:
        raise ValueError("per_item_tokens and seq_len must be >= 0 and d > 0")
    return (per_item_tokens * seq_len) ** 2 * d


def mean_content_tokens(dataset: Dataset, voc, mode: str) -> float:
    vals = [count_item_tokens(voc, dataset.items[i], mode)[1] for i in dataset.catalog]
    return sum(vals) / len(vals)


def retained_items(voc, prefix_items, mode: str, context_budget: int | None) -> int:
    """How many trailing item segments a budgeted history prompt keeps."""
    if context_budget is None:
        return len(prefix_items)
    preamble = len(tokenize(voc, HISTORY_PREAMBLE))
    seg_lens = [len(build_item_segment(voc, item, mode)[0]) for item in prefix_items]
    total = preamble + sum(seg_lens)
    drop = 0
    while drop < len(seg_lens) and total > context_budget:
        total -= seg_lens[drop]
        drop += 1
    return len(seg_lens) - drop


@dataclass
class BenchRow:
    group: str
    mode: str
    n_users: int
    total_tokens: int
    wall_seconds: float


def timing_bench(bundle: ModelBundle, dataset: Dataset, store: FeatureStore,
                 modes=(MODE_IMAGE, MODE_ATTRIBUTE, MODE_DESCRIPTION),
                 bounds=(6, 9, 12, 15), group_size: int = 100, seed: int = 7,
                 active_types=("Img",), fallback: bool = False,
                 context_budget: int | None = None) -> list[BenchRow]:
    """Wall-clock scoring time and deterministic token totals per length group.

    Token totals are reproducible and safe to assert; wall times are recorded
    for reporting only.
    """
    groups = length_groups(dataset, bounds)
    members: dict[int, list[str]] = {}
    for user, gid in sorted(groups.items()):
        members.setdefault(gid, []).append(user)
    labels = _group_labels(bounds)
    rows = []
    for gid in sorted(members):
        users = members[gid]
        if len(users) > group_size:
            rng = spawn_rng(seed, "timing-sample", gid)
            users = [users[i] for i in sorted(rng.choice(len(users), group_size, replace=False))]
        prefixes = [[dataset.items[i] for i in dataset.split.full_history(u)[:-1]]
                    for u in users]
        for mode in modes:
            total_tokens = sum(len(build_history_prompt(bundle.vocab, p, mode, context_budget))
                               for p in prefixes)
            t0 = time.perf_counter()
            with torch.no_grad():
                reps = bundle.user_reprs_batched(prefixes, mode, context_budget,
                                                 fallback, store)
                for i, user in enumerate(users):
                    reri.score_candidates(bundle.projectors, reps[i], dataset.catalog,
                                          store, active_types, fallback)
            rows.append(BenchRow(labels[gid], mode, len(users), total_tokens,
                                 time.perf_counter() - t0))
    return rows


def _group_labels(bounds) -> dict[int, str]:
    labels = {}
    lo = 0
    for i, b in enumerate(bounds):
        labels[i + 1] = f"{lo + 1}-{b}"
        lo = b
    labels[len(bounds) + 1] = f">{bounds[-1]}"
    return labels


def context_budget_sweep(bundle: ModelBundle, dataset: Dataset, store: FeatureStore,
                         budgets, modes, ks=(5, 10), n_negatives: int = 100,
                         seed: int = 7, active_types=("Img",), fallback: bool = False) -> list[dict]:
    """Re-evaluate under each (budget, mode); budget None means untruncated."""
    rows = []
    for mode in modes:
        for budget in budgets:
            report = evaluate(bundle, dataset, store, ks=ks, n_negatives=n_negatives,
                              seed=seed, mode=mode, context_budget=budget,
                              fallback=fallback, active_types=active_types)
            retained = [retained_items(bundle.vocab,
                                       [dataset.items[i] for i in dataset.split.full_history(u)[:-1]],
                                       mode, budget)
                        for u in dataset.split.users]
            row = {"mode": mode, "budget": budget if budget is not None else "none",
                   "mean_retained_items": sum(retained) / len(retained),
                   "max_retained_items": max(retained)}
            row.update(report.metrics)
            rows.append(row)
    return rows


# -- report writers -----------------------------------------------------------

def _write_metadata(fh, metadata: dict | None) -> None:
    for key in sorted(metadata or {}):
        fh.write(f"# {key}={metadata[key]}\n")


def write_metrics_report(report: MetricsReport, csv_path, json_path) -> None:
    with open(csv_path, "w", encoding="utf-8") as fh:
        _write_metadata(fh, report.metadata)
        fh.write("metric,value\n")
        for key in sorted(report.metrics):
            fh.write(f"{key},{report.metrics[key]!r}\n")
        fh.write(f"n_users,{report.n_users}\n")
        if report.groups:
            fh.write("group,metric,value\n")
            for gname in sorted(report.groups):
                for key in sorted(report.groups[gname]):
                    fh.write(f"{gname},{key},{report.groups[gname][key]!r}\n")
    doc = {"metrics": report.metrics, "n_users": report.n_users,
           "metadata": report.metadata, "groups": report.groups}
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_rows_csv(rows, columns, path, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        _write_metadata(fh, metadata)
        fh.write(",".join(columns) + "\n")
        for row in rows:
            values = [row[c] if isinstance(row, dict) else getattr(row, c) for c in columns]
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in values) + "\n")


def write_histogram_csv(pairs, path, metadata: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        _write_metadata(fh, metadata)
        fh.write("bin_start,count\n")
        for start, count in pairs:
            fh.write(f"{start},{count}\n")
