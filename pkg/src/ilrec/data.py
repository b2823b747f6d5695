"""Interaction log model: ingestion, k-core filtering, splits, candidates.

File formats (UTF-8, tab-separated):
  interactions: user_id <TAB> item_id <TAB> timestamp
  item metadata: item_id <TAB> title <TAB> brand <TAB> category <TAB>
                 description <TAB> image_ref   (trailing fields may be empty)
"""

from __future__ import annotations

import collections
from dataclasses import dataclass, field

from .errors import ConfigError, ParseError
from .seeding import spawn_rng


@dataclass(frozen=True)
class InteractionRecord:
    user_id: str
    item_id: str
    timestamp: int

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be nonempty")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    brand: str = ""
    category: str = ""
    description: str = ""
    image_ref: str = ""

    def __post_init__(self):
        if not self.item_id:
            raise ValueError("item_id must be nonempty")
        if not self.title:
            raise ValueError(f"item {self.item_id}: title must be nonempty")

    @property
    def has_image(self) -> bool:
        return bool(self.image_ref)


@dataclass
class UserSequence:
    user_id: str
    items: list[str]


@dataclass
class DatasetSplit:
    """Per-user leave-one-out partition of a chronological sequence."""

    train: dict[str, list[str]]
    validation: dict[str, str]
    test: dict[str, str]

    @property
    def users(self) -> list[str]:
        return sorted(self.train)

    def full_history(self, user_id: str) -> list[str]:
        return self.train[user_id] + [self.validation[user_id], self.test[user_id]]


def ingest_interactions(path) -> list[InteractionRecord]:
    """Parse an interactions file, preserving line order."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            user_id, item_id, ts_text = parts
            try:
                ts = int(ts_text)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: timestamp {ts_text!r} is not an integer") from None
            try:
                records.append(InteractionRecord(user_id, item_id, ts))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
    return records


def ingest_items(path) -> dict[str, ItemRecord]:
    """Parse item metadata lines into an item_id -> record map."""
    items: dict[str, ItemRecord] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
            try:
                rec = ItemRecord(*parts)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from None
            items[rec.item_id] = rec
    return items


def write_interactions(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(f"{r.user_id}\t{r.item_id}\t{r.timestamp}\n")


def write_items(items, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in sorted(items.values(), key=lambda r: r.item_id):
            fh.write("\t".join([rec.item_id, rec.title, rec.brand, rec.category,
                                rec.description, rec.image_ref]) + "\n")


def k_core_filter(records, k: int) -> list[InteractionRecord]:
    """Largest subset where every user and item keeps >= k interactions.

    Removal cascades (dropping an item can push a user below k), so the
    filter iterates to a fixpoint. Input order is preserved.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    kept = list(records)
    while True:
        user_counts = collections.Counter(r.user_id for r in kept)
        item_counts = collections.Counter(r.item_id for r in kept)
        bad_users = {u for u, c in user_counts.items() if c < k}
        bad_items = {i for i, c in item_counts.items() if c < k}
        if not bad_users and not bad_items:
            return kept
        kept = [r for r in kept if r.user_id not in bad_users and r.item_id not in bad_items]


def build_sequences(records) -> list[UserSequence]:
    """One chronological sequence per user.

    Events are sorted by (timestamp, item_id); exact duplicate
    (user, item, timestamp) triples collapse to one event.
    """
    per_user: dict[str, set[tuple[int, str]]] = collections.defaultdict(set)
    for r in records:
        per_user[r.user_id].add((r.timestamp, r.item_id))
    out = []
    for user_id in sorted(per_user):
        events = sorted(per_user[user_id])
        out.append(UserSequence(user_id, [item for _, item in events]))
    return out


def leave_one_out(sequences) -> DatasetSplit:
    """Most recent item -> test, second most recent -> validation, rest -> train."""
    train, val, test = {}, {}, {}
    for seq in sequences:
        if len(seq.items) < 3:
            raise ValueError(f"user {seq.user_id}: sequence length {len(seq.items)} < 3, cannot split")
        train[seq.user_id] = seq.items[:-2]
        val[seq.user_id] = seq.items[-2]
        test[seq.user_id] = seq.items[-1]
    return DatasetSplit(train, val, test)


def sample_candidates(user_id: str, split: DatasetSplit, catalog, n: int, seed: int,
                      truth: str | None = None, salt: str = "test") -> list[str]:
    """Ground-truth item plus n distinct never-interacted negatives.

    Negatives are uniform without replacement over catalog items absent from
    the user's entire history (train + validation + test). The draw is fixed
    by (seed, salt, user_id), never resampled across calls.
    """
    if truth is None:
        truth = split.test[user_id]
    history = set(split.full_history(user_id))
    eligible = sorted(i for i in catalog if i not in history)
    if len(eligible) < n:
        raise ValueError(
            f"user {user_id}: only {len(eligible)} eligible negatives, need {n} "
            f"(short by {n - len(eligible)})")
    rng = spawn_rng(seed, "candidates", salt, user_id)
    picks = rng.choice(len(eligible), size=n, replace=False)
    return [truth] + [eligible[j] for j in sorted(picks)]


def popularity_groups(records, g: int) -> dict[str, int]:
    """Partition items into g contiguous popularity groups, 1 = coldest.

    Items are sorted ascending by interaction count (ties by item_id) and cut
    into chunks whose sizes differ by at most one; earlier chunks take the
    extra item when counts do not divide evenly.
    """
    if g < 1:
        raise ValueError("g must be >= 1")
    counts = collections.Counter(r.item_id for r in records)
    ordered = sorted(counts, key=lambda i: (counts[i], i))
    n = len(ordered)
    groups: dict[str, int] = {}
    base, extra = divmod(n, g)
    start = 0
    for gid in range(1, g + 1):
        size = base + (1 if gid <= extra else 0)
        for item in ordered[start:start + size]:
            groups[item] = gid
        start += size
    return groups


def interaction_counts(records) -> dict[str, int]:
    return dict(collections.Counter(r.item_id for r in records))


@dataclass
class Dataset:
    """Filtered interaction log with metadata and the leave-one-out split."""

    records: list[InteractionRecord]
    items: dict[str, ItemRecord]
    split: DatasetSplit
    sequences: list[UserSequence] = field(repr=False, default_factory=list)

    @property
    def catalog(self) -> list[str]:
        return sorted({r.item_id for r in self.records})

    @classmethod
    def build(cls, records, items, k_core: int = 5) -> "Dataset":
        filtered = k_core_filter(records, k_core)
        if not filtered:
            raise ConfigError(f"k-core filter with k={k_core} removed every interaction")
        seqs = build_sequences(filtered)
        seqs = [s for s in seqs if len(s.items) >= 3]
        split = leave_one_out(seqs)
        missing = {r.item_id for r in filtered} - set(items)
        if missing:
            raise ConfigError(f"{len(missing)} interacted items lack metadata (e.g. {sorted(missing)[:3]})")
        return cls(filtered, items, split, seqs)
