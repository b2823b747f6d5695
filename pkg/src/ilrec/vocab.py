"""Word-level vocabulary with reserved control tokens.

Tokenization lowercases and splits on whitespace, with punctuation emitted
as standalone tokens. The [VISUAL] and [REC] ids are never produced by
`tokenize`; prompt builders insert them directly.
"""

from __future__ import annotations

import collections
import re
from dataclasses import dataclass, field

PAD, BOS, EOS, UNK, VISUAL, REC = range(6)
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>", "[VISUAL]", "[REC]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    words: list[str]  # non-reserved tokens, id = RESERVED count + position
    ids: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.ids = {w: i + len(RESERVED) for i, w in enumerate(self.words)}
        if len(self.ids) != len(self.words):
            raise ValueError("duplicate words in vocabulary")

    def __len__(self) -> int:
        return len(RESERVED) + len(self.words)

    def id_of(self, word: str) -> int:
        return self.ids.get(word, UNK)

    def token_of(self, idx: int) -> str:
        if idx < len(RESERVED):
            return RESERVED[idx]
        return self.words[idx - len(RESERVED)]


def build_vocab(corpus, max_size: int = 65536) -> Vocabulary:
    """Frequency-ranked word vocabulary (ties alphabetical), capped at max_size."""
    if not corpus:
        raise ValueError("corpus must be nonempty")
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be >= {len(RESERVED)} reserved tokens")
    counts = collections.Counter()
    for text in corpus:
        counts.update(split_words(text))
    ranked = sorted(counts, key=lambda w: (-counts[w], w))
    return Vocabulary(ranked[: max_size - len(RESERVED)])


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    return [vocab.id_of(w) for w in split_words(text)]


def detokenize(vocab: Vocabulary, ids) -> str:
    return " ".join(vocab.token_of(i) for i in ids)
