"""Subword segmentation (BPE) and vocabulary lookup."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

SEPARATOR = "@@"
MERGES_HEADER = "#bpe-v1"

UNK, BOS, EOS, PAD = "<unk>", "<s>", "</s>", "<pad>"
SPECIALS = (UNK, BOS, EOS, PAD)
UNK_ID, BOS_ID, EOS_ID, PAD_ID = 0, 1, 2, 3


def _words(corpus: Iterable) -> Iterable[str]:
    for sent in corpus:
        if isinstance(sent, str):
            sent = sent.split()
        yield from sent


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    separator: str = SEPARATOR
    _ranks: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        merges = tuple(tuple(m) for m in self.merges)
        object.__setattr__(self, "merges", merges)
        ranks = {pair: i for i, pair in enumerate(merges)}
        if len(ranks) != len(merges):
            raise ValueError("duplicate merge pair in BPE model")
        object.__setattr__(self, "_ranks", ranks)

    def segment_word(self, word: str) -> list[str]:
        """Split one word into subwords (without separators).

        Merges are applied in list order: after merge r has been applied, only
        merges of rank > r are considered. This reproduces the segmentation seen
        while learning.
        """
        parts = list(word)
        last = -1
        while len(parts) > 1:
            best = None
            for pair in zip(parts, parts[1:]):
                r = self._ranks.get(pair)
                if r is not None and r > last and (best is None or r < best):
                    best = r
            if best is None:
                break
            left, right = self.merges[best]
            merged, i = [], 0
            while i < len(parts):
                if i + 1 < len(parts) and parts[i] == left and parts[i + 1] == right:
                    merged.append(left + right)
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
            last = best
        return parts


def learn_bpe(corpus: Iterable, num_merges: int, min_count: int = 2) -> BpeModel:
    """Greedy BPE over the word-frequency dictionary of ``corpus``.

    Ties between equally frequent pairs go to the lexicographically smallest
    (left, right). Learning stops early once no pair occurs ``min_count`` times.
    """
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    freqs = Counter(_words(corpus))
    if not freqs:
        raise ValueError("cannot learn BPE from an empty corpus")

    words = [list(w) for w in freqs]
    counts = list(freqs.values())
    pair_counts: Counter = Counter()
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, (sym, c) in enumerate(zip(words, counts)):
        for pair in zip(sym, sym[1:]):
            pair_counts[pair] += c
            where[pair].add(idx)

    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges and pair_counts:
        best = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        pair, count = best
        if count < min_count:
            break
        merges.append(pair)
        left, right = pair
        for idx in sorted(where.pop(pair, ())):
            sym, c = words[idx], counts[idx]
            for p in zip(sym, sym[1:]):
                pair_counts[p] -= c
                if pair_counts[p] <= 0:
                    del pair_counts[p]
            new, i = [], 0
            while i < len(sym):
                if i + 1 < len(sym) and sym[i] == left and sym[i + 1] == right:
                    new.append(left + right)
                    i += 2
                else:
                    new.append(sym[i])
                    i += 1
            words[idx] = new
            for p in zip(new, new[1:]):
                pair_counts[p] += c
                where[p].add(idx)
    return BpeModel(tuple(merges))


def apply_bpe(model: BpeModel, sentence: Sequence[str] | str, cache: dict | None = None) -> list[str]:
    if isinstance(sentence, str):
        sentence = sentence.split()
    sep = model.separator
    out: list[str] = []
    for word in sentence:
        pieces = cache.get(word) if cache is not None else None
        if pieces is None:
            parts = model.segment_word(word)
            pieces = [p + sep for p in parts[:-1]] + parts[-1:]
            if cache is not None:
                cache[word] = pieces
        out.extend(pieces)
    return out


def remove_bpe(tokens: Sequence[str], separator: str = SEPARATOR) -> list[str]:
    """Undo segmentation by gluing subwords that end in ``separator``."""
    words, buf = [], ""
    for tok in tokens:
        if tok.endswith(separator):
            buf += tok[: -len(separator)]
        else:
            words.append(buf + tok)
            buf = ""
    if buf:
        words.append(buf)
    return words


def save_bpe(model: BpeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(MERGES_HEADER + "\n")
        for left, right in model.merges:
            f.write(f"{left} {right}\n")


def load_bpe(path) -> BpeModel:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != MERGES_HEADER:
        raise ValueError(f"{path}: missing '{MERGES_HEADER}' header")
    merges = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'left right', got {line!r}")
        merges.append((parts[0], parts[1]))
    return BpeModel(tuple(merges))


class Vocabulary:
    """Bijective token <-> id map; specials occupy ids 0-3."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError(f"vocabulary must start with {SPECIALS}")
        self.tokens = tokens
        self.ids = {t: i for i, t in enumerate(tokens)}
        if len(self.ids) != len(tokens):
            raise ValueError("duplicate token in vocabulary")

    unk_id, bos_id, eos_id, pad_id = UNK_ID, BOS_ID, EOS_ID, PAD_ID

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.ids

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    def content_tokens(self) -> list[str]:
        return self.tokens[len(SPECIALS):]


def build_vocab(corpus: Iterable, max_size: int | None = None) -> Vocabulary:
    """Specials first, then tokens by descending frequency, ties lexicographic."""
    freqs = Counter(t for t in _words(corpus) if t not in SPECIALS)
    ranked = sorted(freqs, key=lambda t: (-freqs[t], t))
    tokens = list(SPECIALS) + ranked
    if max_size is not None:
        tokens = tokens[: max(max_size, len(SPECIALS))]
    return Vocabulary(tokens)


def encode(v: Vocabulary, tokens: Sequence[str]) -> list[int]:
    return [v.ids.get(t, UNK_ID) for t in tokens]


def decode(v: Vocabulary, ids: Sequence[int]) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(v):
            raise IndexError(f"token id {i} out of range for vocabulary of size {len(v)}")
        out.append(v.tokens[i])
    return out


def save_vocab(v: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for t in v.tokens:
            f.write(t + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as f:
        return Vocabulary([line.rstrip("\n") for line in f])
