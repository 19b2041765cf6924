"""Toy parallel languages and the cipher child language.

The parent source language is sampled from a sparse Markov chain over
concepts, so every word has its own distributional signature. The target
language realizes the same concepts with its own lexicon, inserts an article
before nouns and swaps verb-noun pairs. A few concepts are capitalized names
that both languages spell the same way. A child language is the parent source
under a bijective renaming of its words; names, digits and punctuation survive.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from ..noise import jitter_permutation
from ..synth import ParallelCorpus

PUNCT_END = [".", "?", "!"]
PUNCT_MID = [",", ";", ":", "-"]
DIGITS = [str(x) for x in (1889, 1914, 2000, 12, 7, 42, 365, 100, 3, 19, 250, 1000)]

NOUN, VERB, ADJ, OTHER, NAME = 0, 1, 2, 3, 4


def _pseudo_words(rng, n, onsets, vowels, codas, taken=()):
    words, seen = [], set(taken)
    while len(words) < n:
        k = rng.integers(1, 4)
        w = "".join(rng.choice(onsets) + rng.choice(vowels) + (rng.choice(codas) if rng.random() < 0.4 else "")
                    for _ in range(k))
        if w not in seen and not w.isdigit():
            seen.add(w)
            words.append(w)
    return words


@dataclass
class ToyLanguage:
    """Parent source/target pair generator. Deterministic given ``seed``."""

    n_concepts: int = 800
    successors: int = 12
    zipf: float = 1.0
    min_len: int = 6
    max_len: int = 16
    name_fraction: float = 0.08
    seed: int = 0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        n = self.n_concepts
        ranks = np.arange(1, n + 1)
        self.unigram = ranks ** -self.zipf
        self.unigram /= self.unigram.sum()
        self.kind = rng.choice([NOUN, VERB, ADJ, OTHER], size=n, p=[0.4, 0.25, 0.2, 0.15])
        self.kind[rng.random(n) < self.name_fraction] = NAME
        self.next_ids = np.empty((n, self.successors), dtype=np.int64)
        self.next_p = np.empty((n, self.successors))
        for c in range(n):
            self.next_ids[c] = rng.choice(n, size=self.successors, replace=False, p=self.unigram)
            w = rng.dirichlet(np.full(self.successors, 0.7))
            self.next_p[c] = w
        # Some concepts are followed by a number, some by a comma.
        self.takes_number = rng.random(n) < 0.05
        self.takes_comma = rng.random(n) < 0.08
        self.src_words = _pseudo_words(rng, n, list("bdfgklmnprstvz"), list("aeiou"), list("nrsl"))
        self.tgt_words = _pseudo_words(rng, n, ["b", "c", "d", "f", "h", "j", "m", "p", "qu", "w", "y", "th"],
                                       ["a", "e", "i", "o", "u", "ai", "ee", "oo"], ["t", "k", "ng", "sh"],
                                       taken=self.src_words)
        for c in np.flatnonzero(self.kind == NAME):
            self.src_words[c] = self.tgt_words[c] = self.src_words[c].capitalize()
        self.article = "the"
        while self.article in self.src_words or self.article in self.tgt_words:
            self.article += "e"

    def sample_concepts(self, rng) -> list:
        length = int(rng.integers(self.min_len, self.max_len + 1))
        seq = []
        c = int(rng.choice(self.n_concepts, p=self.unigram))
        while len(seq) < length:
            seq.append(c)
            if self.takes_number[c] and rng.random() < 0.7:
                seq.append(str(rng.choice(DIGITS)))
            if self.takes_comma[c] and rng.random() < 0.7 and len(seq) < length:
                seq.append(str(rng.choice(PUNCT_MID)))
            if rng.random() < 0.1:
                c = int(rng.choice(self.n_concepts, p=self.unigram))
            else:
                c = int(rng.choice(self.next_ids[c], p=self.next_p[c]))
        seq.append(str(rng.choice(PUNCT_END)))
        return seq

    def realize_source(self, concepts) -> list[str]:
        return [self.src_words[c] if isinstance(c, int) else c for c in concepts]

    def realize_target(self, concepts) -> list[str]:
        items = list(concepts)
        i = 0
        while i + 1 < len(items):
            a, b = items[i], items[i + 1]
            if isinstance(a, int) and isinstance(b, int) and self.kind[a] == VERB and self.kind[b] == NOUN:
                items[i], items[i + 1] = b, a
                i += 2
            else:
                i += 1
        out = []
        for c in items:
            if isinstance(c, int):
                if self.kind[c] == NOUN:
                    out.append(self.article)
                out.append(self.tgt_words[c])
            else:
                out.append(c)
        return out

    def parallel(self, n: int, seed: int) -> ParallelCorpus:
        rng = np.random.default_rng([self.seed, seed])
        src, tgt = [], []
        for _ in range(n):
            concepts = self.sample_concepts(rng)
            src.append(self.realize_source(concepts))
            tgt.append(self.realize_target(concepts))
        return ParallelCorpus(src, tgt)

    def monolingual(self, n: int, seed: int) -> list[list[str]]:
        rng = np.random.default_rng([self.seed, seed])
        return [self.realize_source(self.sample_concepts(rng)) for _ in range(n)]


def is_anchor(token: str) -> bool:
    """Digits, punctuation and capitalized names keep their surface form across languages."""
    return token.isdigit() or token[:1].isupper() or all(ch in string.punctuation for ch in token)


def make_cipher_table(vocabulary, vocab_map_seed: int) -> dict[str, str]:
    """Bijective renaming of every non-anchor token onto fresh surface forms."""
    rng = np.random.default_rng(vocab_map_seed)
    words = sorted({t for t in vocabulary if not is_anchor(t)})
    fresh = _pseudo_words(rng, len(words), ["x", "q", "zh", "kw", "ts", "gl", "vr"],
                          ["y", "aa", "uu", "oe", "ei"], ["x", "q", "hh"], taken=words)
    order = rng.permutation(len(words))
    return {w: fresh[j] for w, j in zip(words, order)}


def make_cipher_task(base: ParallelCorpus, vocab_map_seed: int = 0, reorder: int | None = None,
                     table: dict[str, str] | None = None, reorder_seed: int = 0):
    """Rename source tokens of ``base`` into a child language.

    Returns ``(child_corpus, table)``. With ``reorder`` every sentence is locally
    permuted with displacement at most ``reorder``. Passing ``table`` reuses an
    existing renaming (it is extended for unseen tokens).
    """
    vocab = {t for s in base.src for t in s}
    if table is None:
        table = make_cipher_table(vocab, vocab_map_seed)
    else:
        missing = {t for t in vocab if not is_anchor(t) and t not in table}
        if missing:
            extra = make_cipher_table(missing, vocab_map_seed + 1)
            used = set(table.values())
            for k, v in extra.items():
                while v in used or v in vocab:
                    v = v + "x"
                table[k] = v
                used.add(v)
    rng = np.random.default_rng(reorder_seed)
    src = []
    for sent in base.src:
        out = [table.get(t, t) for t in sent]
        if reorder:
            out = jitter_permutation(out, reorder, rng)
        src.append(out)
    return ParallelCorpus(src, [list(t) for t in base.tgt], list(base.provenance)), table


def cipher_sentences(sentences, table: dict[str, str]) -> list[list[str]]:
    return [[table.get(t, t) for t in s] for s in sentences]
