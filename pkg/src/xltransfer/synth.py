"""Synthetic child data built from parent parallel data, and corpus mixing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .vocab import UNK, Vocabulary

log = logging.getLogger(__name__)

REAL, SYNTHETIC = "real", "synthetic"


@dataclass
class ParallelCorpus:
    src: list[list[str]]
    tgt: list[list[str]]
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.src) != len(self.tgt):
            raise ValueError(f"source has {len(self.src)} sentences but target has {len(self.tgt)}")
        if not self.provenance:
            self.provenance = [REAL] * len(self.src)
        if len(self.provenance) != len(self.src):
            raise ValueError("provenance length differs from corpus length")
        for i, t in enumerate(self.tgt):
            if len(t) == 0:
                raise ValueError(f"pair {i} has an empty target side")

    def __len__(self):
        return len(self.src)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return ParallelCorpus(self.src[idx], self.tgt[idx], self.provenance[idx])
        return self.src[idx], self.tgt[idx]

    def subset(self, indices) -> "ParallelCorpus":
        idx = list(indices)
        return ParallelCorpus([self.src[i] for i in idx], [self.tgt[i] for i in idx],
                              [self.provenance[i] for i in idx])

    def count(self, provenance: str) -> int:
        return sum(p == provenance for p in self.provenance)


def save_corpus(corpus: ParallelCorpus, prefix) -> None:
    prefix = str(prefix)
    for ext, side in (("src", corpus.src), ("tgt", corpus.tgt)):
        with open(f"{prefix}.{ext}", "w", encoding="utf-8") as f:
            f.writelines(" ".join(s) + "\n" for s in side)
    with open(f"{prefix}.prov", "w", encoding="utf-8") as f:
        f.writelines(p + "\n" for p in corpus.provenance)


def read_lines(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def load_corpus(prefix) -> ParallelCorpus:
    prefix = str(prefix)
    src = read_lines(f"{prefix}.src")
    tgt = read_lines(f"{prefix}.tgt")
    prov_path = Path(f"{prefix}.prov")
    prov = []
    if prov_path.exists():
        prov = [line.strip() for line in prov_path.read_text(encoding="utf-8").splitlines()]
        bad = [p for p in prov if p not in (REAL, SYNTHETIC)]
        if bad:
            raise ValueError(f"{prov_path}: unknown provenance {bad[0]!r}")
    return ParallelCorpus(src, tgt, prov)


def _vocab_set(child_vocab) -> set[str]:
    tokens = child_vocab.content_tokens() if isinstance(child_vocab, Vocabulary) else child_vocab
    return set(tokens)


def filter_to_vocab(sentence: Sequence[str], keep: set[str]) -> list[str]:
    return [t if t in keep else UNK for t in sentence]


def make_parent_synthetic(parent: ParallelCorpus, child_vocab, sample_size: int | None = None,
                          seed: int = 0, max_unk_fraction: float | None = None) -> ParallelCorpus:
    """Sample parent pairs and replace non-child source tokens with ``<unk>``.

    Target sentences are copied unchanged. ``max_unk_fraction`` optionally
    drops pairs whose filtered source is mostly unknown.
    """
    keep = _vocab_set(child_vocab)
    if not keep:
        raise ValueError("child vocabulary is empty")
    n = len(parent) if sample_size is None else sample_size
    if n > len(parent):
        raise ValueError(f"sample_size {n} exceeds parent corpus size {len(parent)}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(len(parent), size=n, replace=False))
    src, tgt = [], []
    for i in idx:
        s = filter_to_vocab(parent.src[i], keep)
        if max_unk_fraction is not None and s and sum(t == UNK for t in s) / len(s) > max_unk_fraction:
            continue
        src.append(s)
        tgt.append(parent.tgt[i])
    return ParallelCorpus(src, tgt, [SYNTHETIC] * len(src))


def overlap_statistics(parent_vocab, child_vocab) -> dict:
    p, c = _vocab_set(parent_vocab), _vocab_set(child_vocab)
    shared = p & c
    return {"parent": len(p), "child": len(c), "overlap": len(shared),
            "digits": sum(t.isdigit() for t in shared)}


def make_variant(corpus: ParallelCorpus, mode: str, child=None, parent_emb=None, w=None,
                 child_vocab=None, metric: str = "cosine") -> ParallelCorpus:
    """Alternative synthetic sources over the same target side.

    ``empty_source``: a single ``<unk>``; ``copied_target``: the target itself;
    ``xlingual_replace``: overlap tokens kept, every other token replaced by the
    child token whose mapped embedding is nearest to the parent token's.
    """
    if mode == "empty_source":
        src = [[UNK] for _ in corpus.src]
    elif mode == "copied_target":
        src = [list(t) for t in corpus.tgt]
    elif mode == "xlingual_replace":
        if child is None or parent_emb is None or w is None:
            raise ValueError("xlingual_replace needs child and parent embeddings and a map")
        from .crossmap import nearest_mapped_child
        keep = _vocab_set(child_vocab) if child_vocab is not None else set(child.tokens)
        needed = sorted({t for s in corpus.src for t in s if t not in keep})
        table = nearest_mapped_child(w, child, parent_emb, needed, candidates=keep, metric=metric)
        src = [[t if t in keep else table.get(t, UNK) for t in s] for s in corpus.src]
    else:
        raise ValueError(f"unknown variant {mode!r}")
    return ParallelCorpus(src, [list(t) for t in corpus.tgt], [SYNTHETIC] * len(src))


def mix_corpora(real: ParallelCorpus, synthetic: ParallelCorpus, real_oversample: float = 0.5,
                seed: int = 0) -> ParallelCorpus:
    """Oversample ``real`` to ``real_oversample * len(synthetic)`` pairs and shuffle.

    ``real_oversample`` is the real:synthetic ratio (0.5 means 1:2). Real pairs
    are never dropped; whole copies are repeated and the remainder drawn
    without replacement.
    """
    if len(real) == 0 or len(synthetic) == 0:
        raise ValueError("cannot mix empty corpora")
    if real_oversample <= 0:
        raise ValueError("ratio must be positive")
    rng = np.random.default_rng(seed)
    target = max(len(real), int(round(real_oversample * len(synthetic))))
    reps, rem = divmod(target, len(real))
    idx = list(range(len(real))) * reps
    idx += sorted(rng.choice(len(real), size=rem, replace=False).tolist())
    real_part = real.subset(idx)
    real_part.provenance = [REAL] * len(idx)
    src = real_part.src + synthetic.src
    tgt = real_part.tgt + synthetic.tgt
    prov = real_part.provenance + [SYNTHETIC] * len(synthetic)
    perm = rng.permutation(len(src))
    return ParallelCorpus([src[i] for i in perm], [tgt[i] for i in perm], [prov[i] for i in perm])
