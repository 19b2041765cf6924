"""Artificial word-order and lexical noise for parent source sentences."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseSpec:
    p_ins: float = 0.1
    v_ins: int = 50
    p_del: float = 0.1
    d_per: float = 3
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.p_ins <= 1 and 0 <= self.p_del <= 1):
            raise ValueError("noise probabilities must lie in [0, 1]")
        if self.v_ins < 0 or self.d_per < 0:
            raise ValueError("v_ins and d_per must be >= 0")

    @property
    def is_identity(self) -> bool:
        return self.p_ins == 0 and self.p_del == 0 and self.d_per == 0


def jitter_permutation(tokens: Sequence, d_per: float, rng: np.random.Generator) -> list:
    """Stable sort by ``i + u_i`` with ``u_i ~ U[0, d_per]``.

    No token moves more than ``d_per`` positions: a token can only be passed by
    tokens whose index lies within ``d_per`` of its own.
    """
    n = len(tokens)
    if d_per <= 0 or n < 2:
        return list(tokens)
    keys = np.arange(n) + rng.uniform(0.0, d_per, size=n)
    order = np.argsort(keys, kind="stable")
    return [tokens[i] for i in order]


def inject_noise(sentence: Sequence[str], spec: NoiseSpec, vocab_by_freq: Sequence[str],
                 rng: np.random.Generator) -> list[str]:
    """Delete, then permute, then insert.

    Deletion and permutation only touch original tokens; inserted filler is
    drawn from the ``v_ins`` most frequent entries of ``vocab_by_freq`` and
    placed in any of the L+1 gaps of the permuted sentence.
    """
    if len(sentence) == 0:
        raise ValueError("cannot add noise to an empty sentence")
    toks = list(sentence)
    if spec.p_del > 0:
        keep = rng.random(len(toks)) >= spec.p_del
        if not keep.any():
            keep[rng.integers(len(toks))] = True
        toks = [t for t, k in zip(toks, keep) if k]
    toks = jitter_permutation(toks, spec.d_per, rng)
    if spec.p_ins > 0 and spec.v_ins > 0:
        v = spec.v_ins
        if v > len(vocab_by_freq):
            log.warning("v_ins=%d exceeds vocabulary size %d; clamping", v, len(vocab_by_freq))
            v = len(vocab_by_freq)
        if v > 0:
            gaps = rng.random(len(toks) + 1) < spec.p_ins
            fill = rng.integers(0, v, size=len(gaps))
            out = []
            for i in range(len(toks) + 1):
                if gaps[i]:
                    out.append(vocab_by_freq[fill[i]])
                if i < len(toks):
                    out.append(toks[i])
            toks = out
    return toks


def sentence_rng(spec: NoiseSpec, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, sentence), regardless of scheduling."""
    return np.random.default_rng([spec.seed, epoch, index])


def noisy_corpus(sentences, spec: NoiseSpec, vocab_by_freq: Sequence[str], epoch: int = 0) -> list[list[str]]:
    return [inject_noise(s, spec, vocab_by_freq, sentence_rng(spec, epoch, i))
            for i, s in enumerate(sentences)]
