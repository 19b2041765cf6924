"""Corpus BLEU and perplexity."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .nmt.train import perplexity  # noqa: F401  (re-exported)

MAX_ORDER = 4


@dataclass
class BleuReport:
    bleu: float
    precisions: list[float]
    bp: float
    hyp_len: int
    ref_len: int
    matches: list[int]
    totals: list[int]

    @property
    def ratio(self) -> float:
        return self.hyp_len / self.ref_len if self.ref_len else 0.0

    def __str__(self):
        ps = "/".join(f"{100 * p:.1f}" for p in self.precisions)
        return (f"BLEU = {self.bleu:.2f} ({ps}, BP={self.bp:.3f}, ratio={self.ratio:.3f}, "
                f"hyp_len={self.hyp_len}, ref_len={self.ref_len})")


def _tokens(x):
    return x.split() if isinstance(x, str) else list(x)


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, smooth: bool = False, max_order: int = MAX_ORDER) -> BleuReport:
    """Corpus-level BLEU with clipped n-gram counts and a brevity penalty.

    Without ``smooth`` any zero n-gram precision gives 0. With ``smooth``, orders
    above one use add-one counts ``(m + 1) / (c + 1)``.
    """
    hypotheses, references = list(hypotheses), list(references)
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise ValueError("BLEU needs at least one sentence pair")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = _tokens(hyp), _tokens(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = ngram_counts(hyp, n), ngram_counts(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = []
    for n in range(max_order):
        m, c = matches[n], totals[n]
        if smooth and n > 0:
            precisions.append((m + 1) / (c + 1))
        else:
            precisions.append(m / c if c else 0.0)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1 - ref_len / hyp_len)
    else:
        bp = 1.0
    if min(precisions) <= 0 or bp == 0:
        score = 0.0
    else:
        score = 100 * bp * math.exp(sum(math.log(p) for p in precisions) / max_order)
    return BleuReport(score, precisions, bp, hyp_len, ref_len, matches, totals)
