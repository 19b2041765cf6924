"""Beam search."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from ..vocab import BOS_ID, EOS_ID, decode, encode
from .model import TransformerNMT


@dataclass
class Hypothesis:
    tokens: list[str]
    score: float      # log-prob / length**length_norm
    logprob: float


@torch.no_grad()
def next_token_logprobs(model: TransformerNMT, memory, src_pad, prefixes: torch.Tensor) -> torch.Tensor:
    logits = model.decode(prefixes, memory.expand(prefixes.shape[0], -1, -1),
                          src_pad.expand(prefixes.shape[0], -1))
    return torch.log_softmax(logits[:, -1].double(), dim=-1)


@torch.no_grad()
def translate(model: TransformerNMT, source: Sequence[str], beam: int = 5, max_len: int | None = None,
              length_norm: float = 1.0) -> Hypothesis:
    """Beam search; hypotheses end at ``</s>`` or after ``max_len`` tokens.

    Length counts generated tokens including ``</s>``. Search stops once
    ``beam`` hypotheses have finished; without length normalization it
    continues while some live prefix still scores above the best finished
    hypothesis, since log-probs can only fall as a prefix grows.
    """
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if len(source) == 0:
        raise ValueError("empty source sentence")
    model.eval()
    src_ids = encode(model.src_vocab, source) + [EOS_ID]
    if max_len is None:
        max_len = 2 * len(source) + 10
    max_len = min(max_len, model.cfg.max_positions - 1)
    memory, pad = model.encode(torch.tensor([src_ids]))

    alive = [([BOS_ID], 0.0)]
    finished: list[tuple[list[int], float]] = []
    for step in range(max_len):
        prefixes = torch.tensor([p for p, _ in alive])
        logp = next_token_logprobs(model, memory, pad, prefixes)
        scores = torch.tensor([s for _, s in alive], dtype=torch.float64)[:, None] + logp
        flat = scores.reshape(-1)
        k = min(flat.numel(), 2 * beam)
        top = torch.topk(flat, k)
        V = logp.shape[1]
        new_alive = []
        for val, idx in zip(top.values.tolist(), top.indices.tolist()):
            h, tok = divmod(idx, V)
            seq = alive[h][0] + [tok]
            if tok == EOS_ID:
                finished.append((seq, val))
            else:
                new_alive.append((seq, val))
            if len(new_alive) == beam:
                break
        alive = new_alive[:beam]
        if not alive:
            break
        if len(finished) >= beam:
            if length_norm != 0 or max(v for _, v in alive) <= max(v for _, v in finished):
                break
    finished.extend(alive)

    def normed(item):
        seq, lp = item
        return lp / (len(seq) - 1) ** length_norm

    best = max(finished, key=normed)
    ids = [t for t in best[0][1:] if t != EOS_ID]
    return Hypothesis(decode(model.tgt_vocab, ids), normed(best), best[1])


@torch.no_grad()
def greedy(model: TransformerNMT, source: Sequence[str], max_len: int | None = None) -> Hypothesis:
    model.eval()
    src_ids = encode(model.src_vocab, source) + [EOS_ID]
    if max_len is None:
        max_len = 2 * len(source) + 10
    memory, pad = model.encode(torch.tensor([src_ids]))
    seq, lp = [BOS_ID], 0.0
    for _ in range(max_len):
        logp = next_token_logprobs(model, memory, pad, torch.tensor([seq]))[0]
        tok = int(torch.argmax(logp))
        lp += float(logp[tok])
        seq.append(tok)
        if tok == EOS_ID:
            break
    ids = [t for t in seq[1:] if t != EOS_ID]
    return Hypothesis(decode(model.tgt_vocab, ids), lp / (len(seq) - 1), lp)


def translate_corpus(model, sources, beam: int = 5, length_norm: float = 1.0) -> list[list[str]]:
    return [translate(model, s, beam=beam, length_norm=length_norm).tokens if s else []
            for s in sources]
