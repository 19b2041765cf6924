"""Initialize a child model from a trained parent."""

from __future__ import annotations

import copy

import numpy as np
import torch
from torch import nn

from ..embedding import EmbeddingMatrix
from ..vocab import SPECIALS, Vocabulary
from .model import TransformerNMT


def transfer_init(parent: TransformerNMT, mapped_child_emb: EmbeddingMatrix | None,
                  child_vocab: Vocabulary, seed: int = 0) -> TransformerNMT:
    """Copy ``parent`` and swap in a source embedding for ``child_vocab``.

    Rows come from ``mapped_child_emb`` where it has a trained vector. Special
    tokens reuse the parent's rows. Every other row is drawn from a normal
    distribution with the per-coordinate mean and std of the mapped rows, or of
    the parent's content rows when no embedding is given (plain transfer).
    """
    dim = parent.cfg.dim
    if mapped_child_emb is not None and mapped_child_emb.dim != dim:
        raise ValueError(f"dimension mismatch: embedding {mapped_child_emb.dim} vs model {dim}")
    if parent.cfg.tied_embeddings:
        raise ValueError("cannot swap the source vocabulary of a tied-embedding model")

    parent_src = parent.source_embedding_weights().astype(np.float64)
    rows: dict[int, np.ndarray] = {}
    if mapped_child_emb is not None:
        for i, tok in enumerate(child_vocab.tokens):
            j = mapped_child_emb.index.get(tok)
            if tok not in SPECIALS and j is not None and mapped_child_emb.trained[j]:
                rows[i] = np.asarray(mapped_child_emb.weights[j], dtype=np.float64)
    if rows:
        ref = np.stack(list(rows.values()))
    else:
        ref = parent_src[len(SPECIALS):]
    mu, sd = ref.mean(axis=0), ref.std(axis=0)

    rng = np.random.default_rng(seed)
    table = np.empty((len(child_vocab), dim))
    for i, tok in enumerate(child_vocab.tokens):
        if tok in SPECIALS:
            table[i] = parent_src[parent.src_vocab.ids[tok]]
        elif i in rows:
            table[i] = rows[i]
        else:
            table[i] = rng.normal(mu, sd)

    child = copy.deepcopy(parent)
    child.src_vocab = child_vocab
    emb = nn.Embedding(len(child_vocab), dim)
    with torch.no_grad():
        emb.weight.copy_(torch.from_numpy(table).to(parent.source_embedding.weight.dtype))
    child.source_embedding = emb
    return child


def random_rows(model_vocab: Vocabulary, mapped: EmbeddingMatrix | None) -> list[str]:
    """Content tokens that ``transfer_init`` would initialize randomly."""
    out = []
    for tok in model_vocab.content_tokens():
        j = None if mapped is None else mapped.index.get(tok)
        if j is None or not mapped.trained[j]:
            out.append(tok)
    return out
