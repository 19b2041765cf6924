"""Monolingual word embeddings: skip-gram training, word-vector I/O and retrieval."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .vocab import Vocabulary, build_vocab

log = logging.getLogger(__name__)


@dataclass
class EmbeddingMatrix:
    """One row per token. ``trained`` flags rows that received updates."""

    tokens: list[str]
    weights: np.ndarray
    trained: np.ndarray | None = None
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.tokens = list(self.tokens)
        self.weights = np.asarray(self.weights)
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.tokens):
            raise ValueError(
                f"weights shape {self.weights.shape} does not match {len(self.tokens)} tokens")
        if self.trained is None:
            self.trained = np.ones(len(self.tokens), dtype=bool)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def vector(self, token: str) -> np.ndarray:
        return self.weights[self.index[token]]


def _sentences(corpus: Iterable) -> list[list[str]]:
    return [s.split() if isinstance(s, str) else list(s) for s in corpus]


def train_skipgram(corpus: Iterable, dim: int = 64, window: int = 5, negatives: int = 5,
                   epochs: int = 5, seed: int = 0, vocab: Vocabulary | Sequence[str] | None = None,
                   lr: float = 0.025, min_lr: float = 0.0001, batch_size: int = 256) -> EmbeddingMatrix:
    """Skip-gram with negative sampling.

    Updates are applied in mini-batches of (center, context) pairs drawn in a
    seeded order, so results are bit-identical for a fixed seed. Rows for tokens
    of ``vocab`` that never occur in ``corpus`` keep their initial values and are
    flagged as untrained. ``losses[e]`` is the mean objective over the stream
    before epoch ``e`` updates, plus a final entry after the last epoch.
    """
    sents = _sentences(corpus)
    if not any(sents):
        raise ValueError("cannot train embeddings on an empty corpus")
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if vocab is None:
        tokens = build_vocab(sents).tokens
    else:
        tokens = list(vocab.tokens if isinstance(vocab, Vocabulary) else vocab)
    index = {t: i for i, t in enumerate(tokens)}
    V = len(tokens)

    ids, sent_id = [], []
    for k, s in enumerate(sents):
        for t in s:
            i = index.get(t)
            if i is not None:
                ids.append(i)
                sent_id.append(k)
    ids = np.asarray(ids, dtype=np.int64)
    sent_id = np.asarray(sent_id, dtype=np.int64)
    counts = np.bincount(ids, minlength=V).astype(np.float64)
    trained = counts > 0

    rng = np.random.default_rng(seed)
    w_in = ((rng.random((V, dim)) - 0.5) / dim).astype(np.float32)
    w_out = np.zeros((V, dim), dtype=np.float32)

    noise = counts ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    def make_pairs(epoch_rng):
        reduced = epoch_rng.integers(1, window + 1, size=len(ids))
        centers, contexts = [], []
        for off in range(1, window + 1):
            same = sent_id[off:] == sent_id[:-off]
            ok = same & (reduced[:-off] >= off)
            centers.append(ids[:-off][ok]); contexts.append(ids[off:][ok])
            ok = same & (reduced[off:] >= off)
            centers.append(ids[off:][ok]); contexts.append(ids[:-off][ok])
        c = np.concatenate(centers)
        o = np.concatenate(contexts)
        perm = epoch_rng.permutation(len(c))
        return c[perm], o[perm]

    def objective(c, o, neg):
        h = w_in[c]
        pos = np.einsum("bd,bd->b", h, w_out[o])
        negs = np.einsum("bd,bkd->bk", h, w_out[neg])
        return float(np.mean(np.logaddexp(0, -pos) + np.logaddexp(0, negs).sum(1)))

    # Fixed evaluation stream for the loss curve.
    eval_rng = np.random.default_rng([seed, 1 << 20])
    ev_c, ev_o = make_pairs(eval_rng)
    ev_c, ev_o = ev_c[:20000], ev_o[:20000]
    ev_neg = np.searchsorted(noise_cdf, eval_rng.random((len(ev_c), negatives)))

    losses = []
    total = None
    done = 0
    for epoch in range(epochs):
        losses.append(objective(ev_c, ev_o, ev_neg))
        erng = np.random.default_rng([seed, epoch])
        c_all, o_all = make_pairs(erng)
        if total is None:
            total = len(c_all) * epochs
        for start in range(0, len(c_all), batch_size):
            c = c_all[start:start + batch_size]
            o = o_all[start:start + batch_size]
            neg = np.searchsorted(noise_cdf, erng.random((len(c), negatives)))
            alpha = max(min_lr, lr - (lr - min_lr) * done / total)
            done += len(c)

            h = w_in[c]                      # (B, D)
            targets = np.concatenate([o[:, None], neg], axis=1)   # (B, 1+K)
            out = w_out[targets]             # (B, 1+K, D)
            logits = np.einsum("bd,bkd->bk", h, out)
            labels = np.zeros_like(logits)
            labels[:, 0] = 1.0
            g = (labels - 1.0 / (1.0 + np.exp(-logits))) * alpha   # ascent direction
            grad_h = np.einsum("bk,bkd->bd", g, out)
            grad_out = g[:, :, None] * h[:, None, :]
            np.add.at(w_out, targets.ravel(), grad_out.reshape(-1, dim).astype(np.float32))
            np.add.at(w_in, c, grad_h.astype(np.float32))
    losses.append(objective(ev_c, ev_o, ev_neg))
    return EmbeddingMatrix(tokens, w_in, trained, losses)


def save_embeddings(e: EmbeddingMatrix, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(e)} {e.dim}\n")
        for tok, row in zip(e.tokens, e.weights):
            f.write(tok + " " + " ".join(f"{x:.9g}" for x in row) + "\n")


def load_embeddings(path) -> EmbeddingMatrix:
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: header must be 'V D'")
        n, dim = int(header[0]), int(header[1])
        tokens, rows = [], []
        lineno = 1
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            if len(tokens) == n:
                raise ValueError(f"{path}:{lineno}: more rows than the declared {n}")
            tokens.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    if len(tokens) != n:
        raise ValueError(f"{path}:{lineno + 1}: expected {n} rows, found {len(tokens)}")
    weights = np.array(rows, dtype=np.float64).reshape(n, dim)
    return EmbeddingMatrix(tokens, weights)


def unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1, norms)


def csls_scores(x: np.ndarray, y: np.ndarray, k: int = 10) -> np.ndarray:
    """CSLS between every row of ``x`` and every row of ``y`` (rows need not be unit)."""
    sim = unit_rows(x) @ unit_rows(y).T
    kx = min(k, sim.shape[1])
    ky = min(k, sim.shape[0])
    r_x = np.mean(-np.partition(-sim, kx - 1, axis=1)[:, :kx], axis=1)
    r_y = np.mean(-np.partition(-sim, ky - 1, axis=0)[:ky, :], axis=0)
    return 2 * sim - r_x[:, None] - r_y[None, :]


def nearest_neighbors(query: np.ndarray, e: EmbeddingMatrix, k: int = 10, metric: str = "cosine",
                      csls_k: int = 10, query_space: np.ndarray | None = None) -> list[tuple[str, float]]:
    """Rank the tokens of ``e`` against ``query``.

    For ``metric="csls"`` the query's own neighbourhood is measured in ``e`` and
    each candidate's neighbourhood in ``query_space`` (the space the query came
    from); it defaults to the query alone.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    qn = np.linalg.norm(q)
    if qn == 0:
        raise ValueError("zero-norm query vector")
    cand = unit_rows(np.asarray(e.weights, dtype=np.float64))
    cos = cand @ (q / qn)
    if metric == "cosine":
        scores = cos
    elif metric == "csls":
        if csls_k < 1:
            raise ValueError("csls_k must be >= 1")
        space = q[None, :] if query_space is None else np.asarray(query_space, dtype=np.float64)
        kk = min(csls_k, len(cand))
        r_q = np.mean(np.sort(cos)[::-1][:kk])
        back = cand @ unit_rows(space).T
        kb = min(csls_k, back.shape[1])
        r_y = np.mean(-np.partition(-back, kb - 1, axis=1)[:, :kb], axis=1)
        scores = 2 * cos - r_q - r_y
    else:
        raise ValueError(f"unknown metric {metric!r}")
    order = np.argsort(-scores, kind="stable")[:k]
    return [(e.tokens[i], float(scores[i])) for i in order]


def extract_source_embedding(model, side: str = "source") -> EmbeddingMatrix:
    """Copy the source (or target) embedding table out of an NMT model."""
    if side == "source":
        table, vocab = model.source_embedding_weights(), model.src_vocab
    elif side == "target":
        table, vocab = model.target_embedding_weights(), model.tgt_vocab
    else:
        raise ValueError("side must be 'source' or 'target'")
    return EmbeddingMatrix(vocab.tokens, table.copy())
