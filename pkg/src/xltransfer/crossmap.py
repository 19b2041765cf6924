"""Cross-lingual linear maps between child and parent embedding spaces."""

from __future__ import annotations

import logging
import string
import warnings
from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddingMatrix, csls_scores, unit_rows
from .vocab import SPECIALS

log = logging.getLogger(__name__)


@dataclass
class SeedDictionary:
    pairs: list[tuple[str, str]]
    source: str = "file"

    def __post_init__(self):
        seen, uniq = set(), []
        for p in self.pairs:
            p = (p[0], p[1])
            if p not in seen:
                seen.add(p)
                uniq.append(p)
        self.pairs = uniq

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)


@dataclass
class LinearMap:
    w: np.ndarray
    constraint: str = "orthogonal"

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def orthogonality_error(self) -> float:
        return float(np.linalg.norm(self.w.T @ self.w - np.eye(self.dim)))


def normalize_embeddings(x: np.ndarray) -> np.ndarray:
    """Unit length, mean center, unit length again."""
    x = unit_rows(np.asarray(x, dtype=np.float64))
    x = x - x.mean(axis=0, keepdims=True)
    return unit_rows(x)


def _is_digits(tok: str) -> bool:
    return tok.isdigit()


def _is_punct(tok: str) -> bool:
    return len(tok) > 0 and all(ch in string.punctuation for ch in tok)


def induce_seed_dictionary(child: EmbeddingMatrix, parent: EmbeddingMatrix,
                           mode: str = "digits") -> SeedDictionary:
    """Pair identical surface forms present in both vocabularies.

    ``digits`` keeps all-digit tokens, ``punct`` all-punctuation tokens and
    ``identical`` any shared token. Special tokens are never paired. Pairs come
    in child-vocabulary order, which is frequency order for built vocabularies.
    """
    if len(child) == 0 or len(parent) == 0:
        raise ValueError("both vocabularies must be nonempty")
    keep = {"digits": _is_digits, "punct": _is_punct, "identical": lambda t: True}.get(mode)
    if keep is None:
        raise ValueError(f"unknown seed mode {mode!r}")
    pairs = [(t, t) for t in child.tokens
             if t not in SPECIALS and t in parent.index and keep(t)]
    if not pairs:
        raise ValueError(f"no shared {mode} tokens between the vocabularies; "
                         "try mode='identical' or supply a dictionary file")
    return SeedDictionary(pairs, source=mode)


def fit_mapping(child: EmbeddingMatrix, parent: EmbeddingMatrix, dictionary: SeedDictionary,
                constraint: str = "orthogonal", normalize: bool = True) -> LinearMap:
    """Fit W so that W @ child(f) ~ parent(f') over the dictionary pairs.

    Minimizes the squared-error objective. With ``normalize`` the full matrices
    are preprocessed by :func:`normalize_embeddings` before the dictionary rows
    are taken.
    """
    if child.dim != parent.dim:
        raise ValueError(f"dimension mismatch: child {child.dim} vs parent {parent.dim}")
    pairs = [(a, b) for a, b in dictionary if a in child.index and b in parent.index]
    if not pairs:
        raise ValueError("empty dictionary")
    if len(pairs) < child.dim:
        log.warning("dictionary has %d pairs for dimension %d; map is underdetermined",
                    len(pairs), child.dim)
    xs = normalize_embeddings(child.weights) if normalize else np.asarray(child.weights, np.float64)
    ys = normalize_embeddings(parent.weights) if normalize else np.asarray(parent.weights, np.float64)
    x = xs[[child.index[a] for a, _ in pairs]]
    y = ys[[parent.index[b] for _, b in pairs]]
    return _solve(x, y, constraint)


def _solve(x: np.ndarray, y: np.ndarray, constraint: str) -> LinearMap:
    if constraint == "orthogonal":
        u, _, vt = np.linalg.svd(y.T @ x)
        return LinearMap(u @ vt, "orthogonal")
    if constraint == "unconstrained":
        sol, *_ = np.linalg.lstsq(x, y, rcond=None)
        return LinearMap(sol.T, "unconstrained")
    raise ValueError(f"unknown constraint {constraint!r}")


def procrustes_objective(w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum((x @ w.T - y) ** 2))


def mutual_nearest_neighbors(mapped: np.ndarray, target: np.ndarray, metric: str = "csls",
                             csls_k: int = 10) -> list[tuple[int, int]]:
    """Index pairs (i, j) where j is i's top-1 and i is j's top-1."""
    if metric == "csls":
        scores = csls_scores(mapped, target, csls_k)
    elif metric == "cosine":
        scores = unit_rows(mapped) @ unit_rows(target).T
    else:
        raise ValueError(f"unknown metric {metric!r}")
    fwd = np.argmax(scores, axis=1)
    bwd = np.argmax(scores, axis=0)
    return [(i, int(j)) for i, j in enumerate(fwd) if bwd[j] == i]


def _content_rows(e: EmbeddingMatrix, max_rank: int) -> np.ndarray:
    rows = [i for i, t in enumerate(e.tokens) if t not in SPECIALS and e.trained[i]]
    return np.asarray(rows[:max_rank], dtype=np.int64)


def initial_mapping(child: EmbeddingMatrix, parent: EmbeddingMatrix, seed_dict: SeedDictionary,
                    constraint: str = "orthogonal", max_rank: int = 10000, metric: str = "csls",
                    csls_k: int = 10) -> tuple[LinearMap, SeedDictionary]:
    """Starting map for refinement from a possibly tiny seed dictionary.

    A seed with at least D pairs is fitted directly. A smaller seed leaves most
    of W arbitrary, so instead each frequent token is described by its cosines
    to the seed anchors of its own language. These descriptions are comparable
    across languages; their mutual nearest neighbours, plus the seed, give the
    dictionary that W is fitted on.
    """
    pairs = [(a, b) for a, b in seed_dict if a in child.index and b in parent.index]
    if not pairs:
        raise ValueError("empty dictionary")
    if len(pairs) >= child.dim:
        return fit_mapping(child, parent, seed_dict, constraint), seed_dict
    xs = normalize_embeddings(child.weights)
    ys = normalize_embeddings(parent.weights)
    anchors_x = xs[[child.index[a] for a, _ in pairs]]
    anchors_y = ys[[parent.index[b] for _, b in pairs]]
    ci = _content_rows(child, max_rank)
    pi = _content_rows(parent, max_rank)
    rel_x = xs[ci] @ anchors_x.T
    rel_y = ys[pi] @ anchors_y.T
    rel_x = unit_rows(rel_x - rel_x.mean(axis=0))
    rel_y = unit_rows(rel_y - rel_y.mean(axis=0))
    found = mutual_nearest_neighbors(rel_x, rel_y, metric, csls_k)
    induced = SeedDictionary(pairs + [(child.tokens[ci[a]], parent.tokens[pi[b]]) for a, b in found],
                             source=seed_dict.source)
    return fit_mapping(child, parent, induced, constraint), induced


def refine_mapping(child: EmbeddingMatrix, parent: EmbeddingMatrix, w0: LinearMap,
                   iterations: int = 10, metric: str = "csls", max_rank: int = 10000,
                   csls_k: int = 10, seed_dict: SeedDictionary | None = None,
                   normalize: bool = True, history: list | None = None):
    """Self-learning: induce mutual nearest neighbours, refit, repeat.

    Only the ``max_rank`` first (most frequent) trained content tokens of each
    side take part in dictionary induction. Returns ``(map, dictionary)``; the
    dictionary is ``seed_dict`` (or empty) when ``iterations`` is 0. Refinement
    stops early once the induced dictionary no longer changes.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    current = LinearMap(w0.w.copy(), w0.constraint)
    dictionary = seed_dict if seed_dict is not None else SeedDictionary([], source="mutual-nn")
    if iterations == 0:
        return w0, dictionary
    xs = normalize_embeddings(child.weights) if normalize else np.asarray(child.weights, np.float64)
    ys = normalize_embeddings(parent.weights) if normalize else np.asarray(parent.weights, np.float64)
    ci = _content_rows(child, max_rank)
    pi = _content_rows(parent, max_rank)
    prev = None
    for it in range(iterations):
        mapped = xs[ci] @ current.w.T
        found = mutual_nearest_neighbors(mapped, ys[pi], metric, csls_k)
        if not found:
            warnings.warn("induced dictionary is empty; returning the best map so far")
            break
        pairs = [(child.tokens[ci[a]], parent.tokens[pi[b]]) for a, b in found]
        key = frozenset(pairs)
        x = xs[ci[[a for a, _ in found]]]
        y = ys[pi[[b for _, b in found]]]
        current = _solve(x, y, current.constraint)
        dictionary = SeedDictionary(pairs, source="mutual-nn")
        if history is not None:
            history.append((it, current, dictionary))
        log.debug("refinement iteration %d: %d pairs", it, len(pairs))
        if key == prev:
            break
        prev = key
    return current, dictionary


def map_embedding(w: LinearMap, child: EmbeddingMatrix) -> EmbeddingMatrix:
    if child.dim != w.dim:
        raise ValueError(f"dimension mismatch: map {w.dim} vs embedding {child.dim}")
    return EmbeddingMatrix(child.tokens, np.asarray(child.weights) @ w.w.T, child.trained.copy())


def to_parent_space(w: LinearMap, child: EmbeddingMatrix, parent: EmbeddingMatrix) -> EmbeddingMatrix:
    """Map child vectors and restore the parent's scale and offset.

    The map is fitted on normalized vectors, so the mapped rows are rescaled to
    the parent's mean centered-row norm and shifted by the parent mean. This
    keeps the initialized embedding in the range the parent encoder expects.
    """
    mapped = map_embedding(w, EmbeddingMatrix(child.tokens, normalize_embeddings(child.weights),
                                              child.trained.copy()))
    pw = np.asarray(parent.weights, np.float64)
    rows = [i for i, t in enumerate(parent.tokens) if t not in SPECIALS]
    mu = pw[rows].mean(axis=0)
    scale = np.linalg.norm(pw[rows] - mu, axis=1).mean()
    mapped.weights = mapped.weights * scale + mu
    return mapped


def dictionary_precision(dictionary, gold: dict[str, str], restrict: set[str] | None = None) -> float:
    """Precision@1 of induced (child, parent) pairs against a gold table.

    ``restrict`` limits evaluation to those child tokens; every token in it
    counts, so a missing entry scores as wrong.
    """
    pred = {}
    for a, b in dictionary:
        pred.setdefault(a, b)
    keys = restrict if restrict is not None else set(pred)
    if not keys:
        return 0.0
    return sum(pred.get(k) == gold.get(k) for k in keys) / len(keys)


def translate_tokens(w: LinearMap, child: EmbeddingMatrix, parent: EmbeddingMatrix, queries,
                     metric: str = "csls", csls_k: int = 10, max_rank: int | None = None,
                     normalize: bool = True) -> dict[str, str]:
    """Top-1 parent token for each child query token under ``w``."""
    xs = normalize_embeddings(child.weights) if normalize else np.asarray(child.weights, np.float64)
    ys = normalize_embeddings(parent.weights) if normalize else np.asarray(parent.weights, np.float64)
    pi = _content_rows(parent, max_rank or len(parent))
    queries = [q for q in queries if q in child.index]
    if not queries:
        return {}
    mapped = xs[[child.index[q] for q in queries]] @ w.w.T
    if metric == "csls":
        # Hubness terms need a full neighbourhood on the query side.
        ci = _content_rows(child, max_rank or len(child))
        allmapped = xs[ci] @ w.w.T
        sim_all = unit_rows(ys[pi]) @ unit_rows(allmapped).T
        kk = min(csls_k, sim_all.shape[1])
        r_y = np.mean(-np.partition(-sim_all, kk - 1, axis=1)[:, :kk], axis=1)
        sim = unit_rows(mapped) @ unit_rows(ys[pi]).T
        kq = min(csls_k, sim.shape[1])
        r_x = np.mean(-np.partition(-sim, kq - 1, axis=1)[:, :kq], axis=1)
        scores = 2 * sim - r_x[:, None] - r_y[None, :]
    else:
        scores = unit_rows(mapped) @ unit_rows(ys[pi]).T
    best = np.argmax(scores, axis=1)
    return {q: parent.tokens[pi[j]] for q, j in zip(queries, best)}


def nearest_mapped_child(w: LinearMap, child: EmbeddingMatrix, parent: EmbeddingMatrix, queries,
                         candidates=None, metric: str = "cosine", csls_k: int = 10,
                         normalize: bool = True) -> dict[str, str]:
    """For each parent token, the child token whose mapped vector is closest."""
    xs = normalize_embeddings(child.weights) if normalize else np.asarray(child.weights, np.float64)
    ys = normalize_embeddings(parent.weights) if normalize else np.asarray(parent.weights, np.float64)
    ci = [i for i, t in enumerate(child.tokens)
          if t not in SPECIALS and child.trained[i] and (candidates is None or t in candidates)]
    queries = [q for q in queries if q in parent.index]
    if not ci or not queries:
        return {}
    mapped = xs[ci] @ w.w.T
    q = ys[[parent.index[t] for t in queries]]
    if metric == "csls":
        scores = csls_scores(q, mapped, csls_k)
    else:
        scores = unit_rows(q) @ unit_rows(mapped).T
    best = np.argmax(scores, axis=1)
    return {t: child.tokens[ci[j]] for t, j in zip(queries, best)}


def save_map(w: LinearMap, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{w.dim} {w.constraint}\n")
        for row in w.w:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_map(path) -> LinearMap:
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    try:
        d, constraint = lines[0].split()
        d = int(d)
    except (IndexError, ValueError):
        raise ValueError(f"{path}: line 1: expected 'D constraint' header") from None
    if len(lines) - 1 != d:
        raise ValueError(f"{path}: header declares {d} rows but file has {len(lines) - 1}")
    rows = []
    for n, line in enumerate(lines[1:], start=2):
        vals = line.split()
        if len(vals) != d:
            raise ValueError(f"{path}: line {n}: expected {d} values, got {len(vals)}")
        rows.append([float(v) for v in vals])
    return LinearMap(np.array(rows), constraint)


def save_dictionary(dictionary: SeedDictionary, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(f"{a}\t{b}\n" for a, b in dictionary)


def load_dictionary(path) -> SeedDictionary:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}: line {n}: expected 'child<TAB>parent'")
            pairs.append((parts[0], parts[1]))
    return SeedDictionary(pairs, source="file")
