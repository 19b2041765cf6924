"""Pre-norm transformer encoder-decoder with named, freezable components."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..vocab import PAD_ID, Vocabulary

COMPONENTS = (
    "source_embedding",
    "encoder.self_attention",
    "encoder.feedforward",
    "encoder.final_norm",
    "target_embedding",
    "decoder.self_attention",
    "decoder.encdec_attention",
    "decoder.feedforward",
    "output_layer",
)


@dataclass
class ModelConfig:
    layers: int = 2
    dim: int = 64
    heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.3
    embed_dropout: float = 0.0
    tied_embeddings: bool = False
    max_positions: int = 256

    def validate(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if not 0 <= self.dropout < 1 or not 0 <= self.embed_dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


def sinusoidal_positions(n: int, dim: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    table = torch.zeros(n, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * freq)
    table[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return table


class Attention(nn.Module):
    def __init__(self, dim, heads, dropout):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)
        self.heads = heads
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory=None, key_pad=None, causal=False):
        """``x``: (B, T, D); ``memory``: (B, S, D) or None for self-attention.

        ``key_pad`` is a (B, S) bool mask of padded keys.
        """
        h = self.norm(x)
        kv = h if memory is None else memory
        B, T, D = h.shape
        S = kv.shape[1]
        H = self.heads
        q = self.q(h).view(B, T, H, D // H).transpose(1, 2)
        k = self.k(kv).view(B, S, H, D // H).transpose(1, 2)
        v = self.v(kv).view(B, S, H, D // H).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(D // H)
        mask = torch.zeros(B, 1, T, S, dtype=torch.bool, device=x.device)
        if key_pad is not None:
            mask = mask | key_pad[:, None, None, :]
        if causal:
            mask = mask | torch.ones(T, S, dtype=torch.bool, device=x.device).triu(1)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        out = (attn @ v).transpose(1, 2).reshape(B, T, D)
        return x + self.drop(self.o(out))


class FeedForward(nn.Module):
    def __init__(self, dim, ff_dim, dropout):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.w1 = nn.Linear(dim, ff_dim)
        self.w2 = nn.Linear(ff_dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        h = self.drop(F.relu(self.w1(self.norm(x))))
        return x + self.drop(self.w2(h))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attention = Attention(cfg.dim, cfg.heads, cfg.dropout)
        self.feedforward = FeedForward(cfg.dim, cfg.ff_dim, cfg.dropout)

    def forward(self, x, pad):
        return self.feedforward(self.self_attention(x, key_pad=pad))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attention = Attention(cfg.dim, cfg.heads, cfg.dropout)
        self.encdec_attention = Attention(cfg.dim, cfg.heads, cfg.dropout)
        self.feedforward = FeedForward(cfg.dim, cfg.ff_dim, cfg.dropout)

    def forward(self, y, memory, src_pad):
        y = self.self_attention(y, causal=True)
        y = self.encdec_attention(y, memory=memory, key_pad=src_pad)
        return self.feedforward(y)


class Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.final_norm = nn.LayerNorm(cfg.dim)

    def forward(self, x, pad):
        for layer in self.layers:
            x = layer(x, pad)
        return self.final_norm(x)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.layers))


class OutputLayer(nn.Module):
    def __init__(self, dim, vocab_size):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.proj = nn.Linear(dim, vocab_size)

    def forward(self, y):
        return self.proj(self.norm(y))


class TransformerNMT(nn.Module):
    def __init__(self, src_vocab: Vocabulary, tgt_vocab: Vocabulary, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        if cfg.tied_embeddings and src_vocab != tgt_vocab:
            raise ValueError("tied embeddings need a joint source/target vocabulary")
        self.cfg = cfg
        self.src_vocab = src_vocab
        self.tgt_vocab = tgt_vocab
        self.source_embedding = nn.Embedding(len(src_vocab), cfg.dim)
        if cfg.tied_embeddings:
            self.target_embedding = self.source_embedding
        else:
            self.target_embedding = nn.Embedding(len(tgt_vocab), cfg.dim)
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.output_layer = OutputLayer(cfg.dim, len(tgt_vocab))
        self.embed_drop = nn.Dropout(cfg.embed_dropout)
        self.drop = nn.Dropout(cfg.dropout)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_positions, cfg.dim).float(),
                             persistent=False)

    def _embed(self, table, ids):
        n = ids.shape[1]
        if n > self.positions.shape[0]:
            raise ValueError(f"sequence length {n} exceeds max_positions {self.positions.shape[0]}")
        x = self.embed_drop(table(ids)) * math.sqrt(self.cfg.dim)
        return self.drop(x + self.positions[:n].to(x.dtype))

    def encode(self, src):
        pad = src == PAD_ID
        return self.encoder(self._embed(self.source_embedding, src), pad), pad

    def decode(self, tgt_in, memory, src_pad):
        y = self._embed(self.target_embedding, tgt_in)
        for layer in self.decoder.layers:
            y = layer(y, memory, src_pad)
        return self.output_layer(y)

    def forward(self, src, tgt_in):
        memory, pad = self.encode(src)
        return self.decode(tgt_in, memory, pad)

    def source_embedding_weights(self) -> np.ndarray:
        return self.source_embedding.weight.detach().cpu().numpy().copy()

    def target_embedding_weights(self) -> np.ndarray:
        return self.target_embedding.weight.detach().cpu().numpy().copy()

    def hyperparams(self) -> dict:
        return asdict(self.cfg)


_LAYER = re.compile(r"\.layers\.\d+")


def component_of(param_name: str) -> str:
    """Map ``decoder.layers.1.feedforward.w1.weight`` to ``decoder.feedforward``."""
    name = _LAYER.sub("", param_name)
    for comp in COMPONENTS:
        if name == comp or name.startswith(comp + "."):
            return comp
    raise KeyError(f"parameter {param_name!r} belongs to no component")


def named_components(model: TransformerNMT) -> dict[str, list[str]]:
    groups: dict[str, list[str]] = {}
    for name, _ in model.named_parameters():
        groups.setdefault(component_of(name), []).append(name)
    return groups


def init_model(src_vocab: Vocabulary, tgt_vocab: Vocabulary, cfg: ModelConfig | None = None,
               seed: int = 0) -> TransformerNMT:
    """Xavier-uniform matrices and embeddings, zero biases, unit norm gains."""
    cfg = cfg or ModelConfig()
    if len(src_vocab) < 5 or len(tgt_vocab) < 5:
        raise ValueError("vocabularies need at least one content token beyond the specials")
    model = TransformerNMT(src_vocab, tgt_vocab, cfg)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() >= 2:
                bound = math.sqrt(6.0 / (p.shape[0] + p.shape[1]))
                p.copy_(torch.rand(p.shape, generator=gen, dtype=torch.float64).mul(2).sub(1).mul(bound))
            elif name.endswith("norm.weight"):
                p.fill_(1.0)
            else:
                p.zero_()
    return model


def parameter_count(cfg: ModelConfig, src_size: int, tgt_size: int) -> int:
    """Closed-form number of trainable scalars."""
    d, f, L = cfg.dim, cfg.ff_dim, cfg.layers
    attn = 4 * (d * d + d) + 2 * d
    ff = d * f + f + f * d + d + 2 * d
    emb = src_size * d + (0 if cfg.tied_embeddings else tgt_size * d)
    enc = L * (attn + ff) + 2 * d
    dec = L * (2 * attn + ff)
    out = 2 * d + d * tgt_size + tgt_size
    return emb + enc + dec + out


def freeze_names(model: TransformerNMT, frozen) -> set[str]:
    """Expand component names (``encoder.*`` globs allowed) to parameter names."""
    import fnmatch
    groups = named_components(model)
    names = set()
    for pattern in frozen or ():
        hits = [c for c in groups if fnmatch.fnmatchcase(c, pattern)]
        if not hits:
            raise KeyError(f"unknown component {pattern!r}; have {sorted(groups)}")
        for c in hits:
            names.update(groups[c])
    return names
