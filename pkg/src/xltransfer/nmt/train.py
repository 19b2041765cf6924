"""Training loop, Adam, early stopping and gradient checking."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..noise import NoiseSpec, inject_noise, sentence_rng
from ..synth import ParallelCorpus
from ..vocab import BOS_ID, EOS_ID, PAD_ID, encode
from .model import TransformerNMT, freeze_names, named_components

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_words: int = 1024
    max_len: int = 100
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: int = 400
    checkpoint_freq: int = 200
    patience: int = 12
    max_updates: int | None = None
    max_epochs: int | None = None
    seed: int = 0
    freeze: tuple = ()
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.freeze = tuple(self.freeze)


class NonFiniteLoss(RuntimeError):
    pass


@dataclass
class Batch:
    src: torch.Tensor
    tgt_in: torch.Tensor
    tgt_out: torch.Tensor
    ident: int = 0

    @property
    def n_tokens(self) -> int:
        return int((self.tgt_out != PAD_ID).sum())


def _pad(seqs, length):
    return [s + [PAD_ID] * (length - len(s)) for s in seqs]


def make_batch(model: TransformerNMT, src: Sequence[Sequence[str]], tgt: Sequence[Sequence[str]],
               max_len: int | None = None, ident: int = 0) -> Batch:
    """Tokens -> padded id tensors. Sources end in ``</s>``; targets are shifted."""
    s_ids = [encode(model.src_vocab, s)[: (max_len or 10**9) - 1] + [EOS_ID] for s in src]
    t_ids = [encode(model.tgt_vocab, t)[: (max_len or 10**9) - 1] for t in tgt]
    t_in = [[BOS_ID] + t for t in t_ids]
    t_out = [t + [EOS_ID] for t in t_ids]
    S = max(map(len, s_ids))
    T = max(map(len, t_in))
    return Batch(torch.tensor(_pad(s_ids, S)), torch.tensor(_pad(t_in, T)),
                 torch.tensor(_pad(t_out, T)), ident)


def batch_loss(model: TransformerNMT, batch: Batch, label_smoothing: float = 0.0, reduction="mean"):
    logits = model(batch.src, batch.tgt_in)
    return F.cross_entropy(logits.reshape(-1, logits.shape[-1]), batch.tgt_out.reshape(-1),
                           ignore_index=PAD_ID, label_smoothing=label_smoothing, reduction=reduction)


class Adam:
    """Adam over named tensors; parameters outside ``state.m`` are never touched."""

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.step = 0
        self.m: dict[str, torch.Tensor] = {}
        self.v: dict[str, torch.Tensor] = {}

    def rate(self, step: int) -> float:
        w = self.cfg.warmup
        if w <= 0:
            return self.cfg.lr
        return self.cfg.lr * min(step / w, math.sqrt(w / step))

    @torch.no_grad()
    def update(self, params: dict[str, torch.Tensor]):
        self.step += 1
        c = self.cfg
        lr = self.rate(self.step)
        bc1 = 1 - c.beta1 ** self.step
        bc2 = 1 - c.beta2 ** self.step
        for name, p in params.items():
            g = p.grad
            if g is None:
                g = torch.zeros_like(p)
            if name not in self.m:
                self.m[name] = torch.zeros_like(p)
                self.v[name] = torch.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m.mul_(c.beta1).add_(g, alpha=1 - c.beta1)
            v.mul_(c.beta2).addcmul_(g, g, value=1 - c.beta2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt_().add_(c.eps), value=-lr)


@dataclass
class TrainState:
    """Everything needed to resume training exactly."""

    adam: Adam
    epoch: int = 0
    batch_in_epoch: int = 0
    best: float = math.inf
    bad: int = 0
    checkpoints: int = 0


def new_state(cfg: TrainConfig) -> TrainState:
    return TrainState(Adam(cfg))


def trainable(model: TransformerNMT, cfg: TrainConfig) -> dict[str, torch.Tensor]:
    frozen = freeze_names(model, cfg.freeze)
    return {n: p for n, p in model.named_parameters() if n not in frozen}


def train_step(model: TransformerNMT, batch: Batch, cfg: TrainConfig, state: TrainState | None = None):
    """One Adam update on the token-mean cross-entropy. Returns ``(loss, state)``."""
    state = state or new_state(cfg)
    params = trainable(model, cfg)
    torch.manual_seed(cfg.seed * 1_000_003 + state.adam.step)
    model.train()
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch, cfg.label_smoothing)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"non-finite loss {loss.item()} on batch {batch.ident}")
    if params:
        loss.backward()
        state.adam.update(params)
    return float(loss.item()), state


def iterate_batches(model, corpus: ParallelCorpus, cfg: TrainConfig, epoch: int,
                    noise: NoiseSpec | None = None, noise_vocab: Sequence[str] = ()):
    """Seeded shuffle, then greedy packing up to ``batch_words`` target tokens."""
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(corpus))
    src = corpus.src
    if noise is not None:
        src = [inject_noise(s, noise, noise_vocab, sentence_rng(noise, epoch, i)) if s else s
               for i, s in enumerate(src)]
    batches, cur, words = [], [], 0
    for i in order:
        n = min(len(corpus.tgt[i]) + 1, cfg.max_len)
        if cur and words + n > cfg.batch_words:
            batches.append(cur)
            cur, words = [], 0
        cur.append(i)
        words += n
    if cur:
        batches.append(cur)
    for b, idx in enumerate(batches):
        yield b, make_batch(model, [src[i] for i in idx], [corpus.tgt[i] for i in idx],
                            cfg.max_len, ident=epoch * 100000 + b)


@torch.no_grad()
def corpus_loss(model: TransformerNMT, corpus: ParallelCorpus, batch_size: int = 64) -> tuple[float, int]:
    """Summed cross-entropy and token count under teacher forcing, no dropout."""
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(corpus), batch_size):
        b = make_batch(model, corpus.src[start:start + batch_size], corpus.tgt[start:start + batch_size])
        total += float(batch_loss(model, b, reduction="sum"))
        count += b.n_tokens
    return total, count


def perplexity(model: TransformerNMT, corpus: ParallelCorpus) -> float:
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    total, count = corpus_loss(model, corpus)
    return math.exp(total / count)


@dataclass
class TrainResult:
    model: TransformerNMT
    state: TrainState
    log: list = field(default_factory=list)
    best_checkpoint: int | None = None
    stopped_early: bool = False


def _snapshot(model):
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


def train(model: TransformerNMT, data: ParallelCorpus, dev: ParallelCorpus, cfg: TrainConfig,
          noise: NoiseSpec | None = None, state: TrainState | None = None,
          evaluate: Callable[[TransformerNMT], float] | None = None,
          on_checkpoint: Callable | None = None) -> TrainResult:
    """Train with checkpoint-level early stopping on dev perplexity.

    Every ``checkpoint_freq`` updates the dev score is computed; training stops
    after ``patience`` consecutive checkpoints without improvement, or when the
    update/epoch budget runs out. The best-scoring parameters are restored.
    With ``noise`` every source sentence is re-noised each epoch.
    """
    if len(dev) == 0:
        raise ValueError("dev corpus is empty")
    if len(data) == 0:
        raise ValueError("training corpus is empty")
    evaluate = evaluate or (lambda m: perplexity(m, dev))
    state = state or new_state(cfg)
    result = TrainResult(model, state)
    noise_vocab = model.src_vocab.content_tokens()
    best_params = None
    stop = False
    while not stop:
        if cfg.max_epochs is not None and state.epoch >= cfg.max_epochs:
            break
        losses = []
        for b, batch in iterate_batches(model, data, cfg, state.epoch, noise, noise_vocab):
            if b < state.batch_in_epoch:
                continue
            loss, _ = train_step(model, batch, cfg, state)
            losses.append(loss)
            state.batch_in_epoch = b + 1
            step = state.adam.step
            if step % cfg.checkpoint_freq == 0:
                state.checkpoints += 1
                score = evaluate(model)
                improved = score < state.best
                if improved:
                    state.best, state.bad = score, 0
                    best_params = _snapshot(model)
                    result.best_checkpoint = state.checkpoints
                else:
                    state.bad += 1
                entry = {"checkpoint": state.checkpoints, "update": step, "epoch": state.epoch,
                         "train_loss": float(np.mean(losses)) if losses else float("nan"),
                         "dev": score, "improved": improved}
                result.log.append(entry)
                log.info("checkpoint %(checkpoint)d update %(update)d dev %(dev).4f", entry)
                if on_checkpoint is not None:
                    on_checkpoint(model, entry)
                losses = []
                if state.bad >= cfg.patience:
                    stop = result.stopped_early = True
                    break
            if cfg.max_updates is not None and step >= cfg.max_updates:
                stop = True
                break
        else:
            state.epoch += 1
            state.batch_in_epoch = 0
    if best_params is not None:
        model.load_state_dict(best_params)
    return result


def gradient_check(model: TransformerNMT, batch: Batch, epsilon: float = 1e-5, tolerance: float = 1e-3,
                   n_coords: int = 200, seed: int = 0,
                   grad_hook: Callable[[str, torch.Tensor], torch.Tensor] | None = None) -> dict:
    """Analytic vs central-difference gradients in float64, dropout off.

    Coordinates are spread evenly over every named component. The relative
    error of a coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    m = copy.deepcopy(model).double()
    m.eval()
    params = dict(m.named_parameters())
    m.zero_grad()
    batch_loss(m, batch).backward()
    grads = {n: p.grad.detach().clone() for n, p in params.items()}
    if grad_hook is not None:
        grads = {n: grad_hook(n, g) for n, g in grads.items()}

    rng = np.random.default_rng(seed)
    groups = named_components(m)
    per = max(1, math.ceil(n_coords / len(groups)))
    coords = []
    for comp, names in sorted(groups.items()):
        sizes = np.array([params[n].numel() for n in names])
        # Prefer coordinates with a nonzero analytic gradient so the check has teeth.
        live = [(n, i) for n in names for i in torch.nonzero(grads[n].reshape(-1)).reshape(-1).tolist()]
        pool = live if len(live) >= per else [(n, i) for n, s in zip(names, sizes) for i in range(s)]
        for k in rng.choice(len(pool), size=min(per, len(pool)), replace=False):
            coords.append((comp,) + pool[k])

    worst, rows = 0.0, []
    with torch.no_grad():
        for comp, name, i in coords:
            flat = params[name].view(-1)
            orig = flat[i].item()
            flat[i] = orig + epsilon
            up = batch_loss(m, batch).item()
            flat[i] = orig - epsilon
            down = batch_loss(m, batch).item()
            flat[i] = orig
            num = (up - down) / (2 * epsilon)
            ana = grads[name].view(-1)[i].item()
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, rel)
            rows.append((comp, name, i, ana, num, rel))
    return {"max_rel_error": worst, "passed": worst < tolerance, "coordinates": rows,
            "components": sorted({r[0] for r in rows})}
