"""Command line entry point: ``xltransfer <subcommand> ...``.

Every subcommand reads and writes the plain file formats of the library
(merges files, vocab files, .vec text embeddings, NMTX checkpoints and
``prefix.src/.tgt/.prov`` corpora). Set XLTRANSFER_VERBOSE=1 for INFO logs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import torch

from .. import crossmap as cm
from ..embedding import extract_source_embedding, load_embeddings, save_embeddings, train_skipgram
from ..evaluate import bleu
from ..noise import NoiseSpec, noisy_corpus
from ..nmt import ModelConfig, TrainConfig, init_model, load_checkpoint, save_checkpoint, train
from ..nmt.decode import translate_corpus
from ..nmt.transfer import transfer_init
from ..synth import load_corpus, make_parent_synthetic, mix_corpora, read_lines, save_corpus
from ..vocab import apply_bpe, build_vocab, learn_bpe, load_bpe, load_vocab, save_bpe, save_vocab
from .experiment import StageError, load_config, run_experiment
from .toydata import make_cipher_task


def _write_lines(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(" ".join(s) + "\n" for s in sentences)


def _load_any_embedding(path):
    """A .vec file, or the source embedding of an NMTX checkpoint."""
    with open(path, "rb") as f:
        magic = f.read(4)
    if magic == b"NMTX":
        model, _ = load_checkpoint(path)
        return extract_source_embedding(model)
    return load_embeddings(path)


def cmd_learn_bpe(a):
    save_bpe(learn_bpe(read_lines(a.input), a.merges, a.min_count), a.output)


def cmd_apply_bpe(a):
    model, cache = load_bpe(a.model), {}
    _write_lines(a.output, [apply_bpe(model, s, cache) for s in read_lines(a.input)])


def cmd_build_vocab(a):
    corpus = [s for path in a.input for s in read_lines(path)]
    save_vocab(build_vocab(corpus, a.max_size), a.output)


def cmd_train_embed(a):
    vocab = load_vocab(a.vocab) if a.vocab else None
    e = train_skipgram(read_lines(a.input), dim=a.dim, window=a.window, negatives=a.negatives,
                       epochs=a.epochs, seed=a.seed, vocab=vocab)
    save_embeddings(e, a.output)
    print(f"tokens={len(e.tokens)} dim={e.dim} trained={int(e.trained.sum())} final_loss={e.losses[-1]:.4f}")


def cmd_map_embed(a):
    child, parent = load_embeddings(a.child), _load_any_embedding(a.parent)
    if a.seed_file:
        seed = cm.load_dictionary(a.seed_file)
    else:
        seed = cm.induce_seed_dictionary(child, parent, a.seed_mode)
    w0, _ = cm.initial_mapping(child, parent, seed, a.constraint, a.max_rank, a.metric, a.csls_k)
    w, induced = cm.refine_mapping(child, parent, w0, a.iterations, a.metric, a.max_rank, a.csls_k,
                                   seed_dict=seed)
    save_embeddings(cm.to_parent_space(w, child, parent), a.output)
    if a.dictionary:
        cm.save_dictionary(induced, a.dictionary)
    if a.map:
        cm.save_map(w, a.map)
    print(f"seed_pairs={len(seed)} induced_pairs={len(induced)} orthogonality_error={w.orthogonality_error():.2e}")


def cmd_add_noise(a):
    spec = NoiseSpec(a.p_ins, a.v_ins, a.p_del, a.d_per, a.seed)
    sents = read_lines(a.input)
    if a.vocab:
        filler = load_vocab(a.vocab).content_tokens()
    else:
        filler = build_vocab(sents).content_tokens()
    _write_lines(a.output, noisy_corpus(sents, spec, filler, a.epoch))


def cmd_make_synth(a):
    synth = make_parent_synthetic(load_corpus(a.parent), load_vocab(a.child_vocab), a.sample_size,
                                  a.seed, a.max_unk_fraction)
    if a.real:
        synth = mix_corpora(load_corpus(a.real), synth, a.ratio, a.seed)
    save_corpus(synth, a.output)


def cmd_make_cipher(a):
    child, table = make_cipher_task(load_corpus(a.input), a.seed, a.reorder or None, reorder_seed=a.seed)
    save_corpus(child, a.output)
    with open(a.output + ".cipher", "w", encoding="utf-8") as f:
        f.writelines(f"{table[k]}\t{k}\n" for k in sorted(table))


def _train_config(a) -> TrainConfig:
    return TrainConfig(batch_words=a.batch_words, lr=a.lr, warmup=a.warmup, checkpoint_freq=a.checkpoint_freq,
                       patience=a.patience, max_updates=a.max_updates, max_epochs=a.max_epochs, seed=a.seed,
                       freeze=tuple(a.freeze or ()))


def cmd_train(a):
    data, dev = load_corpus(a.train), load_corpus(a.dev)
    if a.init:
        model, _ = load_checkpoint(a.init)
    else:
        cfg = ModelConfig(layers=a.layers, dim=a.dim, heads=a.heads, ff_dim=a.ff_dim, dropout=a.dropout,
                          tied_embeddings=a.tied)
        model = init_model(load_vocab(a.src_vocab), load_vocab(a.tgt_vocab), cfg, seed=a.seed)
    noise = None
    if a.p_ins or a.p_del or a.d_per:
        noise = NoiseSpec(a.p_ins, a.v_ins, a.p_del, a.d_per, a.seed)
    res = train(model, data, dev, _train_config(a), noise=noise)
    save_checkpoint(model, res.state, a.output)
    for entry in res.log:
        print(" ".join(f"{k}={v}" for k, v in entry.items()))


def cmd_transfer(a):
    parent, _ = load_checkpoint(a.parent)
    mapped = load_embeddings(a.mapped) if a.mapped else None
    save_checkpoint(transfer_init(parent, mapped, load_vocab(a.child_vocab), seed=a.seed), None, a.output)


def cmd_translate(a):
    model, _ = load_checkpoint(a.model)
    _write_lines(a.output, translate_corpus(model, read_lines(a.input), beam=a.beam, length_norm=a.length_norm))


def cmd_score_bleu(a):
    print(bleu(read_lines(a.hyp), read_lines(a.ref), smooth=a.smooth))


def cmd_run_experiment(a):
    report = run_experiment(load_config(a.config))
    sys.stdout.write(report.table())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xltransfer", description="Cross-lingual NMT transfer toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("learn-bpe", help="learn BPE merges from tokenized text")
    s.add_argument("--input", required=True)
    s.add_argument("--merges", type=int, required=True)
    s.add_argument("--min-count", type=int, default=2)
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_learn_bpe)

    s = sub.add_parser("apply-bpe", help="segment text with a merges file")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_apply_bpe)

    s = sub.add_parser("build-vocab", help="frequency-ordered vocabulary file")
    s.add_argument("--input", nargs="+", required=True)
    s.add_argument("--max-size", type=int)
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_build_vocab)

    s = sub.add_parser("train-embed", help="skip-gram embeddings on monolingual text")
    s.add_argument("--input", required=True)
    s.add_argument("--vocab")
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--window", type=int, default=5)
    s.add_argument("--negatives", type=int, default=5)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_train_embed)

    s = sub.add_parser("map-embed", help="map child embeddings into a parent embedding space")
    s.add_argument("--child", required=True, help=".vec file")
    s.add_argument("--parent", required=True, help=".vec file or NMTX checkpoint")
    s.add_argument("--seed-mode", default="identical", choices=["digits", "punct", "identical"])
    s.add_argument("--constraint", default="orthogonal", choices=["orthogonal", "unconstrained"])
    s.add_argument("--iterations", type=int, default=10)
    s.add_argument("--metric", default="csls", choices=["csls", "cosine"])
    s.add_argument("--max-rank", type=int, default=10000)
    s.add_argument("--csls-k", type=int, default=10)
    s.add_argument("--seed-file", help="seed dictionary file (child<TAB>parent); overrides --seed-mode")
    s.add_argument("--dictionary", help="write the final induced dictionary here")
    s.add_argument("--map", help="write the fitted map here")
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_map_embed)

    s = sub.add_parser("add-noise", help="insert, delete and locally permute tokens")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--vocab", help="insertion candidates come from its most frequent tokens")
    s.add_argument("--p-ins", type=float, default=0.1)
    s.add_argument("--v-ins", type=int, default=50)
    s.add_argument("--p-del", type=float, default=0.1)
    s.add_argument("--d-per", type=float, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--epoch", type=int, default=0)
    s.set_defaults(fn=cmd_add_noise)

    s = sub.add_parser("make-synth", help="parent pairs with sources filtered to the child vocabulary")
    s.add_argument("--parent", required=True, help="corpus prefix")
    s.add_argument("--child-vocab", required=True)
    s.add_argument("--sample-size", type=int)
    s.add_argument("--max-unk-fraction", type=float)
    s.add_argument("--real", help="child corpus prefix to mix in")
    s.add_argument("--ratio", type=float, default=0.5, help="real:synthetic ratio when mixing")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True, help="corpus prefix")
    s.set_defaults(fn=cmd_make_synth)

    s = sub.add_parser("make-cipher", help="rename source tokens into a toy child language")
    s.add_argument("--input", required=True, help="corpus prefix")
    s.add_argument("--reorder", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True, help="corpus prefix; the table goes to PREFIX.cipher")
    s.set_defaults(fn=cmd_make_cipher)

    s = sub.add_parser("train", help="train or continue training an NMT model")
    s.add_argument("--train", required=True, help="corpus prefix")
    s.add_argument("--dev", required=True, help="corpus prefix")
    s.add_argument("--src-vocab")
    s.add_argument("--tgt-vocab")
    s.add_argument("--init", help="start from this checkpoint")
    s.add_argument("--layers", type=int, default=2)
    s.add_argument("--dim", type=int, default=64)
    s.add_argument("--heads", type=int, default=4)
    s.add_argument("--ff-dim", type=int, default=256)
    s.add_argument("--dropout", type=float, default=0.3)
    s.add_argument("--tied", action="store_true")
    s.add_argument("--batch-words", type=int, default=1024)
    s.add_argument("--lr", type=float, default=3e-4)
    s.add_argument("--warmup", type=int, default=400)
    s.add_argument("--checkpoint-freq", type=int, default=200)
    s.add_argument("--patience", type=int, default=12)
    s.add_argument("--max-updates", type=int)
    s.add_argument("--max-epochs", type=int)
    s.add_argument("--freeze", nargs="*", help="component names or globs, e.g. encoder.*")
    s.add_argument("--p-ins", type=float, default=0.0)
    s.add_argument("--v-ins", type=int, default=50)
    s.add_argument("--p-del", type=float, default=0.0)
    s.add_argument("--d-per", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("transfer", help="swap in a child source vocabulary and embedding")
    s.add_argument("--parent", required=True)
    s.add_argument("--child-vocab", required=True)
    s.add_argument("--mapped", help="mapped child .vec; omit for plain transfer")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(fn=cmd_transfer)

    s = sub.add_parser("translate", help="beam-search decode a tokenized file")
    s.add_argument("--model", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--beam", type=int, default=5)
    s.add_argument("--length-norm", type=float, default=1.0)
    s.set_defaults(fn=cmd_translate)

    s = sub.add_parser("score-bleu", help="corpus BLEU of tokenized hypotheses")
    s.add_argument("--hyp", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--smooth", action="store_true")
    s.set_defaults(fn=cmd_score_bleu)

    s = sub.add_parser("run-experiment", help="run a YAML experiment config end to end")
    s.add_argument("config")
    s.set_defaults(fn=cmd_run_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.INFO if os.environ.get("XLTRANSFER_VERBOSE") else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        args.fn(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
