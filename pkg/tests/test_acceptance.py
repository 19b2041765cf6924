"""Acceptance suite: one test per criterion.

Run with ``pytest tests/test_acceptance.py``; a summary line per criterion is
printed at the end of the session. Criteria 4 and 5 train the full cipher
transfer experiment from ``configs/cipher_transfer.yaml`` and take a while.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch
import yaml

from xltransfer import crossmap as cm
from xltransfer.embedding import EmbeddingMatrix, train_skipgram
from xltransfer.evaluate import bleu
from xltransfer.nmt import COMPONENTS, ModelConfig, TrainConfig, gradient_check, init_model, make_batch, train
from xltransfer.noise import NoiseSpec, inject_noise, sentence_rng
from xltransfer.pipeline.experiment import config_from_dict, run_experiment
from xltransfer.pipeline.toydata import ToyLanguage, cipher_sentences, make_cipher_table
from xltransfer.synth import SYNTHETIC, load_corpus
from xltransfer.vocab import UNK, Vocabulary, load_vocab

ROOT = Path(__file__).resolve().parents[1]
CONFIG = ROOT / "configs" / "cipher_transfer.yaml"


def vocab_of(n, prefix="w"):
    return Vocabulary(["<unk>", "<s>", "</s>", "<pad>"] + [f"{prefix}{i}" for i in range(n - 4)])


def random_corpus(n, src_vocab, tgt_vocab, seed=0):
    rng = np.random.default_rng(seed)
    sc, tc = src_vocab.content_tokens(), tgt_vocab.content_tokens()
    src = [[sc[i] for i in rng.integers(len(sc), size=rng.integers(3, 9))] for _ in range(n)]
    tgt = [[tc[i] for i in rng.integers(len(tc), size=rng.integers(3, 9))] for _ in range(n)]
    return src, tgt


@pytest.mark.criterion(1, "gradient check on 1-layer D=8 vocab-12 model")
def test_gradient_correctness(record_property):
    start = time.perf_counter()
    sv, tv = vocab_of(12), vocab_of(12, "t")
    m = init_model(sv, tv, ModelConfig(layers=1, dim=8, heads=2, ff_dim=16, dropout=0.0), seed=0)
    src, tgt = random_corpus(4, sv, tv)
    report = gradient_check(m, make_batch(m, src, tgt), epsilon=1e-5, tolerance=1e-3, n_coords=200)
    elapsed = time.perf_counter() - start
    record_property("max_rel_error", f"{report['max_rel_error']:.2e}")
    record_property("coords", len(report["coordinates"]))
    record_property("seconds", f"{elapsed:.1f}")
    assert len(report["coordinates"]) >= 200
    assert set(report["components"]) == set(COMPONENTS)
    assert report["max_rel_error"] < 1e-3
    assert elapsed < 60


@pytest.mark.criterion(2, "Procrustes recovers a random rotation")
def test_procrustes_recovery(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 16))
    q, _ = np.linalg.qr(rng.normal(size=(16, 16)))
    child = EmbeddingMatrix([f"c{i}" for i in range(500)], x)
    parent = EmbeddingMatrix([f"p{i}" for i in range(500)], x @ q.T)
    w = cm.fit_mapping(child, parent, cm.SeedDictionary([(f"c{i}", f"p{i}") for i in range(50)]))
    held = [f"c{i}" for i in range(50, 500)]
    pred = cm.translate_tokens(w, child, parent, held)
    precision = cm.dictionary_precision(pred.items(), {f"c{i}": f"p{i}" for i in range(500)}, set(held))
    elapsed = time.perf_counter() - start
    err = np.linalg.norm(w.w - q) / np.linalg.norm(q)
    record_property("rel_error", f"{err:.2e}")
    record_property("heldout_p@1", precision)
    assert err < 1e-6
    assert precision == 1.0
    assert elapsed < 10


@pytest.mark.criterion(3, "cipher-task dictionary induction from a punctuation seed")
def test_cipher_dictionary_induction(record_property):
    start = time.perf_counter()
    lang = ToyLanguage(seed=0)
    text = lang.monolingual(10000, seed=1)
    table = make_cipher_table(lang.src_words, 11)
    parent = train_skipgram(text, dim=64, epochs=5, seed=1)
    child = train_skipgram(cipher_sentences(text, table), dim=64, epochs=5, seed=2)
    seed = cm.induce_seed_dictionary(child, parent, "punct")
    w0, _ = cm.initial_mapping(child, parent, seed, max_rank=2000)
    w, _ = cm.refine_mapping(child, parent, w0, iterations=10, metric="csls", max_rank=2000, seed_dict=seed)
    # only renamed words count; shared digits, punctuation and names are excluded
    gold = {v: k for k, v in table.items()}
    top = [t for t in child.tokens[4:] if t in gold][:500]
    pred = cm.translate_tokens(w, child, parent, top, metric="csls")
    precision = cm.dictionary_precision(pred.items(), gold, set(top))
    elapsed = time.perf_counter() - start
    record_property("seed_pairs", len(seed))
    record_property("p@1_top500", f"{precision:.3f}")
    record_property("seconds", f"{elapsed:.0f}")
    assert len(top) == 500
    assert all(a == b and not a.isalnum() for a, b in seed)
    assert precision >= 0.80
    assert elapsed < 300


@pytest.fixture(scope="module")
def transfer_workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cipher_transfer")


def experiment_config(workdir, systems):
    raw = yaml.safe_load(CONFIG.read_text())
    raw["workdir"] = str(workdir)
    raw["systems"] = systems
    return config_from_dict(raw)


@pytest.mark.criterion(4, "transfer ordering crossmap >= transfer >= baseline, crossmap - baseline >= 5")
def test_transfer_gain(transfer_workdir, record_property):
    torch.set_num_threads(1)
    start = time.perf_counter()
    report = run_experiment(experiment_config(transfer_workdir, ["baseline", "transfer", "crossmap"]))
    elapsed = time.perf_counter() - start
    base, plain, cross = report.bleu("baseline"), report.bleu("transfer"), report.bleu("crossmap")
    print(report.table())
    record_property("bleu", f"{base:.2f}/{plain:.2f}/{cross:.2f}")
    record_property("minutes", f"{elapsed / 60:.1f}")
    test_size = len((transfer_workdir / "child.test.tgt").read_text().splitlines())
    assert test_size == 200
    assert len(load_corpus(transfer_workdir / "child.train")) == 200
    assert cross >= plain >= base
    assert cross - base >= 5
    assert elapsed < 30 * 60


@pytest.mark.criterion(5, "parent-derived synthetic data does not reduce BLEU; closure")
def test_synthetic_data_gain(transfer_workdir, record_property):
    torch.set_num_threads(1)
    report = run_experiment(experiment_config(transfer_workdir, ["crossmap", "crossmap_synthetic"]))
    cross, synth = report.bleu("crossmap"), report.bleu("crossmap_synthetic")
    print(report.table())
    record_property("bleu", f"{cross:.2f} -> {synth:.2f}")
    mixed = load_corpus(transfer_workdir / "child.mixed")
    vocab = set(load_vocab(transfer_workdir / "child.src.vocab").tokens) | {UNK}
    synthetic = [s for s, p in zip(mixed.src, mixed.provenance) if p == SYNTHETIC]
    real = len(mixed) - len(synthetic)
    record_property("real:synthetic", f"{real}:{len(synthetic)}")
    assert synthetic and 2 * real == len(synthetic)
    assert all(t in vocab for s in synthetic for t in s)
    assert synth >= cross


@pytest.mark.criterion(6, "noise operator statistics")
def test_noise_statistics(record_property):
    spec = NoiseSpec(p_ins=0.1, v_ins=50, p_del=0.1, d_per=3, seed=7)
    filler = [f"f{i}" for i in range(200)]
    allowed = set(filler[:50])
    n, length = 10000, 20
    deleted = inserted = slots = 0
    worst = 0
    for i in range(n):
        sent = [f"s{j}" for j in range(length)]
        out = inject_noise(sent, spec, filler, sentence_rng(spec, 0, i))
        kept = [t for t in out if t.startswith("s")]
        fill = [t for t in out if not t.startswith("s")]
        assert set(fill) <= allowed
        assert len(set(kept)) == len(kept)
        deleted += length - len(kept)
        inserted += len(fill)
        slots += len(kept) + 1
        # displacement relative to the order of the surviving tokens
        order = sorted(kept, key=lambda t: int(t[1:]))
        rank = {t: k for k, t in enumerate(order)}
        worst = max([worst] + [abs(pos - rank[t]) for pos, t in enumerate(kept)])
    del_mean, del_sd = n * length * 0.1, np.sqrt(n * length * 0.1 * 0.9)
    ins_mean, ins_sd = slots * 0.1, np.sqrt(slots * 0.1 * 0.9)
    record_property("deleted_z", f"{(deleted - del_mean) / del_sd:+.2f}")
    record_property("inserted_z", f"{(inserted - ins_mean) / ins_sd:+.2f}")
    record_property("max_displacement", worst)
    assert abs(deleted - del_mean) <= 3 * del_sd
    assert abs(inserted - ins_mean) <= 3 * ins_sd
    assert worst <= 3


@pytest.mark.criterion(7, "early stopping returns the argmin checkpoint")
def test_early_stopping_contract(record_property):
    sv, tv = vocab_of(12), vocab_of(12, "t")
    m = init_model(sv, tv, ModelConfig(layers=1, dim=8, heads=2, ff_dim=16, dropout=0.0), seed=0)
    src, tgt = random_corpus(20, sv, tv)
    from xltransfer.synth import ParallelCorpus
    data = ParallelCorpus(src, tgt)
    # argmin at checkpoint 4; the lower value at checkpoint 8 must never be reached
    sequence = [9.0, 7.0, 5.0, 4.0, 4.5, 4.2, 6.0, 1.0, 1.0]
    scores = iter(sequence)
    snaps = []
    patience = 3
    res = train(m, data, data, TrainConfig(patience=patience, checkpoint_freq=2, max_updates=1000, lr=1e-2),
                evaluate=lambda _: next(scores),
                on_checkpoint=lambda mm, e: snaps.append({k: v.detach().clone() for k, v in mm.named_parameters()}))
    seen = [e["checkpoint"] for e in res.log]
    record_property("checkpoints", seen[-1])
    record_property("best", res.best_checkpoint)
    assert res.best_checkpoint == 4
    assert seen == list(range(1, 4 + patience + 1))
    assert res.stopped_early
    for name, p in m.named_parameters():
        assert torch.equal(p, snaps[3][name]), name


@pytest.mark.criterion(8, "BLEU oracle")
def test_bleu_oracle(record_property):
    from test_evaluate import FIXTURE_BLEU, fifty_sentence_fixture
    refs = [["a", "b", "c", "d"], ["e", "f", "g", "h", "i"]]
    same = bleu(refs, refs)
    assert f"{same.bleu:.2f}" == "100.00"
    # 9 hypothesis tokens against 12 reference tokens: BP = exp(1 - 12/9) = 0.716531...
    hyps = [["a", "b", "c"], ["d", "e", "f"], ["g", "h", "i"]]
    short_refs = [["a", "b", "c", "x"], ["d", "e", "f", "y"], ["g", "h", "i", "z"]]
    assert round(bleu(hyps, short_refs).bp, 4) == 0.7165
    h50, r50 = fifty_sentence_fixture()
    score = bleu(h50, r50).bleu
    record_property("fixture50", f"{score:.4f}")
    assert abs(score - FIXTURE_BLEU) < 0.01


@pytest.mark.criterion(9, "freezing target_embedding + decoder.self_attention")
def test_freezing_partition(record_property):
    sv, tv = vocab_of(12), vocab_of(12, "t")
    m = init_model(sv, tv, ModelConfig(layers=1, dim=8, heads=2, ff_dim=16, dropout=0.0), seed=1)
    before = {k: v.detach().clone() for k, v in m.named_parameters()}
    from xltransfer.synth import ParallelCorpus
    src, tgt = random_corpus(40, sv, tv, seed=1)
    data = ParallelCorpus(src, tgt)
    frozen = ("target_embedding", "decoder.self_attention")
    train(m, data, data, TrainConfig(freeze=frozen, lr=1e-2, warmup=1, checkpoint_freq=5, max_updates=5))
    same, changed = [], []
    for name, p in m.named_parameters():
        (same if torch.equal(p, before[name]) else changed).append(name)
    record_property("unchanged", len(same))
    record_property("changed", len(changed))
    is_frozen = lambda n: n.startswith("target_embedding") or (n.startswith("decoder.") and ".self_attention." in n)
    assert any(is_frozen(n) for n in same)
    assert all(is_frozen(n) for n in same)
    assert not any(is_frozen(n) for n in changed)


SMALL_EXPERIMENT = {
    "name": "determinism",
    "seed": 5,
    "data": {"language": {"n_concepts": 80}, "parent_train": 400, "parent_dev": 20, "child_train": 40,
             "child_dev": 10, "child_test": 20, "child_mono": 400},
    "embedding": {"epochs": 1},
    "crossmap": {"iterations": 2, "max_rank": 300},
    "synthetic": {"sample_size": 80},
    "model": {"layers": 1, "dim": 16, "heads": 2, "ff_dim": 32, "dropout": 0.1},
    "parent_training": {"max_updates": 20, "checkpoint_freq": 10, "batch_words": 256, "warmup": 5},
    "child_training": {"max_updates": 10, "checkpoint_freq": 5, "batch_words": 256, "warmup": 3},
    "decode": {"beam": 2},
}


@pytest.mark.criterion(10, "run-experiment is byte-identical across runs")
def test_determinism(tmp_path, record_property):
    reports = []
    for run in ("a", "b"):
        cfg = dict(SMALL_EXPERIMENT, workdir=str(tmp_path / run))
        path = tmp_path / f"{run}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        subprocess.run([sys.executable, "-m", "xltransfer.pipeline.cli", "run-experiment", str(path)],
                       check=True, capture_output=True)
        reports.append((tmp_path / run / "report.txt").read_bytes())
    rows = reports[0].decode().splitlines()[3:]
    record_property("rows", len(rows))
    assert len(rows) == 5
    assert reports[0] == reports[1]
