"""Experiment configs and the staged transfer pipeline.

A config is one YAML file. Stages write their artifacts under ``workdir``
together with a stamp holding a fingerprint of every config block the stage
depends on (including upstream stamps). A stage whose stamp matches is
skipped, so deleting an artifact re-runs exactly the stages downstream of it.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import torch
import yaml

from .. import crossmap as cm
from ..embedding import EmbeddingMatrix, extract_source_embedding, load_embeddings, save_embeddings, train_skipgram
from ..evaluate import bleu
from ..noise import NoiseSpec
from ..nmt import ModelConfig, TrainConfig, init_model, load_checkpoint, perplexity, save_checkpoint, train
from ..nmt.decode import translate_corpus
from ..nmt.transfer import transfer_init
from ..synth import ParallelCorpus, load_corpus, make_parent_synthetic, mix_corpora, save_corpus
from ..vocab import (BpeModel, apply_bpe, build_vocab, learn_bpe, load_bpe, load_vocab,
                     remove_bpe, save_bpe, save_vocab)
from .toydata import ToyLanguage, cipher_sentences, make_cipher_table, make_cipher_task

log = logging.getLogger(__name__)

SYSTEMS = {
    "baseline": "Baseline",
    "transfer": "Transfer",
    "crossmap": "+ Cross-lingual word embedding",
    "noise": "+ Artificial noises",
    "synthetic": "+ Synthetic data",
    "crossmap_synthetic": "Cross-lingual embedding + synthetic data (clean parent)",
}


class StageError(RuntimeError):
    def __init__(self, stage: str, path, cause: Exception):
        super().__init__(f"stage '{stage}' failed (artifact {path}): {cause}")
        self.stage = stage
        self.path = path


@dataclass
class DataConfig:
    language: dict = field(default_factory=dict)
    parent_train: int = 10000
    parent_dev: int = 200
    child_train: int = 200
    child_dev: int = 100
    child_test: int = 200
    child_mono: int = 10000
    cipher_seed: int = 7
    reorder: int = 0


@dataclass
class BpeConfig:
    source_merges: int | None = None
    target_merges: int | None = None
    baseline_merges: int | None = None


@dataclass
class EmbedConfig:
    window: int = 5
    negatives: int = 5
    epochs: int = 5


@dataclass
class CrossmapConfig:
    seed_mode: str = "identical"
    iterations: int = 10
    metric: str = "csls"
    max_rank: int = 10000
    csls_k: int = 10
    constraint: str = "orthogonal"


@dataclass
class SynthConfig:
    sample_size: int = 400
    real_ratio: float = 0.5
    max_unk_fraction: float | None = None


@dataclass
class DecodeConfig:
    beam: int = 5
    length_norm: float = 1.0


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    workdir: str = "runs/experiment"
    seed: int = 1
    systems: list = field(default_factory=lambda: ["baseline", "transfer", "crossmap", "noise", "synthetic"])
    data: DataConfig = field(default_factory=DataConfig)
    bpe: BpeConfig = field(default_factory=BpeConfig)
    embedding: EmbedConfig = field(default_factory=EmbedConfig)
    crossmap: CrossmapConfig = field(default_factory=CrossmapConfig)
    noise: dict = field(default_factory=lambda: {"p_ins": 0.1, "v_ins": 50, "p_del": 0.1, "d_per": 3})
    synthetic: SynthConfig = field(default_factory=SynthConfig)
    model: dict = field(default_factory=dict)
    baseline_model: dict = field(default_factory=lambda: {"tied_embeddings": True, "embed_dropout": 0.1})
    parent_training: dict = field(default_factory=dict)
    child_training: dict = field(default_factory=dict)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def validate(self):
        unknown = [s for s in self.systems if s not in SYSTEMS]
        if unknown:
            raise ValueError(f"unknown systems {unknown}; choose from {sorted(SYSTEMS)}")
        if len(set(self.systems)) != len(self.systems):
            raise ValueError("duplicate system in config")
        ModelConfig(**self.model).validate()
        TrainConfig(**self.parent_training)
        TrainConfig(**self.child_training)
        NoiseSpec(**self.noise)
        return self


_NESTED = {"data": DataConfig, "bpe": BpeConfig, "embedding": EmbedConfig, "crossmap": CrossmapConfig,
           "synthetic": SynthConfig, "decode": DecodeConfig}


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {f.name for f in fields(ExperimentConfig)}
    extra = set(raw) - known
    if extra:
        raise ValueError(f"unknown config keys: {sorted(extra)}")
    for key, cls in _NESTED.items():
        if key in raw:
            sub = raw[key] or {}
            bad = set(sub) - {f.name for f in fields(cls)}
            if bad:
                raise ValueError(f"unknown keys in '{key}': {sorted(bad)}")
            raw[key] = cls(**sub)
    return ExperimentConfig(**raw).validate()


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        cfg = config_from_dict(yaml.safe_load(f))
    return cfg


def _fingerprint(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


class Runner:
    """Executes the stages of one experiment with artifact caching."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.workdir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.stamps: dict[str, str] = {}
        self.executed: list[str] = []
        self.records: dict[str, dict] = {}

    # -- caching helpers -------------------------------------------------
    def stage(self, name: str, outputs: list[str], deps: list[str], conf: Any, fn):
        stamp = _fingerprint(name, conf, [self.stamps[d] for d in deps])
        stamp_path = self.root / f"{name}.stamp"
        paths = [self.root / o for o in outputs]
        fresh = (stamp_path.exists() and stamp_path.read_text() == stamp and all(p.exists() for p in paths)
                 and not any(d in self.executed for d in deps))
        if not fresh:
            log.info("running stage %s", name)
            try:
                fn()
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001
                raise StageError(name, paths[0] if paths else self.root, exc) from exc
            stamp_path.write_text(stamp)
            self.executed.append(name)
        self.stamps[name] = stamp
        return paths

    def record(self, stage: str, **values):
        self.records[stage] = values

    # -- configuration helpers ------------------------------------------
    def model_cfg(self, **over) -> ModelConfig:
        return ModelConfig(**{**self.cfg.model, **over})

    def train_cfg(self, which: str, seed_offset: int, **over) -> TrainConfig:
        base = self.cfg.parent_training if which == "parent" else self.cfg.child_training
        d = {"seed": self.cfg.seed * 100 + seed_offset, **base, **over}
        return TrainConfig(**d)

    # -- stages -----------------------------------------------------------
    def data(self):
        c = self.cfg.data

        def build():
            lang = ToyLanguage(**{"seed": self.cfg.seed, **c.language})
            parent_train = lang.parallel(c.parent_train, seed=1)
            parent_dev = lang.parallel(c.parent_dev, seed=2)
            table = make_cipher_table(lang.src_words, c.cipher_seed)
            splits = {}
            for name, n, s in (("child.train", c.child_train, 3), ("child.dev", c.child_dev, 4),
                               ("child.test", c.child_test, 5)):
                splits[name], _ = make_cipher_task(lang.parallel(n, seed=s), table=dict(table),
                                                   reorder=c.reorder or None, reorder_seed=s)
            mono = cipher_sentences(lang.monolingual(c.child_mono, seed=6), table)
            save_corpus(parent_train, self.root / "parent.train")
            save_corpus(parent_dev, self.root / "parent.dev")
            for name, corpus in splits.items():
                save_corpus(corpus, self.root / name)
            _write_lines(self.root / "child.mono", mono)
            with open(self.root / "cipher.tsv", "w", encoding="utf-8") as f:
                for k in sorted(table):
                    f.write(f"{table[k]}\t{k}\n")

        outs = ["parent.train.src", "parent.dev.src", "child.train.src", "child.dev.src",
                "child.test.src", "child.mono", "cipher.tsv"]
        self.stage("data", outs, [], [asdict(c), self.cfg.seed], build)

    def segmentation(self):
        b = self.cfg.bpe

        def build():
            parent = load_corpus(self.root / "parent.train")
            mono = _read_lines(self.root / "child.mono")
            child = load_corpus(self.root / "child.train")
            src_parent = learn_bpe(parent.src, b.source_merges or 0)
            src_child = learn_bpe(mono + child.src, b.source_merges or 0)
            tgt = learn_bpe(parent.tgt, b.target_merges or 0)
            joint = learn_bpe(child.src + child.tgt, b.baseline_merges or 0)
            for name, model, on in (("parent.src.bpe", src_parent, b.source_merges),
                                    ("child.src.bpe", src_child, b.source_merges),
                                    ("tgt.bpe", tgt, b.target_merges),
                                    ("joint.bpe", joint, b.baseline_merges)):
                save_bpe(model if on else BpeModel(()), self.root / name)
            seg_parent = self.segment(parent, "parent.src.bpe", "tgt.bpe")
            seg_mono = [self._apply("child.src.bpe", s) for s in mono]
            seg_child = self.segment(child, "child.src.bpe", "tgt.bpe")
            save_vocab(build_vocab(seg_parent.src), self.root / "parent.src.vocab")
            save_vocab(build_vocab(seg_parent.tgt), self.root / "tgt.vocab")
            save_vocab(build_vocab(seg_mono + seg_child.src), self.root / "child.src.vocab")
            joint_seg = self.segment(child, "joint.bpe", "joint.bpe")
            save_vocab(build_vocab(joint_seg.src + joint_seg.tgt), self.root / "joint.vocab")

        outs = ["parent.src.bpe", "child.src.bpe", "tgt.bpe", "joint.bpe", "parent.src.vocab",
                "tgt.vocab", "child.src.vocab", "joint.vocab"]
        self.stage("bpe", outs, ["data"], asdict(b), build)

    def _apply(self, bpe_name: str, sentence):
        cache = getattr(self, "_bpe_cache", None)
        if cache is None:
            cache = self._bpe_cache = {}
        if bpe_name not in cache:
            model = load_bpe(self.root / bpe_name)
            cache[bpe_name] = (model, {})
        model, memo = cache[bpe_name]
        if not model.merges:
            return list(sentence)
        return apply_bpe(model, sentence, memo)

    def segment(self, corpus: ParallelCorpus, src_bpe: str, tgt_bpe: str) -> ParallelCorpus:
        return ParallelCorpus([self._apply(src_bpe, s) for s in corpus.src],
                              [self._apply(tgt_bpe, t) for t in corpus.tgt], list(corpus.provenance))

    def parent(self, noisy: bool):
        name = "parent-noise" if noisy else "parent"
        ckpt = f"{name}.ckpt"

        def build():
            train_data = self.segment(load_corpus(self.root / "parent.train"), "parent.src.bpe", "tgt.bpe")
            dev = self.segment(load_corpus(self.root / "parent.dev"), "parent.src.bpe", "tgt.bpe")
            sv, tv = load_vocab(self.root / "parent.src.vocab"), load_vocab(self.root / "tgt.vocab")
            model = init_model(sv, tv, self.model_cfg(), seed=self.cfg.seed)
            noise = NoiseSpec(**{**self.cfg.noise, "seed": self.cfg.seed}) if noisy else None
            res = train(model, train_data, dev, self.train_cfg("parent", 1), noise=noise)
            save_checkpoint(model, None, self.root / ckpt)
            _write_json(self.root / f"{name}.log.json", res.log)

        conf = [self.cfg.model, self.cfg.parent_training, self.cfg.noise if noisy else None]
        self.stage(name, [ckpt], ["bpe"], conf, build)
        model, _ = load_checkpoint(self.root / ckpt)
        dev = self.segment(load_corpus(self.root / "parent.dev"), "parent.src.bpe", "tgt.bpe")
        self.record(name, dev_perplexity=round(perplexity(model, dev), 4))
        return model

    def child_embedding(self):
        e = self.cfg.embedding

        def build():
            mono = [self._apply("child.src.bpe", s) for s in _read_lines(self.root / "child.mono")]
            vocab = load_vocab(self.root / "child.src.vocab")
            emb = train_skipgram(mono, dim=self.model_cfg().dim, window=e.window, negatives=e.negatives,
                                 epochs=e.epochs, seed=self.cfg.seed, vocab=vocab)
            save_embeddings(emb, self.root / "child.mono.vec")
            np.save(self.root / "child.mono.trained.npy", emb.trained)

        self.stage("embed", ["child.mono.vec", "child.mono.trained.npy"], ["bpe"],
                   [asdict(e), self.cfg.model.get("dim")], build)
        emb = load_embeddings(self.root / "child.mono.vec")
        emb.trained = np.load(self.root / "child.mono.trained.npy")
        return emb

    def mapping(self, parent_model, parent_name: str, child_emb: EmbeddingMatrix) -> EmbeddingMatrix:
        c = self.cfg.crossmap
        out = f"{parent_name}.mapped.vec"

        def build():
            parent_emb = extract_source_embedding(parent_model)
            seed = cm.induce_seed_dictionary(child_emb, parent_emb, c.seed_mode)
            w0, _ = cm.initial_mapping(child_emb, parent_emb, seed, c.constraint, c.max_rank, c.metric, c.csls_k)
            w, induced = cm.refine_mapping(child_emb, parent_emb, w0, c.iterations, c.metric, c.max_rank,
                                           c.csls_k, seed_dict=seed)
            mapped = cm.to_parent_space(w, child_emb, parent_emb)
            save_embeddings(mapped, self.root / out)
            gold = _read_table(self.root / "cipher.tsv")
            top = [t for t in child_emb.tokens[4:] if t in gold][:500]
            pred = cm.translate_tokens(w, child_emb, parent_emb, top, metric=c.metric, csls_k=c.csls_k)
            _write_json(self.root / f"{parent_name}.map.json",
                        {"seed_pairs": len(seed), "induced_pairs": len(induced),
                         "precision_top500": round(cm.dictionary_precision(pred.items(), gold, set(top)), 4)})

        self.stage(f"map-{parent_name}", [out], [parent_name, "embed"], asdict(c), build)
        info = json.loads((self.root / f"{parent_name}.map.json").read_text())
        self.record(f"map-{parent_name}", **info)
        mapped = load_embeddings(self.root / out)
        mapped.trained = child_emb.trained.copy()
        return mapped

    def child_data(self, split: str) -> ParallelCorpus:
        return self.segment(load_corpus(self.root / split), "child.src.bpe", "tgt.bpe")

    def synthetic_data(self, parent_name: str):
        s = self.cfg.synthetic

        def build():
            parent = self.segment(load_corpus(self.root / "parent.train"), "parent.src.bpe", "tgt.bpe")
            child_vocab = load_vocab(self.root / "child.src.vocab")
            synth = make_parent_synthetic(parent, child_vocab, s.sample_size, seed=self.cfg.seed,
                                          max_unk_fraction=s.max_unk_fraction)
            mixed = mix_corpora(self.child_data("child.train"), synth, s.real_ratio, seed=self.cfg.seed)
            save_corpus(mixed, self.root / "child.mixed")

        self.stage("synthetic", ["child.mixed.src"], ["bpe"], asdict(s), build)
        return load_corpus(self.root / "child.mixed")

    def system(self, key: str, parents: dict, child_emb):
        ckpt = f"system.{key}.ckpt"
        deps, conf = ["bpe"], [key, self.cfg.child_training, self.cfg.model]
        if key == "baseline":
            conf.append(self.cfg.baseline_model)
        parent_name = {"transfer": "parent", "crossmap": "parent", "crossmap_synthetic": "parent",
                       "noise": "parent-noise", "synthetic": "parent-noise"}.get(key)
        uses_map = key in ("crossmap", "noise", "synthetic", "crossmap_synthetic")
        uses_synth = key in ("synthetic", "crossmap_synthetic")
        if parent_name:
            deps.append(parent_name)
        mapped = train_data = None
        if uses_map:
            mapped = self.mapping(parents[parent_name], parent_name, child_emb)
            deps.append(f"map-{parent_name}")
        if uses_synth:
            train_data = self.synthetic_data(parent_name)
            deps.append("synthetic")

        def build():
            nonlocal train_data
            dev = self.child_data("child.dev")
            if key == "baseline":
                joint = load_vocab(self.root / "joint.vocab")
                train_data = self.segment(load_corpus(self.root / "child.train"), "joint.bpe", "joint.bpe")
                dev = self.segment(load_corpus(self.root / "child.dev"), "joint.bpe", "joint.bpe")
                model = init_model(joint, joint, self.model_cfg(**self.cfg.baseline_model), seed=self.cfg.seed)
            else:
                model = transfer_init(parents[parent_name], mapped, load_vocab(self.root / "child.src.vocab"),
                                      seed=self.cfg.seed)
                if train_data is None:
                    train_data = self.child_data("child.train")
            res = train(model, train_data, dev, self.train_cfg("child", 2))
            save_checkpoint(model, None, self.root / ckpt)
            _write_json(self.root / f"system.{key}.log.json", res.log)

        self.stage(f"system-{key}", [ckpt], deps, conf, build)
        model, _ = load_checkpoint(self.root / ckpt)
        return model

    def evaluate(self, key: str, model) -> float:
        out = f"system.{key}.hyp"
        d = self.cfg.decode

        def build():
            test = load_corpus(self.root / "child.test")
            if key == "baseline":
                src = self.segment(test, "joint.bpe", "joint.bpe").src
            else:
                src = self.child_data("child.test").src
            hyps = translate_corpus(model, src, beam=d.beam, length_norm=d.length_norm)
            _write_lines(self.root / out, [remove_bpe(h) for h in hyps])

        self.stage(f"eval-{key}", [out], [f"system-{key}"], asdict(d), build)
        hyps = _read_lines(self.root / out)
        refs = load_corpus(self.root / "child.test").tgt
        report = bleu(hyps, refs)
        self.record(f"eval-{key}", bleu=round(report.bleu, 2), bp=round(report.bp, 4),
                    hyp_len=report.hyp_len, ref_len=report.ref_len)
        return report.bleu

    def run(self) -> "ExperimentReport":
        torch.set_num_threads(1)
        cfg = self.cfg
        self.data()
        self.segmentation()
        parents = {}
        need = set(cfg.systems)
        if need & {"transfer", "crossmap", "crossmap_synthetic"}:
            parents["parent"] = self.parent(noisy=False)
        if need & {"noise", "synthetic"}:
            parents["parent-noise"] = self.parent(noisy=True)
        child_emb = None
        if need & {"crossmap", "noise", "synthetic", "crossmap_synthetic"}:
            child_emb = self.child_embedding()
        rows = []
        for key in cfg.systems:
            model = self.system(key, parents, child_emb)
            rows.append((key, self.evaluate(key, model)))
        report = ExperimentReport(cfg.name, rows, list(self.records.items()))
        (self.root / "report.txt").write_text(report.table(), encoding="utf-8")
        (self.root / "stages.log").write_text(report.key_values(), encoding="utf-8")
        return report


@dataclass
class ExperimentReport:
    name: str
    rows: list
    records: list = field(default_factory=list)

    def bleu(self, key: str) -> float:
        return dict(self.rows)[key]

    def table(self) -> str:
        width = max(len(SYSTEMS[k]) for k, _ in self.rows)
        lines = [f"# {self.name}", f"{'System'.ljust(width)}  BLEU [%]", "-" * (width + 10)]
        lines += [f"{SYSTEMS[k].ljust(width)}  {v:8.2f}" for k, v in self.rows]
        return "\n".join(lines) + "\n"

    def key_values(self) -> str:
        out = []
        for stage, values in self.records:
            out.append(" ".join([f"stage={stage}"] + [f"{k}={v}" for k, v in values.items()]))
        return "\n".join(out) + "\n"


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    return Runner(cfg.validate()).run()


def _write_lines(path, sentences):
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(" ".join(s) + "\n" for s in sentences)


def _read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=float), encoding="utf-8")


def _read_table(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as f:
        return dict(line.rstrip("\n").split("\t") for line in f if line.strip())
