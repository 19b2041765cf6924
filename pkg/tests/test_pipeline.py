import os
import re

import pytest
import yaml

from xltransfer.pipeline import cli
from xltransfer.pipeline.experiment import (SYSTEMS, Runner, StageError, config_from_dict, load_config,
                                            run_experiment)
from xltransfer.pipeline.toydata import ToyLanguage, is_anchor, make_cipher_task
from xltransfer.synth import ParallelCorpus, save_corpus


def tiny_config(workdir, systems=None, **over):
    cfg = {
        "name": "tiny",
        "workdir": str(workdir),
        "seed": 3,
        "data": {"language": {"n_concepts": 60}, "parent_train": 300, "parent_dev": 20, "child_train": 30,
                 "child_dev": 10, "child_test": 10, "child_mono": 300},
        "embedding": {"epochs": 1},
        "crossmap": {"iterations": 2, "max_rank": 300},
        "synthetic": {"sample_size": 60},
        "model": {"layers": 1, "dim": 16, "heads": 2, "ff_dim": 32, "dropout": 0.1},
        "parent_training": {"max_updates": 10, "checkpoint_freq": 5, "batch_words": 256, "warmup": 5},
        "child_training": {"max_updates": 6, "checkpoint_freq": 3, "batch_words": 256, "warmup": 3},
        "decode": {"beam": 2},
    }
    if systems is not None:
        cfg["systems"] = systems
    cfg.update(over)
    return cfg


def test_cipher_task_bijective_and_anchors():
    base = ToyLanguage(n_concepts=100, seed=2).parallel(200, seed=1)
    child, table = make_cipher_task(base, vocab_map_seed=4)
    inverse = {v: k for k, v in table.items()}
    assert len(inverse) == len(table)
    assert [[inverse.get(t, t) for t in s] for s in child.src] == base.src
    assert child.tgt == base.tgt
    base_vocab = {t for s in base.src for t in s}
    child_vocab = {t for s in child.src for t in s}
    assert base_vocab & child_vocab == {t for t in base_vocab if is_anchor(t)}


def test_cipher_reorder_bounded():
    sents = [[f"w{i}" for i in range(20)] for _ in range(300)]
    base = ParallelCorpus(sents, [["x"]] * 300)
    child, table = make_cipher_task(base, vocab_map_seed=0, reorder=3, reorder_seed=5)
    moved = False
    for s in child.src:
        for pos, tok in enumerate(s):
            orig = next(i for i in range(20) if table[f"w{i}"] == tok)
            assert abs(pos - orig) <= 3
            moved |= pos != orig
    assert moved


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="unknown config keys"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ValueError, match="unknown keys in 'data'"):
        config_from_dict({"data": {"parent_size": 3}})
    with pytest.raises(ValueError, match="unknown systems"):
        config_from_dict({"systems": ["baseline", "magic"]})
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(tiny_config(tmp_path / "w")))
    cfg = load_config(path)
    assert cfg.data.parent_train == 300 and cfg.crossmap.iterations == 2


def test_baseline_only_single_row(tmp_path):
    report = run_experiment(config_from_dict(tiny_config(tmp_path, ["baseline"])))
    rows = [line for line in report.table().splitlines()[3:] if line.strip()]
    assert len(rows) == 1 and rows[0].startswith("Baseline")


def test_full_ablation_rows_and_caching(tmp_path):
    cfg = config_from_dict(tiny_config(tmp_path))
    report = Runner(cfg).run()
    labels = [line.rsplit(None, 1)[0].strip() for line in report.table().splitlines()[3:]]
    assert labels == [SYSTEMS[k] for k in ("baseline", "transfer", "crossmap", "noise", "synthetic")]
    assert labels[2:] == ["+ Cross-lingual word embedding", "+ Artificial noises", "+ Synthetic data"]
    log = (tmp_path / "stages.log").read_text().splitlines()
    assert all(re.fullmatch(r"stage=\S+( \w+=\S+)+", line) for line in log)

    again = Runner(cfg)
    again.run()
    assert again.executed == []

    os.remove(tmp_path / "system.noise.ckpt")
    third = Runner(cfg)
    rerun = third.run()
    assert third.executed == ["system-noise", "eval-noise"]
    assert rerun.table() == report.table()


def test_stage_error_names_stage_and_artifact(tmp_path):
    cfg = config_from_dict(tiny_config(tmp_path, ["transfer"]))
    runner = Runner(cfg)
    runner.data()
    runner.segmentation()
    (tmp_path / "parent.train.src").write_text("only one line\n")
    (tmp_path / "bpe.stamp").unlink()
    runner2 = Runner(cfg)
    runner2.stamps["data"] = runner.stamps["data"]
    with pytest.raises(StageError) as err:
        runner2.segmentation()
    assert err.value.stage == "bpe"
    assert "parent.src.bpe" in str(err.value)


# -- command line ------------------------------------------------------------

def run_cli(*argv):
    assert cli.main([str(a) for a in argv]) == 0


@pytest.fixture(scope="module")
def cli_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    lang = ToyLanguage(n_concepts=60, seed=1)
    save_corpus(lang.parallel(300, seed=1), d / "parent")
    save_corpus(lang.parallel(20, seed=2), d / "dev")
    return d


def test_cli_end_to_end(cli_files, capsys):
    d = cli_files
    run_cli("learn-bpe", "--input", d / "parent.src", "--merges", 50, "--output", d / "src.bpe")
    assert (d / "src.bpe").read_text().startswith("#bpe-v1\n")
    run_cli("apply-bpe", "--model", d / "src.bpe", "--input", d / "parent.src", "--output", d / "parent.bpe.src")
    run_cli("build-vocab", "--input", d / "parent.src", "--output", d / "src.vocab")
    run_cli("build-vocab", "--input", d / "parent.tgt", "--output", d / "tgt.vocab")
    run_cli("make-cipher", "--input", d / "parent", "--seed", 2, "--output", d / "child")
    assert (d / "child.cipher").exists()
    run_cli("build-vocab", "--input", d / "child.src", "--output", d / "child.vocab")
    run_cli("add-noise", "--input", d / "parent.src", "--output", d / "noisy.src", "--p-ins", 0.1,
            "--v-ins", 50, "--p-del", 0.1, "--d-per", 3, "--seed", 1)
    assert len((d / "noisy.src").read_text().splitlines()) == 300
    run_cli("train", "--train", d / "parent", "--dev", d / "dev", "--src-vocab", d / "src.vocab",
            "--tgt-vocab", d / "tgt.vocab", "--layers", 1, "--dim", 16, "--heads", 2, "--ff-dim", 32,
            "--max-updates", 4, "--checkpoint-freq", 2, "--output", d / "parent.ckpt")
    run_cli("train-embed", "--input", d / "child.src", "--vocab", d / "child.vocab", "--dim", 16,
            "--epochs", 1, "--output", d / "child.vec")
    run_cli("map-embed", "--child", d / "child.vec", "--parent", d / "parent.ckpt", "--seed-mode", "identical",
            "--iterations", 2, "--dictionary", d / "dict.tsv", "--map", d / "w.map", "--output", d / "mapped.vec")
    assert (d / "w.map").read_text().startswith("16 orthogonal\n")
    run_cli("transfer", "--parent", d / "parent.ckpt", "--child-vocab", d / "child.vocab",
            "--mapped", d / "mapped.vec", "--output", d / "child.ckpt")
    run_cli("make-synth", "--parent", d / "parent", "--child-vocab", d / "child.vocab", "--sample-size", 40,
            "--real", d / "child", "--ratio", 0.5, "--output", d / "mixed")
    assert len((d / "mixed.prov").read_text().split()) == 340
    run_cli("train", "--train", d / "mixed", "--dev", d / "dev", "--init", d / "child.ckpt",
            "--freeze", "target_embedding", "decoder.self_attention", "--max-updates", 2,
            "--checkpoint-freq", 1, "--output", d / "child2.ckpt")
    run_cli("translate", "--model", d / "child2.ckpt", "--input", d / "child.src", "--beam", 2,
            "--output", d / "hyp.txt")
    capsys.readouterr()
    run_cli("score-bleu", "--hyp", d / "parent.tgt", "--ref", d / "parent.tgt")
    out = capsys.readouterr().out
    assert out.startswith("BLEU = 100.00 (")
    assert "BP=1.000" in out and "ratio=" in out


def test_cli_reports_errors(tmp_path, capsys):
    (tmp_path / "bad.bpe").write_text("a b\n")
    (tmp_path / "in.txt").write_text("x y\n")
    code = cli.main(["apply-bpe", "--model", str(tmp_path / "bad.bpe"), "--input", str(tmp_path / "in.txt"),
                     "--output", str(tmp_path / "o")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_cli_run_experiment(tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(tiny_config(tmp_path / "w", ["baseline"])))
    run_cli("run-experiment", path)
    assert "Baseline" in capsys.readouterr().out
