import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xltransfer.noise import NoiseSpec, inject_noise, jitter_permutation, noisy_corpus

FILLER = [f"f{i}" for i in range(50)]


def run(sentence, spec, seed=0, vocab=FILLER):
    return inject_noise(sentence, spec, vocab, np.random.default_rng(seed))


def test_identity_spec():
    sent = ["a", "b", "c", "d"]
    spec = NoiseSpec(0, 0, 0, 0)
    assert spec.is_identity
    for seed in range(20):
        assert run(sent, spec, seed) == sent


def test_delete_everything_keeps_one():
    sent = [f"w{i}" for i in range(5)]
    for seed in range(50):
        out = run(sent, NoiseSpec(p_ins=0, v_ins=0, p_del=1, d_per=0), seed)
        assert len(out) == 1 and out[0] in sent


def test_empty_sentence_rejected():
    with pytest.raises(ValueError):
        run([], NoiseSpec())


def test_invalid_spec():
    with pytest.raises(ValueError):
        NoiseSpec(p_ins=1.5)
    with pytest.raises(ValueError):
        NoiseSpec(d_per=-1)


def test_v_ins_clamped(caplog):
    out = run(["a"] * 30, NoiseSpec(p_ins=1.0, v_ins=10, p_del=0, d_per=0), vocab=["x", "y"])
    assert set(out) <= {"a", "x", "y"}
    assert "clamping" in caplog.text


def test_deterministic_given_rng():
    sent = [f"w{i}" for i in range(15)]
    spec = NoiseSpec(0.2, 50, 0.2, 3)
    assert run(sent, spec, 7) == run(sent, spec, 7)


def test_fresh_noise_per_epoch():
    sents = [[f"w{i}" for i in range(20)] for _ in range(20)]
    spec = NoiseSpec(0.1, 50, 0.1, 3, seed=1)
    assert noisy_corpus(sents, spec, FILLER, epoch=0) != noisy_corpus(sents, spec, FILLER, epoch=1)
    assert noisy_corpus(sents, spec, FILLER, epoch=2) == noisy_corpus(sents, spec, FILLER, epoch=2)


def displacement_after_deletion(sentence, out):
    """Max |new - old| over surviving original tokens, with inserted filler removed."""
    originals = [t for t in out if not t.startswith("f")]
    survivors = [t for t in sentence if t in set(originals)]
    before = {t: i for i, t in enumerate(survivors)}
    return max((abs(i - before[t]) for i, t in enumerate(originals)), default=0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 40), st.integers(0, 5), st.floats(0, 1), st.floats(0, 1), st.integers(0, 10**6))
def test_properties(length, d_per, p_del, p_ins, seed):
    sent = [f"w{i}" for i in range(length)]
    out = run(sent, NoiseSpec(p_ins, 50, p_del, d_per), seed)
    inserted = [t for t in out if t.startswith("f")]
    assert set(inserted) <= set(FILLER)
    originals = [t for t in out if t.startswith("w")]
    assert 1 <= len(originals) <= length
    assert len(set(originals)) == len(originals)
    assert displacement_after_deletion(sent, out) <= d_per


def test_jitter_permutation_bound():
    rng = np.random.default_rng(0)
    for _ in range(500):
        seq = list(range(30))
        out = jitter_permutation(seq, 2.5, rng)
        assert sorted(out) == seq
        assert max(abs(i - v) for i, v in enumerate(out)) <= 2.5
