import math

import numpy as np
import pytest

from conftest import make_samples
from memefusion.data import SignalSpec, SyntheticSpec, generate_synthetic, task_label
from memefusion.text import (OOV_ID, PAD_ID, TfidfEncoder, Vocab, build_vocab,
                             encode_sequence, preprocess_text,
                             tfidf_logreg_baseline)


def test_preprocess_examples():
    assert preprocess_text("CHALLENGE ACCEPTED!") == ["challenge", "accepted"]
    assert preprocess_text("") == []
    assert preprocess_text("MYKRAINE... #1!!") == ["mykraine", "1"]


def test_preprocess_separators():
    assert preprocess_text("it's a_b--c  2nite") == ["it", "s", "a", "b", "c", "2nite"]
    assert preprocess_text("!!! ... ###") == []


def test_preprocess_idempotent():
    cases = ["CHALLENGE ACCEPTED!", "MYKRAINE... #1!!", "it's\nweird\ttabs",
             "ünïcode MÖÖD 42", ""]
    for raw in cases:
        once = preprocess_text(raw)
        assert preprocess_text(" ".join(once)) == once


def test_build_vocab_ordering():
    vocab = build_vocab([["a", "a", "b"]])
    assert vocab.token_to_id == {"a": 2, "b": 3}
    assert vocab.lookup("a") == 2 and vocab.lookup("zzz") == OOV_ID
    assert len(vocab) == 4  # pad + oov + 2 tokens


def test_build_vocab_min_count():
    vocab = build_vocab([["a", "a", "b"]], min_count=2)
    assert vocab.token_to_id == {"a": 2}
    with pytest.raises(ValueError, match="min_count"):
        build_vocab([["a"]], min_count=0)


def test_build_vocab_tie_break_and_max_size():
    vocab = build_vocab([["y", "x", "y", "x", "x", "y", "w"]])
    assert vocab.token_to_id == {"x": 2, "y": 3, "w": 4}
    assert build_vocab([["y", "x", "w"]], max_size=2).token_to_id == {"w": 2, "x": 3}


def test_vocab_json_round_trip():
    vocab = build_vocab([["a", "b", "c", "a"]])
    assert Vocab.from_json(vocab.to_json()).token_to_id == vocab.token_to_id


def test_encode_truncates_and_pads():
    vocab = build_vocab([["w"]])
    long = encode_sequence(["w"] * 70, vocab, max_len=64)
    assert long.ids.shape == (64,) and long.true_length == 64
    short = encode_sequence(["w"] * 10, vocab, max_len=64)
    assert short.true_length == 10
    assert (short.ids[10:] == PAD_ID).all() and (short.ids[:10] == 2).all()
    assert encode_sequence(["unseen"], vocab, max_len=4).ids[0] == OOV_ID


def test_encode_decode_fixed_point():
    vocab = build_vocab([["a", "b", "c"]])
    tokens = ["a", "mystery", "c", "b", "ghost"]
    first = encode_sequence(tokens, vocab, max_len=8)
    decoded = vocab.decode(first.ids[:first.true_length])
    again = encode_sequence(decoded, vocab, max_len=8)
    assert (first.ids == again.ids).all() and first.true_length == again.true_length


def test_encode_empty_and_errors():
    vocab = build_vocab([["a"]])
    seq = encode_sequence([], vocab, max_len=5)
    assert seq.true_length == 0 and (seq.ids == PAD_ID).all()
    with pytest.raises(ValueError, match="max_len"):
        encode_sequence(["a"], vocab, max_len=0)


# -- TF-IDF ------------------------------------------------------------------

def test_tfidf_single_document_single_term():
    enc = TfidfEncoder().fit([["a"]])
    assert enc.transform([["a"]])[0, 0] == pytest.approx(1.0)


def test_tfidf_small_case_by_hand():
    docs = [["a", "b"], ["a"]]
    enc = TfidfEncoder().fit(docs)
    idf_a = math.log(3 / 3) + 1
    idf_b = math.log(3 / 2) + 1
    raw = np.array([1 * idf_a, 1 * idf_b])
    expected = raw / np.linalg.norm(raw)
    assert enc.transform(docs)[0] == pytest.approx(expected)
    assert enc.transform(docs)[1] == pytest.approx([1.0, 0.0])


def test_tfidf_rows_unit_norm():
    rng = np.random.default_rng(0)
    words = [f"w{i}" for i in range(30)]
    docs = [list(rng.choice(words, size=rng.integers(1, 12))) for _ in range(40)]
    docs.append([])  # empty document -> zero row
    mat = TfidfEncoder().fit(docs).transform(docs)
    norms = np.linalg.norm(mat, axis=1)
    assert np.all((np.abs(norms - 1.0) < 1e-9) | (norms == 0.0))
    assert norms[-1] == 0.0


def test_tfidf_empty_vocabulary_error():
    with pytest.raises(ValueError, match="empty vocabulary"):
        TfidfEncoder().fit([[], []])


# -- baseline classifier -----------------------------------------------------

def test_baseline_separable_corpus():
    texts = ["great awesome nice"] * 6 + ["bad awful gross"] * 6
    ds = make_samples([{"sentiment": 2}] * 6 + [{"sentiment": 0}] * 6, texts=texts)
    with pytest.warns(RuntimeWarning):  # class 1 never occurs in this corpus
        preds = tfidf_logreg_baseline(ds, ds, "sentiment")
    truth = [task_label(s, "sentiment") for s in ds]
    assert list(preds) == truth


def test_baseline_beats_majority_on_synthetic_signal():
    spec = SyntheticSpec(signals={"sentiment": SignalSpec(mode="text", prior=(0.5, 0.3, 0.2))})
    ds = generate_synthetic(120, spec, seed=21)
    train, eval_set = ds[:80], ds[80:]
    preds = tfidf_logreg_baseline(train, eval_set, "sentiment")
    truth = np.array([task_label(s, "sentiment") for s in eval_set])
    majority = np.bincount([task_label(s, "sentiment") for s in train]).argmax()
    majority_acc = float(np.mean(truth == majority))
    acc = float(np.mean(preds == truth))
    assert acc >= majority_acc + 0.20


def test_baseline_deterministic():
    ds = generate_synthetic(40, SyntheticSpec(
        signals={"motivation": SignalSpec(mode="text")}), seed=5)
    a = tfidf_logreg_baseline(ds[:30], ds[30:], "motivation")
    b = tfidf_logreg_baseline(ds[:30], ds[30:], "motivation")
    assert np.array_equal(a, b)
