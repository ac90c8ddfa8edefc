import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adlm.provider import (
    BOS_ID,
    EOS_ID,
    MODEL_MAGIC,
    RESERVED_WORDS,
    UNK_ID,
    NgramModel,
    NgramProvider,
    ProviderDescriptor,
    train_ngram,
    train_ngram_text,
)


def entries_bytes(dist):
    return b"".join(struct.pack("<Id", t, p) for t, p in dist.entries)


# --- training oracle counts --------------------------------------------------

def test_unigram_counts_on_tiny_corpus():
    # stream: a a a b <eos>; vocab: 3 reserved + {a, b} = 5
    model = train_ngram_text("a a a b", order=1, smoothing_k=0.01)
    assert model.vocab_size == 5
    a = model.tokenize("a")[0]
    assert model.token_prob([], a) == pytest.approx((3 + 0.01) / (5 + 0.01 * 5), abs=1e-15)
    assert model.token_prob([], a) == pytest.approx(0.596039603960396, abs=1e-12)


def test_bigram_conditional_on_tiny_corpus():
    # stream: a b a b <eos>; after "a" only "b" was seen, twice
    model = train_ngram_text("a b a b", order=2, smoothing_k=0.01)
    a, b = model.tokenize("a b")
    v = model.vocab_size
    assert v == 5
    assert model.token_prob([a], b) == pytest.approx((2 + 0.01) / (2 + 0.01 * v), abs=1e-15)


def test_single_word_corpus_argmax():
    model = train_ngram_text("x x x x", order=1, smoothing_k=0.01)
    top_id, top_p = model.next_entries([], top_n=8)[0]
    assert model.words[top_id] == "x"
    assert top_p > 0.5


def test_untrained_model_is_uniform():
    model = NgramModel(order=1, smoothing_k=0.01, words=RESERVED_WORDS + ("z",))
    pairs = model.next_entries([], top_n=8)
    assert [p for _, p in pairs] == [0.25, 0.25]  # eos and z; bos/unk withheld
    full = model.conditional_distribution([])
    assert all(p == 0.25 for p in full.values())


def test_backoff_falls_to_shorter_context():
    model = train_ngram_text("a b c a b d", order=3, smoothing_k=0.01)
    a, b, c, d = model.tokenize("a b c a b d")[:2] + model.tokenize("c d")
    v = model.vocab_size
    # (d, c) was never seen as a pair; (c,) was, followed only by "a"
    assert model.token_prob([d, c], a) == pytest.approx((1 + 0.01) / (1 + 0.01 * v), abs=1e-15)
    # fully unseen unigram context cannot happen; empty ctx uses unigrams
    assert model.token_prob([], a) == pytest.approx((2 + 0.01) / (7 + 0.01 * v), abs=1e-15)


def test_train_rejects_empty_corpus():
    with pytest.raises(ValueError):
        train_ngram_text("   \n\n  ")


def test_train_rejects_bad_order():
    with pytest.raises(ValueError):
        train_ngram_text("a b", order=0)


def test_train_rejects_unreadable_path(tmp_path):
    with pytest.raises(OSError):
        train_ngram(tmp_path / "missing.txt")


# --- conditionals normalize --------------------------------------------------

def test_conditional_distributions_sum_to_one():
    model = train_ngram_text(
        "the cat sat on the mat\nthe dog sat on the log\ncats and dogs",
        order=3, smoothing_k=0.01,
    )
    contexts = [[], model.tokenize("the"), model.tokenize("sat on"),
                model.tokenize("mat the cat"), [EOS_ID]]
    for ctx in contexts:
        total = sum(model.conditional_distribution(ctx).values())
        assert total == pytest.approx(1.0, abs=1e-9)


def test_next_entries_exclude_reserved_generators():
    model = train_ngram_text("a b a b", order=2, smoothing_k=0.01)
    ids = {t for t, _ in model.next_entries([], top_n=100)}
    assert BOS_ID not in ids
    assert UNK_ID not in ids
    assert EOS_ID in ids  # end of sentence is a legitimate emission


# --- tokenization ------------------------------------------------------------

def test_tokenize_maps_newline_to_eos():
    model = train_ngram_text("a b\nc", order=1)
    a, b = model.tokenize("a b")
    c = model.tokenize("c")[0]
    assert model.tokenize("a b\nc") == [a, b, EOS_ID, c]


def test_detokenize_renders_eos_as_newline():
    model = train_ngram_text("a b\nc", order=1)
    ids = model.tokenize("a b\nc")
    assert model.detokenize(ids) == "a b\nc"


def test_tokenize_oov_becomes_unk():
    model = train_ngram_text("a b", order=1)
    assert model.tokenize("a zzz") == [model.tokenize("a")[0], UNK_ID]


def test_detokenize_normalizes_spacing():
    model = train_ngram_text("a b c", order=1)
    ids = model.tokenize("  a   b \n  c ")
    assert model.detokenize(ids) == "a b\nc"


def test_detokenize_rejects_out_of_vocab_id():
    model = train_ngram_text("a b", order=1)
    with pytest.raises(ValueError):
        model.detokenize([999])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=6), max_size=30))
def test_tokenize_round_trips_all_ids(ids):
    model = train_ngram_text("a b c d", order=1)
    assert model.vocab_size == 7
    assert model.tokenize(model.detokenize(ids)) == ids


# --- serialization -----------------------------------------------------------

def test_save_load_round_trip(tmp_path):
    model = train_ngram_text("the cat sat\nthe dog ran", order=3, smoothing_k=0.05)
    path = tmp_path / "m.adlm"
    model_id = model.save(path)
    loaded, loaded_id = NgramModel.load(path)
    assert loaded_id == model_id == model.content_id()
    assert loaded.order == model.order
    assert loaded.smoothing_k == model.smoothing_k
    assert loaded.words == model.words
    assert loaded.counts == model.counts


def test_model_id_is_stable_across_saves(tmp_path):
    model = train_ngram_text("a b c a b", order=2)
    id1 = model.save(tmp_path / "m1.adlm")
    id2 = model.save(tmp_path / "m2.adlm")
    assert id1 == id2
    assert (tmp_path / "m1.adlm").read_bytes() == (tmp_path / "m2.adlm").read_bytes()


def test_load_rejects_corrupt_content(tmp_path):
    model = train_ngram_text("a b c", order=2)
    path = tmp_path / "m.adlm"
    model.save(path)
    blob = bytearray(path.read_bytes())
    blob[len(MODEL_MAGIC) + 2] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(ValueError, match="hash"):
        NgramModel.load(path)


def test_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "m.adlm"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(ValueError, match="not a recognized"):
        NgramModel.load(path)


def test_load_rejects_truncated_file(tmp_path):
    model = train_ngram_text("a b c", order=2)
    path = tmp_path / "m.adlm"
    model.save(path)
    blob = path.read_bytes()
    # cut mid-body, then re-stamp a valid hash so truncation itself is caught
    cut = blob[: len(blob) // 2]
    import hashlib

    path.write_bytes(cut + hashlib.sha256(cut).digest())
    with pytest.raises(ValueError, match="truncated"):
        NgramModel.load(path)


# --- provider ----------------------------------------------------------------

def test_provider_descriptor_fields():
    model = train_ngram_text("a b c", order=2)
    provider = NgramProvider(model, top_n=16)
    desc = provider.describe()
    assert desc.kind == "builtin_ngram"
    assert desc.model_id == model.content_id()
    assert desc.vocab_size == model.vocab_size
    assert desc.top_n == 16


def test_descriptor_validation():
    with pytest.raises(ValueError):
        ProviderDescriptor(kind="mystery", model_id="x", vocab_size=4, top_n=4)
    with pytest.raises(ValueError):
        ProviderDescriptor(kind="bridge", model_id="", vocab_size=4, top_n=4)
    with pytest.raises(ValueError):
        ProviderDescriptor(kind="bridge", model_id="x", vocab_size=4, top_n=1)


def test_provider_distributions_are_deterministic():
    model = train_ngram_text("the cat sat on the mat\nthe dog sat", order=3)
    provider = NgramProvider(model)
    contexts = [[], model.tokenize("the"), model.tokenize("the cat"),
                model.tokenize("sat on the")]
    for ctx in contexts:
        first = entries_bytes(provider.next_distribution(ctx))
        for _ in range(3):
            assert entries_bytes(provider.next_distribution(ctx)) == first


def test_provider_cache_keys_on_context_suffix():
    model = train_ngram_text("a b c d e f g", order=2)
    provider = NgramProvider(model)
    short = provider.next_distribution(model.tokenize("c"))
    longer = provider.next_distribution(model.tokenize("a b c"))
    assert longer is short  # same order-1 suffix, cache hit


def test_provider_respects_top_n():
    model = train_ngram_text("a b c d e", order=1)
    provider = NgramProvider(model, top_n=3)
    dist = provider.next_distribution([])
    assert len(dist.entries) == 3


def test_provider_rejects_bad_context_ids():
    model = train_ngram_text("a b", order=2)
    provider = NgramProvider(model)
    with pytest.raises(ValueError):
        provider.next_distribution([999])


def test_from_file_round_trip(tmp_path):
    model = train_ngram_text("a b c a c b", order=2)
    path = tmp_path / "m.adlm"
    model_id = model.save(path)
    provider = NgramProvider.from_file(path, top_n=8)
    assert provider.describe().model_id == model_id
    assert entries_bytes(provider.next_distribution([])) == entries_bytes(
        NgramProvider(model, top_n=8).next_distribution([])
    )
