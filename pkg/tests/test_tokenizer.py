import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genrelyrics.data import LEXICON
from genrelyrics.tokenizer import BOUNDARY, BpeModel, TokenizerError, normalize, train_bpe

words = st.text(alphabet="abcde'", min_size=1, max_size=6).filter(lambda w: w.strip("'"))
lines = st.lists(words, min_size=1, max_size=5).map(" ".join)
corpora = st.lists(lines, min_size=1, max_size=8)


def test_first_merge_is_most_frequent_pair():
    m = train_bpe(["aaaa"], 8)
    assert m.merges[0] == ("a", "a")


def test_char_level_model_has_no_merges():
    m = train_bpe(["ab ba"], 3 + 4)  # symbols: ▁a ▁b a b
    assert m.merges == [] and m.vocab_size == 7
    assert m.encode("ab") == [m.vocab[BOUNDARY + "a"], m.vocab["b"]]


def test_vocab_below_inventory_is_an_error():
    with pytest.raises(TokenizerError):
        train_bpe(["ab ba"], 6)


def test_empty_corpus_is_an_error():
    with pytest.raises(TokenizerError):
        train_bpe([], 10)


def test_ties_break_lexicographically():
    # ("▁a","b") and ("▁c","d") both occur twice
    m = train_bpe(["ab cd", "ab cd"], 8)
    assert m.merges[0] == (BOUNDARY + "a", "b")


def test_stops_when_no_pair_repeats():
    m = train_bpe(["abc"], 100)
    assert m.merges == []


def test_specials_layout():
    m = train_bpe(["la la la"], 10)
    assert m.id_to_token[0] == "<blank>" and m.id_to_token[1] == "<unk>"
    assert m.id_to_token[m.vocab_size - 1] == "<sos/eos>" == m.id_to_token[m.sos_eos_id]


def test_empty_text_and_empty_ids():
    m = train_bpe(["hello world"], 20)
    assert m.encode("") == [] and m.decode([]) == ""


def test_unknown_characters_map_to_unk():
    m = train_bpe(["ab"], 10)
    assert m.encode("az") == [m.vocab[BOUNDARY + "a"], m.unk_id]
    assert m.decode([m.unk_id]) == "<unk>"


def test_decode_rejects_bad_ids():
    m = train_bpe(["ab"], 10)
    for bad in (-1, m.vocab_size, 0, m.sos_eos_id):
        with pytest.raises(TokenizerError):
            m.decode([bad])


def test_normalize():
    assert normalize("  Don't   STOP, Believin'!  ") == "don't stop believin'"


def test_lexicon_words_become_single_tokens():
    m = train_bpe([" ".join(LEXICON)] * 3, 64)
    for w in LEXICON:
        assert len(m.encode(w)) == 1


@settings(max_examples=60, deadline=None)
@given(corpora, st.integers(0, 40))
def test_round_trip_and_length_bound(corpus, extra):
    inventory = {s for line in corpus for w in normalize(line).split() for s in [BOUNDARY + w[0], *w[1:]]}
    m = train_bpe(corpus, len(inventory) + 3 + extra)
    for line in corpus:
        ids = m.encode(line)
        assert m.decode(ids) == normalize(line)
        assert len(ids) <= len(normalize(line).replace(" ", ""))
        assert all(2 <= i <= m.vocab_size - 2 for i in ids)


@settings(max_examples=60, deadline=None)
@given(corpora, st.integers(0, 40))
def test_training_is_deterministic_and_ids_dense(corpus, extra):
    inventory = {s for line in corpus for w in normalize(line).split() for s in [BOUNDARY + w[0], *w[1:]]}
    a = train_bpe(corpus, len(inventory) + 3 + extra)
    b = train_bpe(corpus, len(inventory) + 3 + extra)
    assert a.merges == b.merges and a.vocab == b.vocab
    assert sorted(a.vocab.values()) == list(range(a.vocab_size))
    assert a.vocab_size <= len(inventory) + 3 + extra
    for tok in a.vocab:
        assert BOUNDARY not in tok[1:]


def test_save_load_round_trip(tmp_path):
    m = train_bpe(["la la love night", "night fire baby"], 30)
    m.save(tmp_path / "bpe.model")
    text = (tmp_path / "bpe.model").read_text(encoding="utf-8").splitlines()
    assert text[0] == f"bpe-v1 {m.vocab_size}" and text[1] == "0\t<blank>"
    assert text[1 + m.vocab_size] == "#merges"
    back = BpeModel.load(tmp_path / "bpe.model")
    assert back.merges == m.merges and back.vocab == m.vocab


def test_load_rejects_other_formats(tmp_path):
    (tmp_path / "x").write_text("sentencepiece\n")
    with pytest.raises(TokenizerError):
        BpeModel.load(tmp_path / "x")
