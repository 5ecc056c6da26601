from collections import Counter

import numpy as np
import pytest

from app.core.errors import (
    ConfigurationError,
    CorpusAlignmentError,
    DoubleTaggingError,
    EmptyCorpusError,
    MalformedCorpusError,
    VocabularyMismatchError,
)
from app.core.text import (
    SPECIALS,
    SYN,
    BpeModel,
    Direction,
    MonolingualCorpus,
    Origin,
    ParallelCorpus,
    SentencePair,
    Vocabulary,
    apply_bpe,
    build_vocab,
    decode_bpe,
    detokenize,
    learn_bpe,
    learn_joint_bpe,
    load_corpus,
    load_monolingual,
    mix_corpora,
    save_corpus,
    save_monolingual,
    segment_corpus,
    strip_tags,
    tag_synthetic,
)


# ---------- corpora ----------

def test_load_corpus_pairs_lines(tmp_path, write_lines):
    src = write_lines(tmp_path / "a.x", ["a b", "c", "d e f"])
    tgt = write_lines(tmp_path / "a.y", ["x", "y z", "w"])
    corpus = load_corpus(src, tgt)
    assert corpus.size == 3
    assert corpus.pairs[2] == SentencePair(("d", "e", "f"), ("w",), Origin.AUTHENTIC)


def test_load_corpus_line_count_mismatch(tmp_path, write_lines):
    src = write_lines(tmp_path / "a.x", ["a", "b", "c"])
    tgt = write_lines(tmp_path / "a.y", ["a", "b", "c", "d"])
    with pytest.raises(CorpusAlignmentError):
        load_corpus(src, tgt)


def test_load_corpus_empty_line_names_line(tmp_path, write_lines):
    src = write_lines(tmp_path / "a.x", ["a", "", "c"])
    tgt = write_lines(tmp_path / "a.y", ["a", "b", "c"])
    with pytest.raises(MalformedCorpusError) as info:
        load_corpus(src, tgt)
    assert info.value.line == 2


def test_load_corpus_rejects_reserved_tokens(tmp_path, write_lines):
    src = write_lines(tmp_path / "a.x", ["a <SYN> b"])
    tgt = write_lines(tmp_path / "a.y", ["a"])
    with pytest.raises(MalformedCorpusError):
        load_corpus(src, tgt)


def test_corpus_save_load_keeps_text(tmp_path):
    corpus = ParallelCorpus.from_sentences([("ola", "mundo")], [("hello", "world")], Origin.SYNTHETIC)
    save_corpus(corpus, str(tmp_path / "c.x"), str(tmp_path / "c.y"))
    loaded = load_corpus(str(tmp_path / "c.x"), str(tmp_path / "c.y"), Origin.SYNTHETIC)
    assert loaded == corpus

    mono = MonolingualCorpus((("um", "dois"), ("tres",)))
    save_monolingual(mono, str(tmp_path / "m.y"))
    assert load_monolingual(str(tmp_path / "m.y")) == mono


def test_corpus_rejects_empty_side():
    with pytest.raises(EmptyCorpusError):
        ParallelCorpus((SentencePair(("a",), (), Origin.AUTHENTIC),))


def test_swap_keeps_origin():
    corpus = ParallelCorpus.from_sentences([("x",)], [("y",)], Origin.SYNTHETIC)
    assert corpus.swap().pairs[0] == SentencePair(("y",), ("x",), Origin.SYNTHETIC)


# ---------- BPE ----------

def _oracle_merges(word_counts, num_merges):
    """Recontagem completa dos pares a cada rodada."""
    words = {}
    for word, count in word_counts.items():
        symbols = tuple(ch + "@@" for ch in word[:-1]) + (word[-1],)
        words[symbols] = words.get(symbols, 0) + count
    merges = []
    for _ in range(num_merges):
        pairs = Counter()
        for symbols, count in words.items():
            for pair in zip(symbols[:-1], symbols[1:]):
                if pair[0][:-2] + pair[1] not in SPECIALS:
                    pairs[pair] += count
        if not pairs:
            break
        best = min(pairs, key=lambda p: (-pairs[p], p))
        if pairs[best] < 2:
            break
        merges.append(best)
        left, right = best
        merged = {}
        for symbols, count in words.items():
            out, i = [], 0
            while i < len(symbols):
                if i + 1 < len(symbols) and symbols[i] == left and symbols[i + 1] == right:
                    out.append(left[:-2] + right)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            merged[tuple(out)] = merged.get(tuple(out), 0) + count
        words = merged
    return merges


def _random_sentences(rng, n, alphabet="abcd", max_words=6, max_len=6):
    return [
        tuple(
            "".join(rng.choice(list(alphabet), size=int(rng.integers(1, max_len + 1))))
            for _ in range(int(rng.integers(1, max_words + 1)))
        )
        for _ in range(n)
    ]


def test_learn_bpe_low_lowest():
    corpus = [("low",)] * 5 + [("lowest",)] * 2
    model = learn_bpe(corpus, 2)
    assert model.merges == (("l@@", "o@@"), ("lo@@", "w"))


@pytest.mark.parametrize("alphabet", ["abcd", "<s>/k"])
@pytest.mark.parametrize("seed", range(10))
def test_learn_bpe_matches_recount_oracle(seed, alphabet):
    rng = np.random.default_rng(seed)
    sentences = _random_sentences(rng, 10, alphabet=alphabet, max_words=5)
    assert sum(len(s) for s in sentences) <= 50
    counts = Counter(w for s in sentences for w in s if w not in SPECIALS)
    assert list(learn_bpe(sentences, 40).merges) == _oracle_merges(counts, 40)


def test_learn_bpe_never_builds_reserved_tokens():
    corpus = [("a<s>", "x</s>", "<unk>y")] * 3
    model = learn_bpe(corpus, 20)
    assert model.merges
    assert all(left[:-2] + right not in SPECIALS for left, right in model.merges)
    for sentence in corpus[:1]:
        segmented = apply_bpe(model, sentence)
        assert not set(segmented) & set(SPECIALS)
        assert decode_bpe(segmented).tokens == sentence


def test_learn_bpe_stops_below_two():
    assert learn_bpe([("ab",)], 1).merges == ()


def test_zero_merges_is_character_level():
    model = learn_bpe([("abc", "abc")], 0)
    assert model.merges == ()
    assert apply_bpe(model, ("ab",)) == ("a@@", "b")


def test_apply_bpe_replays_merges():
    model = BpeModel((("l@@", "o@@"), ("lo@@", "w")))
    assert apply_bpe(model, ("low",)) == ("low",)
    assert apply_bpe(model, ("lowly",)) == ("lo@@", "w@@", "l@@", "y")


def test_apply_bpe_passes_specials_through():
    model = learn_bpe([("abab", "abab")], 5)
    assert apply_bpe(model, (SYN, "abab"))[0] == SYN


def test_bpe_round_trip_random_sentences():
    rng = np.random.default_rng(42)
    model = learn_bpe(_random_sentences(rng, 200), 100)
    for sentence in _random_sentences(rng, 1000, alphabet="abcde"):
        decoded = decode_bpe(apply_bpe(model, sentence))
        assert decoded.tokens == sentence
        assert not decoded.dangling


def test_more_merges_never_add_tokens():
    rng = np.random.default_rng(5)
    corpus = _random_sentences(rng, 100)
    small, large = learn_bpe(corpus, 10), learn_bpe(corpus, 60)
    for sentence in corpus[:50]:
        assert len(apply_bpe(large, sentence)) <= len(apply_bpe(small, sentence))


def test_decode_bpe_cases():
    assert decode_bpe(["lo@@", "w", "c@@", "a@@", "t"]).tokens == ("low", "cat")
    assert decode_bpe(["low"]) == (("low",), False)
    assert decode_bpe(["a@@"]) == (("a",), True)


def test_detokenize_strips_tags():
    assert detokenize([SYN, "ca@@", "t"]) == ("cat",)
    assert strip_tags((SYN, "a")) == ("a",)


def test_bpe_save_load(tmp_path):
    model = learn_bpe([("lower", "lowest", "low", "low")], 10)
    model.save(str(tmp_path / "m.bpe"))
    assert BpeModel.load(str(tmp_path / "m.bpe")).merges == model.merges


def test_bpe_load_rejects_bad_header(tmp_path, write_lines):
    path = write_lines(tmp_path / "m.bpe", ["version 9", "a@@ b"])
    with pytest.raises(ConfigurationError):
        BpeModel.load(path)


def test_bpe_rejects_duplicate_merges():
    with pytest.raises(ConfigurationError):
        BpeModel((("a@@", "b"), ("a@@", "b")))


def test_joint_bpe_sees_both_sides():
    model = learn_joint_bpe([("xy",)] * 2, [("xy",)] * 2, 1)
    assert model.merges == (("x@@", "y"),)


def test_segment_corpus_keeps_origin():
    model = BpeModel((("a@@", "b"),))
    corpus = ParallelCorpus.from_sentences([("ab",)], [("abc",)], Origin.SYNTHETIC)
    seg = segment_corpus(corpus, model, model)
    assert seg.pairs[0] == SentencePair(("ab",), ("a@@", "b@@", "c"), Origin.SYNTHETIC)


# ---------- vocabulário ----------

def test_build_vocab_order_and_truncation():
    vocab = build_vocab([("a", "a", "a", "b")], 7)
    assert vocab.tokens == SPECIALS + ("a", "b")
    assert build_vocab([("b", "a", "b", "a")], 7).tokens[5:] == ("a", "b")
    truncated = build_vocab([("a", "a", "a", "b")], 6)
    assert truncated.tokens == SPECIALS + ("a",)
    assert truncated.lookup("b") == truncated.unk_id


def test_build_vocab_too_small():
    with pytest.raises(ConfigurationError):
        build_vocab([("a",)], 4)


def test_vocab_specials_and_ids():
    vocab = build_vocab([("x", "y")], 10)
    assert (vocab.blank_id, vocab.bos_id, vocab.eos_id, vocab.unk_id, vocab.syn_id) == (0, 1, 2, 3, 4)
    for i, token in enumerate(vocab.tokens):
        assert vocab.lookup(token) == i
    assert list(vocab.encode(("x", "zzz"))) == [vocab.lookup("x"), vocab.unk_id]


def test_vocab_save_load(tmp_path):
    vocab = build_vocab([("x", "y", "x")], 10)
    vocab.save(str(tmp_path / "v.txt"))
    assert Vocabulary.load(str(tmp_path / "v.txt")) == vocab


def test_vocab_extend_keeps_ids():
    vocab = build_vocab([("a", "b")], 10)
    extended = vocab.extend([("c", "a", "d", "d")])
    assert vocab.is_prefix_of(extended)
    assert extended.tokens[len(vocab):] == ("d", "c")


def test_vocab_rejects_misplaced_specials():
    with pytest.raises(VocabularyMismatchError):
        Vocabulary(("a",) + SPECIALS)


# ---------- mistura e tags ----------

def _pairs(prefix, n, origin):
    return ParallelCorpus.from_sentences(
        [(f"{prefix}{i}",) for i in range(n)], [(f"{prefix}t{i}",) for i in range(n)], origin
    )


def test_mix_corpora_preserves_multiset():
    A, S = _pairs("a", 2, Origin.AUTHENTIC), _pairs("s", 3, Origin.SYNTHETIC)
    mixed = mix_corpora(A, S, seed=1)
    assert mixed.size == 5
    assert Counter(mixed.pairs) == Counter(A.pairs + S.pairs)
    assert mix_corpora(A, S, seed=1) == mixed


def test_mix_corpora_with_empty_synthetic_is_permutation():
    A = _pairs("a", 6, Origin.AUTHENTIC)
    assert sorted(mix_corpora(A, ParallelCorpus(()), seed=3).pairs) == sorted(A.pairs)


def test_mix_corpora_both_empty():
    with pytest.raises(EmptyCorpusError):
        mix_corpora(ParallelCorpus(()), ParallelCorpus(()), seed=0)


def test_tag_backward_tags_output_side():
    # orientação de treino backward: entrada y, saída x′ (gerada)
    pair = ParallelCorpus.from_sentences([("a", "test")], [("ein", "test")], Origin.SYNTHETIC)
    tagged = tag_synthetic(pair, Direction.BACKWARD)
    assert tagged.pairs[0].target == (SYN, "ein", "test")
    assert tagged.pairs[0].source == ("a", "test")


def test_tag_forward_tags_input_side():
    pair = ParallelCorpus.from_sentences([("ein", "test")], [("a", "test")], Origin.SYNTHETIC)
    tagged = tag_synthetic(pair, Direction.FORWARD)
    assert tagged.pairs[0].source == (SYN, "ein", "test")
    assert tagged.pairs[0].target == ("a", "test")


def test_tag_leaves_authentic_untouched():
    A = _pairs("a", 3, Origin.AUTHENTIC)
    assert tag_synthetic(A, Direction.BACKWARD) == A


def test_tag_changes_only_synthetic_by_one_token():
    mixed = mix_corpora(_pairs("a", 3, Origin.AUTHENTIC), _pairs("s", 3, Origin.SYNTHETIC), seed=0)
    tagged = tag_synthetic(mixed, Direction.BACKWARD)
    for before, after in zip(mixed.pairs, tagged.pairs):
        if before.origin == Origin.SYNTHETIC:
            assert after.target == (SYN,) + before.target
        else:
            assert after == before


def test_double_tagging():
    tagged = tag_synthetic(_pairs("s", 1, Origin.SYNTHETIC), Direction.BACKWARD)
    with pytest.raises(DoubleTaggingError):
        tag_synthetic(tagged, Direction.BACKWARD)
