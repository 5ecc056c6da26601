"""
Pipeline de texto: corpora, BPE, vocabulário, mistura e tagueamento.

Convenções:
- Uma Sentence é uma tupla de tokens (sem tokens vazios nem espaços).
- Subpalavras não finais carregam o sufixo "@@" (marca de continuação).
- Empates (BPE e vocabulário) são decididos por ordem lexicográfica.
"""
from __future__ import annotations

import heapq
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import (
    ConfigurationError,
    CorpusAlignmentError,
    DoubleTaggingError,
    EmptyCorpusError,
    MalformedCorpusError,
    VocabularyMismatchError,
)
from app.core.log import get_logger

log = get_logger("TEXT")

Sentence = Tuple[str, ...]

MARKER = "@@"
BLANK = "<blank>"
BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
SYN = "<SYN>"
SPECIALS: Tuple[str, ...] = (BLANK, BOS, EOS, UNK, SYN)
BPE_FORMAT_VERSION = 1


class Origin(str, Enum):
    AUTHENTIC = "AUTHENTIC"
    SYNTHETIC = "SYNTHETIC"


class Direction(str, Enum):
    """Sentido de treino: FORWARD = x→y, BACKWARD = y→x."""
    FORWARD = "FORWARD"
    BACKWARD = "BACKWARD"


# -----------------------------------------------------------------------------
# Corpora
# -----------------------------------------------------------------------------

class SentencePair(NamedTuple):
    source: Sentence
    target: Sentence
    origin: Origin


@dataclass(frozen=True)
class ParallelCorpus:
    pairs: Tuple[SentencePair, ...] = ()

    def __post_init__(self):
        for i, p in enumerate(self.pairs):
            if not p.source or not p.target:
                raise EmptyCorpusError(f"par {i} com lado vazio")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def size(self) -> int:
        return len(self.pairs)

    def sources(self) -> List[Sentence]:
        return [p.source for p in self.pairs]

    def targets(self) -> List[Sentence]:
        return [p.target for p in self.pairs]

    def swap(self) -> "ParallelCorpus":
        """Troca os lados mantendo a origem (orientação do modelo backward)."""
        return ParallelCorpus(tuple(SentencePair(p.target, p.source, p.origin) for p in self.pairs))

    @classmethod
    def from_sentences(
        cls, sources: Sequence[Sentence], targets: Sequence[Sentence], origin: Origin
    ) -> "ParallelCorpus":
        if len(sources) != len(targets):
            raise CorpusAlignmentError(f"{len(sources)} fontes para {len(targets)} alvos")
        return cls(tuple(SentencePair(tuple(s), tuple(t), origin) for s, t in zip(sources, targets)))


@dataclass(frozen=True)
class MonolingualCorpus:
    sentences: Tuple[Sentence, ...] = ()

    def __post_init__(self):
        for i, s in enumerate(self.sentences):
            if not s:
                raise EmptyCorpusError(f"sentença {i} vazia")

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def size(self) -> int:
        return len(self.sentences)


def _read_lines(path: str) -> List[Sentence]:
    out: List[Sentence] = []
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for number, raw in enumerate(fh, start=1):
            tokens = tuple(raw.split())
            if not tokens:
                raise MalformedCorpusError(path, number)
            reserved = [t for t in tokens if t in SPECIALS]
            if reserved:
                raise MalformedCorpusError(path, number, f"token reservado {reserved[0]}")
            out.append(tokens)
    return out


def load_corpus(path_source: str, path_target: str, origin: Origin = Origin.AUTHENTIC) -> ParallelCorpus:
    """
    Carrega um corpus paralelo alinhado por linha.

    Raises:
        CorpusAlignmentError: arquivos com número de linhas diferente
        MalformedCorpusError: linha vazia (com o número da linha)
    """
    sources = _read_lines(path_source)
    targets = _read_lines(path_target)
    if len(sources) != len(targets):
        raise CorpusAlignmentError(
            f"{path_source} tem {len(sources)} linhas, {path_target} tem {len(targets)}"
        )
    return ParallelCorpus.from_sentences(sources, targets, origin)


def load_monolingual(path: str) -> MonolingualCorpus:
    return MonolingualCorpus(tuple(_read_lines(path)))


def _write_lines(path: str, sentences: Iterable[Sentence]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sentences:
            fh.write(" ".join(s) + "\n")


def save_corpus(corpus: ParallelCorpus, path_source: str, path_target: str) -> None:
    _write_lines(path_source, corpus.sources())
    _write_lines(path_target, corpus.targets())


def save_monolingual(corpus: MonolingualCorpus, path: str) -> None:
    _write_lines(path, corpus.sentences)


# -----------------------------------------------------------------------------
# BPE
# -----------------------------------------------------------------------------

def _word_symbols(word: str) -> Tuple[str, ...]:
    if len(word) == 1:
        return (word,)
    return tuple(ch + MARKER for ch in word[:-1]) + (word[-1],)


def _merge_symbol(left: str, right: str) -> str:
    return left[: -len(MARKER)] + right


def _merge_word(symbols: Tuple[str, ...], left: str, right: str) -> Tuple[str, ...]:
    out: List[str] = []
    i = 0
    n = len(symbols)
    while i < n:
        if i + 1 < n and symbols[i] == left and symbols[i + 1] == right:
            out.append(_merge_symbol(left, right))
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


@dataclass(frozen=True)
class BpeModel:
    merges: Tuple[Tuple[str, str], ...] = ()
    marker: str = MARKER
    _ranks: Dict[Tuple[str, str], int] = field(default_factory=dict, compare=False, repr=False)
    _cache: Dict[str, Tuple[str, ...]] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise ConfigurationError("merges BPE duplicados")
        for left, right in self.merges:
            if _merge_symbol(left, right) in SPECIALS:
                raise ConfigurationError(f"merge {left} {right} colide com token reservado")
        self._ranks.update({pair: i for i, pair in enumerate(self.merges)})

    def segment_word(self, word: str) -> Tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        symbols = _word_symbols(word)
        ranks = self._ranks
        while len(symbols) > 1:
            candidates = [
                (ranks[pair], pair)
                for pair in zip(symbols[:-1], symbols[1:])
                if pair in ranks
            ]
            if not candidates:
                break
            _, (left, right) = min(candidates)
            symbols = _merge_word(symbols, left, right)
        self._cache[word] = symbols
        return symbols

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"version {BPE_FORMAT_VERSION}\n")
            for left, right in self.merges:
                fh.write(f"{left} {right}\n")

    @classmethod
    def load(cls, path: str) -> "BpeModel":
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != f"version {BPE_FORMAT_VERSION}":
                raise ConfigurationError(f"{path}: cabeçalho BPE inválido '{header}'")
            merges = []
            for number, line in enumerate(fh, start=2):
                parts = line.split()
                if len(parts) != 2:
                    raise MalformedCorpusError(path, number, "merge malformado")
                merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


def _word_counts(sentences: Iterable[Sentence]) -> Counter:
    counts: Counter = Counter()
    for s in sentences:
        counts.update(w for w in s if w not in SPECIALS)
    return counts


def _reserved(pair: Tuple[str, str]) -> bool:
    return _merge_symbol(*pair) in SPECIALS


def _learn_from_counts(word_counts: Counter, num_merges: int) -> BpeModel:
    # words: índice -> símbolos atuais; stats: par -> frequência; index: par -> palavras
    words = [_word_symbols(w) for w in sorted(word_counts)]
    freqs = [word_counts[w] for w in sorted(word_counts)]
    stats: Dict[Tuple[str, str], int] = defaultdict(int)
    index: Dict[Tuple[str, str], set] = defaultdict(set)
    for wi, symbols in enumerate(words):
        for pair in zip(symbols[:-1], symbols[1:]):
            stats[pair] += freqs[wi]
            index[pair].add(wi)

    # pares cujo merge vira um token reservado (ex: "<s@@" + ">") nunca entram no heap
    heap = [(-count, pair[0], pair[1]) for pair, count in stats.items() if not _reserved(pair)]
    heapq.heapify(heap)
    merges: List[Tuple[str, str]] = []

    while len(merges) < num_merges and heap:
        neg, left, right = heapq.heappop(heap)
        pair = (left, right)
        current = stats.get(pair, 0)
        if current != -neg:
            continue  # entrada velha
        if current < 2:
            break
        merges.append(pair)
        touched: Dict[Tuple[str, str], int] = {}
        for wi in sorted(index.pop(pair, ())):
            old = words[wi]
            new = _merge_word(old, left, right)
            if new == old:
                continue
            f = freqs[wi]
            for p in zip(old[:-1], old[1:]):
                stats[p] -= f
                touched[p] = stats[p]
                index[p].discard(wi)
            for p in zip(new[:-1], new[1:]):
                stats[p] += f
                touched[p] = stats[p]
                index[p].add(wi)
            words[wi] = new
        stats.pop(pair, None)
        index.pop(pair, None)
        for p, count in touched.items():
            if p == pair:
                continue
            if count <= 0:
                stats.pop(p, None)
                index.pop(p, None)
            elif not _reserved(p):
                heapq.heappush(heap, (-count, p[0], p[1]))

    log.debug(f"{len(merges)} merges aprendidos (pedidos: {num_merges})")
    return BpeModel(tuple(merges))


def learn_bpe(corpus_sides: Sequence[Sentence], num_merges: int) -> BpeModel:
    """
    Aprende merges BPE gulosos (par adjacente mais frequente por rodada).

    Para quando `num_merges` rodadas terminam ou nenhum par ocorre 2+ vezes.
    """
    if not corpus_sides:
        raise EmptyCorpusError("corpus vazio para aprender BPE")
    if num_merges < 0:
        raise ConfigurationError("num_merges deve ser >= 0")
    return _learn_from_counts(_word_counts(corpus_sides), num_merges)


def learn_joint_bpe(
    source_sides: Sequence[Sentence], target_sides: Sequence[Sentence], num_merges: int
) -> BpeModel:
    """Um único modelo BPE aprendido sobre os dois idiomas."""
    return learn_bpe(list(source_sides) + list(target_sides), num_merges)


def apply_bpe(model: BpeModel, sentence: Sentence) -> Sentence:
    out: List[str] = []
    for word in sentence:
        if word in SPECIALS:
            out.append(word)
        else:
            out.extend(model.segment_word(word))
    return tuple(out)


class BpeDecoding(NamedTuple):
    tokens: Sentence
    dangling: bool


def decode_bpe(tokens: Sequence[str]) -> BpeDecoding:
    """Junta subpalavras; `dangling` indica um "@@" pendurado no final."""
    words: List[str] = []
    buffer = ""
    for tok in tokens:
        if tok.endswith(MARKER):
            buffer += tok[: -len(MARKER)]
        else:
            words.append(buffer + tok)
            buffer = ""
    dangling = bool(buffer)
    if dangling:
        words.append(buffer)
    return BpeDecoding(tuple(w for w in words if w), dangling)


def strip_tags(sentence: Sequence[str]) -> Sentence:
    return tuple(t for t in sentence if t != SYN)


def segment_corpus(corpus: ParallelCorpus, src_bpe: BpeModel, tgt_bpe: BpeModel) -> ParallelCorpus:
    return ParallelCorpus(
        tuple(
            SentencePair(apply_bpe(src_bpe, p.source), apply_bpe(tgt_bpe, p.target), p.origin)
            for p in corpus.pairs
        )
    )


def detokenize(tokens: Sequence[str]) -> Sentence:
    """Saída do modelo -> palavras: remove <SYN> e desfaz o BPE."""
    decoded = decode_bpe(strip_tags(tokens))
    if decoded.dangling:
        log.debug("⚠️ marca de continuação pendurada na saída")
    return decoded.tokens


# -----------------------------------------------------------------------------
# Vocabulário
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Vocabulary:
    tokens: Tuple[str, ...]
    _ids: Dict[str, int] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.tokens[: len(SPECIALS)] != SPECIALS:
            raise VocabularyMismatchError("tokens especiais fora das posições fixas")
        if len(set(self.tokens)) != len(self.tokens):
            raise VocabularyMismatchError("tokens duplicados no vocabulário")
        self._ids.update({tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def blank_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return 1

    @property
    def eos_id(self) -> int:
        return 2

    @property
    def unk_id(self) -> int:
        return 3

    @property
    def syn_id(self) -> int:
        return 4

    def lookup(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, sentence: Sequence[str]) -> np.ndarray:
        return np.array([self.lookup(t) for t in sentence], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> Sentence:
        return tuple(self.tokens[int(i)] for i in ids)

    def extend(self, corpus_sides: Sequence[Sentence], max_size: Optional[int] = None) -> "Vocabulary":
        """Acrescenta tokens inéditos no fim; ids existentes não mudam."""
        counts = Counter(t for s in corpus_sides for t in s if t not in self._ids)
        fresh = [tok for tok, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))]
        if max_size is not None:
            fresh = fresh[: max(0, max_size - len(self.tokens))]
        return Vocabulary(self.tokens + tuple(fresh))

    def is_prefix_of(self, other: "Vocabulary") -> bool:
        return other.tokens[: len(self.tokens)] == self.tokens

    def save(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(tuple(line.rstrip("\n") for line in fh))

    @classmethod
    def of_size(cls, size: int) -> "Vocabulary":
        """Vocabulário sintético (especiais + w0, w1, ...) para testes e protótipos."""
        if size < len(SPECIALS):
            raise ConfigurationError(f"vocabulário precisa de pelo menos {len(SPECIALS)} entradas")
        return cls(SPECIALS + tuple(f"w{i}" for i in range(size - len(SPECIALS))))


def build_vocab(corpus_sides: Sequence[Sentence], max_size: int) -> Vocabulary:
    """Especiais primeiro; depois frequência decrescente, empate lexicográfico."""
    if max_size < len(SPECIALS):
        raise ConfigurationError(
            f"max_size={max_size} menor que o número de especiais ({len(SPECIALS)})"
        )
    return Vocabulary(SPECIALS).extend(corpus_sides, max_size)


# -----------------------------------------------------------------------------
# Mistura e tags
# -----------------------------------------------------------------------------

def mix_corpora(authentic: ParallelCorpus, synthetic: ParallelCorpus, seed: int) -> ParallelCorpus:
    pairs = authentic.pairs + synthetic.pairs
    if not pairs:
        raise EmptyCorpusError("os dois corpora estão vazios")
    order = np.random.default_rng(seed).permutation(len(pairs))
    return ParallelCorpus(tuple(pairs[i] for i in order))


def tag_synthetic(corpus: ParallelCorpus, training_direction: Direction) -> ParallelCorpus:
    """
    Prefixa <SYN> no lado gerado por máquina de cada par sintético.

    O corpus já está orientado para o treino (entrada, saída). O lado gerado
    é a saída no treino BACKWARD (self-training) e a entrada no FORWARD
    (back-translation com tag).
    """
    tag_output = training_direction == Direction.BACKWARD
    pairs: List[SentencePair] = []
    for i, p in enumerate(corpus.pairs):
        if p.origin != Origin.SYNTHETIC:
            pairs.append(p)
            continue
        side = p.target if tag_output else p.source
        if side and side[0] == SYN:
            raise DoubleTaggingError(f"par {i} já começa com {SYN}")
        tagged = (SYN,) + side
        pairs.append(
            SentencePair(p.source, tagged, p.origin) if tag_output else SentencePair(tagged, p.target, p.origin)
        )
    return ParallelCorpus(tuple(pairs))
