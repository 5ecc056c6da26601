"""
Par de idiomas de brinquedo, determinístico, para reproduzir os experimentos
em CPU.

As palavras são pseudo-palavras de duas sílabas CV; fonte e alvo usam
consoantes disjuntas, então os vocabulários nunca se sobrepõem (exceto no
COPY, em que o alvo é a própria fonte).
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from itertools import product
from typing import Dict, List, NamedTuple, Sequence, Set, Tuple

import numpy as np

from app.core.errors import ToyTaskError
from app.core.log import get_logger
from app.core.text import MonolingualCorpus, Origin, ParallelCorpus, Sentence, save_corpus, save_monolingual
from app.models.schemas import ToyTask, ToyTaskSpec

log = get_logger("TOY")

_SRC_CONSONANTS = "bdgklmnprst"
_TGT_CONSONANTS = "cfhjqvwxyz"
_VOWELS = "aeiou"
# Tentativas de amostragem por sentença pedida antes de desistir
_MAX_ATTEMPTS_FACTOR = 50


def _word_pool(consonants: str) -> List[str]:
    syllables = [c + v for c, v in product(consonants, _VOWELS)]
    return [a + b for a, b in product(syllables, syllables)]


@dataclass(frozen=True)
class ToyTaskModel:
    """Transformação determinística fonte -> alvo de uma tarefa."""
    task: ToyTask
    mapping: Dict[str, str]

    def transform(self, sentence: Sentence) -> Sentence:
        if self.task == ToyTask.COPY:
            return tuple(sentence)
        mapped = tuple(self.mapping[w] for w in sentence)
        return mapped[::-1] if self.task == ToyTask.REVERSE_MAP else mapped

    def inverse(self, sentence: Sentence) -> Sentence:
        if self.task == ToyTask.COPY:
            return tuple(sentence)
        back = {v: k for k, v in self.mapping.items()}
        mapped = tuple(back[w] for w in sentence)
        return mapped[::-1] if self.task == ToyTask.REVERSE_MAP else mapped


class ToyCorpora(NamedTuple):
    train: ParallelCorpus
    dev: ParallelCorpus
    test: ParallelCorpus
    monolingual: MonolingualCorpus
    task: ToyTaskModel


def _possible_sentences(vocab_size: int, min_length: int, max_length: int) -> int:
    return sum(vocab_size ** n for n in range(min_length, max_length + 1))


def make_task(spec: ToyTaskSpec) -> Tuple[List[str], ToyTaskModel]:
    """Vocabulário da fonte e a bijeção da tarefa, sorteados com a semente."""
    src_pool = _word_pool(_SRC_CONSONANTS)
    tgt_pool = _word_pool(_TGT_CONSONANTS)
    if spec.vocab_size < 2:
        raise ToyTaskError("vocab_size < 2: não há bijeção não trivial")
    if spec.vocab_size > min(len(src_pool), len(tgt_pool)):
        raise ToyTaskError(f"vocab_size {spec.vocab_size} maior que o repertório de pseudo-palavras")
    rng = np.random.default_rng(spec.seed)
    src_words = [src_pool[i] for i in sorted(rng.choice(len(src_pool), spec.vocab_size, replace=False))]
    tgt_words = [tgt_pool[i] for i in rng.choice(len(tgt_pool), spec.vocab_size, replace=False)]
    return src_words, ToyTaskModel(spec.task, dict(zip(src_words, tgt_words)))


def gen_toy_corpus(spec: ToyTaskSpec) -> ToyCorpora:
    """
    Gera treino/dev/teste paralelos e o monolíngue do lado alvo.

    Todas as fontes sorteadas são distintas, então os conjuntos são disjuntos
    por sentença; o monolíngue são alvos cujas fontes foram descartadas.
    """
    needed = spec.train_size + spec.dev_size + spec.test_size + spec.monolingual_size
    if _possible_sentences(spec.vocab_size, spec.min_length, spec.max_length) < needed:
        raise ToyTaskError(f"vocabulário pequeno demais para {needed} sentenças distintas")
    words, task = make_task(spec)
    rng = np.random.default_rng([spec.seed, 1])

    seen: Set[Sentence] = set()
    sources: List[Sentence] = []
    attempts = 0
    while len(sources) < needed:
        attempts += 1
        if attempts > needed * _MAX_ATTEMPTS_FACTOR:
            raise ToyTaskError("não foi possível sortear sentenças distintas suficientes")
        length = int(rng.integers(spec.min_length, spec.max_length + 1))
        sentence = tuple(words[i] for i in rng.integers(0, len(words), size=length))
        if sentence in seen:
            continue
        seen.add(sentence)
        sources.append(sentence)

    def _parallel(chunk: Sequence[Sentence]) -> ParallelCorpus:
        return ParallelCorpus.from_sentences(chunk, [task.transform(s) for s in chunk], Origin.AUTHENTIC)

    a = spec.train_size
    b = a + spec.dev_size
    c = b + spec.test_size
    corpora = ToyCorpora(
        train=_parallel(sources[:a]),
        dev=_parallel(sources[a:b]),
        test=_parallel(sources[b:c]),
        monolingual=MonolingualCorpus(tuple(task.transform(s) for s in sources[c:])),
        task=task,
    )
    log.info(
        f"✅ {spec.task.value}: {corpora.train.size} treino, {corpora.dev.size} dev, "
        f"{corpora.test.size} teste, {corpora.monolingual.size} monolíngue"
    )
    return corpora


def save_toy_corpus(corpora: ToyCorpora, directory: str) -> Dict[str, str]:
    """Grava `train.x/.y`, `dev.x/.y`, `test.x/.y` e `mono.y`; retorna os caminhos."""
    os.makedirs(directory, exist_ok=True)
    paths: Dict[str, str] = {}
    for name in ("train", "dev", "test"):
        px, py = os.path.join(directory, f"{name}.x"), os.path.join(directory, f"{name}.y")
        save_corpus(getattr(corpora, name), px, py)
        paths[f"{name}_source"], paths[f"{name}_target"] = px, py
    paths["monolingual"] = os.path.join(directory, "mono.y")
    save_monolingual(corpora.monolingual, paths["monolingual"])
    return paths
