"""
Pacote de tradução: checkpoint + modelos BPE da fonte e do alvo.

É o que a CLI (`translate`), a API HTTP e o pipeline (geração de dados
sintéticos) carregam para traduzir texto cru.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

from app.core.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from app.core.model import greedy_decode_batch
from app.core.text import SPECIALS, BpeModel, Sentence, apply_bpe, detokenize

MODEL_FILE = "model.ckpt"
SRC_BPE_FILE = "src.bpe"
TGT_BPE_FILE = "tgt.bpe"


@dataclass(frozen=True)
class Translator:
    checkpoint: Checkpoint
    src_bpe: BpeModel
    tgt_bpe: BpeModel

    def translate_sentences(
        self, sentences: Sequence[Sentence], batch_size: int = 64, max_decode_length: Optional[int] = None
    ) -> List[Sentence]:
        """
        Palavras -> palavras (BPE aplicado na entrada e desfeito na saída).

        Tokens especiais gerados (<unk>, <s>...) não aparecem na saída.
        """
        out: List[Sentence] = []
        for start in range(0, len(sentences), batch_size):
            chunk = [apply_bpe(self.src_bpe, s) for s in sentences[start : start + batch_size]]
            decoded = greedy_decode_batch(self.checkpoint, chunk, max_decode_length)
            out.extend(tuple(w for w in detokenize(tokens) if w not in SPECIALS) for tokens in decoded)
        return out

    def translate(self, lines: Sequence[str], batch_size: int = 64) -> List[str]:
        sentences = [tuple(line.split()) for line in lines]
        return [" ".join(s) for s in self.translate_sentences(sentences, batch_size)]

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        save_checkpoint(self.checkpoint, os.path.join(directory, MODEL_FILE))
        self.src_bpe.save(os.path.join(directory, SRC_BPE_FILE))
        self.tgt_bpe.save(os.path.join(directory, TGT_BPE_FILE))

    @classmethod
    def load(cls, directory: str) -> "Translator":
        return cls(
            checkpoint=load_checkpoint(os.path.join(directory, MODEL_FILE)),
            src_bpe=BpeModel.load(os.path.join(directory, SRC_BPE_FILE)),
            tgt_bpe=BpeModel.load(os.path.join(directory, TGT_BPE_FILE)),
        )

    @staticmethod
    def exists(directory: str) -> bool:
        return all(
            os.path.isfile(os.path.join(directory, name)) for name in (MODEL_FILE, SRC_BPE_FILE, TGT_BPE_FILE)
        )
