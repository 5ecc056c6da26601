"""
BLEU de corpus e de sentença sobre o sacrebleu (tokens já segmentados, tokenize="none").

Ordens sem nenhum n-grama possível (hipóteses mais curtas que n) ficam fora
da média geométrica em vez de zerarem o score.
"""
import math
import sys
from typing import List, Optional, Sequence

from sacrebleu.metrics import BLEU

from app.core.errors import BleuInputError
from app.models.schemas import BleuScore, Smoothing

MAX_ORDER = 4

# Só extrai as estatísticas (sem suavização, contagens intactas)
_STATS = BLEU(tokenize="none", smooth_method="none", effective_order=True)

_SMOOTH_ARGS = {
    Smoothing.NONE: {"smooth_method": "none", "smooth_value": None},
    # add-k do sacrebleu só atua em n >= 2
    Smoothing.ADD1: {"smooth_method": "add-k", "smooth_value": 1},
}


def _brevity(hyp_len: int, ref_len: int) -> float:
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / max(hyp_len, 1))
    return max(bp, sys.float_info.min)


def bleu_corpus(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    smoothing: Smoothing = Smoothing.NONE,
) -> BleuScore:
    """
    BLEU de corpus com uma referência por hipótese.

    Args:
        hypotheses: hipóteses tokenizadas
        references: referências tokenizadas (mesmo tamanho)
        smoothing: NONE ou ADD1 (soma 1 no numerador e denominador de n >= 2)
    """
    if len(hypotheses) != len(references):
        raise BleuInputError(f"{len(hypotheses)} hipóteses para {len(references)} referências")
    if not references:
        raise BleuInputError("lista de referências vazia")

    stats = _STATS.corpus_score([" ".join(h) for h in hypotheses], [[" ".join(r) for r in references]])
    hyp_len, ref_len = stats.sys_len, stats.ref_len
    # ordens definidas formam um prefixo: sem 3-gramas não há 4-gramas
    defined = sum(1 for t in stats.totals[:MAX_ORDER] if t > 0)
    if hyp_len == 0 or defined == 0:
        return BleuScore(
            score=0.0,
            precisions=(None,) * MAX_ORDER,
            brevity_penalty=_brevity(hyp_len, ref_len),
            hyp_length=hyp_len,
            ref_length=ref_len,
        )

    result = BLEU.compute_bleu(
        list(stats.counts[:defined]),
        list(stats.totals[:defined]),
        hyp_len,
        ref_len,
        effective_order=True,
        max_ngram_order=defined,
        **_SMOOTH_ARGS[smoothing],
    )
    precisions: List[Optional[float]] = [p / 100.0 for p in result.precisions[:defined]]
    precisions += [None] * (MAX_ORDER - defined)

    return BleuScore(
        score=min(100.0, max(0.0, result.score)),
        precisions=tuple(precisions),
        brevity_penalty=max(result.bp, sys.float_info.min),
        hyp_length=hyp_len,
        ref_length=ref_len,
    )


def bleu_sentence(hypothesis: Sequence[str], reference: Sequence[str]) -> BleuScore:
    """BLEU de um único par, sempre com suavização ADD1 (diagnóstico)."""
    if not reference:
        raise BleuInputError("referência vazia")
    return bleu_corpus([hypothesis], [reference], Smoothing.ADD1)
