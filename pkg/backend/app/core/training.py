"""
Treino: batches, laço de otimização com avaliação periódica, parada
antecipada e as estratégias de dados sintéticos.

Os passos são absolutos: uma fase que continua um checkpoint começa em
checkpoint.step + 1, então curvas de fases consecutivas se concatenam.
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from app.core.bleu import bleu_corpus
from app.core.checkpoint import (
    Checkpoint,
    adam_step,
    average_checkpoints,
    clip_by_global_norm,
    extend_checkpoint_vocab,
    init_model,
    reset_moments,
)
from app.core.config import settings
from app.core.errors import DivergenceError, EmptyCorpusError, UnknownStrategyError
from app.core.log import get_logger
from app.core.model import Batch, greedy_decode_batch, loss_and_gradients
from app.core.text import (
    BpeModel,
    Direction,
    ParallelCorpus,
    build_vocab,
    decode_bpe,
    detokenize,
    mix_corpora,
    segment_corpus,
    strip_tags,
    tag_synthetic,
    Vocabulary,
)
from app.models.schemas import (
    AveragingWindow,
    ExperimentReport,
    ModelHyperparams,
    PhaseSummary,
    Strategy,
    TrainingSchedule,
)

log = get_logger("TRAIN")


# -----------------------------------------------------------------------------
# Batches
# -----------------------------------------------------------------------------

def make_batches(
    corpus: ParallelCorpus,
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    batch_size: int,
    seed: int,
) -> List[Batch]:
    """
    Agrupa pares de comprimento de fonte parecido em batches com padding <blank>.

    Embaralha com a semente, ordena (estável) pelo comprimento da fonte, corta
    em blocos de `batch_size` e embaralha a ordem dos blocos.
    """
    if corpus.size == 0:
        raise EmptyCorpusError("corpus de treino vazio")
    rng = np.random.default_rng(seed)
    order = rng.permutation(corpus.size)
    order = sorted(order, key=lambda i: len(corpus.pairs[i].source))

    bos = np.array([tgt_vocab.bos_id], dtype=np.int64)
    eos = np.array([tgt_vocab.eos_id], dtype=np.int64)
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        seqs = [
            (
                src_vocab.encode(corpus.pairs[i].source),
                np.concatenate([bos, tgt_vocab.encode(corpus.pairs[i].target), eos]),
            )
            for i in chunk
        ]
        batches.append(Batch.from_sequences(seqs, pad_id=src_vocab.blank_id))
    return [batches[i] for i in rng.permutation(len(batches))]


# -----------------------------------------------------------------------------
# Parada antecipada
# -----------------------------------------------------------------------------

def should_stop(eval_history: Sequence[float], patience: int, min_improvement: float) -> bool:
    """
    True quando as últimas `patience` avaliações falharam.

    Uma avaliação falha se não supera o melhor valor anterior a ela por mais
    de `min_improvement`. A primeira avaliação sempre conta como melhora.
    """
    failures: List[bool] = []
    best: Optional[float] = None
    for score in eval_history:
        if best is None:
            failures.append(False)
            best = score
            continue
        failures.append(score <= best + min_improvement)
        best = max(best, score)
    return len(failures) >= patience and all(failures[-patience:])


# -----------------------------------------------------------------------------
# Avaliação
# -----------------------------------------------------------------------------

def evaluate(checkpoint: Checkpoint, corpus: ParallelCorpus, batch_size: int = 64) -> float:
    """BLEU de corpus (sem suavização) da decodificação gulosa, em palavras."""
    if corpus.size == 0:
        raise EmptyCorpusError("corpus de avaliação vazio")
    hypotheses = []
    for start in range(0, corpus.size, batch_size):
        chunk = corpus.sources()[start : start + batch_size]
        hypotheses.extend(detokenize(t) for t in greedy_decode_batch(checkpoint, chunk))
    references = [decode_bpe(strip_tags(t)).tokens for t in corpus.targets()]
    return bleu_corpus(hypotheses, references).score


# -----------------------------------------------------------------------------
# Laço de treino
# -----------------------------------------------------------------------------

def _retain(
    snapshots: List[Checkpoint], curve: List[Tuple[int, float]], schedule: TrainingSchedule
) -> List[Checkpoint]:
    if schedule.retain_all:
        return snapshots
    keep = schedule.checkpoint_keep
    best_step = max(curve, key=lambda point: point[1])[0]
    best_window = [c for c in snapshots if c.step <= best_step][-keep:]
    last = snapshots[-keep:]
    steps = {c.step for c in best_window} | {c.step for c in last}
    return [c for c in snapshots if c.step in steps]


def train(
    checkpoint: Checkpoint,
    train_corpus: ParallelCorpus,
    dev_corpus: ParallelCorpus,
    schedule: TrainingSchedule,
    *,
    seed: int = 0,
    label: str = "",
) -> Tuple[List[Checkpoint], ExperimentReport]:
    """
    Treina até max_steps atualizações ou até a parada antecipada.

    Args:
        checkpoint: ponto de partida (os vocabulários dele definem os ids)
        train_corpus: pares já segmentados com BPE e orientados (entrada, saída)
        dev_corpus: idem, avaliado a cada eval_interval_steps
        schedule: cadência, limites e retenção
        seed: semente dos batches e do dropout
        label: nome da fase nos logs e no relatório

    Returns:
        (snapshots retidos em ordem de step, relatório da fase)
    """
    if dev_corpus.size == 0:
        raise EmptyCorpusError("corpus de desenvolvimento vazio")
    started = time.perf_counter()
    start_step = checkpoint.step
    end_step = start_step + schedule.max_steps
    config = checkpoint.config

    snapshots: List[Checkpoint] = []
    curve: List[Tuple[int, float]] = []
    epoch = 0
    batches: List[Batch] = []
    if schedule.max_steps > 0:
        log.info(f"🔄 {label or 'treino'}: {train_corpus.size} pares, passos {start_step + 1}..{end_step}")

    with tqdm(total=schedule.max_steps, desc=label or "train", disable=not settings.PROGRESS, leave=False) as bar:
        while checkpoint.step < end_step:
            if not batches:
                batches = make_batches(
                    train_corpus, checkpoint.src_vocab, checkpoint.tgt_vocab, config.batch_size, seed + epoch
                )
                epoch += 1
            batch = batches.pop()
            step = checkpoint.step + 1
            loss, tokens, grads = loss_and_gradients(
                checkpoint.params, config, batch, dropout_on=True, seed=[seed, step]
            )
            if not math.isfinite(loss):
                raise DivergenceError(step, loss)
            checkpoint = adam_step(checkpoint, clip_by_global_norm(grads, config.clip_norm))
            bar.update(1)
            bar.set_postfix(loss=f"{loss:.3f}")

            due = (step - start_step) % schedule.eval_interval_steps == 0 or step == end_step
            if not due:
                continue
            bleu = evaluate(checkpoint, dev_corpus, config.batch_size)
            curve.append((step, bleu))
            snapshots.append(checkpoint)
            log.info(f"✅ {label} passo {step}: dev BLEU {bleu:.2f} (loss {loss:.3f}, {tokens} tokens)")
            if should_stop([b for _, b in curve], schedule.patience_evals, schedule.min_improvement_bleu):
                log.info(f"⚠️ {label}: parada antecipada no passo {step}")
                break

    best = max(curve, key=lambda point: point[1]) if curve else None
    retained = _retain(snapshots, curve, schedule) if snapshots else []
    report = ExperimentReport(
        label=label,
        curve=curve,
        best=best,
        phases=[PhaseSummary(label=label, start_step=start_step, end_step=checkpoint.step, best=best)],
        wall_time=time.perf_counter() - started,
    )
    return retained, report


# -----------------------------------------------------------------------------
# Estratégias
# -----------------------------------------------------------------------------

def orient(corpus: ParallelCorpus, direction: Direction) -> ParallelCorpus:
    """Corpora ficam em orientação (x, y); o treino BACKWARD lê y -> x."""
    return corpus.swap() if direction == Direction.BACKWARD else corpus


def prepare_strategy(
    authentic: ParallelCorpus,
    synthetic: ParallelCorpus,
    strategy: Strategy,
    direction: Direction = Direction.BACKWARD,
    seed: int = 0,
) -> List[Tuple[ParallelCorpus, str]]:
    """
    Fases de treino (corpus orientado, rótulo) de uma estratégia.

    Fases vazias são descartadas; MIX sem dados sintéticos é o treino base.
    """
    try:
        strategy = Strategy(strategy)
    except ValueError as e:
        raise UnknownStrategyError(f"estratégia desconhecida: {strategy}") from e
    A = orient(authentic, direction)
    S = orient(synthetic, direction)

    if strategy == Strategy.MIX:
        phases = [(mix_corpora(A, S, seed), "mix")]
    elif strategy == Strategy.TAGGED:
        phases = [(mix_corpora(A, tag_synthetic(S, direction), seed), "tagged")]
    elif strategy == Strategy.PRETRAIN_SYNTH_THEN_AUTH:
        phases = [(S, "synthetic"), (A, "authentic")]
    elif strategy == Strategy.PRETRAIN_AUTH_THEN_SYNTH:
        phases = [(A, "authentic"), (S, "synthetic")]
    elif strategy == Strategy.FINETUNE_SYNTH:
        phases = [(S, "synthetic")]
    else:
        raise UnknownStrategyError(f"estratégia desconhecida: {strategy}")

    phases = [(corpus, name) for corpus, name in phases if corpus.size > 0]
    if not phases:
        raise EmptyCorpusError(f"{strategy.value}: nenhum dado de treino")
    return phases


class TrainedModel(NamedTuple):
    checkpoint: Checkpoint  # média da janela (ou o último estado)
    final: Checkpoint
    report: ExperimentReport


def _averaging_end(window: AveragingWindow, curve: List[Tuple[int, float]]) -> Optional[int]:
    if window.end == "last":
        return None
    if window.end == "best":
        return max(curve, key=lambda point: point[1])[0]
    return int(window.end)


@dataclass(frozen=True)
class StrategyRun:
    """Tudo o que train_strategy precisa além dos corpora."""
    hyperparams: ModelHyperparams
    schedule: TrainingSchedule
    averaging: AveragingWindow = AveragingWindow()
    vocab_max_size: int = 50_000
    seed: int = 1


def train_strategy(
    authentic: ParallelCorpus,
    synthetic: ParallelCorpus,
    dev: ParallelCorpus,
    strategy: Optional[Strategy],
    direction: Direction,
    input_bpe: BpeModel,
    output_bpe: BpeModel,
    run: StrategyRun,
    *,
    label: str = "",
    base: Optional[Checkpoint] = None,
    test: Optional[ParallelCorpus] = None,
) -> TrainedModel:
    """
    Executa todas as fases de uma estratégia e faz a média de checkpoints.

    Corpora entram em palavras e orientação (x, y); `input_bpe`/`output_bpe`
    são os modelos BPE dos lados de entrada/saída do sentido de treino.
    Sem `base`, os vocabulários vêm da primeira fase e o modelo parte do zero.
    `strategy=None` usa a estratégia do schedule.
    """
    strategy = strategy or run.schedule.strategy
    phases = prepare_strategy(authentic, synthetic, strategy, direction, run.seed)
    dev_seg = segment_corpus(orient(dev, direction), input_bpe, output_bpe)
    checkpoint = base
    curve: List[Tuple[int, float]] = []
    summaries: List[PhaseSummary] = []
    retained: List[Checkpoint] = []
    last_curve: List[Tuple[int, float]] = []
    wall = 0.0

    for index, (phase, phase_label) in enumerate(phases):
        phase_seg = segment_corpus(phase, input_bpe, output_bpe)
        sources, targets = phase_seg.sources(), phase_seg.targets()
        if checkpoint is None:
            src_vocab = build_vocab(sources, run.vocab_max_size)
            tgt_vocab = build_vocab(targets, run.vocab_max_size)
            config = run.hyperparams.model_copy(update={"seed": run.seed}).with_vocab(len(src_vocab), len(tgt_vocab))
            checkpoint = init_model(config, src_vocab, tgt_vocab)
        else:
            checkpoint = extend_checkpoint_vocab(
                checkpoint,
                checkpoint.src_vocab.extend(sources, run.vocab_max_size),
                checkpoint.tgt_vocab.extend(targets, run.vocab_max_size),
                seed=run.seed + index,
            )
            if run.schedule.reset_optimizer_between_phases:
                checkpoint = reset_moments(checkpoint)

        name = f"{label}/{phase_label}" if label else phase_label
        retained, report = train(checkpoint, phase_seg, dev_seg, run.schedule, seed=run.seed + 1000 * index, label=name)
        if retained:
            checkpoint = retained[-1]
        curve.extend(report.curve)
        summaries.extend(report.phases)
        last_curve = report.curve
        wall += report.wall_time

    best = max(curve, key=lambda point: point[1]) if curve else None
    averaged, averaged_bleu, averaged_window = checkpoint, None, None
    if retained:
        end_step = _averaging_end(run.averaging, last_curve)
        averaged = average_checkpoints(retained, run.averaging.k, end_step)
        averaged_bleu = evaluate(averaged, dev_seg, averaged.config.batch_size)
        eligible = [c for c in retained if end_step is None or c.step <= end_step]
        averaged_window = (averaged.step, min(run.averaging.k, len(eligible)))
        log.info(f"✅ {label}: média {averaged_window} -> dev BLEU {averaged_bleu:.2f}")

    test_bleu = None
    if test is not None and test.size > 0:
        test_bleu = evaluate(averaged, segment_corpus(orient(test, direction), input_bpe, output_bpe))

    report = ExperimentReport(
        label=label,
        curve=curve,
        best=best,
        averaged_bleu=averaged_bleu,
        averaged_window=averaged_window,
        test_bleu=test_bleu,
        phases=summaries,
        wall_time=wall,
    )
    return TrainedModel(averaged, checkpoint, report)


# -----------------------------------------------------------------------------
# Relatórios
# -----------------------------------------------------------------------------

def format_report(report: ExperimentReport) -> str:
    lines = ["step\tdev_bleu"]
    lines.extend(f"{step}\t{bleu:.4f}" for step, bleu in report.curve)
    if report.best is not None:
        lines.append(f"# best\t{report.best[0]}\t{report.best[1]:.4f}")
    if report.averaged_bleu is not None and report.averaged_window is not None:
        end, k = report.averaged_window
        lines.append(f"# averaged\t{end}:{k}\t{report.averaged_bleu:.4f}")
    if report.test_bleu is not None:
        lines.append(f"# test\t{report.test_bleu:.4f}")
    return "\n".join(lines) + "\n"


def write_report(report: ExperimentReport, path: str) -> None:
    """Grava `<path>.tsv` (plotável) e `<path>.json` (relido por read_report)."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(f"{path}.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_report(report))
    # wall_time fica fora para os arquivos serem idênticos entre execuções
    payload = report.model_dump(mode="json", exclude={"wall_time"})
    with open(f"{path}.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path: str) -> ExperimentReport:
    with open(f"{path}.json", "r", encoding="utf-8") as fh:
        return ExperimentReport.model_validate(json.load(fh))
