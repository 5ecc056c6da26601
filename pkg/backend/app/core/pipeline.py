"""
Orquestração do self-training + back-translation.

    estágio 1: modelo backward (y -> x) nos dados autênticos
    estágio 2: synth_A = backward(Y) para o monolíngue Y
    estágio 3: self-training do backward com autêntico + synth_A (um braço por estratégia)
    estágio 4: synth_B = backward melhorado(Y)
    estágio 5: modelos forward (x -> y) sem sintético, com synth_A ou com synth_B

Cada estágio grava seus artefatos e um `stage.json` em `stage-N/`; um estágio
com `stage.json` da mesma config e dos mesmos dados (fingerprint) é recarregado
em vez de recalculado.
"""
from __future__ import annotations

import hashlib
import json
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, TypeVar

from app.core.errors import EmptyCorpusError, NMTError, PipelineStageError, SyntheticGenerationError
from app.core.log import get_logger
from app.core.text import (
    BpeModel,
    Direction,
    MonolingualCorpus,
    Origin,
    ParallelCorpus,
    Sentence,
    SentencePair,
    learn_bpe,
    learn_joint_bpe,
    load_corpus,
    save_corpus,
)
from app.core.training import StrategyRun, read_report, train_strategy, write_report
from app.core.translator import Translator
from app.models.schemas import ExperimentReport, PipelineConfig, Strategy, TrainingSchedule

log = get_logger("PIPELINE")

T = TypeVar("T")

STAGE_FILE = "stage.json"
BPE_META_FILE = "bpe.json"
MANIFEST_FILE = "manifest.tsv"
SYNTH_A = "synth_A"
SYNTH_B = "synth_B"


class LanguageBpe(NamedTuple):
    """Modelos BPE por idioma (iguais no modo joint)."""
    x: BpeModel
    y: BpeModel


class PipelineData(NamedTuple):
    train: ParallelCorpus  # orientação (x, y)
    dev: ParallelCorpus
    monolingual: MonolingualCorpus  # lado y
    test: Optional[ParallelCorpus] = None


class StageResult(NamedTuple):
    translator: Translator
    report: ExperimentReport


@dataclass
class StageArtifacts:
    backward_baseline: Translator
    backward_improved: Translator
    forward_model: Translator
    synth_A: ParallelCorpus
    synth_B: ParallelCorpus
    reports: Dict[str, ExperimentReport] = field(default_factory=dict)


# -----------------------------------------------------------------------------
# Operações de estágio
# -----------------------------------------------------------------------------

def learn_language_bpe(
    sources: Sequence[Sentence], targets: Sequence[Sentence], num_merges: int, mode: str = "separate"
) -> LanguageBpe:
    if mode == "joint":
        joint = learn_joint_bpe(sources, targets, num_merges)
        return LanguageBpe(joint, joint)
    return LanguageBpe(learn_bpe(sources, num_merges), learn_bpe(targets, num_merges))


def _strategy_run(config: PipelineConfig, schedule: TrainingSchedule) -> StrategyRun:
    return StrategyRun(
        hyperparams=config.model,
        schedule=schedule,
        averaging=config.averaging,
        vocab_max_size=config.vocab_max_size,
        seed=config.seed,
    )


def _empty_synthetic() -> ParallelCorpus:
    return ParallelCorpus(())


def train_backward(
    parallel: ParallelCorpus,
    dev: ParallelCorpus,
    bpe: LanguageBpe,
    config: PipelineConfig,
    test: Optional[ParallelCorpus] = None,
) -> StageResult:
    """Modelo y -> x só com dados autênticos, já com média de checkpoints."""
    trained = train_strategy(
        parallel, _empty_synthetic(), dev, Strategy.MIX, Direction.BACKWARD,
        bpe.y, bpe.x, _strategy_run(config, config.backward_schedule),
        label="backward/baseline", test=test,
    )
    return StageResult(Translator(trained.checkpoint, bpe.y, bpe.x), trained.report)


def generate_synthetic(
    backward: Translator,
    monolingual: MonolingualCorpus,
    batch_size: int = 64,
    workers: int = 1,
    max_skip_ratio: float = 0.01,
) -> ParallelCorpus:
    """
    Traduz cada y do monolíngue com o modelo backward: pares (x′, y) SYNTHETIC.

    A ordem de Y é preservada. Sentenças cuja decodificação falha ou sai vazia
    são puladas e contadas; mais de `max_skip_ratio` puladas é erro.
    """
    if monolingual.size == 0:
        raise EmptyCorpusError("corpus monolíngue vazio")
    sentences = list(monolingual.sentences)
    chunks = [sentences[i : i + batch_size] for i in range(0, len(sentences), batch_size)]

    def _decode(chunk: List[Sentence]) -> List[Optional[Sentence]]:
        try:
            return list(backward.translate_sentences(chunk, batch_size))
        except NMTError:
            # cai para uma sentença por vez para isolar a falha
            out: List[Optional[Sentence]] = []
            for sentence in chunk:
                try:
                    out.append(backward.translate_sentences([sentence])[0])
                except NMTError as e:
                    log.debug(f"⚠️ sentença pulada: {e}")
                    out.append(None)
            return out

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            decoded = [s for chunk in pool.map(_decode, chunks) for s in chunk]
    else:
        decoded = [s for chunk in chunks for s in _decode(chunk)]

    pairs = []
    skipped = 0
    for source, target in zip(decoded, sentences):
        if not source:
            skipped += 1
            continue
        pairs.append(SentencePair(source, target, Origin.SYNTHETIC))
    ratio = skipped / len(sentences)
    if ratio > max_skip_ratio:
        raise SyntheticGenerationError(
            f"{skipped} de {len(sentences)} sentenças puladas ({ratio:.1%} > {max_skip_ratio:.1%})"
        )
    if skipped:
        log.warning(f"⚠️ {skipped} sentenças puladas na geração sintética")
    log.info(f"✅ {len(pairs)} pares sintéticos gerados")
    return ParallelCorpus(tuple(pairs))


def self_train(
    backward: Translator,
    authentic: ParallelCorpus,
    synthetic: ParallelCorpus,
    dev: ParallelCorpus,
    strategy: Strategy,
    config: PipelineConfig,
    test: Optional[ParallelCorpus] = None,
) -> StageResult:
    """
    Backward melhorado treinado com autêntico + sintético.

    MIX, TAGGED e os pré-treinos partem do zero; FINETUNE_SYNTH continua o
    backward recebido. O BPE é o do backward, ou reaprendido nos dados
    misturados com `relearn_bpe_on_mixed`.
    """
    y_bpe, x_bpe = backward.src_bpe, backward.tgt_bpe
    if config.relearn_bpe_on_mixed:
        mixed = authentic.pairs + synthetic.pairs
        relearned = learn_language_bpe(
            [p.source for p in mixed], [p.target for p in mixed], config.bpe_merges, config.bpe_mode
        )
        x_bpe, y_bpe = relearned.x, relearned.y
    base = backward.checkpoint if strategy == Strategy.FINETUNE_SYNTH else None
    trained = train_strategy(
        authentic, synthetic, dev, strategy, Direction.BACKWARD,
        y_bpe, x_bpe, _strategy_run(config, config.self_train_schedule),
        label=f"backward/{strategy.value}", base=base, test=test,
    )
    return StageResult(Translator(trained.checkpoint, y_bpe, x_bpe), trained.report)


def train_forward(
    authentic: ParallelCorpus,
    synthetic: ParallelCorpus,
    dev: ParallelCorpus,
    strategy: Strategy,
    bpe: LanguageBpe,
    config: PipelineConfig,
    test: Optional[ParallelCorpus] = None,
    label: str = "",
) -> StageResult:
    """Modelo x -> y; sem sintético reduz ao forward de base."""
    if synthetic.size == 0:
        strategy = Strategy.MIX
    trained = train_strategy(
        authentic, synthetic, dev, strategy, Direction.FORWARD,
        bpe.x, bpe.y, _strategy_run(config, config.forward_schedule),
        label=label or f"forward/{strategy.value}", test=test,
    )
    return StageResult(Translator(trained.checkpoint, bpe.x, bpe.y), trained.report)


# -----------------------------------------------------------------------------
# Diretório de execução
# -----------------------------------------------------------------------------

def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def run_fingerprint(data: PipelineData, config: PipelineConfig) -> str:
    """sha256 da configuração e dos corpora: muda com semente, config ou dados."""
    digest = hashlib.sha256(config.model_dump_json().encode("utf-8"))
    for corpus in (data.train, data.dev, data.test or ParallelCorpus(())):
        for pair in corpus.pairs:
            digest.update(f"{' '.join(pair.source)}\t{' '.join(pair.target)}\n".encode("utf-8"))
        digest.update(b"\x1d")
    for sentence in data.monolingual.sentences:
        digest.update(f"{' '.join(sentence)}\n".encode("utf-8"))
    return digest.hexdigest()


def forward_arm_name(strategy: Strategy, synthetic: Optional[str]) -> str:
    return "baseline" if synthetic is None else f"{strategy.value}-{synthetic}"


class PipelineRun:
    """
    Executa os estágios sobre um diretório, reaproveitando os já concluídos.

    Args:
        run_dir: diretório da execução (criado se não existir)
        data: corpora em palavras
        config: configuração do pipeline
        resume: False recalcula tudo mesmo com stage.json presente
    """

    def __init__(self, run_dir: str, data: PipelineData, config: PipelineConfig, resume: bool = True):
        self.run_dir = run_dir
        self.data = data
        self.config = config
        self.resume = resume
        self.reports: Dict[str, ExperimentReport] = {}
        self._results: Dict[str, object] = {}
        self.fingerprint = run_fingerprint(data, config)
        os.makedirs(run_dir, exist_ok=True)

    # --- infraestrutura ---

    def path(self, *parts: str) -> str:
        return os.path.join(self.run_dir, *parts)

    def _matches(self, meta_path: str) -> bool:
        """True se o arquivo existe e foi gravado com a mesma config e os mesmos dados."""
        if not os.path.isfile(meta_path):
            return False
        try:
            with open(meta_path, encoding="utf-8") as fh:
                recorded = json.load(fh).get("fingerprint")
        except (OSError, ValueError):
            recorded = None
        if recorded != self.fingerprint:
            log.warning(f"⚠️ {os.path.relpath(meta_path, self.run_dir)}: gravado com outra config ou outros dados")
            return False
        return True

    def discard_stale(self) -> List[str]:
        """Remove estágios gravados com outra config ou outros dados (ex: outra semente)."""
        removed: List[str] = []
        for root, _, files in sorted(os.walk(self.run_dir)):
            if STAGE_FILE not in files or not os.path.isdir(root):
                continue
            if not self._matches(os.path.join(root, STAGE_FILE)):
                shutil.rmtree(root)
                removed.append(os.path.relpath(root, self.run_dir).replace(os.sep, "/"))
                log.warning(f"⚠️ {removed[-1]}: removido")
        return removed

    def is_done(self, stage: str) -> bool:
        return self.resume and self._matches(self.path(stage, STAGE_FILE))

    def _mark_done(self, stage: str, **meta) -> None:
        with open(self.path(stage, STAGE_FILE), "w", encoding="utf-8") as fh:
            json.dump({"stage": stage, "fingerprint": self.fingerprint, **meta}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _stage(self, stage: str, compute: Callable[[], T], save: Callable[[T], None], load: Callable[[], T]) -> T:
        # cada estágio roda uma vez por execução, mesmo sem resume
        if stage in self._results:
            return self._results[stage]  # type: ignore[return-value]
        if self.is_done(stage):
            log.info(f"🔄 {stage}: reaproveitado")
            self._results[stage] = load()
            return self._results[stage]  # type: ignore[return-value]
        os.makedirs(self.path(stage), exist_ok=True)
        if os.path.isfile(self.path(stage, STAGE_FILE)):
            os.remove(self.path(stage, STAGE_FILE))
        try:
            result = compute()
            save(result)
        except PipelineStageError:
            raise
        except Exception as e:
            log.error(f"❌ {stage}: {e}")
            raise PipelineStageError(stage, e) from e
        self._mark_done(stage)
        log.info(f"✅ {stage}: concluído")
        self._results[stage] = result
        return result

    def _save_model(self, stage: str, result: StageResult) -> None:
        result.translator.save(self.path(stage, "model"))
        write_report(result.report, self.path(stage, "report"))
        self.reports[stage] = result.report

    def _load_model(self, stage: str) -> StageResult:
        result = StageResult(Translator.load(self.path(stage, "model")), read_report(self.path(stage, "report")))
        self.reports[stage] = result.report
        return result

    def _save_synthetic(self, stage: str, corpus: ParallelCorpus) -> None:
        save_corpus(corpus, self.path(stage, "synth.x"), self.path(stage, "synth.y"))

    def _load_synthetic(self, stage: str) -> ParallelCorpus:
        return load_corpus(self.path(stage, "synth.x"), self.path(stage, "synth.y"), Origin.SYNTHETIC)

    # --- estágios ---

    def bpe(self) -> LanguageBpe:
        stage = "stage-1"
        if "bpe" in self._results:
            return self._results["bpe"]  # type: ignore[return-value]
        meta = self.path(stage, "bpe", BPE_META_FILE)
        if self.resume and self._matches(meta):
            return LanguageBpe(
                BpeModel.load(self.path(stage, "bpe", "x.bpe")), BpeModel.load(self.path(stage, "bpe", "y.bpe"))
            )
        try:
            bpe = learn_language_bpe(
                self.data.train.sources(), self.data.train.targets(), self.config.bpe_merges, self.config.bpe_mode
            )
        except NMTError as e:
            raise PipelineStageError(stage, e) from e
        bpe.x.save(self.path(stage, "bpe", "x.bpe"))
        bpe.y.save(self.path(stage, "bpe", "y.bpe"))
        with open(meta, "w", encoding="utf-8") as fh:
            json.dump({"fingerprint": self.fingerprint}, fh, indent=2)
            fh.write("\n")
        self._results["bpe"] = bpe
        return bpe

    def backward_baseline(self) -> StageResult:
        stage = "stage-1"
        bpe = self.bpe()
        return self._stage(
            stage,
            lambda: train_backward(self.data.train, self.data.dev, bpe, self.config, self.data.test),
            lambda r: self._save_model(stage, r),
            lambda: self._load_model(stage),
        )

    def _generate(self, translator: Translator) -> ParallelCorpus:
        return generate_synthetic(
            translator,
            self.data.monolingual,
            self.config.generation_batch_size,
            self.config.generation_workers,
            self.config.max_skip_ratio,
        )

    def synth_a(self) -> ParallelCorpus:
        stage = "stage-2"
        baseline = self.backward_baseline()
        return self._stage(
            stage,
            lambda: self._generate(baseline.translator),
            lambda c: self._save_synthetic(stage, c),
            lambda: self._load_synthetic(stage),
        )

    def self_train_arm(self, strategy: Strategy) -> StageResult:
        stage = os.path.join("stage-3", strategy.value)
        baseline = self.backward_baseline()
        synthetic = self.synth_a()
        return self._stage(
            stage,
            lambda: self_train(
                baseline.translator, self.data.train, synthetic, self.data.dev, strategy, self.config, self.data.test
            ),
            lambda r: self._save_model(stage, r),
            lambda: self._load_model(stage),
        )

    def synth_b(self) -> ParallelCorpus:
        stage = "stage-4"
        improved = self.self_train_arm(self.config.strategy_backward)
        return self._stage(
            stage,
            lambda: self._generate(improved.translator),
            lambda c: self._save_synthetic(stage, c),
            lambda: self._load_synthetic(stage),
        )

    def forward_arm(self, strategy: Strategy, synthetic: Optional[str]) -> StageResult:
        """Braço forward sem sintético (`synthetic=None`), com synth_A ou com synth_B."""
        name = forward_arm_name(strategy, synthetic)
        stage = os.path.join("stage-5", name)
        bpe = self.bpe()
        if synthetic is None:
            corpus = ParallelCorpus(())
        elif synthetic == SYNTH_A:
            corpus = self.synth_a()
        elif synthetic == SYNTH_B:
            corpus = self.synth_b()
        else:
            raise PipelineStageError(stage, ValueError(f"corpus sintético desconhecido: {synthetic}"))
        return self._stage(
            stage,
            lambda: train_forward(
                self.data.train, corpus, self.data.dev, strategy, bpe, self.config, self.data.test,
                label=f"forward/{name}",
            ),
            lambda r: self._save_model(stage, r),
            lambda: self._load_model(stage),
        )

    def write_manifest(self) -> str:
        """Lista `caminho<TAB>sha256` de todos os artefatos, em ordem."""
        rows: List[Tuple[str, str]] = []
        for root, _, files in os.walk(self.run_dir):
            for name in files:
                full = os.path.join(root, name)
                rel = os.path.relpath(full, self.run_dir).replace(os.sep, "/")
                if rel == MANIFEST_FILE or name.endswith(".tmp"):
                    continue
                rows.append((rel, _sha256(full)))
        path = self.path(MANIFEST_FILE)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rel, digest in sorted(rows):
                fh.write(f"{rel}\t{digest}\n")
        return path


def run_full_pipeline(
    data: PipelineData, config: PipelineConfig, run_dir: str, resume: bool = True
) -> StageArtifacts:
    """
    backward -> synth_A -> self-training -> synth_B -> forward (com synth_B).

    Uma falha interrompe com PipelineStageError (nome do estágio); estágios
    concluídos ficam no disco e são reaproveitados na próxima execução.
    """
    run = PipelineRun(run_dir, data, config, resume)
    baseline = run.backward_baseline()
    synth_a = run.synth_a()
    improved = run.self_train_arm(config.strategy_backward)
    synth_b = run.synth_b()
    forward = run.forward_arm(config.strategy_forward, SYNTH_B)
    run.write_manifest()
    return StageArtifacts(
        backward_baseline=baseline.translator,
        backward_improved=improved.translator,
        forward_model=forward.translator,
        synth_A=synth_a,
        synth_B=synth_b,
        reports=dict(run.reports),
    )
