"""
Modelos pydantic de configuração, relatórios e payloads da API.
"""
from __future__ import annotations

from enum import Enum
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Strategy(str, Enum):
    MIX = "MIX"
    TAGGED = "TAGGED"
    PRETRAIN_SYNTH_THEN_AUTH = "PRETRAIN_SYNTH_THEN_AUTH"
    PRETRAIN_AUTH_THEN_SYNTH = "PRETRAIN_AUTH_THEN_SYNTH"
    # Continua um modelo existente só com os dados sintéticos
    FINETUNE_SYNTH = "FINETUNE_SYNTH"


class Smoothing(str, Enum):
    NONE = "none"
    ADD1 = "add1"


class ToyTask(str, Enum):
    REVERSE_MAP = "REVERSE_MAP"
    COPY = "COPY"
    SHIFT_MAP = "SHIFT_MAP"


# -----------------------------------------------------------------------------
# Métrica
# -----------------------------------------------------------------------------

class BleuScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    score: float = Field(ge=0.0, le=100.0)
    # None = ordem sem n-gramas possíveis (excluída da média geométrica)
    precisions: Tuple[Optional[float], Optional[float], Optional[float], Optional[float]]
    brevity_penalty: float = Field(gt=0.0, le=1.0)
    hyp_length: int
    ref_length: int

    def format(self) -> str:
        parts = "/".join("-" if p is None else f"{100 * p:.1f}" for p in self.precisions)
        return f"BLEU = {self.score:.2f} ({parts}, BP={self.brevity_penalty:.3f})"


# -----------------------------------------------------------------------------
# Modelo e treino
# -----------------------------------------------------------------------------

class ModelHyperparams(BaseModel):
    """Hiperparâmetros independentes do vocabulário (escala de mesa por padrão)."""
    model_config = ConfigDict(frozen=True)

    hidden_size: int = 64
    num_layers: int = 2
    dropout_prob: float = 0.3
    learning_rate: float = 0.0002
    batch_size: int = 64
    max_decode_length: int = 100
    seed: int = 1234
    input_feeding: bool = True
    clip_norm: float = 5.0

    @field_validator("hidden_size", "num_layers", "batch_size", "max_decode_length")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("deve ser positivo")
        return v

    @field_validator("dropout_prob")
    @classmethod
    def _dropout_range(cls, v: float) -> float:
        if not 0.0 <= v < 1.0:
            raise ValueError("dropout deve estar em [0, 1)")
        return v

    @field_validator("learning_rate", "clip_norm")
    @classmethod
    def _strictly_positive(cls, v: float) -> float:
        if v <= 0:
            raise ValueError("deve ser > 0")
        return v

    def with_vocab(self, src_vocab_size: int, tgt_vocab_size: int) -> "ModelConfig":
        return ModelConfig(
            **self.model_dump(exclude={"src_vocab_size", "tgt_vocab_size"}),
            src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size
        )


class ModelConfig(ModelHyperparams):
    src_vocab_size: int
    tgt_vocab_size: int

    @field_validator("src_vocab_size", "tgt_vocab_size")
    @classmethod
    def _room_for_specials(cls, v: int) -> int:
        if v < 5:
            raise ValueError("vocabulário precisa acomodar os 5 tokens especiais")
        return v

    @classmethod
    def full_scale(cls, src_vocab_size: int, tgt_vocab_size: int) -> "ModelConfig":
        return cls(hidden_size=512, src_vocab_size=src_vocab_size, tgt_vocab_size=tgt_vocab_size)


class TrainingSchedule(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy: Strategy = Strategy.MIX
    eval_interval_steps: int = 200
    max_steps: int = 8000
    patience_evals: int = 4
    min_improvement_bleu: float = 0.2
    checkpoint_keep: int = 8
    reset_optimizer_between_phases: bool = False
    # Guarda todos os snapshots (necessário para janela de média explícita)
    retain_all: bool = False

    @field_validator("eval_interval_steps", "patience_evals", "checkpoint_keep")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("deve ser positivo")
        return v

    @field_validator("max_steps")
    @classmethod
    def _non_negative(cls, v: int) -> int:
        if v < 0:
            raise ValueError("deve ser >= 0")
        return v

    @field_validator("min_improvement_bleu")
    @classmethod
    def _min_improvement(cls, v: float) -> float:
        if v < 0:
            raise ValueError("deve ser >= 0")
        return v

    @classmethod
    def full_scale(cls, max_steps: int = 200_000, **kwargs) -> "TrainingSchedule":
        return cls(eval_interval_steps=5000, max_steps=max_steps, **kwargs)


class PhaseSummary(BaseModel):
    label: str
    start_step: int
    end_step: int
    best: Optional[Tuple[int, float]] = None


class ExperimentReport(BaseModel):
    label: str = ""
    curve: List[Tuple[int, float]] = Field(default_factory=list)
    best: Optional[Tuple[int, float]] = None
    averaged_bleu: Optional[float] = None
    averaged_window: Optional[Tuple[int, int]] = None
    test_bleu: Optional[float] = None
    phases: List[PhaseSummary] = Field(default_factory=list)
    wall_time: float = 0.0

    @model_validator(mode="after")
    def _curve_invariants(self) -> "ExperimentReport":
        steps = [s for s, _ in self.curve]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("passos da curva devem ser estritamente crescentes")
        if self.curve:
            top = max(b for _, b in self.curve)
            if self.best is None or self.best[1] != top:
                raise ValueError("best deve ser o máximo da curva")
        return self


# -----------------------------------------------------------------------------
# Pipeline e experimento
# -----------------------------------------------------------------------------

class AveragingWindow(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = 8
    # "last": últimos k snapshots; "best": k snapshots terminando na melhor
    # avaliação; inteiro: k snapshots terminando nesse passo
    end: Union[Literal["last", "best"], int] = "last"

    @field_validator("k")
    @classmethod
    def _k_positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("k deve ser >= 1")
        return v


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    strategy_backward: Strategy = Strategy.MIX
    strategy_forward: Strategy = Strategy.MIX
    averaging: AveragingWindow = AveragingWindow()
    seed: int = 1
    model: ModelHyperparams = ModelHyperparams()
    bpe_merges: int = 10_000
    bpe_mode: Literal["separate", "joint"] = "separate"
    relearn_bpe_on_mixed: bool = False
    vocab_max_size: int = 50_000
    backward_schedule: TrainingSchedule = TrainingSchedule()
    self_train_schedule: TrainingSchedule = TrainingSchedule()
    forward_schedule: TrainingSchedule = TrainingSchedule()
    generation_batch_size: int = 64
    generation_workers: int = 1
    max_skip_ratio: float = 0.01

    @field_validator("bpe_merges")
    @classmethod
    def _merges(cls, v: int) -> int:
        if v < 0:
            raise ValueError("bpe_merges deve ser >= 0")
        return v

    @field_validator("vocab_max_size", "generation_batch_size", "generation_workers")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("deve ser positivo")
        return v


class ToyTaskSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    task: ToyTask = ToyTask.REVERSE_MAP
    vocab_size: int = 24
    min_length: int = 3
    max_length: int = 8
    train_size: int = 2000
    dev_size: int = 200
    test_size: int = 200
    monolingual_size: int = 8000
    seed: int = 7

    @model_validator(mode="after")
    def _sizes(self) -> "ToyTaskSpec":
        for name in ("vocab_size", "min_length", "train_size", "dev_size", "test_size", "monolingual_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} deve ser positivo")
        if self.max_length < self.min_length:
            raise ValueError("max_length < min_length")
        return self


class DataPaths(BaseModel):
    model_config = ConfigDict(frozen=True)

    train_source: str
    train_target: str
    dev_source: str
    dev_target: str
    monolingual: str
    test_source: Optional[str] = None
    test_target: Optional[str] = None


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "experiment"
    seed: int = 1
    output_dir: str = "runs/experiment"
    data: Optional[DataPaths] = None
    toy: Optional[ToyTaskSpec] = None
    pipeline: PipelineConfig = PipelineConfig()
    backward_arms: List[Strategy] = Field(
        default_factory=lambda: [
            Strategy.MIX,
            Strategy.TAGGED,
            Strategy.PRETRAIN_SYNTH_THEN_AUTH,
            Strategy.PRETRAIN_AUTH_THEN_SYNTH,
        ]
    )
    forward_strategies: List[Strategy] = Field(
        default_factory=lambda: [Strategy.MIX, Strategy.PRETRAIN_SYNTH_THEN_AUTH]
    )
    workers: int = 1

    @model_validator(mode="after")
    def _one_data_source(self) -> "ExperimentConfig":
        if (self.data is None) == (self.toy is None):
            raise ValueError("informe exatamente uma fonte de dados: [data] ou [toy]")
        if self.workers < 1:
            raise ValueError("workers deve ser >= 1")
        return self

    def with_seed(self, seed: int) -> "ExperimentConfig":
        update = {"seed": seed, "pipeline": self.pipeline.model_copy(update={"seed": seed})}
        if self.toy is not None:
            update["toy"] = self.toy.model_copy(update={"seed": seed})
        return self.model_copy(update=update)


# -----------------------------------------------------------------------------
# Payloads da API
# -----------------------------------------------------------------------------

class TranslateIn(BaseModel):
    sentences: List[str]


class TranslateOut(BaseModel):
    translations: List[str]


class BleuIn(BaseModel):
    hypotheses: List[str]
    references: List[str]
    smoothing: Smoothing = Smoothing.NONE
