"""
Experimentos completos: leitura do arquivo de configuração, execução dos
braços (estratégias) e emissão da tabela comparativa e das curvas.
"""
from __future__ import annotations

import configparser
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Type

from pydantic import BaseModel, ValidationError

from app.core.config import settings
from app.core.errors import ConfigurationError
from app.core.log import get_logger
from app.core.pipeline import SYNTH_A, SYNTH_B, PipelineData, PipelineRun, forward_arm_name
from app.core.text import load_corpus, load_monolingual
from app.core.toy import gen_toy_corpus, save_toy_corpus
from app.core.training import read_report
from app.models.schemas import (
    AveragingWindow,
    DataPaths,
    ExperimentConfig,
    ExperimentReport,
    ModelHyperparams,
    PipelineConfig,
    Strategy,
    ToyTaskSpec,
    TrainingSchedule,
)

log = get_logger("EXPERIMENT")

COMPARISON_FILE = "comparison.tsv"
CURVES_DIR = "curves"
_SCHEDULE_STAGES = ("backward", "self_train", "forward")


# -----------------------------------------------------------------------------
# Configuração
# -----------------------------------------------------------------------------

def _section_values(parser: configparser.ConfigParser, section: str, model: Type[BaseModel]) -> Dict[str, str]:
    if not parser.has_section(section):
        return {}
    values = dict(parser.items(section))
    unknown = sorted(set(values) - set(model.model_fields))
    if unknown:
        raise ConfigurationError(f"chaves desconhecidas: {', '.join(unknown)}", section=section)
    return values


def _build(model: Type[BaseModel], section: str, values: Dict) -> BaseModel:
    try:
        return model.model_validate(values)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigurationError(f"{where}: {first['msg']}", section=section) from e


def _strategies(raw: str, section: str) -> List[Strategy]:
    try:
        return [Strategy(item.strip()) for item in raw.split(",") if item.strip()]
    except ValueError as e:
        raise ConfigurationError(str(e), section=section) from e


def parse_experiment_config(text: str, seed: Optional[int] = None) -> ExperimentConfig:
    """
    Converte o texto INI em ExperimentConfig.

    Seções: [experiment], [data] ou [toy], [model], [schedule],
    [schedule.backward], [schedule.self_train], [schedule.forward], [pipeline].
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"arquivo malformado: {e}") from e

    known = {"experiment", "data", "toy", "model", "schedule", "pipeline"} | {
        f"schedule.{stage}" for stage in _SCHEDULE_STAGES
    }
    for section in parser.sections():
        if section not in known:
            raise ConfigurationError("seção desconhecida", section=section)

    model = _build(ModelHyperparams, "model", _section_values(parser, "model", ModelHyperparams))
    base_schedule = _section_values(parser, "schedule", TrainingSchedule)
    schedules = {
        stage: _build(
            TrainingSchedule,
            f"schedule.{stage}",
            {**base_schedule, **_section_values(parser, f"schedule.{stage}", TrainingSchedule)},
        )
        for stage in _SCHEDULE_STAGES
    }

    pipeline_raw = dict(parser.items("pipeline")) if parser.has_section("pipeline") else {}
    averaging = _build(
        AveragingWindow,
        "pipeline",
        {
            key: value
            for key, value in (("k", pipeline_raw.pop("averaging_k", None)), ("end", pipeline_raw.pop("averaging_end", None)))
            if value is not None
        },
    )
    unknown = sorted(set(pipeline_raw) - set(PipelineConfig.model_fields))
    if unknown:
        raise ConfigurationError(f"chaves desconhecidas: {', '.join(unknown)}", section="pipeline")
    pipeline = _build(
        PipelineConfig,
        "pipeline",
        {
            **pipeline_raw,
            "averaging": averaging,
            "model": model,
            "backward_schedule": schedules["backward"],
            "self_train_schedule": schedules["self_train"],
            "forward_schedule": schedules["forward"],
        },
    )

    experiment = dict(parser.items("experiment")) if parser.has_section("experiment") else {}
    unknown = sorted(set(experiment) - set(ExperimentConfig.model_fields) | ({"data", "toy", "pipeline"} & set(experiment)))
    if unknown:
        raise ConfigurationError(f"chaves desconhecidas: {', '.join(unknown)}", section="experiment")
    for key in ("backward_arms", "forward_strategies"):
        if key in experiment:
            experiment[key] = _strategies(experiment[key], "experiment")
    data = _build(DataPaths, "data", _section_values(parser, "data", DataPaths)) if parser.has_section("data") else None
    toy = _build(ToyTaskSpec, "toy", _section_values(parser, "toy", ToyTaskSpec)) if parser.has_section("toy") else None

    config = _build(ExperimentConfig, "experiment", {**experiment, "data": data, "toy": toy, "pipeline": pipeline})
    # pipeline e toy herdam a semente do experimento
    config = config.with_seed(config.seed if seed is None else seed)
    if settings.OUTPUT_DIR:
        config = config.model_copy(update={"output_dir": settings.OUTPUT_DIR})
    return config


def load_experiment_config(path: str, seed: Optional[int] = None) -> ExperimentConfig:
    if not os.path.isfile(path):
        raise ConfigurationError(f"arquivo de configuração não encontrado: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_experiment_config(fh.read(), seed)


# -----------------------------------------------------------------------------
# Dados
# -----------------------------------------------------------------------------

def load_data(config: ExperimentConfig) -> PipelineData:
    if config.toy is not None:
        corpora = gen_toy_corpus(config.toy)
        save_toy_corpus(corpora, os.path.join(config.output_dir, "data"))
        return PipelineData(corpora.train, corpora.dev, corpora.monolingual, corpora.test)
    paths = config.data
    for path in (paths.train_source, paths.train_target, paths.dev_source, paths.dev_target, paths.monolingual):
        if not os.path.isfile(path):
            raise ConfigurationError(f"arquivo não encontrado: {path}", section="data")
    test = None
    if paths.test_source and paths.test_target:
        test = load_corpus(paths.test_source, paths.test_target)
    return PipelineData(
        load_corpus(paths.train_source, paths.train_target),
        load_corpus(paths.dev_source, paths.dev_target),
        load_monolingual(paths.monolingual),
        test,
    )


# -----------------------------------------------------------------------------
# Execução
# -----------------------------------------------------------------------------

def _backward_arm(args: Tuple[str, PipelineData, PipelineConfig, Strategy]) -> ExperimentReport:
    run_dir, data, pipeline, strategy = args
    return PipelineRun(run_dir, data, pipeline).self_train_arm(strategy).report


def _forward_arm(args: Tuple[str, PipelineData, PipelineConfig, Strategy, Optional[str]]) -> ExperimentReport:
    run_dir, data, pipeline, strategy, synthetic = args
    return PipelineRun(run_dir, data, pipeline).forward_arm(strategy, synthetic).report


def _run_all(fn, jobs: Sequence, workers: int) -> None:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fn, jobs))
    else:
        for job in jobs:
            fn(job)


def _clear_stages(run_dir: str) -> None:
    # os braços rodam em PipelineRun próprios, que sempre reaproveitam o disco
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("stage-"):
            log.warning(f"⚠️ removendo {name} (execução sem resume)")
            shutil.rmtree(os.path.join(run_dir, name))


class ExperimentOutcome(NamedTuple):
    run_dir: str
    reports: Dict[str, ExperimentReport]
    comparison_path: str


def run_experiment(config: ExperimentConfig, resume: bool = True) -> ExperimentOutcome:
    """
    Roda o baseline, os braços backward, synth_B e os braços forward.

    Os artefatos compartilhados (baseline, synth_A, synth_B) são produzidos
    antes dos braços que dependem deles e depois só lidos.
    """
    os.makedirs(config.output_dir, exist_ok=True)
    log.info(f"🔄 experimento '{config.name}' em {config.output_dir} (seed {config.seed})")
    if not resume:
        _clear_stages(config.output_dir)
    data = load_data(config)
    pipeline = config.pipeline
    run = PipelineRun(config.output_dir, data, pipeline)
    run.discard_stale()

    run.backward_baseline()
    run.synth_a()
    arms = list(dict.fromkeys(config.backward_arms))
    _run_all(_backward_arm, [(config.output_dir, data, pipeline, s) for s in arms], config.workers)
    run.synth_b()

    forward_jobs = [(config.output_dir, data, pipeline, Strategy.MIX, None)]
    for strategy in dict.fromkeys(config.forward_strategies):
        for synthetic in (SYNTH_A, SYNTH_B):
            forward_jobs.append((config.output_dir, data, pipeline, strategy, synthetic))
    _run_all(_forward_arm, forward_jobs, config.workers)

    reports = collect_reports(config.output_dir)
    comparison = emit_outputs(reports, config.output_dir)
    run.write_manifest()
    log.info(f"✅ experimento concluído: {comparison}")
    return ExperimentOutcome(config.output_dir, reports, comparison)


# -----------------------------------------------------------------------------
# Relatórios, tabela e curvas
# -----------------------------------------------------------------------------

def collect_reports(run_dir: str) -> Dict[str, ExperimentReport]:
    """Relatórios persistidos de um diretório de execução, em ordem de tabela."""
    reports: Dict[str, ExperimentReport] = {}

    def _add(name: str, stage_dir: str) -> None:
        if os.path.isfile(os.path.join(stage_dir, "report.json")):
            reports[name] = read_report(os.path.join(stage_dir, "report"))

    _add("backward/baseline", os.path.join(run_dir, "stage-1"))
    for strategy in Strategy:
        _add(f"backward/{strategy.value}", os.path.join(run_dir, "stage-3", strategy.value))
    forward_dir = os.path.join(run_dir, "stage-5")
    baseline = forward_arm_name(Strategy.MIX, None)
    _add(f"forward/{baseline}", os.path.join(forward_dir, baseline))
    if os.path.isdir(forward_dir):
        for name in sorted(os.listdir(forward_dir)):
            if name != baseline:
                _add(f"forward/{name}", os.path.join(forward_dir, name))
    return reports


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.2f}"


def format_comparison(reports: Dict[str, ExperimentReport]) -> str:
    lines = ["arm\tbest_bleu\tbest_step\taveraged_bleu\taveraged_window\ttest_bleu"]
    for name, report in reports.items():
        best_bleu, best_step = (report.best[1], str(report.best[0])) if report.best else (None, "-")
        window = f"{report.averaged_window[0]}:{report.averaged_window[1]}" if report.averaged_window else "-"
        lines.append(
            f"{name}\t{_fmt(best_bleu)}\t{best_step}\t{_fmt(report.averaged_bleu)}\t{window}\t{_fmt(report.test_bleu)}"
        )
    return "\n".join(lines) + "\n"


def emit_curves(reports: Dict[str, ExperimentReport], directory: str) -> List[str]:
    """
    Uma série `step<TAB>dev_bleu` por braço (`<braço>.data`) + `index.tsv`.

    Returns:
        caminhos das séries, na ordem dos relatórios
    """
    if not reports:
        raise ConfigurationError("nenhum relatório para emitir curvas")
    os.makedirs(directory, exist_ok=True)
    paths: List[str] = []
    index_lines = ["arm\tfile"]
    for name, report in reports.items():
        filename = name.replace("/", "__") + ".data"
        path = os.path.join(directory, filename)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for step, bleu in report.curve:
                fh.write(f"{step}\t{bleu:.4f}\n")
        paths.append(path)
        index_lines.append(f"{name}\t{filename}")
    with open(os.path.join(directory, "index.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(index_lines) + "\n")
    return paths


def emit_outputs(reports: Dict[str, ExperimentReport], run_dir: str) -> str:
    """Grava comparison.tsv e as curvas; retorna o caminho da tabela."""
    if not reports:
        raise ConfigurationError(f"nenhum relatório encontrado em {run_dir}")
    path = os.path.join(run_dir, COMPARISON_FILE)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_comparison(reports))
    emit_curves(reports, os.path.join(run_dir, CURVES_DIR))
    return path
