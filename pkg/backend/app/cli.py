"""
Linha de comando: `python -m app <subcomando> ...` a partir de backend/.

Subcomandos: toy-gen, bpe-learn, bpe-apply, train, translate, bleu,
avg-ckpt, pipeline, report. Erros do domínio viram uma linha `[CLI] ❌` e
status de saída 1.
"""
import argparse
import os
import sys
from typing import List, Optional, Sequence

from app.core.bleu import bleu_corpus
from app.core.checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from app.core.errors import ConfigurationError, NMTError
from app.core.experiment import collect_reports, emit_outputs, load_data, load_experiment_config, run_experiment
from app.core.log import get_logger
from app.core.pipeline import learn_language_bpe
from app.core.text import (
    BpeModel,
    Direction,
    Origin,
    ParallelCorpus,
    apply_bpe,
    learn_bpe,
    load_corpus,
)
from app.core.toy import gen_toy_corpus, save_toy_corpus
from app.core.training import StrategyRun, train_strategy, write_report
from app.core.translator import Translator
from app.models.schemas import Smoothing, Strategy, ToyTask, ToyTaskSpec

log = get_logger("CLI")


def _read_lines(path: Optional[str]) -> List[str]:
    if path is None or path == "-":
        return [line.rstrip("\n") for line in sys.stdin]
    with open(path, "r", encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _write_lines(path: Optional[str], lines: Sequence[str]) -> None:
    text = "".join(line + "\n" for line in lines)
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -----------------------------------------------------------------------------
# Subcomandos
# -----------------------------------------------------------------------------

def cmd_toy_gen(args) -> int:
    if args.config:
        config = load_experiment_config(args.config, args.seed)
        if config.toy is None:
            raise ConfigurationError("configuração sem seção [toy]", section="toy")
        spec = config.toy
    else:
        spec = ToyTaskSpec(task=ToyTask(args.task))
        if args.seed is not None:
            spec = spec.model_copy(update={"seed": args.seed})
    paths = save_toy_corpus(gen_toy_corpus(spec), args.out)
    for name, path in paths.items():
        print(f"{name}\t{path}")
    return 0


def cmd_bpe_learn(args) -> int:
    sentences = [tuple(line.split()) for path in args.inputs for line in _read_lines(path) if line.strip()]
    model = learn_bpe(sentences, args.merges)
    model.save(args.output)
    log.info(f"✅ {len(model.merges)} merges gravados em {args.output}")
    return 0


def cmd_bpe_apply(args) -> int:
    model = BpeModel.load(args.model)
    lines = [" ".join(apply_bpe(model, tuple(line.split()))) for line in _read_lines(args.input)]
    _write_lines(args.output, lines)
    return 0


def cmd_train(args) -> int:
    config = load_experiment_config(args.config, args.seed)
    data = load_data(config)
    direction = Direction(args.direction.upper())
    pipeline = config.pipeline
    schedule = pipeline.backward_schedule if direction == Direction.BACKWARD else pipeline.forward_schedule
    # sem --strategy vale a do [schedule.*] do arquivo
    strategy = Strategy(args.strategy) if args.strategy else schedule.strategy

    synthetic = ParallelCorpus(())
    if args.synthetic_source and args.synthetic_target:
        synthetic = load_corpus(args.synthetic_source, args.synthetic_target, Origin.SYNTHETIC)
    bpe = learn_language_bpe(data.train.sources(), data.train.targets(), pipeline.bpe_merges, pipeline.bpe_mode)
    in_bpe, out_bpe = (bpe.y, bpe.x) if direction == Direction.BACKWARD else (bpe.x, bpe.y)
    run = StrategyRun(
        hyperparams=pipeline.model,
        schedule=schedule,
        averaging=pipeline.averaging,
        vocab_max_size=pipeline.vocab_max_size,
        seed=pipeline.seed,
    )
    base = Translator.load(args.base).checkpoint if args.base else None
    trained = train_strategy(
        data.train, synthetic, data.dev, strategy, direction, in_bpe, out_bpe, run,
        label=f"{direction.value.lower()}/{strategy.value}", base=base, test=data.test,
    )
    Translator(trained.checkpoint, in_bpe, out_bpe).save(args.out)
    write_report(trained.report, os.path.join(args.out, "report"))
    log.info(f"✅ modelo gravado em {args.out}")
    return 0


def cmd_translate(args) -> int:
    translator = Translator.load(args.model_dir)
    _write_lines(args.output, translator.translate(_read_lines(args.input), args.batch_size))
    return 0


def cmd_bleu(args) -> int:
    hypotheses = [tuple(line.split()) for line in _read_lines(args.hyp)]
    references = [tuple(line.split()) for line in _read_lines(args.ref)]
    score = bleu_corpus(hypotheses, references, Smoothing(args.smooth))
    print(score.format())
    return 0


def cmd_avg_ckpt(args) -> int:
    checkpoints = [load_checkpoint(path) for path in args.checkpoints]
    averaged = average_checkpoints(checkpoints, args.k, args.end_step)
    save_checkpoint(averaged, args.output)
    log.info(f"✅ média gravada em {args.output} (step {averaged.step})")
    return 0


def cmd_pipeline(args) -> int:
    config = load_experiment_config(args.config, args.seed)
    outcome = run_experiment(config, resume=not args.no_resume)
    with open(outcome.comparison_path, "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_report(args) -> int:
    path = emit_outputs(collect_reports(args.run_dir), args.run_dir)
    with open(path, "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


# -----------------------------------------------------------------------------
# Parser
# -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nmt", description="Self-training e back-translation para NMT")
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("toy-gen", help="Gera o par de idiomas de brinquedo")
    p.add_argument("out", help="diretório de saída")
    p.add_argument("--config", help="arquivo de experimento com seção [toy]")
    p.add_argument("--task", choices=[t.value for t in ToyTask], default=ToyTask.REVERSE_MAP.value)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_toy_gen)

    p = subparsers.add_parser("bpe-learn", help="Aprende merges BPE")
    p.add_argument("inputs", nargs="+", help="arquivos tokenizados (uma sentença por linha)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--merges", type=int, default=10_000)
    p.set_defaults(func=cmd_bpe_learn)

    p = subparsers.add_parser("bpe-apply", help="Segmenta um arquivo com um modelo BPE")
    p.add_argument("model")
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_bpe_apply)

    p = subparsers.add_parser("train", help="Treina um modelo com uma estratégia")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="diretório do pacote de tradução")
    p.add_argument("--direction", choices=["forward", "backward"], default="forward")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default=None)
    p.add_argument("--synthetic-source", default=None)
    p.add_argument("--synthetic-target", default=None)
    p.add_argument("--base", default=None, help="pacote a continuar (FINETUNE_SYNTH)")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser("translate", help="Tradução gulosa linha a linha")
    p.add_argument("model_dir")
    p.add_argument("input", nargs="?", default=None)
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_translate)

    p = subparsers.add_parser("bleu", help="BLEU de corpus")
    p.add_argument("--hyp", required=True, help="hipóteses tokenizadas")
    p.add_argument("--ref", required=True, help="referências tokenizadas")
    p.add_argument("--smooth", choices=[s.value for s in Smoothing], default=Smoothing.NONE.value)
    p.set_defaults(func=cmd_bleu)

    p = subparsers.add_parser("avg-ckpt", help="Média de checkpoints")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--end-step", type=int, default=None)
    p.set_defaults(func=cmd_avg_ckpt)

    p = subparsers.add_parser("pipeline", help="Roda o experimento completo")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-resume", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = subparsers.add_parser("report", help="Reemite tabela e curvas de um diretório de execução")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NMTError as e:
        log.error(f"❌ {e}")
        return 1
    except OSError as e:
        log.error(f"❌ {e.strerror}: {e.filename}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
