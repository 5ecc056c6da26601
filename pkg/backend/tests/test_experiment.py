import os
import textwrap

import pytest

from app.cli import main
from app.core import experiment
from app.core.config import settings
from app.core.errors import ConfigurationError
from app.core.experiment import (
    collect_reports,
    emit_curves,
    emit_outputs,
    format_comparison,
    load_experiment_config,
    parse_experiment_config,
)
from app.core.training import write_report
from app.models.schemas import ExperimentReport, Strategy, ToyTask

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")

TOY = textwrap.dedent(
    """
    [experiment]
    name = teste
    seed = 3
    output_dir = runs/teste
    backward_arms = MIX, TAGGED
    forward_strategies = PRETRAIN_SYNTH_THEN_AUTH

    [toy]
    task = COPY
    vocab_size = 8

    [model]
    hidden_size = 16
    num_layers = 1

    [schedule]
    eval_interval_steps = 50
    max_steps = 500

    [schedule.forward]
    max_steps = 900

    [pipeline]
    averaging_k = 3
    averaging_end = best
    bpe_merges = 20
    """
)


def _parse(text, **kwargs):
    return parse_experiment_config(textwrap.dedent(text), **kwargs)


# -----------------------------------------------------------------------------
# Configuração
# -----------------------------------------------------------------------------

def test_parse_toy_config():
    config = parse_experiment_config(TOY)
    assert config.name == "teste"
    assert config.toy.task == ToyTask.COPY and config.toy.vocab_size == 8
    assert config.data is None
    assert config.backward_arms == [Strategy.MIX, Strategy.TAGGED]
    assert config.forward_strategies == [Strategy.PRETRAIN_SYNTH_THEN_AUTH]
    assert config.pipeline.model.hidden_size == 16
    assert config.pipeline.averaging.k == 3 and config.pipeline.averaging.end == "best"
    assert config.pipeline.bpe_merges == 20


def test_schedule_sections_inherit_base():
    pipeline = parse_experiment_config(TOY).pipeline
    assert pipeline.backward_schedule.max_steps == 500
    assert pipeline.self_train_schedule.max_steps == 500
    assert pipeline.forward_schedule.max_steps == 900
    assert pipeline.forward_schedule.eval_interval_steps == 50


def test_seed_propagates():
    config = parse_experiment_config(TOY)
    assert config.seed == config.pipeline.seed == config.toy.seed == 3
    override = parse_experiment_config(TOY, seed=9)
    assert override.seed == override.pipeline.seed == override.toy.seed == 9


def test_numeric_averaging_end():
    config = _parse(
        """
        [toy]
        task = COPY
        [pipeline]
        averaging_end = 300
        """
    )
    assert config.pipeline.averaging.end == 300


def test_unknown_section():
    with pytest.raises(ConfigurationError) as info:
        _parse("[toy]\ntask = COPY\n[extra]\nx = 1\n")
    assert info.value.section == "extra"


def test_unknown_key_names_section():
    with pytest.raises(ConfigurationError) as info:
        _parse("[toy]\ntask = COPY\n[model]\nhiden_size = 8\n")
    assert info.value.section == "model"
    assert "hiden_size" in str(info.value)


def test_unknown_pipeline_key():
    with pytest.raises(ConfigurationError) as info:
        _parse("[toy]\ntask = COPY\n[pipeline]\naveraging_kk = 3\n")
    assert info.value.section == "pipeline"


def test_invalid_value_names_section():
    with pytest.raises(ConfigurationError) as info:
        _parse("[toy]\ntask = COPY\n[schedule]\nmax_steps = -1\n")
    assert info.value.section.startswith("schedule")


def test_unknown_strategy_in_arms():
    with pytest.raises(ConfigurationError) as info:
        _parse("[experiment]\nbackward_arms = MIX, SHUFFLE\n[toy]\ntask = COPY\n")
    assert info.value.section == "experiment"


def test_needs_exactly_one_data_source():
    with pytest.raises(ConfigurationError):
        _parse("[model]\nhidden_size = 8\n")
    with pytest.raises(ConfigurationError):
        _parse(
            """
            [toy]
            task = COPY
            [data]
            train_source = a
            train_target = b
            dev_source = c
            dev_target = d
            monolingual = e
            """
        )


def test_output_dir_override(monkeypatch):
    monkeypatch.setattr(settings, "OUTPUT_DIR", "/tmp/outro")
    assert parse_experiment_config(TOY).output_dir == "/tmp/outro"


def test_shipped_configs_parse():
    for name in ("toy_reverse_map.ini", "smoke.ini"):
        config = load_experiment_config(os.path.join(CONFIGS, name))
        assert config.toy is not None


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_experiment_config(str(tmp_path / "nao_existe.ini"))


def test_missing_data_files(tmp_path):
    config = _parse(
        f"""
        [data]
        train_source = {tmp_path}/train.x
        train_target = {tmp_path}/train.y
        dev_source = {tmp_path}/dev.x
        dev_target = {tmp_path}/dev.y
        monolingual = {tmp_path}/mono.y
        """
    )
    with pytest.raises(ConfigurationError) as info:
        experiment.load_data(config)
    assert info.value.section == "data"


# -----------------------------------------------------------------------------
# Tabela e curvas
# -----------------------------------------------------------------------------

def _report(label, curve, averaged=None, test=None):
    best = max(curve, key=lambda p: p[1]) if curve else None
    return ExperimentReport(
        label=label,
        curve=curve,
        best=best,
        averaged_bleu=averaged,
        averaged_window=(curve[-1][0], 2) if averaged is not None else None,
        test_bleu=test,
    )


def test_format_comparison():
    reports = {
        "backward/baseline": _report("backward/baseline", [(10, 5.0), (20, 7.5)], averaged=8.0, test=6.25),
        "forward/baseline": _report("forward/baseline", []),
    }
    assert format_comparison(reports).splitlines() == [
        "arm\tbest_bleu\tbest_step\taveraged_bleu\taveraged_window\ttest_bleu",
        "backward/baseline\t7.50\t20\t8.00\t20:2\t6.25",
        "forward/baseline\t-\t-\t-\t-\t-",
    ]


def test_emit_curves(tmp_path):
    reports = {
        "backward/MIX": _report("backward/MIX", [(10, 1.0), (20, 2.5)]),
        "forward/MIX-synth_B": _report("forward/MIX-synth_B", [(10, 3.0)]),
    }
    paths = emit_curves(reports, str(tmp_path / "curves"))
    assert [os.path.basename(p) for p in paths] == ["backward__MIX.data", "forward__MIX-synth_B.data"]
    assert (tmp_path / "curves" / "backward__MIX.data").read_text(encoding="utf-8") == "10\t1.0000\n20\t2.5000\n"
    index = (tmp_path / "curves" / "index.tsv").read_text(encoding="utf-8").splitlines()
    assert index == ["arm\tfile", "backward/MIX\tbackward__MIX.data", "forward/MIX-synth_B\tforward__MIX-synth_B.data"]


def test_emit_curves_needs_reports(tmp_path):
    with pytest.raises(ConfigurationError):
        emit_curves({}, str(tmp_path))


def test_collect_reports_table_order(tmp_path):
    run_dir = tmp_path / "run"
    layout = {
        "stage-5/PRETRAIN_SYNTH_THEN_AUTH-synth_A": "forward/PRETRAIN_SYNTH_THEN_AUTH-synth_A",
        "stage-5/MIX-synth_B": "forward/MIX-synth_B",
        "stage-5/baseline": "forward/baseline",
        "stage-3/TAGGED": "backward/TAGGED",
        "stage-3/MIX": "backward/MIX",
        "stage-1": "backward/baseline",
    }
    for stage, label in layout.items():
        write_report(_report(label, [(10, 1.0)]), str(run_dir / stage / "report"))
    reports = collect_reports(str(run_dir))
    assert list(reports) == [
        "backward/baseline",
        "backward/MIX",
        "backward/TAGGED",
        "forward/baseline",
        "forward/MIX-synth_B",
        "forward/PRETRAIN_SYNTH_THEN_AUTH-synth_A",
    ]
    comparison = emit_outputs(reports, str(run_dir))
    assert os.path.isfile(comparison)
    assert os.path.isfile(run_dir / "curves" / "index.tsv")


# -----------------------------------------------------------------------------
# Linha de comando
# -----------------------------------------------------------------------------

def test_cli_bleu(tmp_path, write_lines, capsys):
    hyp = write_lines(tmp_path / "hyp.txt", ["the cat sat on the mat"])
    ref = write_lines(tmp_path / "ref.txt", ["the cat is on the mat"])
    assert main(["bleu", "--hyp", hyp, "--ref", ref, "--smooth", "add1"]) == 0
    assert capsys.readouterr().out.startswith("BLEU = 48.55")


def test_cli_bleu_length_mismatch(tmp_path, write_lines):
    hyp = write_lines(tmp_path / "hyp.txt", ["a b", "c d"])
    ref = write_lines(tmp_path / "ref.txt", ["a b"])
    assert main(["bleu", "--hyp", hyp, "--ref", ref]) == 1


def test_cli_toy_gen_from_config(tmp_path, capsys):
    out = tmp_path / "toy"
    assert main(["toy-gen", str(out), "--config", os.path.join(CONFIGS, "smoke.ini"), "--seed", "4"]) == 0
    with open(out / "train.x", encoding="utf-8") as fh:
        assert len(fh.readlines()) == 60
    assert "monolingual" in capsys.readouterr().out


def test_cli_bpe_learn_and_apply(tmp_path, write_lines, capsys):
    corpus = write_lines(tmp_path / "corpus.txt", ["low low lower", "lowest newer"])
    model = str(tmp_path / "x.bpe")
    assert main(["bpe-learn", corpus, "-o", model, "--merges", "3"]) == 0
    assert main(["bpe-apply", model, corpus]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2
    assert lines[0].replace("@@ ", "") == "low low lower"


def test_cli_missing_config_exits_with_error(tmp_path):
    assert main(["pipeline", "--config", str(tmp_path / "nao_existe.ini")]) == 1


def test_cli_missing_input_file(tmp_path):
    assert main(["translate", str(tmp_path / "modelo")]) == 1
