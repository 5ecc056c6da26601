import os
import sys

import numpy as np
import pytest

# Adiciona o diretório backend ao path para que os imports funcionem
backend_dir = os.path.join(os.path.dirname(__file__), "..")
sys.path.insert(0, backend_dir)

os.environ.setdefault("NMT_PROGRESS", "false")
os.environ.setdefault("NMT_LOG_LEVEL", "WARNING")

from app.core.checkpoint import init_model  # noqa: E402
from app.core.text import Origin, ParallelCorpus, Vocabulary  # noqa: E402
from app.models.schemas import ModelConfig, ModelHyperparams, TrainingSchedule  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="roda as reproduções longas")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: reprodução longa no benchmark de brinquedo")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="precisa de --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(hidden_size=4, num_layers=2, dropout_prob=0.0, src_vocab_size=7, tgt_vocab_size=7, seed=3)


@pytest.fixture
def tiny_checkpoint(tiny_config):
    return init_model(tiny_config)


@pytest.fixture
def tiny_hyperparams() -> ModelHyperparams:
    return ModelHyperparams(hidden_size=8, num_layers=1, dropout_prob=0.0, learning_rate=0.01, batch_size=8, max_decode_length=10)


@pytest.fixture
def tiny_schedule() -> TrainingSchedule:
    return TrainingSchedule(eval_interval_steps=2, max_steps=4, checkpoint_keep=2)


@pytest.fixture
def copy_corpus() -> ParallelCorpus:
    words = ["ba", "de", "gi", "ko", "lu", "ma"]
    rng = np.random.default_rng(0)
    sentences = [tuple(words[i] for i in rng.integers(0, len(words), size=int(rng.integers(2, 5)))) for _ in range(24)]
    return ParallelCorpus.from_sentences(sentences, sentences, Origin.AUTHENTIC)


@pytest.fixture
def write_lines():
    def _write(path, lines):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("".join(line + "\n" for line in lines))
        return str(path)

    return _write
