import logging

import pytest
from fastapi.testclient import TestClient

from app.api import translate as translate_api
from app.core.checkpoint import init_model
from app.core.config import settings
from app.core.text import BpeModel, Vocabulary
from app.core.translator import MODEL_FILE, Translator
from app.main import app
from app.models.schemas import ModelConfig

client = TestClient(app)


@pytest.fixture(autouse=True)
def no_model(monkeypatch):
    monkeypatch.setattr(settings, "MODEL_DIR", None)
    translate_api.set_translator(None)
    yield
    translate_api.set_translator(None)


@pytest.fixture
def tiny_translator():
    config = ModelConfig(hidden_size=4, num_layers=1, src_vocab_size=9, tgt_vocab_size=9, max_decode_length=5)
    checkpoint = init_model(config, Vocabulary.of_size(9), Vocabulary.of_size(9))
    return Translator(checkpoint, BpeModel(), BpeModel())


def test_healthz():
    response = client.get("/healthz")
    assert response.status_code == 200
    assert response.json() == {"status": "ok", "model_loaded": False}


def test_bleu_endpoint():
    response = client.post(
        "/api/bleu",
        json={
            "hypotheses": ["the cat sat on the mat"],
            "references": ["the cat is on the mat"],
            "smoothing": "add1",
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert body["score"] == pytest.approx(48.549, abs=0.05)
    assert body["brevity_penalty"] == 1.0


def test_bleu_length_mismatch():
    response = client.post("/api/bleu", json={"hypotheses": ["a"], "references": ["a", "b"]})
    assert response.status_code == 400


def test_translate_without_model():
    response = client.post("/api/translate", json={"sentences": ["w0 w1"]})
    assert response.status_code == 503


def test_translate_with_model(tiny_translator):
    translate_api.set_translator(tiny_translator)
    response = client.post("/api/translate", json={"sentences": ["w0 w1", "w2"]})
    assert response.status_code == 200
    translations = response.json()["translations"]
    assert translations == tiny_translator.translate(["w0 w1", "w2"])
    assert client.get("/healthz").json()["model_loaded"] is True


def test_translate_rejects_empty_sentence(tiny_translator):
    translate_api.set_translator(tiny_translator)
    response = client.post("/api/translate", json={"sentences": ["w0", "  "]})
    assert response.status_code == 400


def test_translate_loads_from_model_dir(tmp_path, monkeypatch, tiny_translator):
    tiny_translator.save(str(tmp_path / "bundle"))
    monkeypatch.setattr(settings, "MODEL_DIR", str(tmp_path / "bundle"))
    response = client.post("/api/translate", json={"sentences": ["w0"]})
    assert response.status_code == 200
    assert len(response.json()["translations"]) == 1


class _Recorder(logging.Handler):
    def __init__(self):
        super().__init__()
        self.messages = []

    def emit(self, record):
        self.messages.append((record.levelno, record.getMessage()))


def test_broken_bundle_is_logged_and_rejected(tmp_path, monkeypatch, tiny_translator):
    bundle = tmp_path / "bundle"
    tiny_translator.save(str(bundle))
    (bundle / MODEL_FILE).write_bytes(b"lixo")
    monkeypatch.setattr(settings, "MODEL_DIR", str(bundle))
    recorder = _Recorder()
    translate_api.log.addHandler(recorder)
    try:
        response = client.post("/api/translate", json={"sentences": ["w0"]})
    finally:
        translate_api.log.removeHandler(recorder)
    assert response.status_code == 503
    assert any(level == logging.ERROR and "Falha ao carregar modelo" in msg for level, msg in recorder.messages)
