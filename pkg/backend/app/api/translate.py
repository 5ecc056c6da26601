"""
Tradução gulosa com o pacote (checkpoint + BPE) em NMT_MODEL_DIR.
"""
from threading import Lock
from typing import Optional

from fastapi import APIRouter, HTTPException

from app.core.config import settings
from app.core.errors import NMTError
from app.core.log import get_logger
from app.core.translator import Translator
from app.models.schemas import TranslateIn, TranslateOut

router = APIRouter()
log = get_logger("API")

_translator: Optional[Translator] = None
_lock = Lock()


def get_translator() -> Translator:
    """Carrega o pacote na primeira requisição e reaproveita nas seguintes."""
    global _translator
    with _lock:
        if _translator is None:
            if not settings.MODEL_DIR or not Translator.exists(settings.MODEL_DIR):
                raise HTTPException(status_code=503, detail="Nenhum modelo configurado (NMT_MODEL_DIR)")
            try:
                _translator = Translator.load(settings.MODEL_DIR)
            except NMTError as e:
                log.error(f"❌ Falha ao carregar modelo: {e}")
                raise HTTPException(status_code=503, detail=f"Modelo inválido: {e}")
            log.info(f"✅ Modelo carregado de {settings.MODEL_DIR}")
        return _translator


def set_translator(translator: Optional[Translator]) -> None:
    global _translator
    with _lock:
        _translator = translator


def translator_loaded() -> bool:
    return _translator is not None


@router.post("/translate", response_model=TranslateOut)
def translate(body: TranslateIn):
    if any(not s.split() for s in body.sentences):
        raise HTTPException(status_code=400, detail="Sentença vazia na entrada")
    translator = get_translator()
    try:
        return TranslateOut(translations=translator.translate(body.sentences))
    except NMTError as e:
        raise HTTPException(status_code=400, detail=str(e))
