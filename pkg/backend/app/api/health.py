from fastapi import APIRouter

from app.api.translate import translator_loaded

router = APIRouter()

@router.get("/healthz")
def healthz():
    return {"status": "ok", "model_loaded": translator_loaded()}
