from fastapi import APIRouter, HTTPException

from app.core.bleu import bleu_corpus
from app.core.errors import BleuInputError
from app.models.schemas import BleuIn, BleuScore

router = APIRouter()

@router.post("/bleu", response_model=BleuScore)
def bleu(body: BleuIn):
    hypotheses = [tuple(h.split()) for h in body.hypotheses]
    references = [tuple(r.split()) for r in body.references]
    try:
        return bleu_corpus(hypotheses, references, body.smoothing)
    except BleuInputError as e:
        raise HTTPException(status_code=400, detail=str(e))
