"""
Loggers com o prefixo de tag ("[TRAIN] ✅ ...") usado em todo o projeto.
"""
import logging
import sys

from app.core.config import settings

_FORMAT = "[%(name)s] %(message)s"


def get_logger(tag: str) -> logging.Logger:
    """
    Retorna o logger da tag, criando o handler de stderr na primeira chamada.

    Args:
        tag: nome curto em maiúsculas (ex: "BPE", "PIPELINE")
    """
    logger = logging.getLogger(tag)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_FORMAT))
        logger.addHandler(handler)
        logger.setLevel(getattr(logging, settings.LOG_LEVEL, logging.INFO))
        logger.propagate = False
    return logger
