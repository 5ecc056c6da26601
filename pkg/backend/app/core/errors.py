"""
Hierarquia de erros do toolkit.

Toda falha prevista pelo domínio herda de NMTError, assim a CLI e a API
conseguem traduzir o erro numa mensagem curta sem esconder bugs de verdade.
"""
from typing import Optional


class NMTError(Exception):
    """Raiz de todos os erros do domínio."""


class ConfigurationError(NMTError, ValueError):
    def __init__(self, message: str, section: Optional[str] = None):
        self.section = section
        prefix = f"[{section}] " if section else ""
        super().__init__(f"{prefix}{message}")


# ---------- text-pipeline ----------

class CorpusAlignmentError(NMTError, ValueError):
    pass


class MalformedCorpusError(NMTError, ValueError):
    def __init__(self, path: str, line: int, reason: str = "linha vazia"):
        self.path = path
        self.line = line
        super().__init__(f"{path}: {reason} na linha {line}")


class EmptyCorpusError(NMTError, ValueError):
    pass


class DoubleTaggingError(NMTError, ValueError):
    pass


# ---------- metrics ----------

class BleuInputError(NMTError, ValueError):
    pass


# ---------- neural-core ----------

class TokenIdError(NMTError, ValueError):
    pass


class AttentionMaskError(NMTError, ValueError):
    pass


class ShapeMismatchError(NMTError, ValueError):
    pass


class VocabularyMismatchError(NMTError, ValueError):
    pass


class CheckpointCorruptError(NMTError):
    pass


class CheckpointVersionError(NMTError):
    def __init__(self, found: int, supported: int):
        self.found = found
        self.supported = supported
        super().__init__(f"versão de checkpoint {found} não suportada (esperado {supported})")


# ---------- training / pipeline ----------

class DivergenceError(NMTError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"loss não finita ({loss}) no passo {step}")


class UnknownStrategyError(NMTError, ValueError):
    pass


class SyntheticGenerationError(NMTError):
    pass


class PipelineStageError(NMTError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"estágio '{stage}' falhou: {type(cause).__name__}: {cause}")


class ToyTaskError(NMTError, ValueError):
    pass
