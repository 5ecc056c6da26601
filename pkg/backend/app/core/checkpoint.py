"""
Checkpoints: inicialização, passo Adam, média de checkpoints, extensão de
vocabulário e o formato binário versionado.

Formato do arquivo (little-endian):
    magic  b"NMTCKPT\\0"
    u32    versão do formato
    u32 + bytes   cabeçalho JSON {"config": ..., "step": ...}
    u32 + bytes   vocabulário da fonte (tokens separados por "\\n")
    u32 + bytes   vocabulário do alvo
    u32    número de tensores, e para cada um:
        u16 + bytes  nome ("param/<nome>", "adam_m/<nome>" ou "adam_v/<nome>")
        u8           ndim, seguido de ndim x u32 (shape)
        f32[...]     valores
    u32    CRC32 de tudo o que veio antes
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError

from app.core.errors import (
    CheckpointCorruptError,
    CheckpointVersionError,
    ConfigurationError,
    ShapeMismatchError,
    VocabularyMismatchError,
)
from app.core.log import get_logger
from app.core.model import SRC_VOCAB_TENSORS, TGT_VOCAB_TENSORS, Params, param_shapes
from app.core.text import Vocabulary
from app.models.schemas import ModelConfig

log = get_logger("CKPT")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
INIT_RANGE = 0.1

FORMAT_VERSION = 1
MAGIC = b"NMTCKPT\0"


@dataclass(frozen=True)
class Checkpoint:
    params: Mapping[str, np.ndarray]
    moments_m: Mapping[str, np.ndarray]
    moments_v: Mapping[str, np.ndarray]
    step: int
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    config: ModelConfig

    def __post_init__(self):
        if self.step < 0:
            raise ConfigurationError("step negativo")
        for name, value in self.params.items():
            if self.moments_m[name].shape != value.shape or self.moments_v[name].shape != value.shape:
                raise ShapeMismatchError(f"momentos de {name} não espelham o parâmetro")


def _frozen(arrays: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    for value in arrays.values():
        value.flags.writeable = False
    return arrays


def _zeros_like(params: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return _frozen({name: np.zeros_like(value) for name, value in params.items()})


def init_model(
    config: ModelConfig,
    src_vocab: Optional[Vocabulary] = None,
    tgt_vocab: Optional[Vocabulary] = None,
    dtype=np.float32,
) -> Checkpoint:
    """
    Parâmetros uniformes em [-0.1, 0.1] (biases zerados), momentos zerados, step 0.

    Sem vocabulários explícitos usa Vocabulary.of_size com os tamanhos do config.
    """
    try:
        config = ModelConfig.model_validate(config.model_dump())
    except ValidationError as e:
        raise ConfigurationError(str(e), section="model") from e
    src_vocab = src_vocab or Vocabulary.of_size(config.src_vocab_size)
    tgt_vocab = tgt_vocab or Vocabulary.of_size(config.tgt_vocab_size)
    if len(src_vocab) != config.src_vocab_size or len(tgt_vocab) != config.tgt_vocab_size:
        raise ConfigurationError("tamanho de vocabulário diverge do config", section="model")

    rng = np.random.default_rng(config.seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape).astype(dtype)
    return Checkpoint(
        params=_frozen(params),
        moments_m=_zeros_like(params),
        moments_v=_zeros_like(params),
        step=0,
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        config=config,
    )


def clip_by_global_norm(grads: Params, max_norm: float) -> Params:
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {name: g * g.dtype.type(scale) for name, g in grads.items()}


def adam_step(checkpoint: Checkpoint, grads: Mapping[str, np.ndarray]) -> Checkpoint:
    """Um passo Adam (β1 0.9, β2 0.999, ε 1e-8, com correção de viés)."""
    if set(grads) != set(checkpoint.params):
        raise ShapeMismatchError("conjunto de gradientes difere dos parâmetros")
    t = checkpoint.step + 1
    lr = checkpoint.config.learning_rate
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t

    params, m_out, v_out = {}, {}, {}
    for name, value in checkpoint.params.items():
        g = grads[name]
        if g.shape != value.shape:
            raise ShapeMismatchError(f"gradiente de {name}: {g.shape} != {value.shape}")
        dt = value.dtype.type
        m = dt(ADAM_BETA1) * checkpoint.moments_m[name] + dt(1.0 - ADAM_BETA1) * g
        v = dt(ADAM_BETA2) * checkpoint.moments_v[name] + dt(1.0 - ADAM_BETA2) * (g * g)
        denom = np.sqrt(v / dt(bc2)) + dt(ADAM_EPS)
        params[name] = (value - dt(lr / bc1) * m / denom).astype(value.dtype)
        m_out[name] = m.astype(value.dtype)
        v_out[name] = v.astype(value.dtype)
    return replace(
        checkpoint,
        params=_frozen(params),
        moments_m=_frozen(m_out),
        moments_v=_frozen(v_out),
        step=t,
    )


def reset_moments(checkpoint: Checkpoint) -> Checkpoint:
    return replace(checkpoint, moments_m=_zeros_like(checkpoint.params), moments_v=_zeros_like(checkpoint.params))


def select_window(
    checkpoints: Sequence[Checkpoint], k: int, end_step: Optional[int] = None
) -> List[Checkpoint]:
    """Os k snapshots de maior step com step <= end_step (ou os últimos k)."""
    ordered = sorted(checkpoints, key=lambda c: c.step)
    if end_step is not None:
        ordered = [c for c in ordered if c.step <= end_step]
    return ordered[-k:]


def average_checkpoints(
    checkpoints: Sequence[Checkpoint], window: Optional[int] = None, end_step: Optional[int] = None
) -> Checkpoint:
    """
    Média elemento a elemento dos parâmetros na janela.

    A janela é ordenada por step antes da soma, então o resultado não depende
    da ordem de entrada. Momentos zerados; step = maior step da janela.
    """
    if not checkpoints:
        raise ConfigurationError("nenhum checkpoint para média")
    selected = select_window(checkpoints, window or len(checkpoints), end_step)
    if not selected:
        raise ConfigurationError(f"nenhum checkpoint com step <= {end_step}")
    first = selected[0]
    for other in selected[1:]:
        if other.src_vocab != first.src_vocab or other.tgt_vocab != first.tgt_vocab:
            raise VocabularyMismatchError("checkpoints com vocabulários diferentes")
        if other.config.model_dump(exclude={"seed"}) != first.config.model_dump(exclude={"seed"}):
            raise ConfigurationError("checkpoints com configs diferentes")
        for name, value in first.params.items():
            if other.params[name].shape != value.shape:
                raise ShapeMismatchError(f"shape de {name} difere entre checkpoints")

    params = {}
    for name, value in first.params.items():
        acc = np.zeros(value.shape, dtype=np.float64)
        for ckpt in selected:
            acc += ckpt.params[name]
        params[name] = (acc / len(selected)).astype(value.dtype)
    log.info(f"🔄 média de {len(selected)} checkpoints (steps {selected[0].step}..{selected[-1].step})")
    return replace(
        first,
        params=_frozen(params),
        moments_m=_zeros_like(params),
        moments_v=_zeros_like(params),
        step=max(c.step for c in selected),
    )


def extend_checkpoint_vocab(
    checkpoint: Checkpoint, new_src_vocab: Vocabulary, new_tgt_vocab: Vocabulary, seed: int
) -> Checkpoint:
    """
    Cresce embeddings e projeção de saída para vocabulários maiores.

    Linhas existentes ficam idênticas; linhas novas são uniformes em [-0.1, 0.1]
    e seus momentos começam zerados.
    """
    if not checkpoint.src_vocab.is_prefix_of(new_src_vocab):
        raise VocabularyMismatchError("novo vocabulário da fonte remapeia ids existentes")
    if not checkpoint.tgt_vocab.is_prefix_of(new_tgt_vocab):
        raise VocabularyMismatchError("novo vocabulário do alvo remapeia ids existentes")
    if new_src_vocab == checkpoint.src_vocab and new_tgt_vocab == checkpoint.tgt_vocab:
        return checkpoint

    rng = np.random.default_rng(seed)
    growth = {name: len(new_src_vocab) - len(checkpoint.src_vocab) for name in SRC_VOCAB_TENSORS}
    growth.update({name: len(new_tgt_vocab) - len(checkpoint.tgt_vocab) for name in TGT_VOCAB_TENSORS})

    params, m_out, v_out = {}, {}, {}
    for name, value in checkpoint.params.items():
        extra = growth.get(name, 0)
        if extra == 0:
            params[name] = value
            m_out[name] = checkpoint.moments_m[name]
            v_out[name] = checkpoint.moments_v[name]
            continue
        fresh = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(extra,) + value.shape[1:]).astype(value.dtype)
        zeros = np.zeros((extra,) + value.shape[1:], dtype=value.dtype)
        params[name] = np.concatenate([value, fresh])
        m_out[name] = np.concatenate([checkpoint.moments_m[name], zeros])
        v_out[name] = np.concatenate([checkpoint.moments_v[name], zeros])

    config = checkpoint.config.model_copy(
        update={"src_vocab_size": len(new_src_vocab), "tgt_vocab_size": len(new_tgt_vocab)}
    )
    log.info(
        f"🔄 vocabulário estendido: fonte {len(checkpoint.src_vocab)}->{len(new_src_vocab)}, "
        f"alvo {len(checkpoint.tgt_vocab)}->{len(new_tgt_vocab)}"
    )
    return replace(
        checkpoint,
        params=_frozen(params),
        moments_m=_frozen(m_out),
        moments_v=_frozen(v_out),
        src_vocab=new_src_vocab,
        tgt_vocab=new_tgt_vocab,
        config=config,
    )


# -----------------------------------------------------------------------------
# Serialização
# -----------------------------------------------------------------------------

def _blob(data: bytes) -> bytes:
    return struct.pack("<I", len(data)) + data


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, os.PathLike]) -> None:
    header = json.dumps(
        {"config": checkpoint.config.model_dump(), "step": checkpoint.step}, sort_keys=True
    ).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _blob(header)]
    parts.append(_blob("\n".join(checkpoint.src_vocab.tokens).encode("utf-8")))
    parts.append(_blob("\n".join(checkpoint.tgt_vocab.tokens).encode("utf-8")))

    records = []
    for prefix, arrays in (("param", checkpoint.params), ("adam_m", checkpoint.moments_m), ("adam_v", checkpoint.moments_v)):
        for name, value in arrays.items():
            records.append((f"{prefix}/{name}", value))
    parts.append(struct.pack("<I", len(records)))
    for name, value in records:
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<B", value.ndim) + struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())

    body = b"".join(parts)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(body + struct.pack("<I", zlib.crc32(body)))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("arquivo de checkpoint truncado")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def load_checkpoint(path: Union[str, os.PathLike]) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or not data.startswith(MAGIC):
        raise CheckpointCorruptError(f"{path}: não é um checkpoint")
    reader = _Reader(data)
    reader.take(len(MAGIC))
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(version, FORMAT_VERSION)
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointCorruptError(f"{path}: CRC inválido (arquivo truncado ou corrompido)")

    try:
        header = json.loads(reader.blob().decode("utf-8"))
        src_vocab = Vocabulary(tuple(reader.blob().decode("utf-8").split("\n")))
        tgt_vocab = Vocabulary(tuple(reader.blob().decode("utf-8").split("\n")))
        (count,) = reader.unpack("<I")
        arrays: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
        for _ in range(count):
            (name_len,) = reader.unpack("<H")
            kind, name = reader.take(name_len).decode("utf-8").split("/", 1)
            (ndim,) = reader.unpack("<B")
            shape = reader.unpack(f"<{ndim}I") if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(reader.take(4 * n), dtype="<f4").astype(np.float32).reshape(shape)
            arrays[kind][name] = values
        config = ModelConfig.model_validate(header["config"])
    except (UnicodeDecodeError, ValueError, KeyError) as e:
        raise CheckpointCorruptError(f"{path}: conteúdo inválido ({e})") from e

    expected = param_shapes(config)
    if {k: v.shape for k, v in arrays["param"].items()} != expected:
        raise CheckpointCorruptError(f"{path}: tensores não batem com o config")
    return Checkpoint(
        params=_frozen(arrays["param"]),
        moments_m=_frozen(arrays["adam_m"]),
        moments_v=_frozen(arrays["adam_v"]),
        step=int(header["step"]),
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        config=config,
    )
