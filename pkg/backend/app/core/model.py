"""
Encoder-decoder LSTM com atenção (forma "general"), escrito direto em numpy.

- Encoder: L camadas LSTM unidirecionais; anotações h_j = estados da camada de cima.
- Decoder: inicializado com os estados finais do encoder, input feeding do
  vetor atencional anterior, atenção score = s·W_a·h_j, combinação
  tanh(W_c[c; s]) e projeção de saída sem bias.
- Loss: -(1/M) Σ_m Σ_i log p(y_i | y_<i, X) com teacher forcing.
- Gradientes analíticos exatos (BPTT manual), dropout só em conexões não recorrentes.

Todos os cálculos seguem o dtype dos parâmetros (float32 no treino, float64
no teste de gradiente).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.core.errors import AttentionMaskError, EmptyCorpusError, TokenIdError
from app.core.text import Sentence, SYN
from app.models.schemas import ModelConfig

if TYPE_CHECKING:
    from app.core.checkpoint import Checkpoint

Params = Dict[str, np.ndarray]
# Semente do dropout: int ou sequência (ex: [seed, step])
Seed = Union[int, Sequence[int]]


def param_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Nome -> shape de cada tensor de θ (ordem estável)."""
    H = config.hidden_size
    G = 4 * H
    shapes: Dict[str, Tuple[int, ...]] = {
        "src_emb": (config.src_vocab_size, H),
        "tgt_emb": (config.tgt_vocab_size, H),
    }
    for layer in range(config.num_layers):
        shapes[f"enc.{layer}.W"] = (G, H)
        shapes[f"enc.{layer}.U"] = (G, H)
        shapes[f"enc.{layer}.b"] = (G,)
    for layer in range(config.num_layers):
        width = 2 * H if layer == 0 and config.input_feeding else H
        shapes[f"dec.{layer}.W"] = (G, width)
        shapes[f"dec.{layer}.U"] = (G, H)
        shapes[f"dec.{layer}.b"] = (G,)
    shapes["attn.W_a"] = (H, H)
    shapes["attn.W_c"] = (H, 2 * H)
    shapes["out.W"] = (config.tgt_vocab_size, H)
    return shapes


# Tensores cujas linhas são indexadas por token (crescem com o vocabulário)
SRC_VOCAB_TENSORS = ("src_emb",)
TGT_VOCAB_TENSORS = ("tgt_emb", "out.W")


# -----------------------------------------------------------------------------
# Tipos
# -----------------------------------------------------------------------------

@dataclass(frozen=True)
class EncoderOutput:
    annotations: np.ndarray  # [B, T, H]
    mask: np.ndarray  # [B, T] bool, False = padding
    final_h: Tuple[np.ndarray, ...]
    final_c: Tuple[np.ndarray, ...]


@dataclass(frozen=True)
class DecoderState:
    h: Tuple[np.ndarray, ...]
    c: Tuple[np.ndarray, ...]
    att: np.ndarray  # vetor atencional anterior (input feeding)
    step: int = 0


@dataclass(frozen=True)
class Batch:
    src_ids: np.ndarray  # [B, Ts]
    src_lengths: np.ndarray  # [B]
    tgt_ids: np.ndarray  # [B, Tt], <s> ... </s> + padding
    tgt_mask: np.ndarray  # [B, Tt] bool

    @property
    def size(self) -> int:
        return int(self.src_ids.shape[0])

    @classmethod
    def from_sequences(
        cls, pairs: Sequence[Tuple[np.ndarray, np.ndarray]], pad_id: int = 0
    ) -> "Batch":
        """`pairs` são (ids da fonte, ids do alvo já com <s> e </s>)."""
        if not pairs:
            raise EmptyCorpusError("batch vazio")
        B = len(pairs)
        src_len = np.array([len(s) for s, _ in pairs], dtype=np.int64)
        tgt_len = np.array([len(t) for _, t in pairs], dtype=np.int64)
        src = np.full((B, int(src_len.max())), pad_id, dtype=np.int64)
        tgt = np.full((B, int(tgt_len.max())), pad_id, dtype=np.int64)
        for i, (s, t) in enumerate(pairs):
            src[i, : len(s)] = s
            tgt[i, : len(t)] = t
        tgt_mask = np.arange(tgt.shape[1])[None, :] < tgt_len[:, None]
        return cls(src, src_len, tgt, tgt_mask)


# -----------------------------------------------------------------------------
# Peças básicas
# -----------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class _Dropout:
    def __init__(self, prob: float, rng: Optional[np.random.Generator]):
        self.prob = prob
        self.rng = rng

    def mask(self, shape: Tuple[int, ...], dtype) -> Optional[np.ndarray]:
        if self.rng is None or self.prob <= 0.0:
            return None
        keep = 1.0 - self.prob
        return (self.rng.random(shape) < keep).astype(dtype) / dtype.type(keep)


_NO_DROPOUT = _Dropout(0.0, None)


def _drop(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return x if mask is None else x * mask


def _lstm_cell(x, h_prev, c_prev, W, U, b):
    H = h_prev.shape[1]
    z = x @ W.T + h_prev @ U.T + b
    i = _sigmoid(z[:, :H])
    f = _sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = _sigmoid(z[:, 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, i, f, g, o, tc)


def _lstm_cell_backward(dh, dc, cache, W, U, gW, gU, gb):
    x, h_prev, c_prev, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1
    )
    gW += dz.T @ x
    gU += dz.T @ h_prev
    gb += dz.sum(axis=0)
    return dz @ W, dz @ U, dc * f


def _check_ids(ids: np.ndarray, vocab_size: int, which: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise TokenIdError(f"id fora do vocabulário {which} (tamanho {vocab_size})")


# -----------------------------------------------------------------------------
# Encoder
# -----------------------------------------------------------------------------

def _encoder_forward(params: Params, config: ModelConfig, src_ids, lengths, dropout: _Dropout):
    src_ids = np.asarray(src_ids, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if src_ids.ndim != 2 or lengths.shape != (src_ids.shape[0],):
        raise TokenIdError("batch de fonte mal formado")
    if (lengths <= 0).any():
        raise EmptyCorpusError("sequência de fonte com comprimento zero")
    if (lengths > src_ids.shape[1]).any():
        raise TokenIdError("comprimento maior que o batch")
    _check_ids(src_ids, config.src_vocab_size, "fonte")

    dtype = params["src_emb"].dtype
    B, T = src_ids.shape
    H = config.hidden_size
    L = config.num_layers
    mask = np.arange(T)[None, :] < lengths[:, None]
    emb = params["src_emb"][src_ids]

    h = [np.zeros((B, H), dtype=dtype) for _ in range(L)]
    c = [np.zeros((B, H), dtype=dtype) for _ in range(L)]
    annotations = np.empty((B, T, H), dtype=dtype)
    steps = []
    for t in range(T):
        m = mask[:, t : t + 1].astype(dtype)
        x = emb[:, t]
        layers = []
        for layer in range(L):
            dmask = dropout.mask(x.shape, dtype)
            h_new, c_new, cell = _lstm_cell(
                _drop(x, dmask), h[layer], c[layer],
                params[f"enc.{layer}.W"], params[f"enc.{layer}.U"], params[f"enc.{layer}.b"],
            )
            # Posições de padding carregam o estado anterior
            h[layer] = m * h_new + (1.0 - m) * h[layer]
            c[layer] = m * c_new + (1.0 - m) * c[layer]
            layers.append((dmask, cell))
            x = h[layer]
        annotations[:, t] = x
        steps.append((m, layers))

    out = EncoderOutput(annotations, mask, tuple(h), tuple(c))
    return out, (src_ids, steps)


def encode(params: Params, config: ModelConfig, src_ids, lengths) -> EncoderOutput:
    """Anotações (camada de cima) por posição + estados finais por camada."""
    out, _ = _encoder_forward(params, config, src_ids, lengths, _NO_DROPOUT)
    return out


# -----------------------------------------------------------------------------
# Atenção
# -----------------------------------------------------------------------------

def _attend(W_a, s, annotations, mask):
    if not mask.any(axis=1).all():
        raise AttentionMaskError("todas as posições mascaradas")
    q = s @ W_a
    scores = np.einsum("bh,bth->bt", q, annotations)
    scores = np.where(mask, scores, -np.inf)
    scores = scores - scores.max(axis=1, keepdims=True)
    weights = np.exp(scores)
    weights = weights / weights.sum(axis=1, keepdims=True)
    context = np.einsum("bt,bth->bh", weights, annotations)
    return context, weights, q


def attend(
    params: Params, decoder_top_state: np.ndarray, encoder_output: EncoderOutput,
    mask: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Retorna (contexto c_i, pesos) com softmax só nas posições válidas."""
    mask = encoder_output.mask if mask is None else mask
    context, weights, _ = _attend(params["attn.W_a"], decoder_top_state, encoder_output.annotations, mask)
    return context, weights


def _attend_backward(dcontext, s, q, weights, annotations, W_a, gW_a, d_annotations):
    dweights = np.einsum("bh,bth->bt", dcontext, annotations)
    d_annotations += weights[:, :, None] * dcontext[:, None, :]
    dscores = weights * (dweights - (weights * dweights).sum(axis=1, keepdims=True))
    dq = np.einsum("bt,bth->bh", dscores, annotations)
    d_annotations += dscores[:, :, None] * q[:, None, :]
    gW_a += s.T @ dq
    return dq @ W_a.T


# -----------------------------------------------------------------------------
# Decoder
# -----------------------------------------------------------------------------

def initial_state(encoder_output: EncoderOutput) -> DecoderState:
    B, _, H = encoder_output.annotations.shape
    att = np.zeros((B, H), dtype=encoder_output.annotations.dtype)
    return DecoderState(encoder_output.final_h, encoder_output.final_c, att, 0)


def _decoder_step(params, config, h, c, att_prev, y_prev, annotations, mask, dropout: _Dropout):
    dtype = params["tgt_emb"].dtype
    emb = params["tgt_emb"][y_prev]
    x = np.concatenate([emb, att_prev], axis=1) if config.input_feeding else emb
    new_h, new_c, layers = [], [], []
    for layer in range(config.num_layers):
        dmask = dropout.mask(x.shape, dtype)
        h_l, c_l, cell = _lstm_cell(
            _drop(x, dmask), h[layer], c[layer],
            params[f"dec.{layer}.W"], params[f"dec.{layer}.U"], params[f"dec.{layer}.b"],
        )
        new_h.append(h_l)
        new_c.append(c_l)
        layers.append((dmask, cell))
        x = h_l
    s = x
    context, weights, q = _attend(params["attn.W_a"], s, annotations, mask)
    comb = np.concatenate([context, s], axis=1)
    att = np.tanh(comb @ params["attn.W_c"].T)
    omask = dropout.mask(att.shape, dtype)
    att_d = _drop(att, omask)
    logits = att_d @ params["out.W"].T
    cache = (y_prev, layers, s, q, weights, comb, att, omask, att_d)
    return logits, new_h, new_c, att, cache


def decode_step(
    params: Params, config: ModelConfig, state: DecoderState, prev_token_ids,
    encoder_output: EncoderOutput,
) -> Tuple[np.ndarray, DecoderState]:
    """Um passo do decoder: retorna logits [B, V_tgt] e o novo estado."""
    prev = np.atleast_1d(np.asarray(prev_token_ids, dtype=np.int64))
    _check_ids(prev, config.tgt_vocab_size, "alvo")
    logits, h, c, att, _ = _decoder_step(
        params, config, state.h, state.c, state.att, prev,
        encoder_output.annotations, encoder_output.mask, _NO_DROPOUT,
    )
    return logits, DecoderState(tuple(h), tuple(c), att, state.step + 1)


# -----------------------------------------------------------------------------
# Loss e gradientes
# -----------------------------------------------------------------------------

def _forward(params: Params, config: ModelConfig, batch: Batch, dropout: _Dropout):
    if batch.size == 0:
        raise EmptyCorpusError("batch vazio")
    _check_ids(batch.tgt_ids, config.tgt_vocab_size, "alvo")
    enc, enc_cache = _encoder_forward(params, config, batch.src_ids, batch.src_lengths, dropout)

    B = batch.size
    dec_in = batch.tgt_ids[:, :-1]
    dec_out = batch.tgt_ids[:, 1:]
    out_mask = batch.tgt_mask[:, 1:].astype(params["out.W"].dtype)
    rows = np.arange(B)

    h, c = list(enc.final_h), list(enc.final_c)
    att = np.zeros_like(enc.annotations[:, 0])
    total = 0.0
    steps = []
    for t in range(dec_in.shape[1]):
        logits, h, c, att, cache = _decoder_step(
            params, config, h, c, att, dec_in[:, t], enc.annotations, enc.mask, dropout
        )
        logp = _log_softmax(logits)
        total -= float((logp[rows, dec_out[:, t]] * out_mask[:, t]).sum())
        steps.append((cache, np.exp(logp)))

    loss = total / B
    token_count = int(batch.tgt_mask[:, 1:].sum())
    return loss, token_count, (enc, enc_cache, steps, dec_out, out_mask)


def batch_loss(
    params: Params, config: ModelConfig, batch: Batch, dropout_on: bool = False, seed: Seed = 0
) -> Tuple[float, int]:
    """Negativo da log-verossimilhança média por sentença (padding excluído)."""
    dropout = _Dropout(config.dropout_prob, np.random.default_rng(seed)) if dropout_on else _NO_DROPOUT
    loss, tokens, _ = _forward(params, config, batch, dropout)
    return loss, tokens


def _backward(params: Params, config: ModelConfig, batch: Batch, fwd) -> Params:
    enc, (src_ids, enc_steps), steps, dec_out, out_mask = fwd
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    B = batch.size
    H = config.hidden_size
    L = config.num_layers
    rows = np.arange(B)
    d_annotations = np.zeros_like(enc.annotations)

    dh = [np.zeros_like(enc.final_h[0]) for _ in range(L)]
    dc = [np.zeros_like(enc.final_c[0]) for _ in range(L)]
    datt_next = np.zeros_like(enc.final_h[0])

    for t in reversed(range(len(steps))):
        (y_prev, layers, s, q, weights, comb, att, omask, att_d), probs = steps[t]
        dlogits = probs.copy()
        dlogits[rows, dec_out[:, t]] -= 1.0
        dlogits *= (out_mask[:, t] / B)[:, None]

        grads["out.W"] += dlogits.T @ att_d
        datt = _drop(dlogits @ params["out.W"], omask) + datt_next
        dpre = datt * (1.0 - att * att)
        grads["attn.W_c"] += dpre.T @ comb
        dcomb = dpre @ params["attn.W_c"]
        ds = dcomb[:, H:] + _attend_backward(
            dcomb[:, :H], s, q, weights, enc.annotations,
            params["attn.W_a"], grads["attn.W_a"], d_annotations,
        )

        dx = ds
        for layer in reversed(range(L)):
            dmask, cell = layers[layer]
            dx_in, dh[layer], dc[layer] = _lstm_cell_backward(
                dh[layer] + dx, dc[layer], cell,
                params[f"dec.{layer}.W"], params[f"dec.{layer}.U"],
                grads[f"dec.{layer}.W"], grads[f"dec.{layer}.U"], grads[f"dec.{layer}.b"],
            )
            dx = _drop(dx_in, dmask)
        if config.input_feeding:
            np.add.at(grads["tgt_emb"], y_prev, dx[:, :H])
            datt_next = dx[:, H:]
        else:
            np.add.at(grads["tgt_emb"], y_prev, dx)

    # dh/dc agora são os gradientes dos estados finais do encoder
    for t in reversed(range(len(enc_steps))):
        m, layers = enc_steps[t]
        dx = d_annotations[:, t]
        for layer in reversed(range(L)):
            dmask, cell = layers[layer]
            dh_total = dh[layer] + dx
            dc_total = dc[layer]
            dx_in, dh_prev, dc_prev = _lstm_cell_backward(
                m * dh_total, m * dc_total, cell,
                params[f"enc.{layer}.W"], params[f"enc.{layer}.U"],
                grads[f"enc.{layer}.W"], grads[f"enc.{layer}.U"], grads[f"enc.{layer}.b"],
            )
            dh[layer] = dh_prev + (1.0 - m) * dh_total
            dc[layer] = dc_prev + (1.0 - m) * dc_total
            dx = _drop(dx_in, dmask)
        np.add.at(grads["src_emb"], src_ids[:, t], dx)

    return grads


def loss_and_gradients(
    params: Params, config: ModelConfig, batch: Batch, dropout_on: bool = False, seed: Seed = 0
) -> Tuple[float, int, Params]:
    dropout = _Dropout(config.dropout_prob, np.random.default_rng(seed)) if dropout_on else _NO_DROPOUT
    loss, tokens, fwd = _forward(params, config, batch, dropout)
    return loss, tokens, _backward(params, config, batch, fwd)


def gradients(params: Params, config: ModelConfig, batch: Batch, seed: int = 0) -> Params:
    """Gradientes analíticos exatos de batch_loss com dropout desligado."""
    return loss_and_gradients(params, config, batch, dropout_on=False, seed=seed)[2]


# -----------------------------------------------------------------------------
# Decodificação gulosa
# -----------------------------------------------------------------------------

def greedy_decode_batch(
    checkpoint: "Checkpoint", sources: Sequence[Sentence], max_decode_length: Optional[int] = None
) -> List[Sentence]:
    """
    Decodifica várias fontes (tokens BPE) de uma vez.

    argmax a cada passo (empate -> menor id), para em </s> ou no limite;
    tags <SYN> geradas são removidas da saída.
    """
    if not sources:
        return []
    if any(len(s) == 0 for s in sources):
        raise EmptyCorpusError("fonte vazia na decodificação")
    config = checkpoint.config
    params = checkpoint.params
    src_vocab, tgt_vocab = checkpoint.src_vocab, checkpoint.tgt_vocab
    limit = config.max_decode_length if max_decode_length is None else max_decode_length

    ids = [src_vocab.encode(s) for s in sources]
    lengths = np.array([len(x) for x in ids], dtype=np.int64)
    src = np.full((len(ids), int(lengths.max())), src_vocab.blank_id, dtype=np.int64)
    for i, x in enumerate(ids):
        src[i, : len(x)] = x

    enc = encode(params, config, src, lengths)
    state = initial_state(enc)
    prev = np.full(len(ids), tgt_vocab.bos_id, dtype=np.int64)
    finished = np.zeros(len(ids), dtype=bool)
    outputs: List[List[int]] = [[] for _ in ids]
    for _ in range(limit):
        logits, state = decode_step(params, config, state, prev, enc)
        nxt = logits.argmax(axis=1)
        for i, tok in enumerate(nxt):
            if finished[i]:
                continue
            if tok == tgt_vocab.eos_id:
                finished[i] = True
            else:
                outputs[i].append(int(tok))
        if finished.all():
            break
        prev = nxt
    return [tuple(t for t in tgt_vocab.decode(out) if t != SYN) for out in outputs]


def greedy_decode(
    checkpoint: "Checkpoint", src: Sentence, max_decode_length: Optional[int] = None
) -> Sentence:
    if not src:
        raise EmptyCorpusError("fonte vazia na decodificação")
    return greedy_decode_batch(checkpoint, [src], max_decode_length)[0]
