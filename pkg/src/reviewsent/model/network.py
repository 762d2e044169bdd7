"""Encoder with classification head and a small encoder-decoder.

Weights are a flat ``dict`` of arrays keyed by dotted paths, e.g.
``encoder.0.attention.q.weight``.  The shapes of every entry follow from
:class:`ModelConfig` via :func:`param_shapes`.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..tokenizer import EOS_ID, PAD_ID, TokenSequence, byte_decode
from .config import ModelConfig
from .layers import (
    Grads,
    dropout_forward,
    feed_forward_forward,
    layer_norm_forward,
    linear_forward,
    multi_head_attention_forward,
)

WeightBundle = dict[str, np.ndarray]


class NonFiniteError(FloatingPointError):
    pass


class SequenceTooLong(ValueError):
    pass


class MissingWeights(KeyError):
    pass


def _attention_shapes(prefix: str, D: int) -> dict[str, tuple[int, ...]]:
    out = {}
    for proj in "qkvo":
        out[f"{prefix}.{proj}.weight"] = (D, D)
        out[f"{prefix}.{proj}.bias"] = (D,)
    return out


def _norm_shapes(prefix: str, D: int) -> dict[str, tuple[int, ...]]:
    return {f"{prefix}.scale": (D,), f"{prefix}.bias": (D,)}


def _ffn_shapes(prefix: str, D: int, F: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.in.weight": (D, F), f"{prefix}.in.bias": (F,),
        f"{prefix}.out.weight": (F, D), f"{prefix}.out.bias": (D,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, F, V, P = cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.max_positions
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (V, D),
        "embeddings.position": (P, D),
        **_norm_shapes("embeddings.norm", D),
    }
    for i in range(cfg.n_layers):
        p = f"encoder.{i}"
        shapes.update(_attention_shapes(f"{p}.attention", D))
        shapes.update(_norm_shapes(f"{p}.attention_norm", D))
        shapes.update(_ffn_shapes(f"{p}.ffn", D, F))
        shapes.update(_norm_shapes(f"{p}.ffn_norm", D))
    if cfg.mode == "encoder_classifier":
        shapes["pre_classifier.weight"] = (D, D)
        shapes["pre_classifier.bias"] = (D,)
        shapes["classifier.weight"] = (D, cfg.n_classes)
        shapes["classifier.bias"] = (cfg.n_classes,)
    else:
        shapes["decoder.position"] = (P, D)
        shapes.update(_norm_shapes("decoder.norm", D))
        for i in range(cfg.decoder_layers):
            p = f"decoder.{i}"
            shapes.update(_attention_shapes(f"{p}.self_attention", D))
            shapes.update(_norm_shapes(f"{p}.self_attention_norm", D))
            shapes.update(_attention_shapes(f"{p}.cross_attention", D))
            shapes.update(_norm_shapes(f"{p}.cross_attention_norm", D))
            shapes.update(_ffn_shapes(f"{p}.ffn", D, F))
            shapes.update(_norm_shapes(f"{p}.ffn_norm", D))
        shapes["lm_head.weight"] = (D, V)
        shapes["lm_head.bias"] = (V,)
    return shapes


def init_weights(cfg: ModelConfig, seed: int = 0, std: float = 0.02,
                 dtype=np.float64) -> WeightBundle:
    rng = np.random.default_rng(seed)
    w = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".scale"):
            w[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".bias"):
            w[name] = np.zeros(shape, dtype=dtype)
        else:
            w[name] = rng.normal(0.0, std, size=shape).astype(dtype)
    return w


def check_weights(w: WeightBundle, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    missing = [k for k in expected if k not in w]
    if missing:
        raise MissingWeights(f"missing weight arrays: {', '.join(missing[:5])}")
    for name, shape in expected.items():
        if tuple(w[name].shape) != shape:
            raise ValueError(f"{name}: shape {tuple(w[name].shape)} != expected {shape}")


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite activation in {where}")


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = PAD_ID) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id lists; returns ``(ids, valid)`` with ``valid`` True on real tokens."""
    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    valid = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
        valid[i, :len(s)] = True
    return ids, valid


def _embed(ids, w, token_name, pos_name, norm_name, cfg, rng, training, grads):
    B, T = ids.shape
    if T > cfg.max_positions:
        raise SequenceTooLong(f"sequence length {T} exceeds max_positions {cfg.max_positions}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id outside 0..{cfg.vocab_size - 1}")
    x = w[token_name][ids] + w[pos_name][:T][None, :, :]
    x, norm_bwd = layer_norm_forward(x, w, norm_name, grads, cfg.layer_norm_eps)
    x, drop_bwd = dropout_forward(x, cfg.dropout_sublayer, rng, training)

    def backward(dx):
        de = norm_bwd(drop_bwd(dx))
        if grads is not None:
            gtok = np.zeros_like(w[token_name])
            np.add.at(gtok, ids, de)
            gpos = np.zeros_like(w[pos_name])
            gpos[:T] = de.sum(axis=0)
            _add(grads, token_name, gtok)
            _add(grads, pos_name, gpos)

    return x, backward


def _add(grads: Grads, name: str, g: np.ndarray) -> None:
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


def _sublayer(x, y, y_bwd, w, norm_name, cfg, rng, training, grads):
    """Post-norm residual: LayerNorm(x + Dropout(y))."""
    yd, drop_bwd = dropout_forward(y, cfg.dropout_sublayer, rng, training)
    out, norm_bwd = layer_norm_forward(x + yd, w, norm_name, grads, cfg.layer_norm_eps)

    def backward(dout):
        ds = norm_bwd(dout)
        return ds, y_bwd(drop_bwd(ds))

    return out, backward


def encoder_stack_forward(ids: np.ndarray, valid: np.ndarray, w: WeightBundle, cfg: ModelConfig,
                          training: bool = False, rng=None, grads: Grads | None = None,
                          keep_attention: bool = False):
    """Run embeddings and all encoder layers on a padded ``(B, T)`` batch.

    Returns ``(hidden, backward, attention_weights)``.
    """
    x, emb_bwd = _embed(ids, w, "embeddings.token", "embeddings.position", "embeddings.norm",
                        cfg, rng, training, grads)
    mask = np.broadcast_to(valid[:, None, :], (ids.shape[0], ids.shape[1], ids.shape[1]))
    layer_bwds, attn = [], []
    for i in range(cfg.n_layers):
        p = f"encoder.{i}"
        a, weights, a_bwd = multi_head_attention_forward(
            x, x, mask, w, f"{p}.attention", cfg.n_heads, cfg.dropout_attention, rng, training, grads)
        if keep_attention:
            attn.append(weights)
        h, s1 = _sublayer(x, a, lambda d, a_bwd=a_bwd: sum(a_bwd(d)), w, f"{p}.attention_norm",
                          cfg, rng, training, grads)
        f, f_bwd = feed_forward_forward(h, w, f"{p}.ffn", grads)
        x, s2 = _sublayer(h, f, f_bwd, w, f"{p}.ffn_norm", cfg, rng, training, grads)
        _check_finite(x, f"{p}")
        layer_bwds.append((s1, s2))

    def backward(dx):
        for s1, s2 in reversed(layer_bwds):
            dres, dsub = s2(dx)
            dh = dres + dsub
            dres, dsub = s1(dh)
            dx = dres + dsub
        emb_bwd(dx)

    return x, backward, attn


def classifier_forward(ids: np.ndarray, valid: np.ndarray, w: WeightBundle, cfg: ModelConfig,
                       training: bool = False, rng=None, grads: Grads | None = None):
    """Batched logits ``(B, n_classes)`` plus a backward closure."""
    hidden, enc_bwd, _ = encoder_stack_forward(ids, valid, w, cfg, training, rng, grads)
    cls = hidden[:, 0, :]
    z, pre_bwd = linear_forward(cls, w, "pre_classifier", grads)
    zr = np.maximum(z, 0.0)
    zd, drop_bwd = dropout_forward(zr, cfg.dropout_sublayer, rng, training)
    logits, cls_bwd = linear_forward(zd, w, "classifier", grads)
    _check_finite(logits, "classifier")

    def backward(dlogits):
        dz = drop_bwd(cls_bwd(dlogits)) * (z > 0)
        dh = np.zeros_like(hidden)
        dh[:, 0, :] = pre_bwd(dz)
        enc_bwd(dh)

    return logits, backward


def encoder_forward(seq: TokenSequence | Sequence[int], w: WeightBundle, cfg: ModelConfig,
                    training: bool = False, rng=None) -> np.ndarray:
    """Class logits for a single sequence."""
    if cfg.mode != "encoder_classifier":
        raise ValueError("encoder_forward needs an encoder_classifier config")
    ids = list(seq.ids if isinstance(seq, TokenSequence) else seq)
    if len(ids) > cfg.max_positions:
        raise SequenceTooLong(f"sequence length {len(ids)} exceeds max_positions {cfg.max_positions}")
    if not ids:
        raise ValueError("empty token sequence")
    arr, valid = pad_batch([ids])
    logits, _ = classifier_forward(arr, valid, w, cfg, training, rng)
    return logits[0]


def _require_decoder(w: WeightBundle, cfg: ModelConfig) -> None:
    if cfg.mode != "encoder_decoder":
        raise ValueError("decoder use needs an encoder_decoder config")
    if "lm_head.weight" not in w or "decoder.position" not in w:
        raise MissingWeights("weight bundle has no decoder weights")


def decoder_forward(dec_ids: np.ndarray, dec_valid: np.ndarray, enc_out: np.ndarray,
                    enc_valid: np.ndarray, w: WeightBundle, cfg: ModelConfig,
                    training: bool = False, rng=None, grads: Grads | None = None):
    """Next-token logits ``(B, Td, vocab)``; backward returns d(enc_out)."""
    _require_decoder(w, cfg)
    B, Td = dec_ids.shape
    Te = enc_out.shape[1]
    y, emb_bwd = _embed(dec_ids, w, "embeddings.token", "decoder.position", "decoder.norm",
                        cfg, rng, training, grads)
    causal = np.tril(np.ones((Td, Td), dtype=bool))
    self_mask = causal[None, :, :] & dec_valid[:, None, :]
    # padded query rows still see position 0, which is always valid
    cross_mask = np.broadcast_to(enc_valid[:, None, :], (B, Td, Te))
    layer_bwds = []
    for i in range(cfg.decoder_layers):
        p = f"decoder.{i}"
        a, _, a_bwd = multi_head_attention_forward(
            y, y, self_mask, w, f"{p}.self_attention", cfg.n_heads, cfg.dropout_attention,
            rng, training, grads)
        h1, s1 = _sublayer(y, a, lambda d, a_bwd=a_bwd: sum(a_bwd(d)), w,
                           f"{p}.self_attention_norm", cfg, rng, training, grads)
        c, _, c_bwd = multi_head_attention_forward(
            h1, enc_out, cross_mask, w, f"{p}.cross_attention", cfg.n_heads,
            cfg.dropout_attention, rng, training, grads)
        enc_grad = {}

        def c_inner(d, c_bwd=c_bwd, enc_grad=enc_grad):
            dq, dkv = c_bwd(d)
            enc_grad["d"] = dkv
            return dq

        h2, s2 = _sublayer(h1, c, c_inner, w, f"{p}.cross_attention_norm", cfg, rng, training, grads)
        f, f_bwd = feed_forward_forward(h2, w, f"{p}.ffn", grads)
        y, s3 = _sublayer(h2, f, f_bwd, w, f"{p}.ffn_norm", cfg, rng, training, grads)
        _check_finite(y, p)
        layer_bwds.append((s1, s2, s3, enc_grad))
    logits, lm_bwd = linear_forward(y, w, "lm_head", grads)
    _check_finite(logits, "lm_head")

    def backward(dlogits):
        dy = lm_bwd(dlogits)
        d_enc = np.zeros_like(enc_out)
        for s1, s2, s3, enc_grad in reversed(layer_bwds):
            dres, dsub = s3(dy)
            dh2 = dres + dsub
            dres, dsub = s2(dh2)
            d_enc += enc_grad.pop("d")
            dh1 = dres + dsub
            dres, dsub = s1(dh1)
            dy = dres + dsub
        emb_bwd(dy)
        return d_enc

    return logits, backward


def seq2seq_forward(src_ids, src_valid, dec_ids, dec_valid, w, cfg, training=False, rng=None,
                    grads: Grads | None = None):
    """Teacher-forced logits ``(B, Td, vocab)`` with a backward closure."""
    _require_decoder(w, cfg)
    enc_out, enc_bwd, _ = encoder_stack_forward(src_ids, src_valid, w, cfg, training, rng, grads)
    logits, dec_bwd = decoder_forward(dec_ids, dec_valid, enc_out, src_valid, w, cfg,
                                      training, rng, grads)

    def backward(dlogits):
        enc_bwd(dec_bwd(dlogits))

    return logits, backward


def decoder_start_id() -> int:
    return PAD_ID


def next_token_logits(src: TokenSequence | Sequence[int], prefix: Sequence[int],
                      w: WeightBundle, cfg: ModelConfig) -> np.ndarray:
    """Logits for the token following ``prefix`` (prefix excludes the start token)."""
    _require_decoder(w, cfg)
    ids = list(src.ids if isinstance(src, TokenSequence) else src)
    src_arr, src_valid = pad_batch([ids])
    enc_out, _, _ = encoder_stack_forward(src_arr, src_valid, w, cfg)
    dec = [decoder_start_id(), *prefix]
    dec_arr, dec_valid = pad_batch([dec])
    logits, _ = decoder_forward(dec_arr, dec_valid, enc_out, src_valid, w, cfg)
    return logits[0, -1]


def greedy_decode(src: TokenSequence | Sequence[int], w: WeightBundle, cfg: ModelConfig,
                  max_len: int = 4) -> str:
    return byte_decode(greedy_decode_ids(src, w, cfg, max_len), errors="replace")


def greedy_decode_ids(src, w: WeightBundle, cfg: ModelConfig, max_len: int = 4) -> list[int]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    _require_decoder(w, cfg)
    ids = list(src.ids if isinstance(src, TokenSequence) else src)
    if len(ids) > cfg.max_positions:
        raise SequenceTooLong(f"sequence length {len(ids)} exceeds max_positions {cfg.max_positions}")
    src_arr, src_valid = pad_batch([ids])
    enc_out, _, _ = encoder_stack_forward(src_arr, src_valid, w, cfg)
    out: list[int] = []
    for _ in range(max_len):
        dec = [decoder_start_id(), *out]
        if len(dec) > cfg.max_positions:
            break
        dec_arr, dec_valid = pad_batch([dec])
        logits, _ = decoder_forward(dec_arr, dec_valid, enc_out, src_valid, w, cfg)
        nxt = int(np.argmax(logits[0, -1]))
        if nxt == EOS_ID:
            break
        out.append(nxt)
    return out
