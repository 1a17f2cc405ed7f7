"""Interleaved multimodal transformer: per-layer self-attention on each stream,
cross-attention against the other stream's fresh self-attention output, and a
position-wise feed-forward, all pre-layer-norm with residuals.

The stack itself is residual-pure (zeroing every sublayer's output projection
makes it the identity); the model applies a final layer norm separately.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    concat,
    layer_norm,
    masked_softmax,
    matmul,
    narrow,
    relu,
    reshape,
    swapaxes,
)

__all__ = [
    "AttentionParams",
    "FfnParams",
    "FusionLayerParams",
    "SingleLayerParams",
    "LayerNormParams",
    "ClassifierParams",
    "init_attention_params",
    "init_ffn_params",
    "init_fusion_layer",
    "init_single_layer",
    "init_layer_norm",
    "init_classifier",
    "self_attend",
    "cross_attend",
    "ffn_block",
    "fusion_stack",
    "single_stack",
    "classify",
    "classify_single",
]


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class AttentionParams:
    """One attention sublayer: its pre-norm plus q/k/v/output projections."""

    ln: LayerNormParams
    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    b_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor


@dataclass
class FfnParams:
    """Position-wise feed-forward sublayer with its pre-norm."""

    ln: LayerNormParams
    w_in: Tensor  # [d_h x d_ffn]
    b_in: Tensor
    w_out: Tensor  # [d_ffn x d_h]
    b_out: Tensor


@dataclass
class FusionLayerParams:
    ts_self: AttentionParams
    txt_self: AttentionParams
    ts_cross: AttentionParams  # ts queries, txt keys/values
    txt_cross: AttentionParams  # txt queries, ts keys/values
    ts_ffn: FfnParams
    txt_ffn: FfnParams


@dataclass
class SingleLayerParams:
    self_attn: AttentionParams
    ffn: FfnParams


@dataclass
class ClassifierParams:
    """Two fully-connected layers: input -> d_h (relu) -> logits."""

    w_hidden: Tensor
    b_hidden: Tensor
    w_out: Tensor
    b_out: Tensor


def init_layer_norm(d: int) -> LayerNormParams:
    return LayerNormParams(gain=Tensor(np.ones(d)), bias=Tensor(np.zeros(d)))


def init_attention_params(rng: np.random.Generator, d_h: int) -> AttentionParams:
    scale = d_h**-0.5
    def w():
        return Tensor(rng.normal(0.0, scale, size=(d_h, d_h)))
    def b():
        return Tensor(np.zeros(d_h))
    return AttentionParams(
        ln=init_layer_norm(d_h),
        w_q=w(), b_q=b(), w_k=w(), b_k=b(), w_v=w(), b_v=b(), w_o=w(), b_o=b(),
    )


def init_ffn_params(rng: np.random.Generator, d_h: int, d_ffn: int | None = None) -> FfnParams:
    d_ffn = 4 * d_h if d_ffn is None else d_ffn
    return FfnParams(
        ln=init_layer_norm(d_h),
        w_in=Tensor(rng.normal(0.0, d_h**-0.5, size=(d_h, d_ffn))),
        b_in=Tensor(np.zeros(d_ffn)),
        w_out=Tensor(rng.normal(0.0, d_ffn**-0.5, size=(d_ffn, d_h))),
        b_out=Tensor(np.zeros(d_h)),
    )


def init_fusion_layer(rng: np.random.Generator, d_h: int) -> FusionLayerParams:
    return FusionLayerParams(
        ts_self=init_attention_params(rng, d_h),
        txt_self=init_attention_params(rng, d_h),
        ts_cross=init_attention_params(rng, d_h),
        txt_cross=init_attention_params(rng, d_h),
        ts_ffn=init_ffn_params(rng, d_h),
        txt_ffn=init_ffn_params(rng, d_h),
    )


def init_single_layer(rng: np.random.Generator, d_h: int) -> SingleLayerParams:
    return SingleLayerParams(
        self_attn=init_attention_params(rng, d_h),
        ffn=init_ffn_params(rng, d_h),
    )


def init_classifier(rng: np.random.Generator, d_in: int, d_h: int, n_out: int) -> ClassifierParams:
    return ClassifierParams(
        w_hidden=Tensor(rng.normal(0.0, d_in**-0.5, size=(d_in, d_h))),
        b_hidden=Tensor(np.zeros(d_h)),
        w_out=Tensor(rng.normal(0.0, d_h**-0.5, size=(d_h, n_out))),
        b_out=Tensor(np.zeros(n_out)),
    )


def _multi_head(
    q_in: Tensor,
    kv_in: Tensor,
    p: AttentionParams,
    heads: int,
    key_mask: np.ndarray | None,
) -> Tensor:
    """Scaled dot-product attention split over heads; key_mask hides kv rows."""
    a, d = q_in.shape
    l = kv_in.shape[0]
    if d % heads != 0:
        raise ValueError(f"head count {heads} must divide width {d}")
    dk = d // heads
    q = matmul(q_in, p.w_q) + p.b_q
    k = matmul(kv_in, p.w_k) + p.b_k
    v = matmul(kv_in, p.w_v) + p.b_v
    qh = swapaxes(reshape(q, (a, heads, dk)), 0, 1)  # [H x a x dk]
    kh = swapaxes(reshape(k, (l, heads, dk)), 0, 1)
    vh = swapaxes(reshape(v, (l, heads, dk)), 0, 1)
    scores = matmul(qh, swapaxes(kh, 1, 2)) * (dk**-0.5)  # [H x a x l]
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[None, None, :]
    weights, _ = masked_softmax(scores, mask)
    merged = reshape(swapaxes(matmul(weights, vh), 0, 1), (a, d))
    return matmul(merged, p.w_o) + p.b_o


def self_attend(x: Tensor, p: AttentionParams, heads: int, key_mask=None) -> Tensor:
    """Pre-norm bidirectional self-attention with residual."""
    normed = layer_norm(x, p.ln.gain, p.ln.bias)
    return x + _multi_head(normed, normed, p, heads, key_mask)


def cross_attend(x: Tensor, other: Tensor, p: AttentionParams, heads: int, key_mask=None) -> Tensor:
    """Queries from x, keys/values from the other stream; both pre-normed, residual to x."""
    q_in = layer_norm(x, p.ln.gain, p.ln.bias)
    kv_in = layer_norm(other, p.ln.gain, p.ln.bias)
    return x + _multi_head(q_in, kv_in, p, heads, key_mask)


def ffn_block(x: Tensor, p: FfnParams) -> Tensor:
    normed = layer_norm(x, p.ln.gain, p.ln.bias)
    return x + matmul(relu(matmul(normed, p.w_in) + p.b_in), p.w_out) + p.b_out


def fusion_stack(
    z_ts: Tensor,
    z_txt: Tensor,
    layers: list[FusionLayerParams],
    heads: int,
    txt_key_mask: np.ndarray | None = None,
) -> tuple[Tensor, Tensor]:
    """J interleaved layers; txt_key_mask hides padded note rows from attention."""
    if not layers:
        raise ValueError("fusion stack needs at least one layer")
    for layer in layers:
        ts_hat = self_attend(z_ts, layer.ts_self, heads)
        txt_hat = self_attend(z_txt, layer.txt_self, heads, key_mask=txt_key_mask)
        ts_mixed = cross_attend(ts_hat, txt_hat, layer.ts_cross, heads, key_mask=txt_key_mask)
        txt_mixed = cross_attend(txt_hat, ts_hat, layer.txt_cross, heads)
        z_ts = ffn_block(ts_mixed, layer.ts_ffn)
        z_txt = ffn_block(txt_mixed, layer.txt_ffn)
    return z_ts, z_txt


def single_stack(
    x: Tensor,
    layers: list[SingleLayerParams],
    heads: int,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Self-attention-only backbone for single-modality models."""
    if not layers:
        raise ValueError("backbone needs at least one layer")
    for layer in layers:
        x = self_attend(x, layer.self_attn, heads, key_mask=key_mask)
        x = ffn_block(x, layer.ffn)
    return x


def _row(x: Tensor, index: int) -> Tensor:
    return narrow(x, 0, index, 1)  # [1 x d]


def classify(
    z_ts: Tensor,
    z_txt: Tensor,
    p: ClassifierParams,
    ts_row: int,
    txt_row: int,
) -> Tensor:
    """Concat the two streams' designated hidden rows -> FC -> logits [n_out]."""
    joined = concat([_row(z_ts, ts_row), _row(z_txt, txt_row)], axis=1)  # [1 x 2d_h]
    hidden = relu(matmul(joined, p.w_hidden) + p.b_hidden)
    logits = matmul(hidden, p.w_out) + p.b_out
    return reshape(logits, (logits.shape[1],))


def classify_single(z: Tensor, p: ClassifierParams, row: int) -> Tensor:
    hidden = relu(matmul(_row(z, row), p.w_hidden) + p.b_hidden)
    logits = matmul(hidden, p.w_out) + p.b_out
    return reshape(logits, (logits.shape[1],))
