"""Click attention decoder: masked click-to-scene cross-attention,
click-to-click self-attention, FFN, and scene-to-click cross-attention,
repeated for L layers.

Queries and scene voxels both carry a content stream (refined per layer)
and a fixed positional stream; positional parts are added to attention
queries/keys but never to values. Attention per layer is restricted, for
each user-click query, to the voxels inside its own intermediate mask
prediction from the previous layer (sigmoid > 0.5 on its per-click
logits); empty masks and the learnable background queries stay fully
attendable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .encoding import QuerySet


@dataclass
class DecoderConfig:
    dim: int = 128
    num_heads: int = 8
    ffn_dim: int = 1024
    num_layers: int = 3
    masked_attention: bool = True
    use_c2s: bool = True
    use_c2c: bool = True
    use_s2c: bool = True

    def __post_init__(self):
        if self.dim % self.num_heads:
            raise ValueError("head count must divide the decoder width")


def init_decoder_params(config: DecoderConfig, rng: np.random.Generator) -> dict:
    p = {}

    def linear(name, cin, cout):
        scale = np.sqrt(2.0 / (cin + cout))
        p[f"{name}_w"] = ad.parameter(rng.normal(0.0, scale, size=(cin, cout)))
        p[f"{name}_b"] = ad.parameter(np.zeros(cout))

    def norm(name):
        p[f"{name}_g"] = ad.parameter(np.ones(config.dim))
        p[f"{name}_b"] = ad.parameter(np.zeros(config.dim))

    d = config.dim
    for layer in range(config.num_layers):
        for blk in ("c2s", "c2c", "s2c"):
            for proj in ("q", "k", "v", "o"):
                linear(f"l{layer}_{blk}_{proj}", d, d)
            norm(f"l{layer}_{blk}_ln")
        linear(f"l{layer}_ffn1", d, config.ffn_dim)
        linear(f"l{layer}_ffn2", config.ffn_dim, d)
        norm(f"l{layer}_ffn_ln")
    return p


def multi_head_attention(
    query: ad.Tensor,
    key: ad.Tensor,
    value: ad.Tensor,
    p: dict,
    prefix: str,
    num_heads: int,
    mask: np.ndarray | None = None,
) -> ad.Tensor:
    """Standard multi-head attention with optional additive mask.

    `mask` is (num_queries, num_keys) with 0 = attendable, -inf = blocked;
    it is shared across heads. Scaling is 1/sqrt(head_dim).
    """
    nq, d = query.shape
    nk = key.shape[0]
    dh = d // num_heads
    q = (query @ p[f"{prefix}_q_w"] + p[f"{prefix}_q_b"]).reshape(nq, num_heads, dh).swapaxes(0, 1)
    k = (key @ p[f"{prefix}_k_w"] + p[f"{prefix}_k_b"]).reshape(nk, num_heads, dh).swapaxes(0, 1)
    v = (value @ p[f"{prefix}_v_w"] + p[f"{prefix}_v_b"]).reshape(nk, num_heads, dh).swapaxes(0, 1)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(dh))
    weights = ad.softmax(scores, mask=None if mask is None else mask[None])
    out = (weights @ v).swapaxes(0, 1).reshape(nq, d)
    return out @ p[f"{prefix}_o_w"] + p[f"{prefix}_o_b"]


def build_attention_mask(
    click_logits: np.ndarray, num_user: int, num_voxels: int
) -> np.ndarray:
    """(K_total, N') additive mask from per-click logits of the previous layer.

    A voxel is attendable for a user query when that query's own mask logit
    sigmoid exceeds 0.5 (logit > 0). Queries with an empty intermediate mask
    are repaired to fully attendable; learnable background queries always are.
    """
    total = click_logits.shape[1]
    mask = np.zeros((total, num_voxels))
    inside = click_logits.T > 0.0  # (K_total, N')
    for qi in range(num_user):
        if inside[qi].any():
            mask[qi, ~inside[qi]] = -np.inf
    return mask


@dataclass
class DecoderOutput:
    query_content: ad.Tensor          # final Q_c
    scene_content: ad.Tensor          # final F_c
    layer_logits: list                # per-click logits Tensor after each layer
    attention_masks: list             # masks actually applied per layer (debug)


def decoder_forward(
    scene_features: ad.Tensor,
    scene_positional: np.ndarray,
    queries: QuerySet,
    params: dict,
    config: DecoderConfig,
    click_logits_fn,
) -> DecoderOutput:
    """Run L decoder layers; `click_logits_fn(F_c, Q_c)` supplies the
    per-click mask logits used both for masked attention and for deep
    supervision."""
    q_c = queries.content
    f_c = scene_features
    q_p = queries.positional
    f_p = scene_positional
    n_vox = f_c.shape[0]

    layer_logits = []
    masks_used = []
    mask = None
    for layer in range(config.num_layers):
        pre = f"l{layer}"
        if config.use_c2s:
            att = multi_head_attention(
                q_c + ad.constant(q_p), f_c + ad.constant(f_p), f_c,
                params, f"{pre}_c2s", config.num_heads, mask=mask,
            )
            q_c = ad.layer_norm(att + q_c, params[f"{pre}_c2s_ln_g"], params[f"{pre}_c2s_ln_b"])
        if config.use_c2c:
            qk = q_c + ad.constant(q_p)
            att = multi_head_attention(
                qk, qk, q_c, params, f"{pre}_c2c", config.num_heads
            )
            q_c = ad.layer_norm(att + q_c, params[f"{pre}_c2c_ln_g"], params[f"{pre}_c2c_ln_b"])
        h = ad.relu(q_c @ params[f"{pre}_ffn1_w"] + params[f"{pre}_ffn1_b"])
        h = h @ params[f"{pre}_ffn2_w"] + params[f"{pre}_ffn2_b"]
        q_c = ad.layer_norm(h + q_c, params[f"{pre}_ffn_ln_g"], params[f"{pre}_ffn_ln_b"])
        if config.use_s2c:
            att = multi_head_attention(
                f_c + ad.constant(f_p), q_c + ad.constant(q_p), q_c,
                params, f"{pre}_s2c", config.num_heads,
            )
            f_c = ad.layer_norm(att + f_c, params[f"{pre}_s2c_ln_g"], params[f"{pre}_s2c_ln_b"])

        logits = click_logits_fn(f_c, q_c)
        layer_logits.append(logits)
        masks_used.append(mask)
        if config.masked_attention:
            mask = build_attention_mask(logits.data, queries.num_user, n_vox)
        else:
            mask = None

    if not layer_logits:  # zero-layer decoder still needs mask logits
        layer_logits.append(click_logits_fn(f_c, q_c))

    return DecoderOutput(
        query_content=q_c,
        scene_content=f_c,
        layer_logits=layer_logits,
        attention_masks=masks_used,
    )
