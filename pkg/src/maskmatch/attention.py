"""Cross-view attention: refine mask descriptors against the other view.

Each pooled object descriptor queries the full feature map of the
opposite view through single-head scaled dot-product attention.  The
token stream (flattened feature map) gets a learnable positional
embedding and a layer norm before projection; queries are layer-normed
with the same scale/shift.  One parameter set serves both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numeric
from .errors import CapacityError, DimensionError
from .numeric import Tape, Tensor

LN_EPS = 1e-5

DEFAULT_MAX_TOKENS = 4096


@dataclass
class AttentionParams:
    w_q: Tensor  # d x d_k
    w_k: Tensor  # d x d_k
    w_v: Tensor  # d x d_k
    pos_embed: Tensor  # P x d
    ln_gamma: Tensor  # d
    ln_beta: Tensor  # d

    @property
    def d(self) -> int:
        return self.w_q.data.shape[0]

    @property
    def d_k(self) -> int:
        return self.w_q.data.shape[1]

    @property
    def max_tokens(self) -> int:
        return self.pos_embed.data.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {
            "attn.w_q": self.w_q,
            "attn.w_k": self.w_k,
            "attn.w_v": self.w_v,
            "attn.pos_embed": self.pos_embed,
            "attn.ln_gamma": self.ln_gamma,
            "attn.ln_beta": self.ln_beta,
        }


def cross_attend(
    queries,
    context_map,
    params: AttentionParams,
    tape: Tape | None = None,
) -> list[Tensor]:
    """Attend each query vector over the flattened context feature map.

    Returns one refined vector of width d_k per query, in query order.
    Raises :class:`CapacityError` when the map has more tokens than the
    positional embedding covers.
    """
    if not queries:
        return []
    cm = context_map.data if isinstance(context_map, Tensor) else np.asarray(context_map, dtype=np.float64)
    if cm.ndim != 3:
        raise DimensionError(f"context map must be H x W x d, got shape {cm.shape}")
    h, w, d = cm.shape
    t = h * w
    if d != params.d:
        raise DimensionError(f"context map width {d} != parameter width {params.d}")
    if t > params.max_tokens:
        raise CapacityError(
            f"context map has {t} tokens but the positional embedding covers {params.max_tokens}"
        )

    flat = numeric.tensor(cm.reshape(t, d))
    tokens = numeric.layer_norm(flat, params.ln_gamma, params.ln_beta, LN_EPS, tape)
    tokens = numeric.add(tokens, numeric.rows(params.pos_embed, 0, t, tape), tape)

    q_in = numeric.stack_rows([q if isinstance(q, Tensor) else numeric.tensor(q) for q in queries], tape)
    q_norm = numeric.layer_norm(q_in, params.ln_gamma, params.ln_beta, LN_EPS, tape)

    q_proj = numeric.matmul(q_norm, params.w_q, tape)
    k_proj = numeric.matmul(tokens, params.w_k, tape)
    v_proj = numeric.matmul(tokens, params.w_v, tape)

    logits = numeric.scale(
        numeric.matmul(q_proj, numeric.transpose(k_proj, tape), tape),
        1.0 / np.sqrt(params.d_k),
        tape,
    )
    weights = numeric.softmax_rows(logits, tape)
    refined = numeric.matmul(weights, v_proj, tape)
    return [numeric.row(refined, i, tape) for i in range(len(queries))]


def attention_weights(query, context_map, params: AttentionParams) -> np.ndarray:
    """Forward-only attention distribution of one query over map tokens."""
    cm = np.asarray(context_map, dtype=np.float64)
    t = cm.shape[0] * cm.shape[1]
    flat = numeric.tensor(cm.reshape(t, cm.shape[2]))
    tokens = numeric.add(
        numeric.layer_norm(flat, params.ln_gamma, params.ln_beta, LN_EPS),
        numeric.rows(params.pos_embed, 0, t),
    )
    q = numeric.layer_norm(numeric.stack_rows([numeric.tensor(query)]), params.ln_gamma, params.ln_beta, LN_EPS)
    logits = numeric.scale(
        numeric.matmul(numeric.matmul(q, params.w_q), numeric.transpose(numeric.matmul(tokens, params.w_k))),
        1.0 / np.sqrt(params.d_k),
    )
    return numeric.softmax_rows(logits).data[0]


def refine_descriptors(
    source,
    candidates,
    src_map,
    dst_map,
    params: AttentionParams,
    tape: Tape | None = None,
) -> None:
    """Fill the cross_view field of the source and candidate descriptors.

    Candidates query the source view's map; the source queries the
    destination view's map.
    """
    if candidates:
        refined = cross_attend([c.object for c in candidates], src_map, params, tape)
        for desc, vec in zip(candidates, refined):
            desc.cross_view = vec
    source.cross_view = cross_attend([source.object], dst_map, params, tape)[0]
