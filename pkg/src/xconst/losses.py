"""Masked causal-LM translation loss and the consistency-regularized objective.

The consistency term is a per-position KL between the model's target-token
distributions under the real pair (x, y) and under the copy pair (y, y),
aligned index-by-index over the shared target. Gradients flow through both
sides of the KL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .prompts import render, render_copy
from .transformer import forward


@dataclass
class LossBreakdown:
    ce: float
    kl: float
    total: float
    alpha: float
    tokens_counted: int


def _target_logit_rows(logits, rendering):
    """Rows of `logits` that predict the rendering's masked tokens.

    Position i-1 of the logits predicts token i, so the selected rows are
    the masked token positions shifted left by one.
    """
    if isinstance(logits, ad.Tensor) and logits.data.ndim == 3:
        if logits.shape[0] != 1:
            raise ContractError("per-example loss expects a batch of one")
        logits = ad.reshape(logits, logits.shape[1:])
    positions = rendering.target_positions
    if not positions:
        raise ContractError("rendering has an all-zero loss mask (no target)")
    rows = np.asarray(positions, dtype=np.int64) - 1
    return ad.gather_rows(logits, rows), positions


def clm_loss(logits, rendering):
    """Mean negative log-likelihood (nats) over the masked target positions."""
    rows, positions = _target_logit_rows(logits, rendering)
    logp = ad.log_softmax(rows, axis=-1)
    onehot = np.zeros((len(positions), rows.shape[-1]))
    for j, pos in enumerate(positions):
        onehot[j, rendering.token_ids[pos]] = 1.0
    picked = ad.sum_(ad.mul(logp, ad.Tensor(onehot)), axis=-1)
    return ad.scale(ad.mean_(picked), -1.0)


def xconst_kl(logits_direct, rendering_direct, logits_copy, rendering_copy):
    """Positionwise KL(direct || copy) averaged over the shared target."""
    rows_d, pos_d = _target_logit_rows(logits_direct, rendering_direct)
    rows_c, pos_c = _target_logit_rows(logits_copy, rendering_copy)
    if len(pos_d) != len(pos_c):
        raise ContractError(
            f"masked-position counts differ: {len(pos_d)} vs {len(pos_c)}"
        )
    p = ad.softmax(rows_d, axis=-1)
    log_ratio = ad.log_softmax(rows_d, axis=-1) - ad.log_softmax(rows_c, axis=-1)
    per_pos = ad.sum_(ad.mul(p, log_ratio), axis=-1)
    return ad.mean_(per_pos)


def xconst_loss_graph(params, example, strategy, alpha, suite):
    """Autodiff nodes (ce, kl, total) for one example; kl is None at alpha=0."""
    direct = render(
        strategy, suite, example.src_lang, example.tgt_lang,
        example.src_tokens, example.tgt_tokens,
    )
    logits_d = forward(params, np.asarray(direct.token_ids)[None, :])
    ce = clm_loss(logits_d, direct)
    if alpha == 0.0:
        return ce, None, ce, direct
    copy = render_copy(strategy, suite, example.tgt_lang, example.tgt_tokens)
    logits_c = forward(params, np.asarray(copy.token_ids)[None, :])
    kl = xconst_kl(logits_d, direct, logits_c, copy)
    total = ad.add(ce, ad.scale(kl, alpha))
    return ce, kl, total, direct


def xconst_loss(params, example, strategy, alpha, suite):
    """LossBreakdown for one example at the current parameters."""
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    ce, kl, total, direct = xconst_loss_graph(params, example, strategy, alpha, suite)
    kl_val = 0.0 if kl is None else kl.item()
    return LossBreakdown(
        ce=ce.item(),
        kl=kl_val,
        total=ce.item() + alpha * kl_val,
        alpha=alpha,
        tokens_counted=sum(direct.loss_mask),
    )
