"""Greedy and beam-search decoding plus direct / pivot translation drivers.

Decoding is read-only on the model. Tie-breaking is fully deterministic:
greedy picks the lowest token id among argmax ties, beam search breaks
score ties by the lexicographically smallest token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, ShapeError
from .languages import BOS, EOS, PAD
from .prompts import render
from .transformer import forward


@dataclass(frozen=True)
class DecodeConfig:
    method: str = "beam"  # "greedy" | "beam"
    beam_width: int = 5
    max_new_tokens: int = 24
    length_norm: float = 0.0  # exponent lambda; 0 = no normalization

    def __post_init__(self):
        if self.method not in ("greedy", "beam"):
            raise ConfigError(f"unknown decode method {self.method!r}")
        if self.beam_width < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.beam_width}")
        if self.max_new_tokens < 1:
            raise ConfigError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")

    def to_dict(self):
        return {
            "method": self.method, "beam_width": self.beam_width,
            "max_new_tokens": self.max_new_tokens, "length_norm": self.length_norm,
        }


def _check_budget(params, prefix_ids, max_new):
    if len(prefix_ids) + max_new > params.config.max_seq_len:
        raise ShapeError(
            f"prefix length {len(prefix_ids)} + budget {max_new} exceeds "
            f"max_seq_len {params.config.max_seq_len}"
        )


def _next_logprobs(params, ids_batch):
    """Log-probabilities of the next token for every row of `ids_batch`."""
    with ad.no_grad():
        logits = forward(params, ids_batch)
    last = logits.data[:, -1, :]
    z = last - last.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp[:, PAD] = -np.inf  # structural tokens are never generated
    logp[:, BOS] = -np.inf
    return logp


def greedy_decode(params, prefix_ids, cfg):
    """Argmax continuation until EOS or the token budget; EOS not returned."""
    _check_budget(params, prefix_ids, cfg.max_new_tokens)
    ids = list(prefix_ids)
    out = []
    for _ in range(cfg.max_new_tokens):
        logp = _next_logprobs(params, np.asarray(ids, dtype=np.int64)[None, :])[0]
        tok = int(np.argmax(logp))  # argmax returns the lowest id among ties
        if tok == EOS:
            break
        out.append(tok)
        ids.append(tok)
    return tuple(out)


def _normalized(score, tokens, lam):
    length = max(1, len(tokens))
    return score / (length ** lam)


def beam_search(params, prefix_ids, cfg):
    """Beam search over summed token log-probabilities.

    Finished hypotheses (EOS emitted, or budget exhausted) retire from the
    beam; the search stops once `beam_width` hypotheses have finished. The
    winner maximizes score / len^lambda.
    """
    _check_budget(params, prefix_ids, cfg.max_new_tokens)
    width = cfg.beam_width
    prefix = tuple(prefix_ids)
    live = [((), 0.0)]  # (generated tokens, summed logprob)
    finished = []

    for _ in range(cfg.max_new_tokens):
        if not live or len(finished) >= width:
            break
        ids = np.asarray([prefix + toks for toks, _ in live], dtype=np.int64)
        logp = _next_logprobs(params, ids)
        candidates = []
        for (toks, score), row in zip(live, logp):
            for tok in range(row.shape[0]):
                if np.isfinite(row[tok]):
                    candidates.append((toks + (tok,), score + float(row[tok])))
        # Highest score first; ties broken toward the smaller token sequence.
        candidates.sort(key=lambda c: (-c[1], c[0]))
        live = []
        for toks, score in candidates:
            if toks[-1] == EOS:
                finished.append((toks[:-1], score))
                if len(finished) >= width:
                    break
            else:
                live.append((toks, score))
            if len(live) >= width:
                break

    finished.extend(live)  # budget-exhausted hypotheses compete too
    if not finished:
        return ()
    best = min(
        finished,
        key=lambda c: (-_normalized(c[1], c[0], cfg.length_norm), c[0]),
    )
    return best[0]


def decode(params, prefix_ids, cfg):
    if cfg.method == "greedy":
        return greedy_decode(params, prefix_ids, cfg)
    return beam_search(params, prefix_ids, cfg)


def translate(params, suite, strategy, src_lang, tgt_lang, src_tokens, cfg):
    """Render the inference prefix for one pair and decode the target."""
    prefix = render(strategy, suite, src_lang, tgt_lang, src_tokens).token_ids
    return decode(params, prefix, cfg)


def pivot_translate(params, suite, strategy, src_lang, tgt_lang, src_tokens, cfg):
    """Two-hop translation through the center language.

    Degenerates to direct translation when the source is the center. An
    empty intermediate is a hard error; the caller scores it as wrong.
    """
    center = suite.center_lang
    if src_lang == center or tgt_lang == center:
        return translate(params, suite, strategy, src_lang, tgt_lang, src_tokens, cfg)
    mid = translate(params, suite, strategy, src_lang, center, src_tokens, cfg)
    if not mid:
        raise DataError(
            f"empty pivot intermediate for direction {src_lang}->{tgt_lang}"
        )
    return translate(params, suite, strategy, center, tgt_lang, mid, cfg)
