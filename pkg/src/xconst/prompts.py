"""Instruction templates and their rendering into token ids with loss masks.

Five strategies differ only in where the source/target language tags sit
relative to the sentence pair. Template words are single reserved tokens;
the toy vocabulary has no subwords, and only the structure matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .languages import BOS, COLON, EOS, FROM, INTO, NEWLINE, THIS, TRANSLATE

# Template segment markers.
SRC_TAG = "[src]"
TGT_TAG = "[tgt]"
SRC_SENT = "<SRC>"
TGT_SENT = "<TGT>"

TEMPLATES = {
    "t-enc": (TGT_TAG, COLON, SRC_SENT, NEWLINE, TGT_SENT),
    "t-dec": (SRC_SENT, NEWLINE, TGT_TAG, COLON, TGT_SENT),
    "s-enc-t-enc": (SRC_TAG, TGT_TAG, COLON, SRC_SENT, NEWLINE, TGT_SENT),
    "s-enc-t-dec": (SRC_TAG, COLON, SRC_SENT, NEWLINE, TGT_TAG, COLON, TGT_SENT),
    "gpt-mt": (
        TRANSLATE, THIS, FROM, SRC_TAG, INTO, TGT_TAG, COLON, NEWLINE,
        SRC_TAG, COLON, SRC_SENT, NEWLINE, TGT_TAG, COLON, TGT_SENT,
    ),
}

STRATEGY_NAMES = tuple(TEMPLATES)


def strategy_template(name):
    key = name.lower()
    if key not in TEMPLATES:
        raise ConfigError(f"unknown prompt strategy {name!r}; known: {STRATEGY_NAMES}")
    return key, TEMPLATES[key]


@dataclass(frozen=True)
class PromptRendering:
    token_ids: tuple
    loss_mask: tuple  # aligned with token_ids; 1 marks predicted positions
    target_start: int
    strategy: str
    src_lang: int
    tgt_lang: int

    @property
    def target_positions(self):
        return tuple(i for i, m in enumerate(self.loss_mask) if m)


def render(strategy, suite, src_lang, tgt_lang, src_tokens, tgt_tokens=None):
    """Token ids + loss mask for one instruction-wrapped pair.

    With tgt_tokens omitted the sequence stops exactly where the target
    would begin (an inference prefix) and the mask is all zero.
    """
    name, template = strategy_template(strategy)
    if len(src_tokens) == 0:
        raise DataError("source sentence is empty")

    ids = [BOS]
    target_start = None
    for seg in template:
        if seg == SRC_TAG:
            ids.append(suite.tag(src_lang))
        elif seg == TGT_TAG:
            ids.append(suite.tag(tgt_lang))
        elif seg == SRC_SENT:
            ids.extend(src_tokens)
        elif seg == TGT_SENT:
            target_start = len(ids)
            if tgt_tokens is None:
                break
            ids.extend(tgt_tokens)
            ids.append(EOS)
        else:
            ids.append(seg)

    mask = [0] * len(ids)
    if tgt_tokens is not None:
        for i in range(target_start, len(ids)):
            mask[i] = 1
    return PromptRendering(
        token_ids=tuple(ids),
        loss_mask=tuple(mask),
        target_start=target_start,
        strategy=name,
        src_lang=src_lang,
        tgt_lang=tgt_lang,
    )


def render_copy(strategy, suite, tgt_lang, tgt_tokens):
    """Copy-pair rendering: both language slots and both sentence slots
    carry the target language / sentence."""
    return render(strategy, suite, tgt_lang, tgt_lang, tgt_tokens, tgt_tokens)


def pick_strategy(mode, seed=0, example_index=0):
    """Strategy selector: mode is either a fixed name or "diversified"."""
    if mode != "diversified":
        name, _ = strategy_template(mode)
        return name
    rng = np.random.default_rng([seed, example_index, 0x57])
    return STRATEGY_NAMES[int(rng.integers(len(STRATEGY_NAMES)))]
