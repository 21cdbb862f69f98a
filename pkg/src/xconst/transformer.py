"""Decoder-only transformer (pre-norm, learned positions, tied embeddings).

Parameters live in a flat name -> Tensor dict so the optimizer, gradient
checker, and checkpoint code can treat the model uniformly. LoRA adapters
attach to the feed-forward down-projection of every layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DataError, ShapeError, StateError
from .languages import PAD

LN_EPS = 1e-5
ATTN_NEG = -1e9


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 256
    max_seq_len: int = 96
    pad_id: int = PAD

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if min(self.d_model, self.n_heads, self.n_layers, self.d_ff, self.max_seq_len) < 1:
            raise ConfigError("all model dimensions must be positive")

    def to_dict(self):
        return {
            "vocab_size": self.vocab_size,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "max_seq_len": self.max_seq_len,
            "pad_id": self.pad_id,
        }


class ModelParams:
    """Config plus the flat parameter dict; knows whether LoRA is attached."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = tensors
        self.lora_rank = None
        self.lora_scale = 0.0

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return sorted(self.tensors)

    def trainable_names(self, mode="full"):
        if mode == "full":
            return [n for n in self.names() if ".lora." not in n]
        if mode == "lora":
            if self.lora_rank is None:
                raise StateError("lora mode requested but no adapters attached")
            return [n for n in self.names() if ".lora." in n]
        raise ConfigError(f"unknown training mode {mode!r}")

    def param_count(self, mode="full"):
        return sum(self.tensors[n].size for n in self.trainable_names(mode))


def init_model(config, seed=0):
    rng = np.random.default_rng(seed)
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    out_std = 0.02 / np.sqrt(2.0 * config.n_layers)

    def normal(shape, std=0.02):
        return ad.Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)

    tensors = {
        "tok_emb": normal((v, d)),
        "pos_emb": normal((config.max_seq_len, d)),
        "final_ln.gain": ad.Tensor(np.ones(d), requires_grad=True),
        "final_ln.bias": ad.Tensor(np.zeros(d), requires_grad=True),
    }
    for layer in range(config.n_layers):
        p = f"layers.{layer}"
        tensors[f"{p}.ln1.gain"] = ad.Tensor(np.ones(d), requires_grad=True)
        tensors[f"{p}.ln1.bias"] = ad.Tensor(np.zeros(d), requires_grad=True)
        tensors[f"{p}.attn.wq"] = normal((d, d))
        tensors[f"{p}.attn.wk"] = normal((d, d))
        tensors[f"{p}.attn.wv"] = normal((d, d))
        tensors[f"{p}.attn.wo"] = normal((d, d), std=out_std)
        tensors[f"{p}.ln2.gain"] = ad.Tensor(np.ones(d), requires_grad=True)
        tensors[f"{p}.ln2.bias"] = ad.Tensor(np.zeros(d), requires_grad=True)
        tensors[f"{p}.ff.w1"] = normal((d, ff))
        tensors[f"{p}.ff.w2"] = normal((ff, d), std=out_std)
    return ModelParams(config, tensors)


def attach_lora(params, rank=4, seed=0, alpha=None):
    """Add rank-`rank` adapters on every feed-forward down-projection.

    B starts at zero so the adapted model is exactly the base model until
    the first update.
    """
    if rank < 1:
        raise ConfigError(f"LoRA rank must be >= 1, got {rank}")
    if params.lora_rank is not None:
        raise StateError("LoRA adapters are already attached")
    rng = np.random.default_rng(seed)
    d, ff = params.config.d_model, params.config.d_ff
    for layer in range(params.config.n_layers):
        p = f"layers.{layer}"
        params.tensors[f"{p}.lora.a"] = ad.Tensor(
            rng.normal(0.0, 0.02, size=(rank, ff)), requires_grad=True
        )
        params.tensors[f"{p}.lora.b"] = ad.Tensor(
            np.zeros((d, rank)), requires_grad=True
        )
    params.lora_rank = rank
    params.lora_scale = (alpha if alpha is not None else rank) / rank
    return params


def _check_ids(config, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ShapeError(f"token ids must be 2-d (batch, length), got {ids.shape}")
    if ids.shape[1] > config.max_seq_len:
        raise ShapeError(
            f"sequence length {ids.shape[1]} exceeds max_seq_len {config.max_seq_len}"
        )
    if ids.size == 0:
        raise DataError("empty token batch")
    if ids.min() < 0 or ids.max() >= config.vocab_size:
        raise ShapeError(
            f"token id outside [0, {config.vocab_size}) in input batch"
        )
    return ids


def _attention_mask(ids, pad_id):
    b, t = ids.shape
    causal = np.tril(np.ones((t, t), dtype=bool))
    key_ok = (ids != pad_id)[:, None, None, :]  # (B,1,1,T)
    allowed = causal[None, None, :, :] & key_ok
    return np.where(allowed, 0.0, ATTN_NEG)


def hidden_states(params, ids):
    """Final-norm hidden states (B, T, d_model) as an autodiff Tensor."""
    cfg = params.config
    ids = _check_ids(cfg, ids)
    b, t = ids.shape
    d, h = cfg.d_model, cfg.n_heads
    dh = d // h
    inv_sqrt_dh = 1.0 / np.sqrt(dh)

    x = ad.gather_rows(params["tok_emb"], ids.reshape(-1))
    x = ad.reshape(x, (b, t, d))
    pos = ad.slice_(params["pos_emb"], np.s_[:t])
    x = ad.add(x, ad.reshape(pos, (1, t, d)))

    mask = ad.Tensor(_attention_mask(ids, cfg.pad_id))

    for layer in range(cfg.n_layers):
        p = f"layers.{layer}"
        a = ad.layer_norm(x, eps=LN_EPS)
        a = ad.add(ad.mul(a, params[f"{p}.ln1.gain"]), params[f"{p}.ln1.bias"])

        def heads(z):
            return ad.transpose(ad.reshape(z, (b, t, h, dh)), (0, 2, 1, 3))

        q = heads(ad.matmul(a, params[f"{p}.attn.wq"]))
        k = heads(ad.matmul(a, params[f"{p}.attn.wk"]))
        v = heads(ad.matmul(a, params[f"{p}.attn.wv"]))

        scores = ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt_dh)
        scores = ad.add(scores, mask)
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.matmul(attn, v)  # (B,H,T,dh)
        ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, t, d))
        x = ad.add(x, ad.matmul(ctx, params[f"{p}.attn.wo"]))

        f = ad.layer_norm(x, eps=LN_EPS)
        f = ad.add(ad.mul(f, params[f"{p}.ln2.gain"]), params[f"{p}.ln2.bias"])
        hidden = ad.gelu(ad.matmul(f, params[f"{p}.ff.w1"]))
        down = ad.matmul(hidden, params[f"{p}.ff.w2"])
        if params.lora_rank is not None:
            low = ad.matmul(hidden, ad.transpose(params[f"{p}.lora.a"]))
            low = ad.matmul(low, ad.transpose(params[f"{p}.lora.b"]))
            down = ad.add(down, ad.scale(low, params.lora_scale))
        x = ad.add(x, down)

    x = ad.layer_norm(x, eps=LN_EPS)
    x = ad.add(ad.mul(x, params["final_ln.gain"]), params["final_ln.bias"])
    return x


def forward(params, ids):
    """Logits (B, T, vocab) with the output head tied to the token embedding."""
    x = hidden_states(params, ids)
    return ad.matmul(x, ad.transpose(params["tok_emb"]))


def extract_representation(params, token_ids):
    """Final-layer hidden state at the last non-PAD position of one prefix."""
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.size == 0:
        raise DataError("empty input to extract_representation")
    nonpad = np.nonzero(ids[0] != params.config.pad_id)[0]
    if nonpad.size == 0:
        raise DataError("input is all padding")
    with ad.no_grad():
        h = hidden_states(params, ids)
    return h.data[0, int(nonpad[-1]), :].copy()
