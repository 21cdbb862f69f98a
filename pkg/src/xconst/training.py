"""AdamW training loop for vanilla and consistency-regularized finetuning.

A whole batch shares one forward pass per side (direct pairs, and copy
pairs when alpha > 0); per-example target windows are gathered out of the
flattened logits. Everything is deterministic for a fixed config.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    NumericalError,
)
from .languages import PAD
from .losses import LossBreakdown
from .prompts import pick_strategy, render, render_copy
from .transformer import ModelConfig, ModelParams, forward

CHECKPOINT_MAGIC = b"XCKP"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    mode: str = "vanilla"  # "vanilla" | "xconst"
    alpha: float = 0.1
    strategy_mode: str = "t-dec"  # a strategy name or "diversified"
    lora: int = 0  # 0 = full-weight, otherwise the adapter rank
    lr: float = 3e-4
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 10
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("vanilla", "xconst"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    @property
    def effective_alpha(self):
        return self.alpha if self.mode == "xconst" else 0.0

    @property
    def param_mode(self):
        return "lora" if self.lora else "full"

    def to_dict(self):
        return {
            "mode": self.mode, "alpha": self.alpha,
            "strategy_mode": self.strategy_mode, "lora": self.lora,
            "lr": self.lr, "weight_decay": self.weight_decay,
            "betas": list(self.betas), "adam_eps": self.adam_eps,
            "batch_size": self.batch_size, "epochs": self.epochs,
            "grad_clip": self.grad_clip, "seed": self.seed,
        }


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # LossBreakdown per step
    grad_norms: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    config: TrainConfig = None

    def write_csv(self, path):
        # wall_ms stays in memory only so the file is run-to-run reproducible
        with open(path, "w") as fh:
            fh.write("step,ce,kl,total,alpha,grad_norm\n")
            for i, row in enumerate(self.rows):
                fh.write(
                    f"{i + 1},{row.ce:.10g},{row.kl:.10g},{row.total:.10g},"
                    f"{row.alpha:.10g},{self.grad_norms[i]:.10g}\n"
                )


def make_batches(examples, batch_size, seed, epoch):
    """Deterministic per-(seed, epoch) shuffle into batches of indices."""
    if not examples:
        raise DataError("cannot batch an empty dataset")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng([seed, epoch, 0xBA])
    perm = rng.permutation(len(examples))
    return [
        [int(i) for i in perm[lo:lo + batch_size]]
        for lo in range(0, len(perm), batch_size)
    ]


def _pad_batch(renderings):
    width = max(len(r.token_ids) for r in renderings)
    ids = np.full((len(renderings), width), PAD, dtype=np.int64)
    for b, r in enumerate(renderings):
        ids[b, : len(r.token_ids)] = r.token_ids
    return ids


def _flat_target_rows(renderings, width):
    """Flat (batch*width) logit-row indices, true-token ids, and per-example
    averaging weights for every masked position in the batch."""
    rows, tokens, weights = [], [], []
    n = len(renderings)
    for b, r in enumerate(renderings):
        positions = r.target_positions
        if not positions:
            raise ContractError("rendering with empty loss mask in batch")
        w = 1.0 / (n * len(positions))
        for pos in positions:
            rows.append(b * width + pos - 1)
            tokens.append(r.token_ids[pos])
            weights.append(w)
    return (
        np.asarray(rows, dtype=np.int64),
        np.asarray(tokens, dtype=np.int64),
        np.asarray(weights),
    )


def batch_loss_graph(params, examples, strategies, alpha, suite):
    """(ce, kl, total) autodiff nodes for one batch.

    ce is the mean over examples of per-token cross-entropy; kl likewise
    (None when alpha == 0). total = ce + alpha * kl.
    """
    direct = [
        render(s, suite, ex.src_lang, ex.tgt_lang, ex.src_tokens, ex.tgt_tokens)
        for ex, s in zip(examples, strategies)
    ]
    ids_d = _pad_batch(direct)
    logits_d = forward(params, ids_d)
    v = logits_d.shape[-1]
    flat_d = ad.reshape(logits_d, (-1, v))

    rows_d, tokens, weights = _flat_target_rows(direct, ids_d.shape[1])
    picked_logits_d = ad.gather_rows(flat_d, rows_d)
    logp_d = ad.log_softmax(picked_logits_d, axis=-1)
    onehot = np.zeros((len(tokens), v))
    onehot[np.arange(len(tokens)), tokens] = 1.0
    picked = ad.sum_(ad.mul(logp_d, ad.Tensor(onehot)), axis=-1)
    ce = ad.scale(ad.sum_(ad.mul(picked, ad.Tensor(weights))), -1.0)

    if alpha == 0.0:
        return ce, None, ce

    copy = [
        render_copy(s, suite, ex.tgt_lang, ex.tgt_tokens)
        for ex, s in zip(examples, strategies)
    ]
    ids_c = _pad_batch(copy)
    logits_c = forward(params, ids_c)
    flat_c = ad.reshape(logits_c, (-1, v))
    rows_c, _, _ = _flat_target_rows(copy, ids_c.shape[1])
    picked_logits_c = ad.gather_rows(flat_c, rows_c)

    p = ad.softmax(picked_logits_d, axis=-1)
    log_ratio = logp_d - ad.log_softmax(picked_logits_c, axis=-1)
    per_pos = ad.sum_(ad.mul(p, log_ratio), axis=-1)
    kl = ad.sum_(ad.mul(per_pos, ad.Tensor(weights)))
    total = ad.add(ce, ad.scale(kl, alpha))
    return ce, kl, total


def decays(name):
    """Decoupled weight decay applies to matrices, not norm affines."""
    return not (name.endswith(".gain") or name.endswith(".bias"))


class AdamWState:
    def __init__(self):
        self.step = 0
        self.m = {}
        self.v = {}


def adamw_step(params, grads, state, config):
    """One decoupled-weight-decay Adam update over `grads` (name -> array)."""
    beta1, beta2 = config.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        theta = params[name].data
        if g.shape != theta.shape:
            raise ContractError(
                f"gradient shape {g.shape} != param shape {theta.shape} for {name}"
            )
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + config.adam_eps)
        if config.weight_decay and decays(name):
            update = update + config.weight_decay * theta
        theta -= config.lr * update


def clip_gradients(grads, max_norm):
    """Scale `grads` in place so their global norm is <= max_norm."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if max_norm and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def train(params, dataset, suite, config, log_path=None):
    """Optimize `params` in place; returns (params, TrainLog)."""
    if not dataset:
        raise DataError("training dataset is empty")
    if config.lora and params.lora_rank is None:
        raise ConfigError("config requests LoRA but no adapters are attached")
    trainable = params.trainable_names(config.param_mode)
    state = AdamWState()
    log = TrainLog(config=config)
    alpha = config.effective_alpha
    step = 0

    for epoch in range(config.epochs):
        for batch_idx in make_batches(dataset, config.batch_size, config.seed, epoch):
            t0 = time.perf_counter()
            step += 1
            examples = [dataset[i] for i in batch_idx]
            strategies = [
                pick_strategy(config.strategy_mode, config.seed, i)
                for i in batch_idx
            ]
            ad.zero_grads(params.tensors.values())
            try:
                ce, kl, total = batch_loss_graph(
                    params, examples, strategies, alpha, suite
                )
            except NumericalError as exc:
                raise NumericalError(
                    f"non-finite loss at step {step} (lr={config.lr}, "
                    f"batch={batch_idx}): {exc}"
                ) from exc
            ad.backward(total)
            grads = {n: params[n].grad_array() for n in trainable}
            norm = clip_gradients(grads, config.grad_clip)
            adamw_step(params.tensors, grads, state, config)

            log.rows.append(
                LossBreakdown(
                    ce=ce.item(),
                    kl=0.0 if kl is None else kl.item(),
                    total=total.item(),
                    alpha=alpha,
                    tokens_counted=sum(len(ex.tgt_tokens) + 1 for ex in examples),
                )
            )
            log.grad_norms.append(float(norm))
            log.wall_ms.append((time.perf_counter() - t0) * 1000.0)

    if log_path is not None:
        log.write_csv(log_path)
    return params, log


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _pack_tensor(fh, name, arr):
    raw = name.encode("utf-8")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)
    fh.write(struct.pack("<B", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def _unpack_tensor(fh):
    (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, nlen).decode("utf-8")
    (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
    shape = tuple(
        struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
    )
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(_read_exact(fh, count * 8), dtype="<f8").reshape(shape)
    return name, arr.astype(np.float64)


def save_checkpoint(params, state, config, path):
    """Atomic (write-temp-then-rename) versioned binary checkpoint."""
    meta = {
        "model": params.config.to_dict(),
        "train": config.to_dict() if config is not None else None,
        "lora_rank": params.lora_rank,
        "lora_scale": params.lora_scale,
        "opt_step": state.step if state is not None else None,
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    names = params.names()
    opt_names = sorted(state.m) if state is not None else []
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(names) + 2 * len(opt_names)))
        for name in names:
            _pack_tensor(fh, f"param:{name}", params[name].data)
        for name in opt_names:
            _pack_tensor(fh, f"adam_m:{name}", state.m[name])
            _pack_tensor(fh, f"adam_v:{name}", state.v[name])
    os.replace(tmp, path)


def load_checkpoint(path, expect_vocab=None):
    """Returns (ModelParams, AdamWState | None, TrainConfig | None)."""
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}")
    with fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: version {version}, expected {CHECKPOINT_VERSION}"
            )
        (blen,) = struct.unpack("<I", _read_exact(fh, 4))
        meta = json.loads(_read_exact(fh, blen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        table = dict(_unpack_tensor(fh) for _ in range(count))

    model_cfg = ModelConfig(**meta["model"])
    if expect_vocab is not None and model_cfg.vocab_size != expect_vocab:
        raise ConfigError(
            f"checkpoint vocab {model_cfg.vocab_size} != expected {expect_vocab}"
        )
    tensors = {
        name[len("param:"):]: ad.Tensor(arr, requires_grad=True)
        for name, arr in table.items()
        if name.startswith("param:")
    }
    params = ModelParams(model_cfg, tensors)
    params.lora_rank = meta["lora_rank"]
    params.lora_scale = meta["lora_scale"] or 0.0

    state = None
    if meta["opt_step"] is not None:
        state = AdamWState()
        state.step = meta["opt_step"]
        for name, arr in table.items():
            if name.startswith("adam_m:"):
                state.m[name[len("adam_m:"):]] = arr.copy()
            elif name.startswith("adam_v:"):
                state.v[name[len("adam_v:"):]] = arr.copy()

    train_cfg = None
    if meta["train"] is not None:
        doc = dict(meta["train"])
        doc["betas"] = tuple(doc["betas"])
        train_cfg = TrainConfig(**doc)
    return params, state, train_cfg
