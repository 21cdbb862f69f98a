"""Experiment configs and the drivers behind the CLI subcommands.

A single JSON config describes the whole pipeline (suite, data, model,
training, decoding, evaluation, analysis, sweep axes). Parsing is strict:
unknown keys are rejected, since a typo in a sweep axis silently changes an
experiment. Every command re-derives its inputs deterministically from the
echoed config, so any artifact directory is reproducible from its own
config.json.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import languages as lang
from .decoding import DecodeConfig
from .errors import ConfigError, DataError
from .evaluation import evaluate
from .prompts import STRATEGY_NAMES, strategy_template
from .representation import (
    alignment_score,
    collect_representations,
    pca_project,
    write_coordinates_csv,
)
from .training import TrainConfig, load_checkpoint, save_checkpoint, train
from .transformer import ModelConfig, attach_lora, init_model

log = logging.getLogger("xconst")


def _take(doc, section, fields):
    """Strict dict extraction: every key must be a known field."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(
            f"unknown keys in config section {section!r}: {sorted(unknown)}"
        )
    out = dict(fields)
    out.update(doc)
    return out


@dataclass
class DataConfig:
    n_train: int = 400
    n_dev: int = 40
    n_test: int = 40
    len_min: int = 3
    len_max: int = 8
    reorder: bool = True
    seed: int = 0
    extra_directions: list = field(default_factory=list)
    max_src_len: int | None = None
    dedup: bool = True
    langid_check: bool = False

    def to_dict(self):
        return {
            "n_train": self.n_train, "n_dev": self.n_dev, "n_test": self.n_test,
            "len_min": self.len_min, "len_max": self.len_max,
            "reorder": self.reorder, "seed": self.seed,
            "extra_directions": [list(d) for d in self.extra_directions],
            "max_src_len": self.max_src_len, "dedup": self.dedup,
            "langid_check": self.langid_check,
        }


@dataclass
class ExperimentConfig:
    suite: lang.LanguageSuite
    data: DataConfig
    model: ModelConfig
    model_seed: int
    train: TrainConfig
    decode: DecodeConfig
    eval_strategy: str
    eval_pivot: bool
    analysis_sentences: int
    analysis_tgt_lang: int
    sweep_strategies: list
    sweep_alphas: list
    sweep_lora: list

    @staticmethod
    def from_dict(doc):
        doc = _take(doc, "<root>", {
            "suite": {}, "data": {}, "model": {}, "train": {},
            "decode": {}, "eval": {}, "analysis": {}, "sweep": {},
        })
        s = _take(doc["suite"], "suite", {
            "num_languages": 4, "concept_vocab_size": 16, "center": 0, "seed": 0,
        })
        suite = lang.build_language_suite(
            s["num_languages"], s["concept_vocab_size"], s["center"], s["seed"]
        )

        d = _take(doc["data"], "data", {f: getattr(DataConfig, f)
                                        for f in DataConfig.__dataclass_fields__
                                        if f != "extra_directions"} | {
                                            "extra_directions": []})
        data = DataConfig(**{**d, "extra_directions": [tuple(x) for x in
                                                       d["extra_directions"]]})
        if data.len_min < 1 or data.len_min > data.len_max:
            raise ConfigError(f"bad length range [{data.len_min}, {data.len_max}]")

        m = _take(doc["model"], "model", {
            "d_model": 64, "n_heads": 2, "n_layers": 2, "d_ff": 256,
            "max_seq_len": 96, "seed": 0,
        })
        model_seed = m.pop("seed")
        model = ModelConfig(vocab_size=suite.vocab_size, **m)

        t = _take(doc["train"], "train", {
            "mode": "vanilla", "alpha": 0.1, "strategy_mode": "t-dec",
            "lora": 0, "lr": 3e-4, "weight_decay": 0.01,
            "betas": [0.9, 0.999], "adam_eps": 1e-8, "batch_size": 32,
            "epochs": 10, "grad_clip": 1.0, "seed": 0,
        })
        t["betas"] = tuple(t["betas"])
        train_cfg = TrainConfig(**t)
        if train_cfg.strategy_mode != "diversified":
            strategy_template(train_cfg.strategy_mode)

        dc = _take(doc["decode"], "decode", {
            "method": "beam", "beam_width": 5,
            "max_new_tokens": 2 * data.len_max + 4, "length_norm": 0.0,
        })
        decode = DecodeConfig(**dc)

        e = _take(doc["eval"], "eval", {"strategy": "t-dec", "pivot": False})
        strategy_template(e["strategy"])

        a = _take(doc["analysis"], "analysis", {
            "n_sentences": 200,
            "tgt_lang": (suite.center_lang + 1) % suite.num_languages,
        })

        sw = _take(doc["sweep"], "sweep", {
            "strategies": ["t-dec"], "alphas": [0.0, 0.05, 0.1, 0.25],
            "lora": [0],
        })
        for name in sw["strategies"]:
            strategy_template(name)

        return ExperimentConfig(
            suite=suite, data=data, model=model, model_seed=model_seed,
            train=train_cfg, decode=decode,
            eval_strategy=e["strategy"].lower(), eval_pivot=e["pivot"],
            analysis_sentences=a["n_sentences"], analysis_tgt_lang=a["tgt_lang"],
            sweep_strategies=[n.lower() for n in sw["strategies"]],
            sweep_alphas=sw["alphas"], sweep_lora=sw["lora"],
        )

    @staticmethod
    def from_file(path):
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})")
        return ExperimentConfig.from_dict(doc)

    def to_dict(self):
        return {
            "suite": {
                "num_languages": self.suite.num_languages,
                "concept_vocab_size": self.suite.concept_vocab_size,
                "center": self.suite.center_lang,
                "seed": self.suite.seed,
            },
            "data": self.data.to_dict(),
            "model": {
                "d_model": self.model.d_model, "n_heads": self.model.n_heads,
                "n_layers": self.model.n_layers, "d_ff": self.model.d_ff,
                "max_seq_len": self.model.max_seq_len, "seed": self.model_seed,
            },
            "train": self.train.to_dict(),
            "decode": self.decode.to_dict(),
            "eval": {"strategy": self.eval_strategy, "pivot": self.eval_pivot},
            "analysis": {
                "n_sentences": self.analysis_sentences,
                "tgt_lang": self.analysis_tgt_lang,
            },
            "sweep": {
                "strategies": self.sweep_strategies,
                "alphas": self.sweep_alphas,
                "lora": self.sweep_lora,
            },
        }

    # -- derived direction sets ------------------------------------------

    def supervised_directions(self):
        dirs = lang.center_directions(self.suite)
        for a, b in self.data.extra_directions:
            if (a, b) not in dirs:
                dirs.append((a, b))
            if (b, a) not in dirs:
                dirs.append((b, a))
        return dirs

    def zeroshot_directions(self):
        sup = set(self.supervised_directions())
        return [
            (a, b)
            for a in range(self.suite.num_languages)
            for b in range(self.suite.num_languages)
            if a != b and (a, b) not in sup
        ]

    # -- deterministic dataset derivation --------------------------------

    def build_splits(self):
        """(train pairs, dev pairs, test pairs), disjoint by concept sentence."""
        d = self.data
        total = d.n_train + d.n_dev + d.n_test
        corpus = lang.sample_concept_corpus(
            self.suite, total, (d.len_min, d.len_max), seed=d.seed
        )
        cut1, cut2 = d.n_train, d.n_train + d.n_dev
        sup = self.supervised_directions()
        both = sup + self.zeroshot_directions()

        def build(concepts, directions, tag):
            pairs = lang.make_parallel_dataset(
                concepts, self.suite, directions=directions,
                seed=d.seed + tag, reorder=d.reorder,
            )
            return lang.filter_pairs(
                pairs, max_src_len=d.max_src_len, dedup=d.dedup,
                langid_check=d.langid_check, suite=self.suite,
            )

        return (
            build(corpus[:cut1], sup, 1),
            build(corpus[cut1:cut2], sup, 2),
            build(corpus[cut2:], both, 3),
        )

    def analysis_sentences_list(self):
        """Held-out multi-way concept sentences for the representation study."""
        d = self.data
        return lang.sample_concept_corpus(
            self.suite, self.analysis_sentences, (d.len_min, d.len_max),
            seed=d.seed + 7,
        )


# ---------------------------------------------------------------------------
# command drivers
# ---------------------------------------------------------------------------

def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_gen_data(cfg, out_dir):
    _echo_config(cfg, out_dir)
    with open(os.path.join(out_dir, "suite.json"), "w") as fh:
        fh.write(cfg.suite.to_json() + "\n")
    train_pairs, dev_pairs, test_pairs = cfg.build_splits()
    if not train_pairs:
        raise DataError("all training pairs were filtered out")
    lang.write_dataset(train_pairs, os.path.join(out_dir, "train.tsv"))
    lang.write_dataset(dev_pairs, os.path.join(out_dir, "dev.tsv"))
    lang.write_dataset(test_pairs, os.path.join(out_dir, "test.tsv"))
    log.info("gen-data: %d train / %d dev / %d test pairs",
             len(train_pairs), len(dev_pairs), len(test_pairs))
    return train_pairs, dev_pairs, test_pairs


def run_train(cfg, out_dir):
    _echo_config(cfg, out_dir)
    train_pairs, _, _ = cfg.build_splits()
    if not train_pairs:
        raise DataError("all training pairs were filtered out")
    params = init_model(cfg.model, seed=cfg.model_seed)
    if cfg.train.lora:
        attach_lora(params, rank=cfg.train.lora, seed=cfg.model_seed)
    params, tlog = train(
        params, train_pairs, cfg.suite, cfg.train,
        log_path=os.path.join(out_dir, "train_log.csv"),
    )
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(params, None, cfg.train, ckpt)
    log.info("train: %d steps, final ce %.4f", len(tlog.rows), tlog.rows[-1].ce)
    return params, tlog


def run_evaluate(cfg, out_dir, checkpoint=None, params=None):
    _echo_config(cfg, out_dir)
    if params is None:
        if checkpoint is None:
            checkpoint = os.path.join(out_dir, "checkpoint.bin")
        params, _, _ = load_checkpoint(checkpoint, expect_vocab=cfg.suite.vocab_size)
    _, _, test_pairs = cfg.build_splits()
    report = evaluate(
        params, cfg.suite, test_pairs, cfg.eval_strategy, cfg.decode,
        cfg.supervised_directions(), cfg.zeroshot_directions(),
        pivot=cfg.eval_pivot,
    )
    report.write_csv(os.path.join(out_dir, "report.csv"))
    with open(os.path.join(out_dir, "report.md"), "w") as fh:
        fh.write(report.to_markdown())
    _write_translations(params, cfg, test_pairs, out_dir)
    return report


def _write_translations(params, cfg, test_pairs, out_dir):
    from .decoding import translate

    with open(os.path.join(out_dir, "translations.tsv"), "w") as fh:
        for ex in test_pairs:
            hyp = translate(
                params, cfg.suite, cfg.eval_strategy,
                ex.src_lang, ex.tgt_lang, ex.src_tokens, cfg.decode,
            )
            toks = " ".join(str(t) for t in hyp)
            fh.write(f"{ex.src_lang}\t{ex.tgt_lang}\t{toks}\n")


def run_analyze(cfg, out_dir, checkpoint=None, params=None):
    _echo_config(cfg, out_dir)
    if params is None:
        if checkpoint is None:
            checkpoint = os.path.join(out_dir, "checkpoint.bin")
        params, _, _ = load_checkpoint(checkpoint, expect_vocab=cfg.suite.vocab_size)
    reps = collect_representations(
        params, cfg.suite, cfg.analysis_sentences_list(),
        cfg.eval_strategy, cfg.analysis_tgt_lang, reorder=cfg.data.reorder,
    )
    projection = pca_project(reps.flat(), out_dims=2)
    write_coordinates_csv(reps, projection, os.path.join(out_dir, "coords.csv"))
    score = alignment_score(reps)
    with open(os.path.join(out_dir, "alignment.csv"), "w") as fh:
        fh.write("checkpoint,strategy,alignment_score\n")
        name = os.path.basename(checkpoint) if checkpoint else "in-memory"
        fh.write(f"{name},{cfg.eval_strategy},{score:.10g}\n")
    log.info("analyze: alignment score %.4f", score)
    return score, projection


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _cell_config(cfg, strategy, alpha, lora):
    doc = cfg.to_dict()
    doc["train"]["mode"] = "xconst" if alpha > 0 else "vanilla"
    doc["train"]["alpha"] = alpha
    doc["train"]["strategy_mode"] = strategy
    doc["train"]["lora"] = lora
    doc["eval"]["strategy"] = strategy
    return ExperimentConfig.from_dict(doc)


def _config_hash(cfg):
    blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _run_cell(args):
    cfg_doc, cell_dir = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    marker = os.path.join(cell_dir, ".done")
    if os.path.exists(marker):
        with open(marker) as fh:
            if fh.read().strip() == _config_hash(cfg):
                log.info("sweep cell %s: up to date, skipping", cell_dir)
                return cell_dir, None
    params, _ = run_train(cfg, cell_dir)
    run_evaluate(cfg, cell_dir, params=params)
    with open(marker, "w") as fh:
        fh.write(_config_hash(cfg) + "\n")
    return cell_dir, None


def run_sweep(cfg, out_dir, parallel=1):
    """Grid over (strategy x alpha x lora); returns the list of failed cells."""
    if not (cfg.sweep_strategies and cfg.sweep_alphas and cfg.sweep_lora):
        raise ConfigError("sweep axes must all be non-empty")
    _echo_config(cfg, out_dir)
    cells = []
    for strategy in cfg.sweep_strategies:
        for alpha in cfg.sweep_alphas:
            for lora in cfg.sweep_lora:
                cell_dir = os.path.join(
                    out_dir, f"strategy={strategy}_alpha={alpha}_lora={lora}"
                )
                cells.append(
                    ((strategy, alpha, lora),
                     (_cell_config(cfg, strategy, alpha, lora).to_dict(), cell_dir))
                )

    failures = []
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_cell_safe, [args for _, args in cells]))
    else:
        results = [_run_cell_safe(args) for _, args in cells]
    for (coords, (_, cell_dir)), (_, error) in zip(cells, results):
        if error is not None:
            log.error("sweep cell %s failed: %s", cell_dir, error)
            failures.append((coords, cell_dir, error))

    _write_combined_csv(cfg, out_dir, cells, failures)
    return failures


def _run_cell_safe(args):
    try:
        return _run_cell(args)
    except Exception as exc:  # cell isolation: record, keep sweeping
        return args[1], f"{type(exc).__name__}: {exc}"


def _write_combined_csv(cfg, out_dir, cells, failures):
    failed_dirs = {cell_dir for _, cell_dir, _ in failures}
    path = os.path.join(out_dir, "combined.csv")
    with open(path, "w") as fh:
        fh.write("strategy,alpha,lora,split,bleu,off_target,exact\n")
        for (strategy, alpha, lora), (_, cell_dir) in cells:
            rows = _read_report_aggregates(os.path.join(cell_dir, "report.csv"))
            for split in ("supervised", "zeroshot", "pivot"):
                agg = rows.get(split)
                if cell_dir in failed_dirs or agg is None:
                    fh.write(f"{strategy},{alpha},{lora},{split},,,\n")
                else:
                    fh.write(
                        f"{strategy},{alpha},{lora},{split},"
                        f"{agg['bleu']:.6f},{agg['off_target']:.6f},"
                        f"{agg['exact']:.6f}\n"
                    )


def _read_report_aggregates(path):
    out = {}
    if not os.path.exists(path):
        return out
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        for line in fh:
            parts = line.rstrip("\n").split(",")
            if parts[idx["aggregate"]] == "1":
                out[parts[idx["kind"]]] = {
                    "bleu": float(parts[idx["bleu"]]),
                    "off_target": float(parts[idx["off_target"]]),
                    "exact": float(parts[idx["exact"]]),
                }
    return out


# ---------------------------------------------------------------------------
# report assembly across runs
# ---------------------------------------------------------------------------

def run_report(run_dirs, out_path):
    """Markdown table across runs: per-strategy rows, supervised / zero-shot /
    pivot columns, regularized-vs-vanilla deltas in parentheses."""
    runs = []
    skipped = []
    for run_dir in run_dirs:
        cfg_path = os.path.join(run_dir, "config.json")
        rep_path = os.path.join(run_dir, "report.csv")
        if not (os.path.exists(cfg_path) and os.path.exists(rep_path)):
            skipped.append(run_dir)
            log.warning("report: skipping malformed run dir %s", run_dir)
            continue
        with open(cfg_path) as fh:
            doc = json.load(fh)
        runs.append({
            "strategy": doc["train"]["strategy_mode"],
            "mode": doc["train"]["mode"],
            "lora": doc["train"]["lora"],
            "agg": _read_report_aggregates(rep_path),
        })

    by_cell = {}
    for run in runs:
        key = (run["strategy"], run["lora"])
        by_cell.setdefault(key, {})[run["mode"]] = run["agg"]

    lines = [
        "| Strategy | LoRA | Mode | Supervised | Zero-Shot | Pivot |",
        "| --- | --- | --- | --- | --- | --- |",
    ]

    def fmt(agg, base):
        if agg is None:
            return ""
        text = f"{agg['bleu']:.2f}"
        if base is not None:
            text += f" ({agg['bleu'] - base['bleu']:+.2f})"
        return text

    for (strategy, lora), modes in sorted(by_cell.items()):
        vanilla = modes.get("vanilla")
        for mode in ("vanilla", "xconst"):
            agg = modes.get(mode)
            if agg is None:
                continue
            base = vanilla if mode == "xconst" and vanilla is not None else None
            cells = [
                fmt(agg.get(split), base.get(split) if base else None)
                for split in ("supervised", "zeroshot", "pivot")
            ]
            lines.append(
                f"| {strategy} | {lora or '-'} | {mode} | "
                + " | ".join(cells) + " |"
            )
    text = "\n".join(lines) + "\n"
    with open(out_path, "w") as fh:
        fh.write(text)
    return text, skipped
