"""Translation scoring and per-direction report assembly.

BLEU here is token-level: hypotheses and references are sequences of atomic
integer tokens, so no tokenizer is involved. Reports mirror the supervised /
zero-shot / pivot split, with direction-weighted (unweighted per-direction
mean) aggregates.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .decoding import pivot_translate, translate
from .errors import ContractError, DataError
from .languages import identify_language


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_n=4, smoothing="add1"):
    """Corpus BLEU in [0, 100] with brevity penalty.

    smoothing="add1" adds one to numerator and denominator of the clipped
    precision for n >= 2; smoothing="none" is the plain definition (any
    zero precision zeroes the score).
    """
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ContractError("empty hypothesis set")
    if smoothing not in ("none", "add1"):
        raise ContractError(f"unknown smoothing {smoothing!r}")

    matched = np.zeros(max_n)
    total = np.zeros(max_n)
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matched[n - 1] += sum(
                min(c, ref_counts[g]) for g, c in hyp_counts.items()
            )
            total[n - 1] += max(len(hyp) - n + 1, 0)

    log_prec = 0.0
    for n in range(1, max_n + 1):
        num, den = matched[n - 1], total[n - 1]
        if smoothing == "add1" and n >= 2:
            num, den = num + 1.0, den + 1.0
        if num == 0 or den == 0:
            return 0.0
        log_prec += np.log(num / den) / max_n

    if hyp_len == 0:
        return 0.0
    bp = np.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return float(100.0 * bp * np.exp(log_prec))


def off_target_ratio(hypotheses, tgt_langs, suite):
    """Fraction of hypotheses not identified as their requested target
    language (off-target and empty outputs both count as wrong)."""
    if len(hypotheses) != len(tgt_langs):
        raise ContractError("hypotheses and target languages differ in length")
    if not hypotheses:
        return 0.0
    wrong = sum(
        1 for hyp, lang in zip(hypotheses, tgt_langs)
        if identify_language(suite, hyp) != lang
    )
    return wrong / len(hypotheses)


def exact_match(hypotheses, references):
    if len(hypotheses) != len(references):
        raise ContractError("hypotheses and references differ in length")
    if not hypotheses:
        return 0.0
    hits = sum(1 for h, r in zip(hypotheses, references) if tuple(h) == tuple(r))
    return hits / len(hypotheses)


@dataclass(frozen=True)
class DirectionRow:
    src: int
    tgt: int
    kind: str  # "supervised" | "zeroshot" | "pivot"
    bleu: float
    off_target: float
    exact: float
    n_sentences: int


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def aggregate(self, kind):
        got = [r for r in self.rows if r.kind == kind]
        if not got:
            return None
        return {
            "bleu": float(np.mean([r.bleu for r in got])),
            "off_target": float(np.mean([r.off_target for r in got])),
            "exact": float(np.mean([r.exact for r in got])),
        }

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("src,tgt,kind,bleu,off_target,exact,n_sentences,aggregate\n")
            for r in self.rows:
                fh.write(
                    f"{r.src},{r.tgt},{r.kind},{r.bleu:.6f},"
                    f"{r.off_target:.6f},{r.exact:.6f},{r.n_sentences},0\n"
                )
            for kind in ("supervised", "zeroshot", "pivot"):
                agg = self.aggregate(kind)
                if agg is not None:
                    fh.write(
                        f",,{kind},{agg['bleu']:.6f},{agg['off_target']:.6f},"
                        f"{agg['exact']:.6f},,1\n"
                    )

    def to_markdown(self):
        lines = [
            "| Split | BLEU | Off-target | Exact match |",
            "| --- | --- | --- | --- |",
        ]
        for label, kind in (
            ("Supervised", "supervised"),
            ("Zero-Shot", "zeroshot"),
            ("Pivot", "pivot"),
        ):
            agg = self.aggregate(kind)
            if agg is None:
                lines.append(f"| {label} | - | - | - |")
            else:
                lines.append(
                    f"| {label} | {agg['bleu']:.2f} | {agg['off_target']:.4f} "
                    f"| {agg['exact']:.4f} |"
                )
        return "\n".join(lines) + "\n"


def _group_by_direction(testset):
    groups = {}
    for ex in testset:
        groups.setdefault((ex.src_lang, ex.tgt_lang), []).append(ex)
    return groups


def evaluate(params, suite, testset, strategy, cfg,
             supervised_directions, zeroshot_directions, pivot=False):
    """Translate and score every configured direction.

    `testset` must contain gold pairs for each direction; pivot rows rerun
    the zero-shot directions through the center language.
    """
    groups = _group_by_direction(testset)
    report = EvalReport()

    def score(direction, kind, use_pivot):
        src, tgt = direction
        examples = groups.get(direction)
        if not examples:
            raise DataError(f"no test data for direction {src}->{tgt}")
        hyps, refs = [], []
        for ex in examples:
            fn = pivot_translate if use_pivot else translate
            try:
                hyp = fn(params, suite, strategy, src, tgt, ex.src_tokens, cfg)
            except DataError:
                hyp = ()  # empty pivot intermediate: scored as wrong
            hyps.append(hyp)
            refs.append(ex.tgt_tokens)
        report.rows.append(
            DirectionRow(
                src=src, tgt=tgt, kind=kind,
                bleu=corpus_bleu(hyps, refs),
                off_target=off_target_ratio(hyps, [tgt] * len(hyps), suite),
                exact=exact_match(hyps, refs),
                n_sentences=len(examples),
            )
        )

    for direction in supervised_directions:
        score(direction, "supervised", False)
    for direction in zeroshot_directions:
        score(direction, "zeroshot", False)
    if pivot:
        for direction in zeroshot_directions:
            score(direction, "pivot", True)
    return report
