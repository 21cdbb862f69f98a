"""Synthetic cipher-language universe.

Each language renders a shared concept vocabulary into its own disjoint
surface-token range, so parallelism, language identity, and off-target
detection are all exactly decidable. Concept sentences come from a seeded
first-order Markov chain so the task has learnable structure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

# Reserved special tokens, shared by all suites.
PAD = 0
BOS = 1
EOS = 2
NEWLINE = 3
COLON = 4
TRANSLATE = 5
THIS = 6
FROM = 7
INTO = 8
RESERVED_COUNT = 9

# Sentinels returned by identify_language.
OFF_TARGET = -1
EMPTY = -2

# Strict-majority threshold for the language-ID oracle.
LANGID_THRESHOLD = 0.8


@dataclass(frozen=True)
class LanguageSuite:
    num_languages: int
    concept_vocab_size: int
    center_lang: int
    seed: int
    reserved_count: int = RESERVED_COUNT

    @property
    def lang_tag_ids(self):
        return list(range(self.reserved_count, self.reserved_count + self.num_languages))

    @property
    def vocab_size(self):
        k, vc = self.num_languages, self.concept_vocab_size
        return self.reserved_count + k + k * vc

    def tag(self, lang):
        self._check_lang(lang)
        return self.reserved_count + lang

    def offset(self, lang):
        self._check_lang(lang)
        return self.reserved_count + self.num_languages + lang * self.concept_vocab_size

    def encode(self, lang, concept):
        if not 0 <= concept < self.concept_vocab_size:
            raise DataError(f"concept {concept} outside [0, {self.concept_vocab_size})")
        return self.offset(lang) + concept

    def decode(self, token):
        """Map a surface token back to (lang, concept); None for non-surface ids."""
        base = self.reserved_count + self.num_languages
        if token < base or token >= self.vocab_size:
            return None
        lang, concept = divmod(token - base, self.concept_vocab_size)
        return lang, concept

    def _check_lang(self, lang):
        if not 0 <= lang < self.num_languages:
            raise ConfigError(f"language index {lang} outside [0, {self.num_languages})")

    def to_json(self):
        return json.dumps(
            {
                "num_languages": self.num_languages,
                "concept_vocab_size": self.concept_vocab_size,
                "reserved_count": self.reserved_count,
                "center_lang": self.center_lang,
                "lang_offsets": [self.offset(l) for l in range(self.num_languages)],
                "seed": self.seed,
            },
            indent=2,
        )

    @staticmethod
    def from_json(text):
        doc = json.loads(text)
        suite = LanguageSuite(
            num_languages=doc["num_languages"],
            concept_vocab_size=doc["concept_vocab_size"],
            center_lang=doc["center_lang"],
            seed=doc["seed"],
            reserved_count=doc.get("reserved_count", RESERVED_COUNT),
        )
        expect = [suite.offset(l) for l in range(suite.num_languages)]
        if doc.get("lang_offsets", expect) != expect:
            raise ConfigError("suite file offsets disagree with the layout formula")
        return suite


@dataclass(frozen=True)
class ConceptSentence:
    concepts: tuple

    def __post_init__(self):
        if len(self.concepts) == 0:
            raise DataError("concept sentence must be non-empty")

    def __len__(self):
        return len(self.concepts)


@dataclass(frozen=True)
class ParallelExample:
    src_lang: int
    tgt_lang: int
    src_tokens: tuple
    tgt_tokens: tuple
    concept: ConceptSentence = None


def build_language_suite(num_languages, concept_vocab_size, center, seed=0):
    if num_languages < 2:
        raise ConfigError(f"need at least 2 languages, got {num_languages}")
    if concept_vocab_size < 2:
        raise ConfigError(f"need at least 2 concepts, got {concept_vocab_size}")
    if not 0 <= center < num_languages:
        raise ConfigError(f"center language {center} outside [0, {num_languages})")
    return LanguageSuite(
        num_languages=num_languages,
        concept_vocab_size=concept_vocab_size,
        center_lang=center,
        seed=seed,
    )


def concept_transition_matrix(suite, seed):
    """Seeded first-order Markov chain over concepts (Dirichlet(0.5) rows)."""
    vc = suite.concept_vocab_size
    rng = np.random.default_rng([suite.seed, seed, 0xC0])
    trans = rng.dirichlet(np.full(vc, 0.5), size=vc)
    init = rng.dirichlet(np.full(vc, 0.5))
    return init, trans


def sample_concept_corpus(suite, n, len_range, seed=0, order=1):
    if n < 1:
        raise ConfigError(f"corpus size must be >= 1, got {n}")
    len_min, len_max = len_range
    if len_min < 1 or len_min > len_max:
        raise ConfigError(f"bad length range [{len_min}, {len_max}]")
    if order != 1:
        raise ConfigError("only first-order concept chains are supported")

    init, trans = concept_transition_matrix(suite, seed)
    vc = suite.concept_vocab_size
    sentences = []
    for i in range(n):
        rng = np.random.default_rng([suite.seed, seed, i])
        length = int(rng.integers(len_min, len_max + 1))
        concepts = np.empty(length, dtype=np.int64)
        concepts[0] = rng.choice(vc, p=init)
        for t in range(1, length):
            concepts[t] = rng.choice(vc, p=trans[concepts[t - 1]])
        sentences.append(ConceptSentence(tuple(int(c) for c in concepts)))
    return sentences


def render_sentence(suite, concept, lang, reorder=False):
    """Surface tokens of `concept` in `lang`.

    With reorder enabled and an odd language index, adjacent positions
    (2i, 2i+1) are swapped before encoding; a trailing odd position stays.
    """
    seq = list(concept.concepts)
    if reorder and lang % 2 == 1:
        seq = _swap_adjacent(seq)
    return tuple(suite.encode(lang, c) for c in seq)


def inverse_render_sentence(suite, tokens, lang, reorder=False):
    """Recover the concept sentence from a clean rendering in `lang`."""
    concepts = []
    for tok in tokens:
        hit = suite.decode(tok)
        if hit is None or hit[0] != lang:
            raise DataError(f"token {tok} is not in language {lang}'s surface range")
        concepts.append(hit[1])
    if reorder and lang % 2 == 1:
        concepts = _swap_adjacent(concepts)
    return ConceptSentence(tuple(concepts))


def _swap_adjacent(seq):
    out = list(seq)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def center_directions(suite):
    """All (x, center) and (center, x) pairs."""
    c = suite.center_lang
    dirs = []
    for lang in range(suite.num_languages):
        if lang != c:
            dirs.append((lang, c))
            dirs.append((c, lang))
    return dirs


def noncenter_directions(suite):
    """All ordered pairs that avoid the center language."""
    c = suite.center_lang
    return [
        (a, b)
        for a in range(suite.num_languages)
        for b in range(suite.num_languages)
        if a != b and a != c and b != c
    ]


def make_parallel_dataset(corpus, suite, directions=None, seed=0, reorder=False):
    if directions is None:
        directions = center_directions(suite)
    for src, tgt in directions:
        if src == tgt:
            raise ConfigError(f"direction ({src}, {tgt}) has identical sides")
        suite._check_lang(src)
        suite._check_lang(tgt)

    pairs = []
    for concept in corpus:
        for src, tgt in directions:
            pairs.append(
                ParallelExample(
                    src_lang=src,
                    tgt_lang=tgt,
                    src_tokens=render_sentence(suite, concept, src, reorder),
                    tgt_tokens=render_sentence(suite, concept, tgt, reorder),
                    concept=concept,
                )
            )
    rng = np.random.default_rng([suite.seed, seed, 0xD5])
    perm = rng.permutation(len(pairs))
    return [pairs[i] for i in perm]


def identify_language(suite, tokens):
    """Deterministic language-ID oracle over the cipher vocabulary.

    Returns the language whose surface range holds a strict >80% majority of
    content tokens, OFF_TARGET when no language does, EMPTY when the
    sequence has no content tokens at all.
    """
    counts = np.zeros(suite.num_languages, dtype=np.int64)
    for tok in tokens:
        hit = suite.decode(tok)
        if hit is not None:
            counts[hit[0]] += 1
    total = int(counts.sum())
    if total == 0:
        return EMPTY
    best = int(counts.argmax())
    if counts[best] > LANGID_THRESHOLD * total:
        return best
    return OFF_TARGET


def filter_pairs(pairs, max_src_len=None, dedup=True, langid_check=False, suite=None):
    if langid_check and suite is None:
        raise ConfigError("langid_check requires a suite")
    seen = set()
    kept = []
    for pair in pairs:
        if max_src_len is not None and len(pair.src_tokens) > max_src_len:
            continue
        if langid_check:
            if identify_language(suite, pair.src_tokens) != pair.src_lang:
                continue
            if identify_language(suite, pair.tgt_tokens) != pair.tgt_lang:
                continue
        if dedup:
            key = (pair.src_tokens, pair.tgt_tokens)
            if key in seen:
                continue
            seen.add(key)
        kept.append(pair)
    return kept


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_dataset(pairs, path):
    with open(path, "w") as fh:
        for p in pairs:
            src = " ".join(str(t) for t in p.src_tokens)
            tgt = " ".join(str(t) for t in p.tgt_tokens)
            fh.write(f"{p.src_lang}\t{p.tgt_lang}\t{src}\t{tgt}\n")


def read_dataset(path):
    pairs = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{line_no}: expected 4 tab-separated fields")
            src_lang, tgt_lang = int(parts[0]), int(parts[1])
            src = tuple(int(t) for t in parts[2].split())
            tgt = tuple(int(t) for t in parts[3].split())
            pairs.append(ParallelExample(src_lang, tgt_lang, src, tgt))
    return pairs
