"""Sentence-representation study: collect, project to 2-D, quantify alignment.

For each multi-way parallel sentence the prompt is rendered once per source
language with a fixed target-language instruction (target omitted), and the
final-layer hidden state at the last token is taken as the sentence
representation. PCA replaces stochastic embedding methods so results are
reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import DataError
from .languages import render_sentence
from .prompts import render
from .transformer import extract_representation


@dataclass
class RepresentationSet:
    vectors: np.ndarray  # (n_sentences, n_languages, d_model)
    strategy: str
    tgt_lang: int

    @property
    def n_sentences(self):
        return self.vectors.shape[0]

    @property
    def n_languages(self):
        return self.vectors.shape[1]

    def flat(self):
        return self.vectors.reshape(-1, self.vectors.shape[-1])


def collect_representations(params, suite, multiway, strategy, tgt_lang,
                            reorder=False):
    """(S, K, d_model) representations of S sentences across K source languages."""
    if not multiway:
        raise DataError("no sentences given for representation collection")
    k = suite.num_languages
    out = np.empty((len(multiway), k, params.config.d_model))
    for i, concept in enumerate(multiway):
        for lang in range(k):
            src = render_sentence(suite, concept, lang, reorder)
            prefix = render(strategy, suite, lang, tgt_lang, src).token_ids
            out[i, lang] = extract_representation(params, prefix)
    return RepresentationSet(vectors=out, strategy=strategy, tgt_lang=tgt_lang)


@dataclass
class PCAProjection:
    coordinates: np.ndarray  # (n, out_dims)
    components: np.ndarray  # (out_dims, d) unit rows, variance-ordered
    explained_variance: np.ndarray  # fraction of total variance per component
    degenerate: bool  # True when the data has zero total variance


def pca_project(vectors, out_dims=2):
    """Mean-centered projection onto the top principal components.

    Components are eigenvectors of the covariance matrix, unit-norm and
    ordered by decreasing variance; each is signed so its largest-magnitude
    entry is positive.
    """
    x = np.asarray(vectors, dtype=np.float64)
    n = x.shape[0]
    if n < out_dims + 1:
        raise DataError(f"need at least {out_dims + 1} vectors, got {n}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    eigval, eigvec = np.linalg.eigh(cov)
    order = np.argsort(eigval)[::-1][:out_dims]
    values = np.clip(eigval[order], 0.0, None)
    components = eigvec[:, order].T
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    total = float(np.clip(eigval, 0.0, None).sum())
    degenerate = total <= 0.0
    explained = values / total if not degenerate else np.zeros(out_dims)
    return PCAProjection(
        coordinates=centered @ components.T,
        components=components,
        explained_variance=explained,
        degenerate=degenerate,
    )


def alignment_score(reps):
    """Mean pairwise cosine distance within sentence groups, in [0, 2].

    Lower is better aligned. Zero-norm vectors contribute distance 1 to
    their pairs.
    """
    vectors = reps.vectors if isinstance(reps, RepresentationSet) else np.asarray(reps)
    if vectors.ndim != 3 or vectors.shape[1] < 2:
        raise DataError("alignment_score needs (groups, >=2 languages, dim)")
    norms = np.linalg.norm(vectors, axis=-1)
    total = 0.0
    count = 0
    for g in range(vectors.shape[0]):
        for a, b in combinations(range(vectors.shape[1]), 2):
            na, nb = norms[g, a], norms[g, b]
            if na == 0.0 or nb == 0.0:
                total += 1.0
            else:
                cos = float(vectors[g, a] @ vectors[g, b] / (na * nb))
                total += 1.0 - cos
            count += 1
    return total / count


def write_coordinates_csv(reps, projection, path):
    """`group_id,lang,x,y` rows for the flattened representation set."""
    coords = projection.coordinates
    k = reps.n_languages
    with open(path, "w") as fh:
        fh.write("group_id,lang,x,y\n")
        for i in range(coords.shape[0]):
            group, lang = divmod(i, k)
            fh.write(f"{group},{lang},{coords[i, 0]:.10g},{coords[i, 1]:.10g}\n")
