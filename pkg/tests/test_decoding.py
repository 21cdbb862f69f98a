import itertools
from types import SimpleNamespace

import numpy as np
import pytest

from xconst import decoding as dec
from xconst import languages as lang
from xconst import transformer as tf
from xconst.errors import ConfigError, DataError, ShapeError
from xconst.languages import BOS, EOS, PAD
from xconst.prompts import render


@pytest.fixture(scope="module")
def suite():
    return lang.build_language_suite(2, 2, center=0, seed=0)


@pytest.fixture(scope="module")
def params(suite):
    cfg = tf.ModelConfig(
        vocab_size=suite.vocab_size, d_model=16, n_heads=2, n_layers=1,
        d_ff=32, max_seq_len=48,
    )
    return tf.init_model(cfg, seed=1)


def make_prefix(suite, seed=0, length=2):
    rng = np.random.default_rng(seed)
    concept = lang.ConceptSentence(tuple(rng.integers(0, 2, size=length)))
    src = lang.render_sentence(suite, concept, 0)
    return render("t-dec", suite, 0, 1, src).token_ids


def stub_logprobs(table, vocab, default_token):
    """_next_logprobs replacement driven by a {generated: probs} table."""
    def fn(params, ids_batch, prefix_len=[None]):
        out = np.full((ids_batch.shape[0], vocab), -np.inf)
        for row, ids in enumerate(out):
            gen = tuple(int(t) for t in ids_batch[row][fn.prefix_len:])
            probs = table.get(gen, {default_token: 1.0})
            for tok, p in probs.items():
                ids[tok] = np.log(p)
        return out
    return fn


class TestConfig:
    def test_bad_method(self):
        with pytest.raises(ConfigError):
            dec.DecodeConfig(method="sample")

    def test_bad_width(self):
        with pytest.raises(ConfigError):
            dec.DecodeConfig(beam_width=0)

    def test_bad_budget(self):
        with pytest.raises(ConfigError):
            dec.DecodeConfig(max_new_tokens=0)


class TestGreedy:
    def test_forced_path_and_eos_strip(self, monkeypatch):
        # Scripted model: emit 7, then 8, then EOS.
        table = {(): {7: 0.9, 8: 0.1}, (7,): {8: 0.8, EOS: 0.2},
                 (7, 8): {EOS: 0.99, 7: 0.01}}
        fn = stub_logprobs(table, vocab=10, default_token=EOS)
        fn.prefix_len = 3
        monkeypatch.setattr(dec, "_next_logprobs", fn)
        fake = SimpleNamespace(config=SimpleNamespace(max_seq_len=32))
        out = dec.greedy_decode(fake, (1, 5, 6), dec.DecodeConfig(method="greedy"))
        assert out == (7, 8)

    def test_budget_without_eos(self, monkeypatch):
        fn = stub_logprobs({}, vocab=10, default_token=7)
        fn.prefix_len = 1
        monkeypatch.setattr(dec, "_next_logprobs", fn)
        fake = SimpleNamespace(config=SimpleNamespace(max_seq_len=32))
        cfg = dec.DecodeConfig(method="greedy", max_new_tokens=5)
        assert dec.greedy_decode(fake, (1,), cfg) == (7,) * 5

    def test_over_budget_rejected(self, params):
        cfg = dec.DecodeConfig(method="greedy", max_new_tokens=60)
        with pytest.raises(ShapeError):
            dec.greedy_decode(params, (1, 2, 3), cfg)

    def test_structural_tokens_never_emitted(self, params, suite):
        logp = dec._next_logprobs(params, np.array([[1, 10, 11]]))
        assert logp[0, PAD] == -np.inf and logp[0, BOS] == -np.inf
        cfg = dec.DecodeConfig(method="greedy", max_new_tokens=12)
        for seed in range(10):
            out = dec.greedy_decode(params, make_prefix(suite, seed), cfg)
            assert PAD not in out and BOS not in out and EOS not in out


def enumerate_candidates(params, prefix, cfg):
    """Brute-force oracle: score every possible generation by teacher forcing.

    Returns (tokens, summed logprob) for all sequences that either end with
    EOS within the budget or exhaust it, mirroring the decoder's candidate
    set exactly.
    """
    vocab = params.config.vocab_size
    allowed = [t for t in range(vocab) if t not in (PAD, BOS, EOS)]
    results = []

    def expand(gen, score, depth):
        ids = np.asarray(prefix + gen, dtype=np.int64)[None, :]
        logp = dec._next_logprobs(params, ids)[0]
        results.append((gen, score + float(logp[EOS])))
        if depth == cfg.max_new_tokens - 1:
            for tok in allowed:
                results.append((gen + (tok,), score + float(logp[tok])))
            return
        for tok in allowed:
            expand(gen + (tok,), score + float(logp[tok]), depth + 1)

    expand((), 0.0, 0)
    return results


def oracle_best(candidates, lam):
    def key(c):
        toks, score = c
        return (-(score / max(1, len(toks)) ** lam), toks)
    return min(candidates, key=key)[0]


class TestBeam:
    def test_exhaustive_width_matches_enumeration(self, suite):
        cfg_model = tf.ModelConfig(
            vocab_size=suite.vocab_size, d_model=8, n_heads=2, n_layers=1,
            d_ff=16, max_seq_len=32,
        )
        for seed in range(4):
            params = tf.init_model(cfg_model, seed=seed + 10)
            prefix = make_prefix(suite, seed, length=1)
            for lam in (0.0, 0.6):
                cfg = dec.DecodeConfig(beam_width=4000, max_new_tokens=3,
                                       length_norm=lam)
                oracle = oracle_best(
                    enumerate_candidates(params, prefix, cfg), lam)
                assert dec.beam_search(params, prefix, cfg) == oracle

    def test_width_one_equals_greedy(self, params, suite):
        beam_cfg = dec.DecodeConfig(method="beam", beam_width=1,
                                    max_new_tokens=8)
        greedy_cfg = dec.DecodeConfig(method="greedy", max_new_tokens=8)
        for seed in range(100):
            prefix = make_prefix(suite, seed, length=1 + seed % 3)
            assert (dec.beam_search(params, prefix, beam_cfg)
                    == dec.greedy_decode(params, prefix, greedy_cfg)), seed

    def test_length_norm_changes_winner(self, monkeypatch):
        # Short high-probability ending vs a longer path with better
        # per-token probability: lambda=0 picks the short one, lambda=1
        # the long one.
        table = {
            (): {7: 0.5, 8: 0.5},
            (7,): {EOS: 0.7, 7: 0.3},
            (8,): {8: 0.9, EOS: 0.1},
            (8, 8): {EOS: 2 / 3, 7: 1 / 3},
        }
        fn = stub_logprobs(table, vocab=10, default_token=EOS)
        fn.prefix_len = 1
        monkeypatch.setattr(dec, "_next_logprobs", fn)
        fake = SimpleNamespace(config=SimpleNamespace(max_seq_len=32))
        plain = dec.beam_search(
            fake, (1,), dec.DecodeConfig(beam_width=8, max_new_tokens=3))
        normed = dec.beam_search(
            fake, (1,),
            dec.DecodeConfig(beam_width=8, max_new_tokens=3, length_norm=1.0))
        assert plain == (7,)       # ln .35 beats ln .30
        assert normed == (8, 8)    # ln(.30)/2 beats ln(.35)/1

    def test_score_tie_breaks_lexicographically(self, monkeypatch):
        table = {
            (): {7: 0.5, 8: 0.5},
            (7,): {EOS: 0.9, 7: 0.1},
            (8,): {EOS: 0.9, 7: 0.1},
        }
        fn = stub_logprobs(table, vocab=10, default_token=EOS)
        fn.prefix_len = 1
        monkeypatch.setattr(dec, "_next_logprobs", fn)
        fake = SimpleNamespace(config=SimpleNamespace(max_seq_len=32))
        out = dec.beam_search(
            fake, (1,), dec.DecodeConfig(beam_width=4, max_new_tokens=2))
        assert out == (7,)

    def test_decode_dispatch(self, params, suite):
        prefix = make_prefix(suite, 3)
        g = dec.decode(params, prefix, dec.DecodeConfig(method="greedy"))
        b = dec.decode(params, prefix, dec.DecodeConfig(method="beam"))
        assert isinstance(g, tuple) and isinstance(b, tuple)


class TestTranslate:
    def test_translate_uses_inference_prefix(self, params, suite):
        concept = lang.ConceptSentence((0, 1))
        src = lang.render_sentence(suite, concept, 0)
        cfg = dec.DecodeConfig(method="greedy", max_new_tokens=8)
        direct = dec.translate(params, suite, "t-dec", 0, 1, src, cfg)
        prefix = render("t-dec", suite, 0, 1, src).token_ids
        assert direct == dec.decode(params, prefix, cfg)

    def test_pivot_degenerates_at_center(self, params, suite, monkeypatch):
        calls = []
        real = dec.translate

        def spy(*args):
            calls.append((args[3], args[4]))
            return real(*args)

        monkeypatch.setattr(dec, "translate", spy)
        concept = lang.ConceptSentence((1,))
        cfg = dec.DecodeConfig(method="greedy", max_new_tokens=8)
        src = lang.render_sentence(suite, concept, 1)
        dec.pivot_translate(params, suite, "t-dec", 1, 0, src, cfg)
        src = lang.render_sentence(suite, concept, 0)
        dec.pivot_translate(params, suite, "t-dec", 0, 1, src, cfg)
        assert calls == [(1, 0), (0, 1)]

    def test_pivot_two_hops(self, suite, monkeypatch):
        # Three languages so that 1 -> 2 must route through center 0.
        big = lang.build_language_suite(3, 2, center=0, seed=0)
        hops = []

        def fake_translate(params, s, strategy, a, b, toks, cfg):
            hops.append((a, b, toks))
            return (40, 41)

        monkeypatch.setattr(dec, "translate", fake_translate)
        out = dec.pivot_translate(None, big, "t-dec", 1, 2, (30, 31), None)
        assert out == (40, 41)
        assert [(a, b) for a, b, _ in hops] == [(1, 0), (0, 2)]
        assert hops[1][2] == (40, 41)

    def test_empty_intermediate_is_error(self, suite, monkeypatch):
        big = lang.build_language_suite(3, 2, center=0, seed=0)
        monkeypatch.setattr(dec, "translate", lambda *a: ())
        with pytest.raises(DataError):
            dec.pivot_translate(None, big, "t-dec", 1, 2, (30,), None)
