"""Beam search against the exhaustive path-enumeration oracle, plus the
joint softmax, blank fallback, merge, and exit-rule mechanics."""

import math

import numpy as np
import pytest

from fntfuse.classlm import train_tagged_clm
from fntfuse.core import NEG_INF, ScoreVector, Vocabulary, log_softmax
from fntfuse.decoder import (
    DecoderConfig,
    beam_search,
    blank_fallback,
    joint_step,
)
from fntfuse.fusion import FusionConfig
from fntfuse.ngram import train_kneser_ney
from fntfuse.simulate import EncoderOutput, FntScorer, NgramPredictor

from oracles import exhaustive_decode

SATURATE = 4096


def make_vocab(n):
    return Vocabulary([f"p{i}" for i in range(n)])


def make_ngram(rng, vocab, order=2, n_sentences=12):
    n = len(vocab)
    sentences = [
        [int(w) for w in rng.integers(0, n, size=rng.integers(1, 5))]
        for _ in range(n_sentences)
    ]
    return train_kneser_ney(sentences, order, vocab=vocab, eos=False)


def make_clm(rng, vocab):
    n = len(vocab)
    tokens = [vocab.token_of(i) for i in range(n)]
    entries = {
        "⟨X⟩": [
            ((tokens[0], tokens[1 % n]), 1.0),
            ((tokens[0],), 1.0),
        ]
    }
    if n >= 3:
        entries["⟨Y⟩"] = [((tokens[2],), 2.0), ((tokens[2], tokens[0]), 1.0)]
    corpus = []
    for _ in range(10):
        sent = [tokens[int(i)] for i in rng.integers(0, n, size=3)]
        sent[int(rng.integers(0, 3))] = "⟨X⟩" if rng.random() < 0.7 else tokens[0]
        corpus.append(sent)
    corpus.append(["⟨Y⟩"] if n >= 3 else ["⟨X⟩"])
    return train_tagged_clm(corpus, entries, 2, vocab)


def make_encoder(rng, n_frames, n_vocab, peak=None):
    rows = []
    for t in range(n_frames):
        logits = rng.normal(size=n_vocab) * 1.5
        if peak is not None:
            logits[peak[t]] += 3.0
        rows.append(log_softmax(logits))
    blanks = rng.normal(size=n_frames) * 0.5
    return EncoderOutput(np.array(rows), blanks)


def make_instance(rng, n_vocab, n_frames, floor=0.05):
    vocab = make_vocab(n_vocab)
    predictor = NgramPredictor(make_ngram(rng, vocab), floor=floor)
    scorer = FntScorer(predictor, gamma=float(rng.choice([0.0, 0.5])))
    encoder = make_encoder(rng, n_frames, n_vocab)
    return vocab, scorer, encoder


def assert_matches_oracle(encoder, scorer, config, lm=None, clm=None, nbest=3):
    results, _ = beam_search(encoder, scorer, config, lm, clm)
    totals = exhaustive_decode(encoder, scorer, config, lm, clm)
    ranked = sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))
    assert results[0].tokens == ranked[0][0]
    assert results[0].logscore == pytest.approx(ranked[0][1], abs=1e-9)
    for got, want in zip(results[:nbest], ranked[:nbest]):
        assert got.logscore == pytest.approx(want[1], abs=1e-9)
    return results, totals


class TestJointStep:
    def test_uniform_case(self):
        v = 4
        z = ScoreVector(np.full(v, -math.log(v)), normalized=True)
        out = joint_step(z, z, -2.0 * math.log(v))
        np.testing.assert_allclose(out.values, np.full(v + 1, -math.log(v + 1)))
        assert out.mass() == pytest.approx(1.0, abs=1e-12)

    def test_shift_algebra(self):
        rng = np.random.default_rng(11)
        z_t = ScoreVector(rng.normal(size=5))
        z_u = ScoreVector(rng.normal(size=5))
        base = joint_step(z_t, z_u, -1.0)
        shifted = joint_step(ScoreVector(z_t.values + 0.7), z_u, -1.0 + 0.7)
        np.testing.assert_allclose(shifted.values, base.values, atol=1e-12)
        unshifted_blank = joint_step(ScoreVector(z_t.values + 0.7), z_u, -1.0)
        assert abs(unshifted_blank.values[-1] - base.values[-1]) > 1e-6

    def test_three_word_numeric(self):
        z_t = ScoreVector([math.log(0.5), math.log(0.3), math.log(0.2)])
        z_u = ScoreVector([math.log(0.1), math.log(0.6), math.log(0.3)])
        blank = math.log(0.25)
        out = joint_step(z_t, z_u, blank)
        raw = [0.5 * 0.1, 0.3 * 0.6, 0.2 * 0.3, 0.25]
        want = np.log(np.array(raw) / sum(raw))
        np.testing.assert_allclose(out.values, want, atol=1e-12)

    def test_support_mismatch_faults(self):
        with pytest.raises(ValueError, match="mismatch"):
            joint_step(ScoreVector([-1.0]), ScoreVector([-1.0, -2.0]), 0.0)
        sup = ScoreVector([-1.0, -2.0], support=[0, 3])
        with pytest.raises(ValueError, match="mismatch"):
            joint_step(sup, ScoreVector([-1.0, -2.0]), 0.0)


class TestBlankFallback:
    def test_uniform(self):
        v = 5
        half = np.full(v, -math.log(v) / 2)
        got = blank_fallback(ScoreVector(half), ScoreVector(half), -math.log(v))
        assert got == pytest.approx(-math.log(v + 1), abs=1e-12)

    def test_strictly_below_one(self):
        z = ScoreVector([-2.0, NEG_INF])
        got = blank_fallback(z, ScoreVector([0.0, 0.0]), 1.0)
        assert got < 0.0
        assert got == pytest.approx(1.0 - math.log(math.exp(-2.0) + math.e), abs=1e-12)

    def test_zero_mass_words_make_blank_certain(self):
        z = ScoreVector([NEG_INF, NEG_INF])
        assert blank_fallback(z, ScoreVector([0.0, 0.0]), -3.0) == 0.0

    def test_three_word_numeric(self):
        z_t = ScoreVector([math.log(0.5), math.log(0.3), math.log(0.2)])
        z_u = ScoreVector([math.log(0.2), math.log(0.2), math.log(0.6)])
        raw = [0.5 * 0.2, 0.3 * 0.2, 0.2 * 0.6, 0.4]
        want = math.log(0.4 / sum(raw))
        got = blank_fallback(z_t, z_u, math.log(0.4))
        assert got == pytest.approx(want, abs=1e-12)


class TestBeamVsExhaustive:
    def test_no_external_lm(self):
        rng = np.random.default_rng(12)
        config = DecoderConfig(beam=SATURATE, nbest=3, max_emit=2)
        for _ in range(8):
            n_vocab = int(rng.integers(2, 5))
            n_frames = int(rng.integers(1, 4))
            _, scorer, encoder = make_instance(rng, n_vocab, n_frames)
            assert_matches_oracle(encoder, scorer, config)

    def test_sparse_predictor_rows(self):
        rng = np.random.default_rng(13)
        config = DecoderConfig(beam=SATURATE, nbest=3, max_emit=2)
        for _ in range(4):
            _, scorer, encoder = make_instance(rng, 3, 3, floor=0.0)
            assert_matches_oracle(encoder, scorer, config)

    def test_dense_fusion_methods(self):
        rng = np.random.default_rng(14)
        for method in ("sf", "li", "lli", "cli"):
            vocab, scorer, encoder = make_instance(rng, 3, 2)
            lm = NgramPredictor(make_ngram(rng, vocab, order=2))
            config = DecoderConfig(
                beam=SATURATE,
                nbest=3,
                fusion=FusionConfig(method, 0.25, rank_r=2),
                max_emit=2,
            )
            assert_matches_oracle(encoder, scorer, config, lm=lm)

    def test_clm_fusion(self):
        rng = np.random.default_rng(15)
        for _ in range(4):
            n_vocab = int(rng.integers(2, 4))
            vocab, scorer, encoder = make_instance(rng, n_vocab, 2)
            clm = make_clm(rng, vocab)
            config = DecoderConfig(
                beam=SATURATE,
                nbest=3,
                fusion=FusionConfig("clm", 0.5, rank_r=2),
                max_emit=2,
            )
            assert_matches_oracle(encoder, scorer, config, clm=clm)

    def test_three_way_fusion(self):
        rng = np.random.default_rng(16)
        vocab, scorer, encoder = make_instance(rng, 3, 2)
        lm = NgramPredictor(make_ngram(rng, vocab))
        clm = make_clm(rng, vocab)
        config = DecoderConfig(
            beam=SATURATE,
            nbest=3,
            fusion=FusionConfig(
                "li", 0.1, rank_r=2, second_method="clm", second_alpha=0.5
            ),
            max_emit=2,
        )
        assert_matches_oracle(encoder, scorer, config, lm=lm, clm=clm)

    def test_max_emit_three(self):
        rng = np.random.default_rng(17)
        config = DecoderConfig(beam=SATURATE, nbest=3, max_emit=3)
        _, scorer, encoder = make_instance(rng, 2, 3)
        results, totals = assert_matches_oracle(encoder, scorer, config)
        cap = config.max_emit * encoder.n_frames
        assert all(len(tokens) <= cap for tokens in totals)
        assert any(len(tokens) == cap for tokens in totals)
        assert all(len(r.tokens) <= cap for r in results)


class TestBeamProperties:
    def test_monotone_in_beam_width(self):
        rng = np.random.default_rng(18)
        _, scorer, encoder = make_instance(rng, 4, 3)
        config = lambda b: DecoderConfig(beam=b, nbest=1, max_emit=2)
        scores = [
            beam_search(encoder, scorer, config(b))[0][0].logscore
            for b in (1, 2, 4, 8, 64)
        ]
        for lo, hi in zip(scores, scores[1:]):
            assert hi >= lo - 1e-12

    def test_alpha_zero_matches_no_lm(self):
        rng = np.random.default_rng(19)
        vocab, scorer, encoder = make_instance(rng, 4, 3)
        lm = NgramPredictor(make_ngram(rng, vocab))
        plain, _ = beam_search(
            encoder, scorer, DecoderConfig(beam=8, nbest=3, max_emit=2)
        )
        for method in ("sf", "li", "lli", "cli"):
            fused, _ = beam_search(
                encoder,
                scorer,
                DecoderConfig(
                    beam=8, nbest=3, fusion=FusionConfig(method, 0.0, rank_r=2),
                    max_emit=2,
                ),
                external_lm=lm,
            )
            assert [r.tokens for r in fused] == [r.tokens for r in plain]
            for a, b in zip(fused, plain):
                assert a.logscore == pytest.approx(b.logscore, abs=1e-12)

    def test_blank_only_frames_freeze_states(self):
        rng = np.random.default_rng(20)
        vocab, scorer, _ = make_instance(rng, 3, 1)
        rows = np.tile(log_softmax(np.zeros(3)), (2, 1))
        encoder = EncoderOutput(rows, np.array([4.0, 4.0]))  # blank dominates
        results, _ = beam_search(
            encoder, scorer, DecoderConfig(beam=4, nbest=1, max_emit=2)
        )
        assert results[0].tokens == ()
        # the winning path is two blanks scored at k=0 each
        assert [s[2] for s in results[0].steps] == [None, None]

    def test_deterministic_scorer_recovers_reference(self):
        vocab = make_vocab(3)
        ref = [0, 2, 1]
        rows = []
        for w in ref:
            logits = np.full(3, -12.0)
            logits[w] = 0.0
            rows.append(log_softmax(logits))
        encoder = EncoderOutput(np.array(rows), np.full(3, -6.0))
        rng = np.random.default_rng(21)
        predictor = NgramPredictor(make_ngram(rng, vocab), floor=0.2)
        # gamma makes blank cheap once a symbol has been emitted, so the
        # peaked frame is consumed exactly once instead of being milked
        results, _ = beam_search(
            encoder, FntScorer(predictor, gamma=8.0), DecoderConfig(beam=4, nbest=1)
        )
        assert results[0].tokens == tuple(ref)


class TestReplayConsistency:
    def replay(self, encoder, scorer, config, lm, clm, hyp):
        from fntfuse.decoder import _FrameScorer

        fs = _FrameScorer(scorer, config, lm, clm)
        use_lm = lm is not None
        pred = scorer.predictor.initial_state()
        lms = lm.initial_state() if use_lm else None
        clms = clm.initial_state() if clm is not None else None
        total = 0.0
        for t, k, word, post in hyp.steps:
            channels, posts, blank_post = fs.expand(
                _Stub(pred, lms, clms, k), t, encoder.scores[t],
                float(encoder.blank_logits[t]),
            )
            if word is None:
                assert blank_post == pytest.approx(post, abs=1e-9)
            else:
                diffs = [
                    (abs(p - post), ch)
                    for ch, p in zip(channels, posts)
                    if ch[0] == word
                ]
                err, (w, trans) = min(diffs, key=lambda x: x[0])
                assert err < 1e-9
                pred = scorer.predictor.advance(pred, w)
                if use_lm:
                    lms = lm.advance(lms, w)
                if trans is not None:
                    clms = trans.successor
            total += post
        return total

    def test_replay_reproduces_components(self):
        rng = np.random.default_rng(22)
        vocab, scorer, encoder = make_instance(rng, 4, 3)
        lm = NgramPredictor(make_ngram(rng, vocab))
        clm = make_clm(rng, vocab)
        for config, use_lm, use_clm in (
            (DecoderConfig(beam=6, nbest=2, max_emit=2), False, False),
            (
                DecoderConfig(
                    beam=6, nbest=2, fusion=FusionConfig("cli", 0.25, rank_r=2),
                    max_emit=2,
                ),
                True,
                False,
            ),
            (
                DecoderConfig(
                    beam=6, nbest=2, fusion=FusionConfig("clm", 0.5, rank_r=2),
                    max_emit=2,
                ),
                False,
                True,
            ),
        ):
            results, _ = beam_search(
                encoder,
                scorer,
                config,
                external_lm=lm if use_lm else None,
                class_model=clm if use_clm else None,
            )
            for hyp in results:
                total = self.replay(
                    encoder, scorer, config,
                    lm if use_lm else None, clm if use_clm else None, hyp,
                )
                if not hyp.merged:
                    assert total == pytest.approx(hyp.logscore, abs=1e-9)


class _Stub:
    def __init__(self, pred_state, lm_state, clm_state, k):
        self.pred_state = pred_state
        self.lm_state = lm_state
        self.clm_state = clm_state
        self.k = k


class TestExitRule:
    def build_entity_trap(self):
        vocab = make_vocab(3)
        model = train_tagged_clm(
            [["⟨X⟩", "p2"], ["⟨X⟩", "p2"], ["p2"]],
            {"⟨X⟩": [(("p0", "p1"), 1.0)]},
            2,
            vocab,
        )
        rows = []
        for w in (0, 1):
            logits = np.full(3, -8.0)
            logits[w] = 0.0
            rows.append(log_softmax(logits))
        encoder = EncoderOutput(np.array(rows), np.full(2, -3.0))
        rng = np.random.default_rng(23)
        predictor = NgramPredictor(make_ngram(rng, vocab), floor=0.3)
        return encoder, FntScorer(predictor), model

    def test_extra_expansions_engage(self):
        encoder, scorer, clm = self.build_entity_trap()
        fusion = FusionConfig("clm", 0.9, rank_r=3)
        _, plain = beam_search(
            encoder, scorer,
            DecoderConfig(beam=1, nbest=1, fusion=fusion), class_model=clm,
        )
        _, strict = beam_search(
            encoder, scorer,
            DecoderConfig(beam=1, nbest=1, fusion=fusion, exit_rule="require-cat1"),
            class_model=clm,
        )
        assert plain.n_extra_expansions == 0
        assert strict.n_extra_expansions > 0
        assert strict.n_expansions >= plain.n_expansions

    def test_results_stay_valid(self):
        encoder, scorer, clm = self.build_entity_trap()
        fusion = FusionConfig("clm", 0.9, rank_r=3)
        results, stats = beam_search(
            encoder, scorer,
            DecoderConfig(beam=2, nbest=2, fusion=fusion, exit_rule="require-cat1"),
            class_model=clm,
        )
        assert results and all(np.isfinite(r.logscore) for r in results)
        assert stats.mean_width > 0


class TestGatedDeadEnd:
    def test_blank_fallback_keeps_hypothesis_alive(self):
        vocab = make_vocab(4)
        model = train_tagged_clm(
            [["⟨X⟩", "p3"], ["p3", "⟨X⟩"], ["p3"]],
            {"⟨X⟩": [(("p0", "p1", "p2"), 1.0)]},
            2,
            vocab,
        )
        rows = []
        for w in (0, 3, 3):
            logits = np.full(4, -6.0)
            logits[w] = 0.0
            rows.append(log_softmax(logits))
        encoder = EncoderOutput(np.array(rows), np.full(3, -2.0))
        rng = np.random.default_rng(24)
        predictor = NgramPredictor(make_ngram(rng, vocab), floor=0.3)
        config = DecoderConfig(
            beam=4,
            nbest=2,
            fusion=FusionConfig("clm", 0.9, rank_r=4),
            rank_rprime=1,  # gates the within-class continuation away
        )
        results, _ = beam_search(encoder, FntScorer(predictor), config, class_model=model)
        assert results and all(np.isfinite(r.logscore) for r in results)


class TestConfigValidation:
    def test_bad_configs(self):
        with pytest.raises(ValueError, match="beam"):
            DecoderConfig(beam=0)
        with pytest.raises(ValueError, match="nbest"):
            DecoderConfig(beam=2, nbest=3)
        with pytest.raises(ValueError, match="exit rule"):
            DecoderConfig(exit_rule="loose")
        with pytest.raises(ValueError, match="max_emit"):
            DecoderConfig(max_emit=0)

    def test_missing_models_fault(self):
        rng = np.random.default_rng(25)
        _, scorer, encoder = make_instance(rng, 3, 1)
        with pytest.raises(ValueError, match="external"):
            beam_search(
                encoder, scorer,
                DecoderConfig(fusion=FusionConfig("li", 0.5)),
            )
        with pytest.raises(ValueError, match="class model"):
            beam_search(
                encoder, scorer,
                DecoderConfig(fusion=FusionConfig("clm", 0.5)),
            )

    def test_vocab_mismatch_faults(self):
        rng = np.random.default_rng(26)
        _, scorer, _ = make_instance(rng, 3, 1)
        encoder = make_encoder(rng, 1, 5)
        with pytest.raises(ValueError, match="covers"):
            beam_search(encoder, scorer, DecoderConfig())
