"""Time-synchronous transducer beam search with external-LM fusion.

Per frame, the frame-final set B of the previous frame is carried over
as the expansion set A; the most probable hypothesis in A is repeatedly
popped and expanded until beam-many hypotheses in B outscore everything
left in A. Emissions advance the predictor and any attached external-LM
states; blanks never do. Hypotheses are merged by probability summation
only when token sequence AND every attached state agree (including the
count of symbols emitted this frame, which feeds the blank history
penalty); the returned n-best additionally merges pure token duplicates.

With a class model attached, each expansion scores an augmented channel
list built from the CAT1/2/3 transitions instead of the plain
vocabulary row; when no transition is available at all, the hypothesis
can still take blank, priced from the original uninterpolated scores.
The "require-cat1" exit rule keeps expanding (within a bounded extra
budget) until the frame-final set contains some state that can leave
its class, so the beam is not spent entirely inside entity prefixes.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .classlm import ClassModel, enumerate_transitions
from .core import NEG_INF, ExternalLm, ScoreVector, log_softmax, log_sum_exp
from .fusion import FusionConfig, clm_predictor_interp, li_scores, mix_scores, three_way

EXIT_RULES = ("standard", "require-cat1")


@dataclass(frozen=True)
class DecoderConfig:
    beam: int = 8
    nbest: int = 1
    fusion: FusionConfig = field(default_factory=FusionConfig)
    rank_rprime: int | None = None
    exit_rule: str = "standard"
    max_emit: int = 5

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError(f"beam must be >= 1, got {self.beam}")
        if not 1 <= self.nbest <= self.beam:
            raise ValueError(f"nbest must be in [1, beam], got {self.nbest}")
        if self.exit_rule not in EXIT_RULES:
            raise ValueError(f"unknown exit rule: {self.exit_rule!r}")
        if self.max_emit < 1:
            raise ValueError(f"max_emit must be >= 1, got {self.max_emit}")
        if self.rank_rprime is not None and self.rank_rprime < 1:
            raise ValueError(f"rank_rprime must be >= 1, got {self.rank_rprime}")


@dataclass
class DecodeStats:
    """Per-utterance instrumentation for width and exit-rule accounting."""

    n_frames: int = 0
    n_expansions: int = 0
    n_extra_expansions: int = 0
    total_width: int = 0
    wall_time: float = 0.0
    warning: str | None = None

    @property
    def mean_width(self) -> float:
        return self.total_width / max(self.n_expansions, 1)

    @property
    def expansions_per_frame(self) -> float:
        return self.n_expansions / max(self.n_frames, 1)


@dataclass(frozen=True)
class DecodedHypothesis:
    """One n-best entry: tokens, total log-probability, and the per-step
    (frame, emitted-count, token-or-None, log-posterior) components of
    its representative alignment path."""

    tokens: tuple
    logscore: float
    steps: tuple
    merged: bool


class Hypothesis:
    __slots__ = (
        "tokens",
        "logscore",
        "pred_state",
        "lm_state",
        "clm_state",
        "k",
        "steps",
        "merged",
    )

    def __init__(self, tokens, logscore, pred_state, lm_state, clm_state, k, steps, merged):
        self.tokens = tokens
        self.logscore = logscore
        self.pred_state = pred_state
        self.lm_state = lm_state
        self.clm_state = clm_state
        self.k = k
        self.steps = steps
        self.merged = merged

    def state_key(self):
        clm = self.clm_state.key() if self.clm_state is not None else None
        return (self.tokens, self.pred_state, self.lm_state, clm)


def joint_step(z_t: ScoreVector, z_u: ScoreVector, z_blank: float) -> ScoreVector:
    """Final posterior: softmax over the word channels plus blank.

    Word channels are the elementwise sum of encoder and predictor
    scores; both inputs must be aligned (same length, same support).
    """
    if len(z_t) != len(z_u):
        raise ValueError(f"support mismatch: {len(z_t)} vs {len(z_u)}")
    if (z_t.support is None) != (z_u.support is None) or (
        z_t.support is not None and not np.array_equal(z_t.support, z_u.support)
    ):
        raise ValueError("support mismatch between encoder and predictor rows")
    vals = np.append(z_t.values + z_u.values, z_blank)
    return ScoreVector(log_softmax(vals), normalized=True)


def blank_fallback(z_t: ScoreVector, z_u: ScoreVector, z_blank: float) -> float:
    """Blank log-posterior priced from the ORIGINAL joint scores.

    Used when a class model leaves a hypothesis with no word channel at
    all: blank is then the only move, and it costs what it would have
    cost before any interpolation.
    """
    if len(z_t) != len(z_u):
        raise ValueError(f"support mismatch: {len(z_t)} vs {len(z_u)}")
    denom = log_sum_exp(np.append(z_t.values + z_u.values, z_blank))
    return float(z_blank) - denom


def _merge(pool: dict, key, hyp: Hypothesis):
    old = pool.get(key)
    if old is None:
        pool[key] = hyp
        return
    total = np.logaddexp(old.logscore, hyp.logscore)
    rep = old if old.logscore >= hyp.logscore else hyp
    merged = Hypothesis(
        rep.tokens,
        float(total),
        rep.pred_state,
        rep.lm_state,
        rep.clm_state,
        rep.k,
        rep.steps,
        True,
    )
    pool[key] = merged


def _cat1_possible(hyp: Hypothesis, clm: ClassModel | None) -> bool:
    if clm is None or hyp.clm_state is None:
        return True
    return hyp.clm_state.class_tag is None or clm.exit_logmass(hyp.clm_state) > NEG_INF


class _FrameScorer:
    """Builds (channels, posteriors, blank posterior) for one expansion.

    Channels are (word, clm-transition-or-None) pairs aligned with the
    posterior vector. Transition enumeration is cached per (state, frame)
    because expansions of sibling hypotheses revisit the same LM states.
    """

    def __init__(self, scorer, config, external_lm, class_model):
        self.scorer = scorer
        self.config = config
        self.external = external_lm
        self.clm = class_model
        self.fusion = config.fusion
        self.use_clm = (
            self.fusion.method == "clm" or self.fusion.second_method == "clm"
        )
        self._trans_cache: dict = {}

    def _transitions(self, clm_state, t, z_t_row):
        key = (clm_state.key(), t)
        hit = self._trans_cache.get(key)
        if hit is None:
            gate = z_t_row if self.config.rank_rprime is not None else None
            hit = enumerate_transitions(
                self.clm, clm_state, gate, self.config.rank_rprime
            )
            self._trans_cache[key] = hit
        return hit

    def expand(self, hyp: Hypothesis, t: int, z_t_row, blank_logit):
        fu = self.fusion
        z_u = self.scorer.predictor.full_dist(hyp.pred_state)
        b = self.scorer.blank_score(blank_logit, hyp.k)

        if self.use_clm:
            trans = self._transitions(hyp.clm_state, t, z_t_row)
            if not (trans[0] or trans[1] or trans[2]):
                fb = blank_fallback(ScoreVector(z_t_row), ScoreVector(z_u), b)
                return [], np.empty(0), fb
            z_u_sv = ScoreVector(z_u, normalized=True)
            if fu.method == "clm":
                rows, aug = clm_predictor_interp(z_u_sv, trans, fu.alpha, fu.rank_r)
            else:
                dense = ScoreVector(
                    self.external.full_dist(hyp.lm_state), normalized=True
                )
                rows, aug = three_way(
                    z_u_sv, dense, trans, fu.alpha, fu.second_alpha, fu.rank_r
                )
            words = np.fromiter((r.word for r in rows), dtype=np.int64, count=len(rows))
            posts = log_softmax(np.append(z_t_row[words] + aug, b))
            channels = [(r.word, r) for r in rows]
            return channels, posts[:-1], float(posts[-1])

        if fu.method == "none":
            joint = z_t_row + z_u
        elif fu.method == "sf":
            lm_row = self.external.full_dist(hyp.lm_state)
            joint = mix_scores(z_t_row + z_u, lm_row, fu.alpha)
        elif fu.method == "li":
            lm_row = self.external.full_dist(hyp.lm_state)
            joint = z_t_row + li_scores(z_u, lm_row, fu.alpha)
        elif fu.method == "lli":
            lm_row = self.external.full_dist(hyp.lm_state)
            joint = z_t_row + mix_scores(z_u, lm_row, fu.alpha)
        elif fu.method == "cli":
            sp = self.external.top_r(hyp.lm_state, fu.rank_r)
            fused = z_u.copy()
            if len(sp.word_ids):
                fused[sp.word_ids] = li_scores(
                    z_u[sp.word_ids], sp.logprobs, fu.alpha
                )
            joint = z_t_row + fused
        else:
            raise ValueError(f"unhandled fusion method {fu.method!r}")
        posts = log_softmax(np.append(joint, b))
        channels = [(w, None) for w in range(z_u.size)]
        return channels, posts[:-1], float(posts[-1])


def beam_search(
    encoder,
    scorer,
    config: DecoderConfig,
    external_lm: ExternalLm | None = None,
    class_model: ClassModel | None = None,
):
    """Decode one utterance; returns (n-best DecodedHypothesis list, stats)."""
    fu = config.fusion
    if fu.method in ("sf", "li", "lli", "cli") and external_lm is None:
        raise ValueError(f"fusion method {fu.method!r} needs an external LM")
    if fu.second_method == "clm" and external_lm is None:
        raise ValueError("three-way fusion needs an external LM")
    if (fu.method == "clm" or fu.second_method == "clm") and class_model is None:
        raise ValueError("class-model fusion needs a class model")

    t0 = time.perf_counter()
    stats = DecodeStats(n_frames=encoder.n_frames)
    frame_scorer = _FrameScorer(scorer, config, external_lm, class_model)
    probe = scorer.predictor.full_dist(scorer.predictor.initial_state())
    if probe.size != encoder.n_vocab:
        raise ValueError(
            f"predictor covers {probe.size} tokens, encoder {encoder.n_vocab}"
        )
    use_lm = external_lm is not None and (
        fu.method in ("sf", "li", "lli", "cli") or fu.second_method == "clm"
    )

    init = Hypothesis(
        tokens=(),
        logscore=0.0,
        pred_state=scorer.predictor.initial_state(),
        lm_state=external_lm.initial_state() if use_lm else None,
        clm_state=class_model.initial_state() if frame_scorer.use_clm else None,
        k=0,
        steps=(),
        merged=False,
    )
    B = {init.state_key(): init}

    for t in range(encoder.n_frames):
        z_t_row = encoder.scores[t]
        blank_logit = float(encoder.blank_logits[t])
        A: dict = {}
        for h in B.values():
            carried = Hypothesis(
                h.tokens, h.logscore, h.pred_state, h.lm_state, h.clm_state,
                0, h.steps, h.merged,
            )
            _merge(A, carried.state_key() + (0,), carried)
        B = {}
        extra_used = 0

        while A:
            best_key = max(A, key=lambda key: A[key].logscore)
            best = A[best_key]
            settled = sum(1 for h in B.values() if h.logscore >= best.logscore)
            if settled >= config.beam:
                if config.exit_rule != "require-cat1" or any(
                    _cat1_possible(h, class_model)
                    for h in heapq.nlargest(
                        config.beam, B.values(), key=lambda h: h.logscore
                    )
                ):
                    break
                if extra_used >= 2 * config.beam:
                    stats.warning = "require-cat1 budget exhausted"
                    break
                extra_used += 1
                stats.n_extra_expansions += 1
            del A[best_key]

            channels, posts, blank_post = frame_scorer.expand(
                best, t, z_t_row, blank_logit
            )
            stats.n_expansions += 1
            stats.total_width += len(channels)

            took_blank = Hypothesis(
                best.tokens,
                best.logscore + blank_post,
                best.pred_state,
                best.lm_state,
                best.clm_state,
                best.k,
                best.steps + ((t, best.k, None, blank_post),),
                best.merged,
            )
            _merge(B, took_blank.state_key(), took_blank)

            if best.k < config.max_emit:
                for (word, trans), post in zip(channels, posts):
                    if post == NEG_INF:
                        continue
                    child = Hypothesis(
                        best.tokens + (word,),
                        best.logscore + float(post),
                        scorer.predictor.advance(best.pred_state, word),
                        external_lm.advance(best.lm_state, word) if use_lm else None,
                        trans.successor if trans is not None else None,
                        best.k + 1,
                        best.steps + ((t, best.k, word, float(post)),),
                        best.merged,
                    )
                    _merge(A, child.state_key() + (child.k,), child)
            if len(A) > config.beam:
                keep = heapq.nlargest(
                    config.beam, A.items(), key=lambda kv: kv[1].logscore
                )
                A = dict(keep)

        survivors = heapq.nlargest(
            config.beam, B.items(), key=lambda kv: kv[1].logscore
        )
        if (
            config.exit_rule == "require-cat1"
            and class_model is not None
            and not any(_cat1_possible(h, class_model) for _, h in survivors)
        ):
            capable = [
                kv for kv in B.items() if _cat1_possible(kv[1], class_model)
            ]
            if capable:
                survivors.append(
                    max(capable, key=lambda kv: kv[1].logscore)
                )
        B = dict(survivors)

    by_tokens: dict = {}
    for h in B.values():
        by_tokens.setdefault(h.tokens, []).append(h)
    results = []
    for tokens, group in by_tokens.items():
        total = log_sum_exp([h.logscore for h in group])
        rep = max(group, key=lambda h: h.logscore)
        results.append(
            DecodedHypothesis(
                tokens,
                float(total),
                rep.steps,
                len(group) > 1 or any(h.merged for h in group),
            )
        )
    results.sort(key=lambda r: (-r.logscore, r.tokens))
    stats.wall_time = time.perf_counter() - t0
    return results[: config.nbest], stats
