"""Score-fusion operators for external-LM integration.

Four operators with deliberately distinct signatures: shallow fusion
mixes an external LM into the JOINT scores, while linear, log-linear,
and conditional-linear interpolation act on the PREDICTOR scores before
the join. Conditional-linear applies linear interpolation only to the
words returned by a rank-r continuation query and leaves the rest of
the predictor row untouched, so its output is deliberately left
unnormalized for the final softmax to absorb.

The class-model stage (``clm_predictor_interp``) maps the CAT1/2/3
transition lists of a class-based LM onto an augmented predictor row:
gated linear interpolation for CAT1, full linear interpolation for
CAT2, and raw class-tree log-probabilities for CAT3, preserving
enumeration order and word repetitions across the three blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classlm import Transition
from .core import NEG_INF, ScoreVector
from .ngram import SparseLmQueryResult

DENSE_METHODS = ("sf", "li", "lli", "cli")
METHODS = ("none",) + DENSE_METHODS + ("clm",)


@dataclass(frozen=True)
class FusionConfig:
    """Declarative description of the fusion stage(s) for one decode.

    ``method`` selects the operator; "clm" requires a class model at
    decode time, everything else a dense external LM. A second stage
    (only "clm") turns a dense interpolation into the consecutive
    three-way combination: dense LM first, class model second.
    """

    method: str = "none"
    alpha: float = 0.0
    rank_r: int = 200
    second_method: str | None = None
    second_alpha: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown fusion method: {self.method!r}")
        for name, a in (("alpha", self.alpha), ("second_alpha", self.second_alpha)):
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {a}")
        if self.second_method is not None:
            if self.second_method != "clm":
                raise ValueError("only a class model can be the second stage")
            if self.method not in ("li", "lli", "cli"):
                raise ValueError(
                    "three-way fusion needs a predictor-side first stage"
                )
        needs_rank = self.method in ("cli", "clm") or self.second_method == "clm"
        if needs_rank and self.rank_r < 1:
            raise ValueError(f"rank_r must be >= 1, got {self.rank_r}")


def _require_dense(*vectors: ScoreVector):
    n = len(vectors[0])
    for v in vectors:
        if v.support is not None:
            raise ValueError("fusion operators take dense score vectors")
        if len(v) != n:
            raise ValueError(f"support mismatch: {len(v)} vs {n}")


def li_scores(z: np.ndarray, logp: np.ndarray, alpha: float) -> np.ndarray:
    # shared by linear_interp and the gated/CAT paths so that gated
    # entries are bit-identical to the full interpolation
    if alpha == 0.0:
        return z.copy()
    if alpha == 1.0:
        return logp.copy()
    return np.logaddexp(math.log(alpha) + logp, math.log1p(-alpha) + z)


def mix_scores(z: np.ndarray, logp: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0.0:
        return z.copy()
    if alpha == 1.0:
        return logp.copy()
    return alpha * logp + (1.0 - alpha) * z


def shallow_fuse(z: ScoreVector, logp: ScoreVector, alpha: float) -> ScoreVector:
    """Weighted log-score sum over JOINT scores: alpha*logp + (1-alpha)*z.

    ``logp`` must be a normalized external-LM distribution; the output
    is unnormalized and feeds the final softmax.
    """
    _require_dense(z, logp)
    if not logp.normalized:
        raise ValueError("shallow fusion needs a normalized external LM")
    return ScoreVector(mix_scores(z.values, logp.values, alpha))


def linear_interp(z: ScoreVector, logp: ScoreVector, alpha: float) -> ScoreVector:
    """Probability-domain convex mix of predictor and external LM.

    out[w] = log(alpha*p[w] + (1-alpha)*exp(z[w])); both inputs must be
    normalized, and convexity keeps the output normalized.
    """
    _require_dense(z, logp)
    if not (z.normalized and logp.normalized):
        raise ValueError("linear interpolation needs normalized inputs")
    return ScoreVector(li_scores(z.values, logp.values, alpha), normalized=True)


def loglinear_interp(z: ScoreVector, logp: ScoreVector, alpha: float) -> ScoreVector:
    """Weighted log-score sum over PREDICTOR scores; unnormalized output."""
    _require_dense(z, logp)
    return ScoreVector(mix_scores(z.values, logp.values, alpha))


def conditional_linear_interp(
    z: ScoreVector, sparse: SparseLmQueryResult, alpha: float
) -> ScoreVector:
    """Linear interpolation restricted to the words of a rank-r query.

    Words outside ``sparse`` keep their predictor score unchanged, so
    the row no longer sums to one and is returned unnormalized.
    """
    _require_dense(z)
    if not z.normalized:
        raise ValueError("conditional linear interpolation needs a normalized z")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    ids = sparse.word_ids
    if ids.size and np.unique(ids).size != ids.size:
        raise ValueError("duplicate word ids in sparse LM query")
    if ids.size and (ids.min() < 0 or ids.max() >= len(z)):
        raise ValueError("sparse LM query ids outside the score vector")
    out = z.values.copy()
    if ids.size:
        out[ids] = li_scores(z.values[ids], sparse.logprobs, alpha)
    return ScoreVector(out)


def _cat1_gate(s1: list[Transition], rank_r: int) -> set[int]:
    """Word ids of the rank_r most probable CAT1 transitions.

    Ranking matches the trie enumeration key (descending probability,
    ascending word id); zero-probability words are never gated.
    """
    logprobs = np.array([t.logprob for t in s1])
    words = np.array([t.word for t in s1])
    order = np.lexsort((words, -logprobs))
    gated: set[int] = set()
    for i in order[:rank_r]:
        if logprobs[i] == NEG_INF:
            break
        gated.add(int(words[i]))
    return gated


def clm_predictor_interp(
    z_u: ScoreVector,
    transitions: tuple[list[Transition], list[Transition], list[Transition]],
    alpha: float,
    rank_r: int,
) -> tuple[list[Transition], np.ndarray]:
    """Build the augmented predictor row from class-model transitions.

    Returns the concatenated CAT1/CAT2/CAT3 transitions in enumeration
    order together with the aligned score row: CAT1 words inside the
    rank gate get linear interpolation of z_u with the class-model
    probability, CAT1 words outside it keep z_u unchanged, CAT2 words
    always interpolate, and CAT3 scores are the class-tree transition
    log-probabilities taken as-is. Word repetitions across blocks stay
    separate rows; an empty CAT1 block is simply absent.
    """
    _require_dense(z_u)
    if not z_u.normalized:
        raise ValueError("class-model interpolation needs a normalized z_u")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if rank_r < 1:
        raise ValueError(f"rank_r must be >= 1, got {rank_r}")
    s1, s2, s3 = transitions
    zv = z_u.values
    blocks = []
    if s1:
        gated = _cat1_gate(s1, rank_r)
        w1 = np.array([t.word for t in s1])
        lp1 = np.array([t.logprob for t in s1])
        mask = np.array([w in gated for w in w1.tolist()])
        scores1 = zv[w1].copy()
        if mask.any():
            scores1[mask] = li_scores(zv[w1[mask]], lp1[mask], alpha)
        blocks.append(scores1)
    if s2:
        w2 = np.array([t.word for t in s2])
        lp2 = np.array([t.logprob for t in s2])
        blocks.append(li_scores(zv[w2], lp2, alpha))
    if s3:
        blocks.append(np.array([t.logprob for t in s3]))
    rows = list(s1) + list(s2) + list(s3)
    scores = np.concatenate(blocks) if blocks else np.empty(0)
    return rows, scores


def three_way(
    z_u: ScoreVector,
    dense_lm: ScoreVector,
    transitions: tuple[list[Transition], list[Transition], list[Transition]],
    alpha1: float,
    alpha2: float,
    rank_r: int,
) -> tuple[list[Transition], np.ndarray]:
    """Consecutive combination: dense-LM linear interpolation, then the
    class-model stage applied to the stage-one output."""
    stage1 = linear_interp(z_u, dense_lm, alpha1)
    return clm_predictor_interp(stage1, transitions, alpha2, rank_r)
