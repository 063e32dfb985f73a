"""Shared numeric primitives, score containers, and vocabulary handling.

All scores in this package live in the natural-log domain as float64.
Zero probability is represented by ``NEG_INF`` (an explicit IEEE -inf),
never by tiny positive floats, and NaN anywhere is treated as a bug in
the caller: every public operation validates its inputs and raises
``ValueError`` on NaN rather than letting it propagate silently.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

NEG_INF = float("-inf")


def _as_float_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D score vector, got shape {arr.shape}")
    if np.isnan(arr).any():
        raise ValueError("NaN in score vector")
    return arr


def log_sum_exp(values) -> float:
    """Stable log of the sum of exponentials of ``values``.

    -inf entries contribute zero mass; an all--inf input returns -inf.
    """
    arr = _as_float_array(values)
    if arr.size == 0:
        return NEG_INF
    m = float(np.max(arr))
    if m == NEG_INF:
        return NEG_INF
    with np.errstate(divide="ignore"):
        return m + float(np.log(np.sum(np.exp(arr - m))))


def log_softmax(values) -> np.ndarray:
    """Normalize log-domain scores so their exponentials sum to one.

    Raises ValueError if the input carries no mass at all, since there
    is no distribution to normalize to.
    """
    arr = _as_float_array(values)
    denom = log_sum_exp(arr)
    if denom == NEG_INF:
        raise ValueError("cannot normalize a zero-mass score vector")
    return arr - denom


@dataclass(frozen=True)
class ScoreVector:
    """A log-domain score vector, dense or sparse.

    Dense vectors (``support is None``) cover token ids ``0..len-1`` of
    some agreed vocabulary. Sparse vectors carry an explicit ``support``
    array of token ids aligned with ``values``; the order of entries is
    meaningful (query results keep their ranking order).

    ``normalized`` marks vectors whose exponentials sum to one over
    their support. Operations that break normalization must clear it.
    """

    values: np.ndarray
    normalized: bool = False
    support: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "values", _as_float_array(self.values))
        if self.support is not None:
            sup = np.asarray(self.support, dtype=np.int64)
            if sup.shape != self.values.shape:
                raise ValueError(
                    f"support shape {sup.shape} != values shape {self.values.shape}"
                )
            if sup.size and np.unique(sup).size != sup.size:
                raise ValueError("duplicate token ids in sparse support")
            object.__setattr__(self, "support", sup)

    def __len__(self) -> int:
        return self.values.size

    def normalize(self) -> "ScoreVector":
        return ScoreVector(log_softmax(self.values), True, self.support)

    def mass(self) -> float:
        """Total probability mass, exp(log_sum_exp(values))."""
        return float(np.exp(log_sum_exp(self.values)))


def softmax(values) -> ScoreVector:
    """log_softmax packaged as a normalized dense ScoreVector."""
    return ScoreVector(log_softmax(values), normalized=True)


class Vocabulary:
    """Immutable string<->id table; ids are dense and start at 0."""

    def __init__(self, tokens):
        self._tokens = tuple(tokens)
        self._index = {}
        for i, tok in enumerate(self._tokens):
            if not tok or tok != tok.strip():
                raise ValueError(f"bad vocabulary token at line {i + 1}: {tok!r}")
            if tok in self._index:
                raise ValueError(f"duplicate vocabulary token: {tok!r}")
            self._index[tok] = i

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __iter__(self):
        return iter(self._tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ValueError(f"token not in vocabulary: {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise ValueError(f"token id out of range: {token_id}")
        return self._tokens[token_id]

    def ids_of(self, tokens) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def tokens_of(self, ids) -> list[str]:
        return [self.token_of(i) for i in ids]

    def extended(self, extra_tokens) -> "Vocabulary":
        """New vocabulary with ``extra_tokens`` appended; existing ids keep."""
        return Vocabulary(self._tokens + tuple(extra_tokens))

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        return cls(lines)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self._tokens:
                f.write(tok + "\n")


class ExternalLm(ABC):
    """Contract for external LMs fused into the decoder.

    States are opaque, hashable, and immutable; ``advance`` never
    mutates its argument. ``full_dist`` returns a dense normalized
    log-probability array over the decoder vocabulary, and ``top_r``
    must agree with ``full_dist`` entrywise on the ids it returns.
    """

    @abstractmethod
    def initial_state(self):
        ...

    @abstractmethod
    def advance(self, state, token_id: int):
        ...

    @abstractmethod
    def full_dist(self, state) -> np.ndarray:
        ...

    @abstractmethod
    def top_r(self, state, r: int) -> tuple[np.ndarray, np.ndarray]:
        """(ids, logprobs) of the r highest-probability tokens."""
        ...
