"""Class-based LM: tagged n-gram over words and class tags, plus
per-class prefix trees with cumulative posteriors.

A decode-time state is (h, c, p): bounded tagged history, active class,
and position inside that class's prefix tree. Three transition kinds
move between states:

- CAT1: leave the active class (consuming its exit mass), emit a word
  from the n-gram part; the class tag, not its member words, enters h.
- CAT2: leave the active class, then enter some class c' with the first
  word of one of its entries.
- CAT3: advance one word deeper inside the active class; within-class
  probabilities come from the prefix tree alone.

The tagged n-gram is trained without an end-of-sentence event, so its
outcome space is exactly words plus tags and the three categories'
masses sum to one at every state.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .arpa import load_arpa, save_arpa
from .core import NEG_INF, Vocabulary
from .ngram import NgramModel, train_kneser_ney

CAT1, CAT2, CAT3 = 1, 2, 3

_TAG_RE = re.compile(r"^⟨[A-Z]+⟩$")


def is_class_tag(token: str) -> bool:
    return bool(_TAG_RE.match(token))


class PrefixNode:
    """One prefix-tree position; compared by identity."""

    __slots__ = ("uid", "children", "child_logprob", "exit_logprob")

    def __init__(self, uid: int):
        self.uid = uid
        self.children: dict[int, PrefixNode] = {}
        self.child_logprob: dict[int, float] = {}
        self.exit_logprob: float = NEG_INF


class PrefixTree:
    def __init__(self, root: PrefixNode, n_nodes: int):
        self.root = root
        self.n_nodes = n_nodes

    def iter_nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())


def build_prefix_tree(entries) -> PrefixTree:
    """Tree over (word-id sequence, weight) entries.

    Node probabilities are weight ratios: a child's probability is the
    weight passing through it over the weight through its parent, and
    the exit probability is the weight of entries ending right there.
    Duplicate entries sum their weights.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("class has no entries")
    through: dict[int, float] = {}
    ending: dict[int, float] = {}
    root = PrefixNode(0)
    through[0] = 0.0
    uid = 1
    for seq, weight in entries:
        seq = tuple(seq)
        if not seq:
            raise ValueError("empty class entry")
        if weight <= 0:
            raise ValueError(f"class entry weight must be positive, got {weight}")
        node = root
        through[root.uid] += weight
        for w in seq:
            child = node.children.get(w)
            if child is None:
                child = node.children[w] = PrefixNode(uid)
                through[uid] = 0.0
                uid += 1
            through[child.uid] += weight
            node = child
        ending[node.uid] = ending.get(node.uid, 0.0) + weight

    tree = PrefixTree(root, uid)
    for node in tree.iter_nodes():
        total = through[node.uid]
        for w, child in node.children.items():
            node.child_logprob[w] = math.log(through[child.uid] / total)
        end = ending.get(node.uid, 0.0)
        if end > 0.0:
            node.exit_logprob = math.log(end / total)
    return tree


class ClmState(NamedTuple):
    history: tuple
    class_tag: Optional[int]
    node: Optional[PrefixNode]

    def key(self):
        """Hashable merge identity (tree nodes keyed by uid)."""
        return (
            self.history,
            self.class_tag,
            -1 if self.node is None else self.node.uid,
        )


@dataclass(frozen=True)
class Transition:
    category: int
    word: int
    logprob: float
    successor: ClmState


class ClassModel:
    """Tagged n-gram plus class prefix trees, immutable after build."""

    def __init__(
        self,
        ngram: NgramModel,
        trees: dict[int, PrefixTree],
        base_vocab: Vocabulary,
        entries=None,
    ):
        self.ngram = ngram
        self.trees = trees
        self.base_vocab = base_vocab
        self.vocab = ngram.vocab
        self.n_words = len(base_vocab)
        self.tag_ids = sorted(trees)
        self.entries = entries  # tag -> [(piece strings, weight)], for persistence
        for tag_id in range(self.n_words, len(self.vocab)):
            token = self.vocab.token_of(tag_id)
            if not is_class_tag(token):
                raise ValueError(f"non-tag token beyond word space: {token!r}")
            if (
                ngram.logprob(tag_id, ()) > NEG_INF
                and tag_id not in trees
            ):
                raise ValueError(f"class tag {token!r} has n-gram mass but no tree")
        for tag_id in self.tag_ids:
            if not (self.n_words <= tag_id < len(self.vocab)):
                raise ValueError(f"tree tag id {tag_id} outside tag space")
        # CAT1 queries range over word-pieces only
        self.word_exclude = (ngram.bos_id, ngram.eos_id, *self.tag_ids)

    def initial_state(self) -> ClmState:
        return ClmState((self.ngram.bos_id,), None, None)

    def truncate(self, history) -> tuple:
        keep = self.ngram.order - 1
        return tuple(history)[-keep:] if keep > 0 else ()

    def exit_history(self, state: ClmState) -> tuple:
        """Tagged history after consuming the active class's exit."""
        if state.class_tag is None:
            return self.truncate(state.history)
        return self.truncate(state.history + (state.class_tag,))

    def exit_logmass(self, state: ClmState) -> float:
        return 0.0 if state.class_tag is None else state.node.exit_logprob


def encoder_rank_pass(encoder_scores, rprime: int) -> np.ndarray:
    """Boolean gate: True where the 0-based encoder rank is < rprime.

    Rank order is descending score with ties broken by ascending id.
    """
    scores = np.asarray(encoder_scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return ranks < rprime


def enumerate_transitions(
    model: ClassModel, state: ClmState, encoder_scores=None, rprime: int | None = None
):
    """All transitions leaving ``state``: (S1, S2, S3) Transition lists.

    S2/S3 words are dropped when their encoder rank is >= rprime (CAT1
    is never gated). Pass encoder_scores=None to disable gating.
    Repetitions of the same word across lists are preserved; each
    carries its own successor. All three lists empty is a legal result
    and signals blank fallback to the caller.
    """
    if encoder_scores is None or rprime is None or rprime >= model.n_words:
        gate = None
    else:
        gate = encoder_rank_pass(encoder_scores, rprime)

    def passes(w: int) -> bool:
        return gate is None or bool(gate[w])

    exit_lp = model.exit_logmass(state)
    h_exit = model.exit_history(state)

    s1: list[Transition] = []
    s2: list[Transition] = []
    s3: list[Transition] = []

    if state.class_tag is not None:
        node = state.node
        for w in sorted(node.children):
            if passes(w):
                s3.append(
                    Transition(
                        CAT3,
                        w,
                        node.child_logprob[w],
                        ClmState(state.history, state.class_tag, node.children[w]),
                    )
                )

    if exit_lp > NEG_INF:
        res = model.ngram.top_r(
            h_exit, len(model.vocab) + 2, exclude=model.word_exclude
        )
        dense = np.full(model.n_words, NEG_INF)
        dense[res.word_ids] = res.logprobs
        for w in range(model.n_words):
            p = dense[w]
            s1.append(
                Transition(
                    CAT1,
                    w,
                    NEG_INF if p == NEG_INF else exit_lp + float(p),
                    ClmState(model.truncate(h_exit + (w,)), None, None),
                )
            )
        for tag in model.tag_ids:
            p_tag = model.ngram.logprob(tag, h_exit)
            if p_tag == NEG_INF:
                continue
            root = model.trees[tag].root
            for w in sorted(root.children):
                if passes(w):
                    s2.append(
                        Transition(
                            CAT2,
                            w,
                            exit_lp + p_tag + root.child_logprob[w],
                            ClmState(h_exit, tag, root.children[w]),
                        )
                    )

    return s1, s2, s3


def advance(model: ClassModel, state: ClmState, transition: Transition) -> ClmState:
    """Successor of ``state`` under ``transition``, with consistency checks."""
    cat, w, succ = transition.category, transition.word, transition.successor
    if cat == CAT1:
        if state.class_tag is not None and model.exit_logmass(state) == NEG_INF:
            raise ValueError("CAT1 from a node with no exit mass")
        expected = ClmState(
            model.truncate(model.exit_history(state) + (w,)), None, None
        )
    elif cat == CAT2:
        if state.class_tag is not None and model.exit_logmass(state) == NEG_INF:
            raise ValueError("CAT2 from a node with no exit mass")
        tag = succ.class_tag
        if tag not in model.trees:
            raise ValueError(f"CAT2 into unknown class id {tag}")
        root = model.trees[tag].root
        if w not in root.children:
            raise ValueError(f"CAT2 word {w} does not start class id {tag}")
        expected = ClmState(model.exit_history(state), tag, root.children[w])
    elif cat == CAT3:
        if state.class_tag is None:
            raise ValueError("CAT3 outside of a class")
        if w not in state.node.children:
            raise ValueError(f"CAT3 word {w} not under the current node")
        expected = ClmState(state.history, state.class_tag, state.node.children[w])
    else:
        raise ValueError(f"unknown transition category {cat}")
    if (
        expected.history != succ.history
        or expected.class_tag != succ.class_tag
        or expected.node is not succ.node
    ):
        raise ValueError("transition does not apply to this state")
    return succ


def train_tagged_clm(
    tagged_sentences, entries_by_tag, order: int, base_vocab: Vocabulary
) -> ClassModel:
    """Build a ClassModel from tagged token sentences and class entries.

    ``tagged_sentences``: token-string lists mixing word-pieces and
    class tags. ``entries_by_tag``: tag -> [(piece sequence, weight)].
    Every tag used in the corpus must have entries; entries must be
    plain word-pieces (no nesting).
    """
    tags = sorted(entries_by_tag)
    for tag in tags:
        if not is_class_tag(tag):
            raise ValueError(f"bad class tag: {tag!r}")
        for seq, _ in entries_by_tag[tag]:
            for piece in seq:
                if is_class_tag(piece):
                    raise ValueError(f"nested class tag {piece!r} in {tag!r} entry")
    clm_vocab = base_vocab.extended(tags)

    sentences = []
    for sent in tagged_sentences:
        ids = []
        for tok in sent:
            if is_class_tag(tok) and tok not in entries_by_tag:
                raise ValueError(f"corpus tag {tok!r} has no class definition")
            ids.append(clm_vocab.id_of(tok))
        sentences.append(ids)

    ngram = train_kneser_ney(sentences, order, vocab=clm_vocab, eos=False)
    trees = {
        clm_vocab.id_of(tag): build_prefix_tree(
            [(base_vocab.ids_of(seq), weight) for seq, weight in entries_by_tag[tag]]
        )
        for tag in tags
    }
    return ClassModel(ngram, trees, base_vocab, entries=dict(entries_by_tag))


def parse_class_file(path) -> dict[str, list[tuple[tuple[str, ...], float]]]:
    """TSV: class tag, space-separated entry pieces, optional weight."""
    entries: dict[str, list[tuple[tuple[str, ...], float]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ValueError(f"line {lineno}: expected 2 or 3 TSV fields")
            tag, entry = fields[0], tuple(fields[1].split())
            if not is_class_tag(tag):
                raise ValueError(f"line {lineno}: bad class tag {tag!r}")
            if not entry:
                raise ValueError(f"line {lineno}: empty entry")
            weight = 1.0
            if len(fields) == 3:
                weight = float(fields[2])
                if weight <= 0:
                    raise ValueError(f"line {lineno}: weight must be positive")
            entries.setdefault(tag, []).append((entry, weight))
    if not entries:
        raise ValueError(f"no class entries in {path}")
    return entries


def write_class_file(entries_by_tag, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for tag in sorted(entries_by_tag):
            for seq, weight in entries_by_tag[tag]:
                f.write(f"{tag}\t{' '.join(seq)}\t{weight}\n")


def save_class_model(model: ClassModel, dirpath) -> None:
    import os

    if model.entries is None:
        raise ValueError("model built without retained entries; cannot save")
    os.makedirs(dirpath, exist_ok=True)
    save_arpa(model.ngram, os.path.join(dirpath, "ngram.arpa"))
    write_class_file(model.entries, os.path.join(dirpath, "classes.tsv"))


def load_class_model(dirpath, base_vocab: Vocabulary) -> ClassModel:
    import os

    entries = parse_class_file(os.path.join(dirpath, "classes.tsv"))
    clm_vocab = base_vocab.extended(sorted(entries))
    ngram = load_arpa(os.path.join(dirpath, "ngram.arpa"), clm_vocab)
    trees = {
        clm_vocab.id_of(tag): build_prefix_tree(
            [(base_vocab.ids_of(seq), weight) for seq, weight in tag_entries]
        )
        for tag, tag_entries in entries.items()
    }
    return ClassModel(ngram, trees, base_vocab, entries=entries)
