"""
Inside the class-based language model
=====================================

Dense adaptation text is a luxury; a list of contact names is not. The
class model scores carrier phrases with a tagged n-gram ("call ⟨NAME⟩
now") and scores the names themselves with weighted prefix trees, one
per class. This tour builds a tiny one and pokes at each moving part.
"""

import math

import numpy as np

from fntfuse import Vocabulary, build_prefix_tree, enumerate_transitions, train_tagged_clm
from fntfuse.classlm import advance

# ---------------------------------------------------------------------
# A prefix tree on its own. Entries are (word-id sequence, weight);
# shared prefixes share nodes, and each node splits its weight between
# continuing deeper and exiting (the entry ending right there).
# ---------------------------------------------------------------------
vocab = Vocabulary(["call", "now", "ann", "arbor", "lee", "ann▁marie"])
wid = vocab.id_of

entries = [
    ((wid("ann"),), 3.0),
    ((wid("ann"), wid("arbor")), 1.0),
    ((wid("lee"),), 2.0),
]
tree = build_prefix_tree(entries)
print("prefix tree over {ann:3, ann arbor:1, lee:2}")
for node in tree.iter_nodes():
    kids = {
        vocab.token_of(w): round(math.exp(lp), 3)
        for w, lp in sorted(node.child_logprob.items())
    }
    stop = 0.0 if node.exit_logprob == -math.inf else math.exp(node.exit_logprob)
    print(f"  node {node.uid}: children={kids} exit={stop:.3f}")

# Weight ratios, read off the flat list: from the root, 'ann' carries
# 4 of 6 units and 'lee' 2 of 6; under 'ann', 3 of 4 units stop.

# ---------------------------------------------------------------------
# A full class model: tagged sentences train the n-gram over words AND
# tag symbols, and each tag owns a tree. Decoding walks a lattice with
# three transition categories out of every state:
#   CAT1 plain word from the tagged n-gram (tree position exits first)
#   CAT2 enter a class: P(tag | history) times the root child
#   CAT3 continue deeper inside the current class tree
# ---------------------------------------------------------------------
tagged = [
    ["call", "⟨NAME⟩", "now"],
    ["call", "⟨NAME⟩"],
    ["now", "call", "⟨NAME⟩", "now"],
]
by_tag = {
    "⟨NAME⟩": [
        (("ann",), 3.0),
        (("ann", "arbor"), 1.0),
        (("lee",), 2.0),
    ]
}
model = train_tagged_clm(tagged, by_tag, 2, vocab)
print()
print(f"model: {model.n_words} words, tags {model.tag_ids}, order 2 tagged n-gram")


def show_transitions(state, label):
    s1, s2, s3 = enumerate_transitions(model, state)
    print(f"\nfrom {label}:")
    for cat, trs in (("CAT1", s1), ("CAT2", s2), ("CAT3", s3)):
        for tr in trs:
            if tr.logprob == -math.inf:
                continue
            print(
                f"  {cat} {vocab.token_of(tr.word):>6}"
                f"  p={math.exp(tr.logprob):.4f}"
                f"  -> tag={tr.successor.class_tag} node="
                f"{-1 if tr.successor.node is None else tr.successor.node.uid}"
            )
    return (s1, s2, s3)


state = model.initial_state()
s1, s2, s3 = show_transitions(state, "sentence start")

# Step through 'call', then enter the name class via CAT2 'ann'.
step = lambda st, trs, w: advance(
    model, st, next(t for t in trs if t.word == w)
)
state = step(state, s1, wid("call"))
s1, s2, s3 = show_transitions(state, "'call'")
state = step(state, s2, wid("ann"))
s1, s2, s3 = show_transitions(state, "'call', inside ⟨NAME⟩ at 'ann'")

# Inside the tree, the word mass splits between going deeper (CAT3
# 'arbor') and exiting the class first: every CAT1/CAT2 row above
# already includes the exit log-mass, so leaving is priced in.

# ---------------------------------------------------------------------
# Every state's outgoing mass sums to one, because class-exit mass is
# folded into the CAT1/CAT2 rows and each tree node splits its weight
# exactly between exiting and its children. Confirm on a random walk.
# ---------------------------------------------------------------------
rng = np.random.default_rng(0)
worst = 0.0
state = model.initial_state()
for _ in range(12):
    s1, s2, s3 = enumerate_transitions(model, state)
    alive = [t for ts in (s1, s2, s3) for t in ts if t.logprob > -math.inf]
    if not alive:
        break
    mass = sum(math.exp(t.logprob) for t in alive)
    worst = max(worst, abs(mass - 1.0))
    state = advance(model, state, alive[int(rng.integers(len(alive)))])
print(f"\nrandom-walk transition mass error: {worst:.2e}")
