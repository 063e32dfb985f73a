"""
Fusing an external language model into a transducer predictor
=============================================================

A factorized transducer keeps a dedicated vocabulary predictor whose
output z_u behaves like a language model score. That gives us a clean
seam: swap or blend LMs at the predictor without touching the encoder.
This walkthrough builds two small n-gram models on different text and
shows what each fusion operator does to a single score row.
"""

import numpy as np

from fntfuse import (
    ScoreVector,
    Vocabulary,
    conditional_linear_interp,
    linear_interp,
    log_softmax,
    loglinear_interp,
    shallow_fuse,
    train_kneser_ney,
)

# ---------------------------------------------------------------------
# Two corpora over one vocabulary. The "source" text is what the
# predictor was trained on; the "target" text skews toward pie, the
# word the source barely mentions. Adaptation means closing that gap.
# ---------------------------------------------------------------------
vocab = Vocabulary(["we", "like", "tea", "pie", "today"])

source_text = [
    ["we", "like", "tea"],
    ["we", "like", "tea", "today"],
    ["tea", "today"],
    ["we", "like", "today"],
]
target_text = [
    ["we", "like", "pie"],
    ["pie", "today"],
    ["we", "like", "pie", "today"],
]

ids = lambda words: [vocab.id_of(w) for w in words]
source_lm = train_kneser_ney([ids(s) for s in source_text], 2, vocab=vocab, eos=False)
target_lm = train_kneser_ney([ids(s) for s in target_text], 2, vocab=vocab, eos=False)

history = tuple(ids(["we", "like"]))
print("history: 'we like'")
print(f"{'word':>8} {'source':>9} {'target':>9}")
for w in range(len(vocab)):
    print(
        f"{vocab.token_of(w):>8}"
        f" {np.exp(source_lm.logprob(w, history)):9.4f}"
        f" {np.exp(target_lm.logprob(w, history)):9.4f}"
    )

# ---------------------------------------------------------------------
# Score rows. The predictor row stands in for z_u at this history; a
# fake encoder row z_t leans toward 'tea' and 'pie' acoustics equally,
# so whatever the fused predictor prefers decides the argmax.
# ---------------------------------------------------------------------
z_u = ScoreVector(
    np.array([source_lm.logprob(w, history) for w in range(len(vocab))]),
    normalized=True,
)
p_ext = ScoreVector(
    np.array([target_lm.logprob(w, history) for w in range(len(vocab))]),
    normalized=True,
)
z_t = ScoreVector(np.array([-4.0, -4.0, -0.9, -0.9, -3.0]))
joint = ScoreVector(log_softmax(z_t.values + z_u.values), normalized=True)

show = lambda label, vec: print(
    f"{label:>24}: "
    + "  ".join(
        f"{vocab.token_of(w)}={np.exp(v):.3f}" for w, v in enumerate(vec.values)
    )
)

print()
show("joint, no fusion", joint)

# Shallow fusion rescales the JOINT row: alpha picks how much external
# log-score is added on top of the full acoustic+predictor evidence.
# Log-domain mixing is brutal around zeros: 'tea' (unseen by the target
# LM) and 'pie' (zero under the source predictor) both stay at -inf,
# so the mass has nowhere to go but the bland shared words.
fused = shallow_fuse(joint, p_ext, 0.3)
show("shallow fusion a=0.3", ScoreVector(log_softmax(fused.values), normalized=True))

# Linear interpolation mixes PROBABILITIES at the predictor before the
# joint softmax: the fused predictor is itself a proper distribution.
for alpha in (0.0, 0.5, 0.9):
    li = linear_interp(z_u, p_ext, alpha)
    fused_joint = ScoreVector(log_softmax(z_t.values + li.values), normalized=True)
    show(f"linear interp a={alpha}", fused_joint)

# Log-linear interpolation mixes LOG scores at the predictor instead;
# overlap between the two models is rewarded more sharply.
lli = loglinear_interp(z_u, p_ext, 0.5)
fused_joint = ScoreVector(log_softmax(z_t.values + lli.values), normalized=True)
show("log-linear a=0.5", fused_joint)

# ---------------------------------------------------------------------
# Conditional linear interpolation only touches words the external LM
# actually ranks in its top-r for this history; everything else keeps
# the raw predictor score. With r=2 only the LM's two best words move,
# which is what makes large-LM fusion affordable per frame.
# ---------------------------------------------------------------------
sparse = target_lm.top_r(history, 2)
print()
print("target LM top-2 at this history:", [
    (vocab.token_of(w), round(float(np.exp(lp)), 4)) for w, lp in sparse.pairs()
])
cli = conditional_linear_interp(z_u, sparse, 0.9)
fused_joint = ScoreVector(log_softmax(z_t.values + cli.values), normalized=True)
show("conditional a=0.9 r=2", fused_joint)

print()
print("argmax went tea -> pie under the probability-domain mixes;")
print("the log-domain ones threw the acoustic evidence out with the zeros")
