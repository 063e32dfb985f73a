"""Brute-force reference implementations used only by the test suite.

Everything here deliberately avoids the package's own data structures:
probabilities are recomputed from first principles (count dictionaries,
explicit recursions, full enumerations), so agreement with the library
is evidence of correctness rather than a tautology.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict


class OracleKn:
    """Interpolated modified Kneser-Ney, computed directly from counts.

    The conditional probability is rebuilt for every query by walking
    the interpolation recursion bottom-up over plain dictionaries; no
    trie, no stored backoff weights.
    """

    def __init__(self, sentences, order, bos_id, eos_id=None):
        self.order = order
        self.bos = bos_id
        raw = [None] + [Counter() for _ in range(order)]
        for sent in sentences:
            padded = [bos_id] + list(sent) + ([eos_id] if eos_id is not None else [])
            for k in range(1, order + 1):
                for i in range(len(padded) - k + 1):
                    raw[k][tuple(padded[i : i + k])] += 1
        adj = [None] + [None] * order
        adj[order] = dict(raw[order])
        for k in range(order - 1, 0, -1):
            cont = Counter()
            for gram in raw[k + 1]:
                cont[gram[1:]] += 1
            adj[k] = {
                g: (raw[k][g] if g[0] == bos_id else cont[g]) for g in raw[k]
            }
        self.adj = adj
        self.vpred = sum(1 for g in adj[1] if g[0] != bos_id)
        self.discounts = {}
        for k in range(1, order + 1):
            skip = {(bos_id,)} if k == 1 else set()
            vals = [c for g, c in adj[k].items() if g not in skip]
            self.discounts[k] = kn_discounts(vals)
        # context -> {word: adjusted count}, per order
        self.nodes = [None] + [defaultdict(dict) for _ in range(order)]
        for k in range(1, order + 1):
            for g, c in adj[k].items():
                if k == 1 and g[0] == bos_id:
                    continue
                self.nodes[k][g[:-1]][g[-1]] = c

    def prob(self, word_id, history):
        # closed vocabulary: the uniform base covers seen types only
        if word_id == self.bos or (word_id,) not in self.adj[1]:
            return 0.0
        p = 1.0 / self.vpred
        top = min(self.order, len(history) + 1)
        for k in range(1, top + 1):
            ctx = tuple(history[len(history) - k + 1 :]) if k > 1 else ()
            node = self.nodes[k].get(ctx)
            if not node:
                continue
            d1, d2, d3 = self.discounts[k]
            total = sum(node.values())
            n1 = sum(1 for c in node.values() if c == 1)
            n2 = sum(1 for c in node.values() if c == 2)
            n3 = sum(1 for c in node.values() if c >= 3)
            gamma = (d1 * n1 + d2 * n2 + d3 * n3) / total
            c = node.get(word_id, 0)
            if c == 0:
                f = 0.0
            else:
                d = d1 if c == 1 else d2 if c == 2 else d3
                f = max(c - d, 0.0) / total
            p = f + gamma * p
        return p

    def logprob(self, word_id, history):
        p = self.prob(word_id, history)
        return math.log(p) if p > 0.0 else float("-inf")


def kn_discounts(adjusted_counts):
    """Three-bin discounts from counts-of-counts, with the fixed fallback.

    Bins are count==1, count==2, count>=3. The estimate degenerates
    (any of n1..n4 is zero, or a discount leaves its valid interval
    (0, bin]) to a flat 0.75 for all three bins.
    """
    n = Counter(c for c in adjusted_counts if 1 <= c <= 4)
    n1, n2, n3, n4 = n[1], n[2], n[3], n[4]
    if min(n1, n2, n3, n4) == 0:
        return (0.75, 0.75, 0.75)
    y = n1 / (n1 + 2.0 * n2)
    d1 = 1.0 - 2.0 * y * n2 / n1
    d2 = 2.0 - 3.0 * y * n3 / n2
    d3 = 3.0 - 4.0 * y * n4 / n3
    for j, d in enumerate((d1, d2, d3), start=1):
        if not (0.0 < d <= j):
            return (0.75, 0.75, 0.75)
    return (d1, d2, d3)


def prefix_weight_ratios(entries):
    """Prefix-tree probabilities recomputed by counting over the flat
    entry list: no tree is built. Returns {prefix: ({child: p}, exit_p)}
    for every proper prefix reachable in the entries.
    """
    entries = [(tuple(seq), w) for seq, w in entries]
    prefixes = {()}
    for seq, _ in entries:
        prefixes.update(seq[:i] for i in range(1, len(seq) + 1))
    table = {}
    for prefix in prefixes:
        through = sum(w for seq, w in entries if seq[: len(prefix)] == prefix)
        ending = sum(w for seq, w in entries if seq == prefix)
        children = {}
        for seq, w in entries:
            if len(seq) > len(prefix) and seq[: len(prefix)] == prefix:
                children[seq[len(prefix)]] = children.get(seq[len(prefix)], 0.0) + 0.0
        for child in children:
            children[child] = (
                sum(
                    w
                    for seq, w in entries
                    if seq[: len(prefix) + 1] == prefix + (child,)
                )
                / through
            )
        table[prefix] = (children, ending / through)
    return table


def clm_prefix_masses(model, max_len):
    """Word-sequence prefix masses of a class model by brute-force
    automaton expansion, recomputed from tree dictionaries and raw
    n-gram lookups (the transition-enumeration code under test is
    never called).
    """
    ngram = model.ngram
    keep = ngram.order - 1

    def trunc(h):
        return tuple(h)[-keep:] if keep > 0 else ()

    masses = defaultdict(float)
    frontier = defaultdict(float)
    frontier[((), (ngram.bos_id,), None, None)] = 1.0
    for _ in range(max_len):
        nxt = defaultdict(float)
        for (words, h, tag, node), mass in frontier.items():
            succs = []
            if tag is not None:
                for w, child in node.children.items():
                    succs.append(
                        (w, math.exp(node.child_logprob[w]), (h, tag, child))
                    )
                exit_p = math.exp(node.exit_logprob)
                h_exit = trunc(h + (tag,))
            else:
                exit_p = 1.0
                h_exit = trunc(h)
            if exit_p > 0.0:
                for w in range(model.n_words):
                    p = math.exp(ngram.logprob(w, h_exit))
                    if p > 0.0:
                        succs.append(
                            (w, exit_p * p, (trunc(h_exit + (w,)), None, None))
                        )
                for tg in model.tag_ids:
                    p_tag = math.exp(ngram.logprob(tg, h_exit))
                    if p_tag == 0.0:
                        continue
                    root = model.trees[tg].root
                    for w, child in root.children.items():
                        succs.append(
                            (
                                w,
                                exit_p * p_tag * math.exp(root.child_logprob[w]),
                                (h_exit, tg, child),
                            )
                        )
            for w, p, succ in succs:
                nxt[(words + (w,),) + succ] += mass * p
        frontier = nxt
        for key, mass in frontier.items():
            masses[key[0]] += mass
    return dict(masses)


def wer_alignments(ref, hyp):
    """All minimum-cost alignments of two word lists, by full enumeration.

    Returns (min_cost, alignments) where each alignment is a list of
    (op, ref_word_or_None, hyp_word_or_None) with op in
    {match, sub, del, ins}. Exponential; only for short pairs.
    """
    best = {}

    def rec(i, j):
        if (i, j) in best:
            return best[(i, j)]
        if i == len(ref) and j == len(hyp):
            result = (0, [[]])
        else:
            options = []
            if i < len(ref) and j < len(hyp):
                cost, tails = rec(i + 1, j + 1)
                op = "match" if ref[i] == hyp[j] else "sub"
                step = 0 if op == "match" else 1
                options.append((cost + step, op, ref[i], hyp[j], tails))
            if i < len(ref):
                cost, tails = rec(i + 1, j)
                options.append((cost + 1, "del", ref[i], None, tails))
            if j < len(hyp):
                cost, tails = rec(i, j + 1)
                options.append((cost + 1, "ins", None, hyp[j], tails))
            low = min(o[0] for o in options)
            paths = []
            for cost, op, rw, hw, tails in options:
                if cost == low:
                    paths.extend([[(op, rw, hw)] + t for t in tails])
            result = (low, paths)
        best[(i, j)] = result
        return result

    return rec(0, 0)


def _lse(values):
    m = max(values)
    if m == float("-inf"):
        return m
    return m + math.log(sum(math.exp(v - m) for v in values))


def exhaustive_decode(
    encoder, scorer, config, external_lm=None, class_model=None, stats=None
):
    """Total log-probability of every emittable token sequence.

    Brute-force sweep over all blank/emission paths through the frames,
    recomputing every per-step posterior with scalar arithmetic (the
    decoder's vectorized fusion code is never called). Transition
    enumeration and model queries come from the independently verified
    model layer. Only feasible for tiny instances.

    When ``stats`` is a dict it receives ``beam_needed``, the largest
    number of simultaneously distinct search states in any frame; a
    beam at least that wide can never prune, so beam search must agree
    with this enumeration exactly.
    """
    from fntfuse.classlm import enumerate_transitions

    fusion = config.fusion
    use_clm = fusion.method == "clm" or fusion.second_method == "clm"
    use_lm = external_lm is not None and (
        fusion.method in ("sf", "li", "lli", "cli") or fusion.second_method == "clm"
    )
    n_frames = encoder.n_frames
    n_vocab = encoder.n_vocab
    row_cache = {}

    def li(z, p, alpha):
        if alpha == 0.0:
            return z
        if alpha == 1.0:
            return p
        return _lse([math.log(alpha) + p, math.log1p(-alpha) + z])

    def mix(z, p, alpha):
        if alpha == 0.0:
            return z
        if alpha == 1.0:
            return p
        return alpha * p + (1.0 - alpha) * z

    def channel_scores(t, k, pred_state, lm_state, clm_state):
        """-> (channels, posts, blank_post); channels = (word, successors...)"""
        z_t = encoder.scores[t]
        z_u = scorer.predictor.full_dist(pred_state)
        b = float(encoder.blank_logits[t]) + scorer.gamma * k
        lm_row = external_lm.full_dist(lm_state) if use_lm else None

        if use_clm:
            s1, s2, s3 = enumerate_transitions(class_model, clm_state)
            if not (s1 or s2 or s3):
                blank_post = b - _lse(
                    [float(z_t[w] + z_u[w]) for w in range(n_vocab)] + [b]
                )
                return [], [], blank_post
            channels, raw = [], []
            base = {
                w: (
                    li(float(z_u[w]), float(lm_row[w]), fusion.alpha)
                    if fusion.second_method == "clm"
                    else float(z_u[w])
                )
                for w in range(n_vocab)
            }
            clm_alpha = (
                fusion.second_alpha if fusion.second_method == "clm" else fusion.alpha
            )
            finite = sorted(
                (tr for tr in s1 if tr.logprob > float("-inf")),
                key=lambda tr: (-tr.logprob, tr.word),
            )
            gated = {tr.word for tr in finite[: fusion.rank_r]}
            for tr in s1:
                z = base[tr.word]
                score = li(z, tr.logprob, clm_alpha) if tr.word in gated else z
                channels.append((tr.word, tr.successor))
                raw.append(float(z_t[tr.word]) + score)
            for tr in s2:
                score = li(base[tr.word], tr.logprob, clm_alpha)
                channels.append((tr.word, tr.successor))
                raw.append(float(z_t[tr.word]) + score)
            for tr in s3:
                channels.append((tr.word, tr.successor))
                raw.append(float(z_t[tr.word]) + tr.logprob)
            denom = _lse(raw + [b])
            return channels, [r - denom for r in raw], b - denom

        raw = []
        if fusion.method == "cli":
            sp = external_lm.top_r(lm_state, fusion.rank_r)
            probs = dict(zip(sp.word_ids.tolist(), sp.logprobs.tolist()))
        for w in range(n_vocab):
            zt, zu = float(z_t[w]), float(z_u[w])
            if fusion.method == "none":
                raw.append(zt + zu)
            elif fusion.method == "sf":
                raw.append(mix(zt + zu, float(lm_row[w]), fusion.alpha))
            elif fusion.method == "li":
                raw.append(zt + li(zu, float(lm_row[w]), fusion.alpha))
            elif fusion.method == "lli":
                raw.append(zt + mix(zu, float(lm_row[w]), fusion.alpha))
            elif fusion.method == "cli":
                if w in probs:
                    raw.append(zt + li(zu, probs[w], fusion.alpha))
                else:
                    raw.append(zt + zu)
            else:
                raise ValueError(fusion.method)
        denom = _lse(raw + [b])
        channels = [(w, None) for w in range(n_vocab)]
        return channels, [r - denom for r in raw], b - denom

    def cached_row(t, k, pred_state, lm_state, clm_state):
        key = (
            t,
            k,
            pred_state,
            lm_state,
            clm_state.key() if clm_state is not None else None,
        )
        hit = row_cache.get(key)
        if hit is None:
            hit = channel_scores(t, k, pred_state, lm_state, clm_state)
            row_cache[key] = hit
        return hit

    # Layered sweep merging paths that agree on (tokens, class-walker
    # position): predictor and LM states are functions of the token
    # prefix, and cached_row keys class behavior on clm_state.key(),
    # so merged paths share every future posterior. Merging collapses
    # the alignment multiplicity that makes a per-path walk blow up.
    def skey(clm_state):
        return clm_state.key() if clm_state is not None else None

    start = ((), None if not use_clm else skey(class_model.initial_state()))
    states = {
        start: (
            scorer.predictor.initial_state(),
            external_lm.initial_state() if use_lm else None,
            class_model.initial_state() if use_clm else None,
        )
    }

    def fold(pool, key, acc):
        prev = pool.get(key)
        pool[key] = acc if prev is None else _lse([prev, acc])

    frontier = {start: 0.0}
    beam_needed = 0
    for t in range(n_frames):
        layer = frontier
        frontier = {}
        width = 0
        for k in range(config.max_emit + 1):
            width += len(layer)
            grown = {}
            for key, acc in layer.items():
                tokens = key[0]
                pred_state, lm_state, clm_state = states[key]
                channels, posts, blank_post = cached_row(
                    t, k, pred_state, lm_state, clm_state
                )
                fold(frontier, key, acc + blank_post)
                if k == config.max_emit:
                    continue
                for (w, succ), post in zip(channels, posts):
                    if post == float("-inf"):
                        continue
                    child = (tokens + (w,), skey(succ))
                    if child not in states:
                        states[child] = (
                            scorer.predictor.advance(pred_state, w),
                            external_lm.advance(lm_state, w) if use_lm else None,
                            succ,
                        )
                    fold(grown, child, acc + post)
            layer = grown
        beam_needed = max(beam_needed, width, len(frontier))

    totals = {}
    for (tokens, _), acc in frontier.items():
        fold(totals, tokens, acc)
    if stats is not None:
        stats["beam_needed"] = beam_needed
        stats["n_states"] = len(states)
    return totals


def brute_force_edit_counts(ref, hyp):
    """Minimum-edit counts by exhaustive alignment enumeration.

    Returns the (subs, ins, dels) tuple of minimal total cost, breaking
    ties toward more substitutions (a substitution is preferred over an
    insertion-plus-deletion pair describing the same disagreement).
    Exponential; only for short sequences.
    """
    ref = list(ref)
    hyp = list(hyp)
    cache = {}

    def options(i, j):
        key = (i, j)
        hit = cache.get(key)
        if hit is not None:
            return hit
        if i == len(ref) and j == len(hyp):
            out = {(0, 0, 0)}
        else:
            out = set()
            if i < len(ref) and j < len(hyp):
                bump = 0 if ref[i] == hyp[j] else 1
                out |= {(s + bump, n, d) for s, n, d in options(i + 1, j + 1)}
            if i < len(ref):
                out |= {(s, n, d + 1) for s, n, d in options(i + 1, j)}
            if j < len(hyp):
                out |= {(s, n + 1, d) for s, n, d in options(i, j + 1)}
        cache[key] = out
        return out

    counts = options(0, 0)
    best = min(s + n + d for s, n, d in counts)
    return max(
        (c for c in counts if sum(c) == best), key=lambda c: c[0]
    )
