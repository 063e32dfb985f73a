"""ARPA text I/O for backoff n-gram models.

Disk values are log10 per the format; everything in memory is natural
log. Zero probability is written as -99; on load, any value <= -99 is
taken as the zero sentinel and becomes -inf, so save->load round-trips
are exact. Sentence sentinels appear in files under their conventional
spellings ``<s>`` and ``</s>``.
"""

from __future__ import annotations

import math

from .core import NEG_INF, Vocabulary
from .ngram import NgramModel

SOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
_LN10 = math.log(10.0)
_ZERO_LOG10 = -99.0


def _to_log10(ln_value: float) -> str:
    if ln_value == NEG_INF:
        return "-99"
    return repr(ln_value / _LN10)


def save_arpa(model: NgramModel, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\\data\\\n")
        for k in range(1, model.order + 1):
            f.write(f"ngram {k}={model.level_size(k)}\n")
        for k in range(1, model.order + 1):
            f.write(f"\n\\{k}-grams:\n")
            for gram, prob, bow in model.iter_ngrams(k):
                toks = " ".join(_spell(model, t) for t in gram)
                line = f"{_to_log10(prob)}\t{toks}"
                if bow is not None:
                    line += f"\t{_to_log10(bow)}"
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def _spell(model: NgramModel, token_id: int) -> str:
    if token_id == model.bos_id:
        return SOS_TOKEN
    if token_id == model.eos_id:
        return EOS_TOKEN
    return model.vocab.token_of(token_id)


class ArpaParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


def load_arpa(path, vocab: Vocabulary) -> NgramModel:
    """Parse an ARPA file into a model over ``vocab`` plus sentinels.

    Tokens must resolve through the vocabulary (or be the two sentinel
    spellings); anything else is a fault, as are header/section
    mismatches. Each k-gram's (k-1)-gram context must be present.
    """
    bos, eos = len(vocab), len(vocab) + 1

    def resolve(tok: str, lineno: int) -> int:
        if tok == SOS_TOKEN:
            return bos
        if tok == EOS_TOKEN:
            return eos
        try:
            return vocab.id_of(tok)
        except ValueError:
            raise ArpaParseError(lineno, f"token not in vocabulary: {tok!r}") from None

    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()

    it = iter(enumerate(lines, start=1))

    def next_content():
        for lineno, text in it:
            if text.strip():
                return lineno, text.strip()
        return None, None

    lineno, text = next_content()
    if text != "\\data\\":
        raise ArpaParseError(lineno or 0, "expected \\data\\ header")

    counts: dict[int, int] = {}
    while True:
        lineno, text = next_content()
        if text is None:
            raise ArpaParseError(len(lines), "unexpected end of file in header")
        if text.startswith("\\") and text.endswith("-grams:"):
            break
        if not text.startswith("ngram "):
            raise ArpaParseError(lineno, f"unexpected header line: {text!r}")
        body = text[len("ngram "):]
        k_str, _, n_str = body.partition("=")
        try:
            k, n = int(k_str), int(n_str)
        except ValueError:
            raise ArpaParseError(lineno, f"bad ngram count line: {text!r}") from None
        counts[k] = n
    order = len(counts)
    if order == 0 or sorted(counts) != list(range(1, order + 1)):
        raise ArpaParseError(lineno, f"non-contiguous ngram orders: {sorted(counts)}")

    def parse_value(raw: str, lineno: int) -> float:
        try:
            v = float(raw)
        except ValueError:
            raise ArpaParseError(lineno, f"bad numeric field: {raw!r}") from None
        if math.isnan(v):
            raise ArpaParseError(lineno, "NaN value")
        return NEG_INF if v <= _ZERO_LOG10 else v * _LN10

    tables = [dict() for _ in range(order)]
    expected_k = 1
    while True:
        if text is None:
            raise ArpaParseError(len(lines), "missing \\end\\ marker")
        if text == "\\end\\":
            break
        if not (text.startswith("\\") and text.endswith("-grams:")):
            raise ArpaParseError(lineno, f"expected a section marker, got {text!r}")
        try:
            k = int(text[1 : -len("-grams:")])
        except ValueError:
            raise ArpaParseError(lineno, f"bad section marker: {text!r}") from None
        if k != expected_k:
            raise ArpaParseError(
                lineno, f"section {k} out of order, expected {expected_k}"
            )
        if k > order:
            raise ArpaParseError(lineno, f"section {k} beyond header order {order}")
        table = tables[k - 1]
        for _ in range(counts[k]):
            lineno, text = next_content()
            if text is None or text.startswith("\\"):
                raise ArpaParseError(
                    lineno or len(lines),
                    f"section {k} has fewer entries than declared ({counts[k]})",
                )
            fields = text.split()
            if len(fields) not in (k + 1, k + 2):
                raise ArpaParseError(lineno, f"expected {k}-gram entry, got {text!r}")
            prob = parse_value(fields[0], lineno)
            gram = tuple(resolve(t, lineno) for t in fields[1 : k + 1])
            bow = parse_value(fields[k + 1], lineno) if len(fields) == k + 2 else None
            if k == order and bow is not None:
                raise ArpaParseError(lineno, "backoff weight at maximum order")
            if gram in table:
                raise ArpaParseError(lineno, f"duplicate {k}-gram: {text!r}")
            table[gram] = (prob, bow)
        lineno, text = next_content()
        expected_k += 1
    if expected_k != order + 1:
        raise ArpaParseError(lineno or len(lines), "missing n-gram sections")

    try:
        return NgramModel(vocab, order, tables)
    except ValueError as err:
        raise ValueError(f"inconsistent ARPA model: {err}") from None
