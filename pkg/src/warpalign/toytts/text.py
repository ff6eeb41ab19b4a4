"""Symbol substitution, silence padding and vocabulary lookup."""

from __future__ import annotations

import numpy as np

from ..aligner import TokenSequence
from ..errors import VocabularyError

# Rare phonemizer output symbols and their replacements ("" deletes the symbol).
SUBSTITUTIONS = {
    "x": "k",
    "ç": "k",  # c-cedilla
    "ɬ": "l",  # belted l
    "ʲ": "j",  # superscript j
    ";": ".",
    "—": ".",  # em dash
    "¡": "",
    "r": "",
    "~": "",
    '"': "",
}

SILENCE = "_"
TOY_SYMBOLS = ("a", "e", "i", "o", "k", "l", "j", ".")


def apply_substitutions(symbols, table=SUBSTITUTIONS):
    """Replace or drop symbols according to ``table``; returns a list."""
    out = []
    for s in symbols:
        s = table.get(s, s)
        if s:
            out.append(s)
    return out


class Vocabulary:
    """Silence at id 0 followed by the task symbols in order."""

    def __init__(self, symbols=TOY_SYMBOLS, silence=SILENCE):
        self.silence = silence
        self.symbols = (silence, *symbols)
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        self._ids = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._ids

    @property
    def silence_id(self):
        return 0

    def id_of(self, symbol):
        try:
            return self._ids[symbol]
        except KeyError:
            raise VocabularyError(f"unknown symbol {symbol!r}") from None

    def decode(self, ids):
        return [self.symbols[i] for i in ids]


def preprocess_tokens(symbols, vocab=None, max_length=None):
    """Substitute, silence-pad and id-encode a symbol stream.

    Args:
        symbols: string or iterable of symbols.
        vocab: :class:`Vocabulary`; the toy vocabulary by default.
        max_length: pad to this many tokens (default: no extra padding).

    Returns:
        :class:`~warpalign.aligner.TokenSequence` whose first and last valid
        entries are the silence token.
    """
    vocab = vocab or Vocabulary()
    cleaned = apply_substitutions(symbols)
    ids = [vocab.silence_id] + [vocab.id_of(s) for s in cleaned] + [vocab.silence_id]
    n = len(ids)
    max_length = n if max_length is None else max_length
    if n > max_length:
        raise VocabularyError(f"sequence of {n} tokens exceeds max_length {max_length}")
    padded = np.full(max_length, vocab.silence_id, dtype=np.int64)
    padded[:n] = ids
    return TokenSequence(ids=padded, true_length=n, vocab_size=len(vocab))
