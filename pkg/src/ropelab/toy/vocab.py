"""Token inventory for the synthetic tasks.

Layout (contiguous id ranges): a pad token, two question-type tokens, the
fixed word list of the frozen time-prompt template, marker tokens, payload
tokens, and one token per integer second 0..max_number so a timestamp is a
single-token answer.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

# Every distinct word of the frozen prompt template, in first-appearance order.
PROMPT_WORDS = (
    "the", "video", "has", "a", "total", "duration", "of", "seconds", "from",
    "which", "frames", "were", "uniformly", "sampled", "corresponding",
    "temporal", "positions", "these", "are", "please", "answer", "following",
    "question", "based", "on", "this",
)

_NUMBER_RE = re.compile(r"^(\d+)s?$")
_EDGE_PUNCT = ",.:;"


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class ToyVocab:
    payload_size: int
    marker_size: int
    max_number: int

    def __post_init__(self) -> None:
        if self.payload_size < 2:
            raise VocabError(f"payload_size must be >= 2, got {self.payload_size}")
        if self.marker_size < 1:
            raise VocabError(f"marker_size must be >= 1, got {self.marker_size}")
        if self.max_number < 0:
            raise VocabError(f"max_number must be >= 0, got {self.max_number}")

    # -- id ranges ----------------------------------------------------------
    pad = 0
    q_needle = 1
    q_when = 2
    _word_base = 3

    @property
    def _marker_base(self) -> int:
        return self._word_base + len(PROMPT_WORDS)

    @property
    def _payload_base(self) -> int:
        return self._marker_base + self.marker_size

    @property
    def _number_base(self) -> int:
        return self._payload_base + self.payload_size

    @property
    def size(self) -> int:
        return self._number_base + self.max_number + 1

    # -- encoders -----------------------------------------------------------
    def word(self, text: str) -> int:
        try:
            return self._word_base + PROMPT_WORDS.index(text)
        except ValueError:
            raise VocabError(f"unknown word {text!r}") from None

    def marker(self, index: int) -> int:
        if not 0 <= index < self.marker_size:
            raise VocabError(f"marker index {index} out of range")
        return self._marker_base + index

    def payload(self, index: int) -> int:
        if not 0 <= index < self.payload_size:
            raise VocabError(f"payload index {index} out of range")
        return self._payload_base + index

    def number(self, value: int) -> int:
        if not 0 <= value <= self.max_number:
            raise VocabError(f"number {value} out of range 0..{self.max_number}")
        return self._number_base + value

    def encode_text(self, text: str) -> list[int]:
        """Tokenize prompt text: one token per word, one per integer literal.

        Timestamps render as e.g. "630s," and collapse to the bare number
        token, so consecutive timestamps sit at consecutive positions.
        """
        tokens = []
        for raw in text.split():
            word = raw.strip(_EDGE_PUNCT)
            if not word:
                continue
            match = _NUMBER_RE.match(word)
            if match:
                tokens.append(self.number(int(match.group(1))))
            else:
                tokens.append(self.word(word.lower()))
        return tokens

    # -- decoders (debugging / readable asserts) -----------------------------
    def describe(self, token: int) -> str:
        if token == self.pad:
            return "<pad>"
        if token == self.q_needle:
            return "<q:needle>"
        if token == self.q_when:
            return "<q:when>"
        if self._word_base <= token < self._marker_base:
            return PROMPT_WORDS[token - self._word_base]
        if self._marker_base <= token < self._payload_base:
            return f"<mrk:{token - self._marker_base}>"
        if self._payload_base <= token < self._number_base:
            return f"<pay:{token - self._payload_base}>"
        if self._number_base <= token < self.size:
            return f"<{token - self._number_base}s>"
        raise VocabError(f"token {token} outside vocabulary of size {self.size}")

    def number_value(self, token: int) -> int:
        if not self._number_base <= token < self.size:
            raise VocabError(f"token {token} is not a number token")
        return token - self._number_base
