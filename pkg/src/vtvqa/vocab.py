"""Word-level token vocabulary with stable reserved ids."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .entities import VideoSample

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SEP_ID = 4

RESERVED = ["[pad]", "[bos]", "[eos]", "[unk]", "[sep]"]

_TOKEN_RE = re.compile(r"\[[a-z]+\]|[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation splits, bracket markers survive."""
    return _TOKEN_RE.findall(text.lower())


class TokenVocab:
    """Bidirectional token/id map. Ids 0..4 are reserved and stable."""

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: list[str] = list(RESERVED)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            if tok not in self.token_to_id:
                self.token_to_id[tok] = len(self.id_to_token)
                self.id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order (for serialization)."""
        return self.id_to_token[len(RESERVED):]

    @classmethod
    def from_samples(cls, samples: Iterable[VideoSample]) -> "TokenVocab":
        seen: set[str] = set()
        for sample in samples:
            seen.update(tokenize(sample.question))
            for answer in sample.answers:
                seen.update(tokenize(answer))
            for ent in sample.entities:
                seen.update(tokenize(ent.text))
        seen -= set(RESERVED)
        return cls(sorted(seen))

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(tok, UNK_ID) for tok in tokenize(text)]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]
