"""Unigram-LM segmentation: whitespace escaping plus Viterbi decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .sequence import TokenSequence

META = "▁"
MAX_PIECE_LEN = 16


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class UnigramVocab:
    pieces: dict[str, float]
    meta_symbol: str = META
    max_piece_len: int = MAX_PIECE_LEN
    ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for piece, lp in self.pieces.items():
            if not piece:
                raise ValueError("empty piece")
            if not math.isfinite(lp) or lp > 0:
                raise ValueError(f"piece {piece!r}: log-prob {lp} must be finite and <= 0")
            for ch in piece:
                if ch not in self.pieces:
                    raise ValueError(f"character {ch!r} of piece {piece!r} is not itself a piece")
        object.__setattr__(self, "ids", {p: i for i, p in enumerate(self.pieces)})

    def __len__(self) -> int:
        return len(self.pieces)

    def save(self, path: str | Path) -> None:
        lines = [f"{p}\t{lp!r}\n" for p, lp in self.pieces.items()]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, meta_symbol: str = META) -> "UnigramVocab":
        pieces = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").split("\n"), start=1):
            if not line:
                continue
            piece, sep, lp = line.rpartition("\t")
            if not sep:
                raise ValueError(f"{path}:{lineno}: expected piece<TAB>logprob")
            pieces[piece] = float(lp)
        return cls(pieces, meta_symbol)


def escape(text: str, meta: str = META) -> str:
    if meta in text:
        raise CoverageError(f"input already contains the meta symbol {meta!r}")
    return text.replace(" ", meta)


def unescape(text: str, meta: str = META) -> str:
    return text.replace(meta, " ")


def unigram_encode(text: str, vocab: UnigramVocab) -> TokenSequence:
    """Maximum log-probability segmentation of the escaped text."""
    s = escape(text, vocab.meta_symbol)
    for ch in s:
        if ch not in vocab.pieces:
            raise CoverageError(f"character {ch!r} is not covered by the vocabulary")
    n = len(s)
    best = [-math.inf] * (n + 1)
    back = [0] * (n + 1)
    best[0] = 0.0
    for end in range(1, n + 1):
        for start in range(max(0, end - vocab.max_piece_len), end):
            lp = vocab.pieces.get(s[start:end])
            if lp is None or best[start] == -math.inf:
                continue
            cand = best[start] + lp
            # strict '>' keeps the earliest start on ties, i.e. the longest final piece
            if cand > best[end]:
                best[end] = cand
                back[end] = start
    pieces = []
    end = n
    while end > 0:
        start = back[end]
        pieces.append(s[start:end])
        end = start
    pieces.reverse()
    return TokenSequence([vocab.ids[p] for p in pieces], pieces, "unigram", len(text), best[n])


def unigram_decode(pieces, meta: str = META) -> str:
    return unescape("".join(pieces), meta)
