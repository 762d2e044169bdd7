"""WordPiece vocabulary training and greedy longest-match-first encoding."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .sequence import TokenSequence

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS = (PAD, UNK, CLS, SEP)
CONTINUATION = "##"
MAX_CHARS_PER_WORD = 100


@dataclass(frozen=True)
class WordPieceVocab:
    tokens: dict[str, int]
    continuation_prefix: str = CONTINUATION
    id_to_token: list[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        inv = [""] * len(self.tokens)
        for tok, i in self.tokens.items():
            if not 0 <= i < len(self.tokens) or inv[i]:
                raise ValueError(f"token ids must be dense 0..{len(self.tokens) - 1}; bad id {i} for {tok!r}")
            inv[i] = tok
        for i, sp in enumerate(SPECIALS):
            if self.tokens.get(sp) != i:
                raise ValueError(f"special {sp} must have id {i}")
        object.__setattr__(self, "id_to_token", inv)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "WordPieceVocab":
        return cls({t: i for i, t in enumerate(tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self.tokens

    @property
    def pad_id(self) -> int:
        return self.tokens[PAD]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.id_to_token), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "WordPieceVocab":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls.from_tokens(lines)


def _segment(word: str, vocab: WordPieceVocab) -> list[str] | None:
    pieces, start = [], 0
    prefix = vocab.continuation_prefix
    while start < len(word):
        end = len(word)
        match = None
        while end > start:
            cand = word[start:end]
            if start > 0:
                cand = prefix + cand
            if cand in vocab.tokens:
                match = cand
                break
            end -= 1
        if match is None:
            return None
        pieces.append(match)
        start = end
    return pieces


def wordpiece_encode(text: str, vocab: WordPieceVocab, add_specials: bool = True) -> TokenSequence:
    pieces: list[str] = [CLS] if add_specials else []
    for word in text.split():
        seg = _segment(word, vocab) if len(word) <= MAX_CHARS_PER_WORD else None
        pieces.extend(seg if seg is not None else [UNK])
    if add_specials:
        pieces.append(SEP)
    return TokenSequence([vocab.tokens[p] for p in pieces], pieces, "wordpiece", len(text))


def wordpiece_decode_words(seq: TokenSequence, prefix: str = CONTINUATION) -> list[str]:
    """Glue continuation pieces back onto their words; specials are dropped."""
    words: list[str] = []
    for p in seq.pieces:
        if p in (PAD, CLS, SEP):
            continue
        if p.startswith(prefix) and words:
            words[-1] += p[len(prefix):]
        else:
            words.append(p)
    return words


def _split_word(word: str) -> tuple[str, ...]:
    return (word[0],) + tuple(CONTINUATION + ch for ch in word[1:])


def _merge_name(left: str, right: str) -> str:
    return left + right[len(CONTINUATION):] if right.startswith(CONTINUATION) else left + right


def pair_scores(splits: dict[tuple[str, ...], int]) -> dict[tuple[str, str], Fraction]:
    """score(a, b) = count(ab) / (count(a) * count(b)), counts weighted by word frequency."""
    unit: Counter = Counter()
    pairs: Counter = Counter()
    for symbols, freq in splits.items():
        for s in symbols:
            unit[s] += freq
        for a, b in zip(symbols, symbols[1:]):
            pairs[(a, b)] += freq
    return {p: Fraction(c, unit[p[0]] * unit[p[1]]) for p, c in pairs.items()}


def _apply_merge(symbols: tuple[str, ...], pair: tuple[str, str], merged: str) -> tuple[str, ...]:
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def alphabet(corpus: Iterable[str]) -> list[str]:
    chars = set()
    for text in corpus:
        for word in text.split():
            chars.update(_split_word(word))
    return sorted(chars)


def wordpiece_train(corpus: Sequence[str], vocab_size: int) -> WordPieceVocab:
    words: Counter = Counter()
    for text in corpus:
        words.update(text.split())
    base = alphabet(words)
    minimum = len(SPECIALS) + len(base)
    if vocab_size < minimum:
        raise ValueError(f"vocab_size {vocab_size} below minimum {minimum} (alphabet {len(base)} + 4 specials)")

    tokens = list(SPECIALS) + base
    known = set(tokens)
    splits: dict[tuple[str, ...], int] = Counter()
    for w, c in words.items():
        splits[_split_word(w)] += c

    while len(tokens) < vocab_size:
        scores = pair_scores(splits)
        if not scores:
            break
        best = min(scores, key=lambda p: (-scores[p], p))
        merged = _merge_name(*best)
        new_splits: dict[tuple[str, ...], int] = Counter()
        for sym, c in splits.items():
            new_splits[_apply_merge(sym, best, merged)] += c
        splits = new_splits
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return WordPieceVocab.from_tokens(tokens)
