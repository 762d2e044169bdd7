from __future__ import annotations

from dataclasses import dataclass

SCHEMES = ("wordpiece", "byte", "unigram")


@dataclass(frozen=True)
class TokenSequence:
    """Encoded text: parallel ids/pieces plus the source length ``N``.

    ``N`` counts characters for wordpiece/unigram and bytes for the byte
    scheme.  ``score`` is only set by the unigram encoder (total log-prob).
    """

    ids: tuple[int, ...]
    pieces: tuple[str, ...]
    scheme: str
    N: int
    score: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "pieces", tuple(self.pieces))
        if len(self.ids) != len(self.pieces):
            raise ValueError(f"{len(self.ids)} ids but {len(self.pieces)} pieces")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def __len__(self) -> int:
        return len(self.ids)

    def truncated(self, max_len: int, keep_last: bool = False) -> "TokenSequence":
        """Cut to ``max_len`` tokens; with ``keep_last`` the final token (SEP/EOS) survives."""
        if len(self.ids) <= max_len:
            return self
        if keep_last and max_len >= 2:
            ids = self.ids[:max_len - 1] + self.ids[-1:]
            pieces = self.pieces[:max_len - 1] + self.pieces[-1:]
        else:
            ids, pieces = self.ids[:max_len], self.pieces[:max_len]
        return TokenSequence(ids, pieces, self.scheme, self.N, self.score)

    def to_json(self) -> dict:
        out = {"ids": list(self.ids), "pieces": list(self.pieces), "scheme": self.scheme, "N": self.N}
        if self.score is not None:
            out["score"] = self.score
        return out
