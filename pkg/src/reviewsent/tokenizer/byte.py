"""Lossless byte-level tokenization with the PAD/EOS/UNK = 0/1/2 offset."""

from __future__ import annotations

from typing import Iterable

from .sequence import TokenSequence

PAD_ID, EOS_ID, UNK_ID = 0, 1, 2
OFFSET = 3
VOCAB_SIZE = 256 + OFFSET
_SPECIAL_PIECES = {PAD_ID: "<pad>", EOS_ID: "</s>", UNK_ID: "<unk>"}


def byte_piece(i: int) -> str:
    return _SPECIAL_PIECES.get(i) or f"<0x{i - OFFSET:02X}>"


def byte_encode(text: str, add_eos: bool = False) -> TokenSequence:
    data = text.encode("utf-8")
    ids = [b + OFFSET for b in data]
    if add_eos:
        ids.append(EOS_ID)
    return TokenSequence(ids, [byte_piece(i) for i in ids], "byte", len(data))


def byte_decode(ids: Iterable[int], errors: str = "strict") -> str:
    """Inverse of :func:`byte_encode`; special ids are skipped."""
    out = bytearray()
    for i in ids:
        i = int(i)
        if i < 0 or i >= VOCAB_SIZE:
            raise ValueError(f"byte id {i} outside 0..{VOCAB_SIZE - 1}")
        if i >= OFFSET:
            out.append(i - OFFSET)
    return out.decode("utf-8", errors=errors)
