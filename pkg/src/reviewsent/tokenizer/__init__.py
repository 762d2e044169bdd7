from .byte import EOS_ID, PAD_ID, UNK_ID, byte_decode, byte_encode
from .sequence import TokenSequence
from .unigram import CoverageError, UnigramVocab, unigram_decode, unigram_encode
from .wordpiece import WordPieceVocab, wordpiece_decode_words, wordpiece_encode, wordpiece_train

__all__ = [
    "EOS_ID",
    "PAD_ID",
    "UNK_ID",
    "CoverageError",
    "TokenSequence",
    "UnigramVocab",
    "WordPieceVocab",
    "byte_decode",
    "byte_encode",
    "unigram_decode",
    "unigram_encode",
    "wordpiece_decode_words",
    "wordpiece_encode",
    "wordpiece_train",
]
