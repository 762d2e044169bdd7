from __future__ import annotations

LABELS = ("1", "2", "3", "4", "5")


class MappingError(ValueError):
    """Generated text is not one of the canonical labels."""

    def __init__(self, generated: str):
        super().__init__(f"cannot map {generated!r} to a rating")
        self.generated = generated


def map_label(generated: str) -> int:
    text = generated.strip()
    if text in LABELS:
        return int(text)
    raise MappingError(generated)


def label_text(rating: int) -> str:
    return LABELS[rating - 1]
