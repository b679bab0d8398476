"""IOB2 tag sequences: span encoding/decoding and token-to-subword projection.

Tag strings are ``O``, ``B-<label>``, ``I-<label>`` at token level; the extra
``X`` tag marks non-first subword pieces and never survives projection back to
token level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

OUTSIDE = "O"
SUBWORD = "X"

Span = tuple[int, int, str]  # start, end (inclusive), label string


class InvalidSpanError(ValueError):
    """A span is out of bounds, inverted, or overlaps another span."""


class MalformedTagError(ValueError):
    """A tag string is not ``O``, ``X``, ``B-<label>`` or ``I-<label>``."""


class AlignmentError(ValueError):
    """A subword alignment is inconsistent with the sequence it should cover."""


def split_tag(tag: str) -> tuple[str, str | None]:
    """Split a tag into its (prefix, label) parts, validating the shape."""
    if tag == OUTSIDE or tag == SUBWORD:
        return tag, None
    if len(tag) > 2 and tag[1] == "-" and tag[0] in ("B", "I"):
        return tag[0], tag[2:]
    raise MalformedTagError(f"unknown tag string {tag!r}")


def spans_to_iob2(sentence_len: int, mentions: Sequence[Span]) -> list[str]:
    """Encode non-overlapping spans as an IOB2 tag sequence of ``sentence_len`` tags.

    Adjacent same-type spans stay distinct: each span starts with its own ``B-``.
    """
    tags = [OUTSIDE] * sentence_len
    claimed = [False] * sentence_len
    for start, end, label in mentions:
        if not (0 <= start <= end < sentence_len):
            raise InvalidSpanError(
                f"span ({start}, {end}) out of bounds for length {sentence_len}"
            )
        if any(claimed[start : end + 1]):
            raise InvalidSpanError(f"span ({start}, {end}, {label}) overlaps another")
        for i in range(start, end + 1):
            claimed[i] = True
        tags[start] = f"B-{label}"
        for i in range(start + 1, end + 1):
            tags[i] = f"I-{label}"
    return tags


def iob2_to_spans(tags: Sequence[str]) -> list[Span]:
    """Decode a tag sequence into maximal spans, repairing IOB2 violations.

    Repair policy: a dangling ``I-x`` (after ``O``, start of sequence, ``X``, or
    a different type) opens a new span as if it were ``B-x``.  ``X`` closes any
    open span and yields no span of its own.
    """
    spans: list[Span] = []
    open_start: int | None = None
    open_label: str | None = None

    def close(end: int) -> None:
        nonlocal open_start, open_label
        if open_start is not None:
            spans.append((open_start, end, open_label))  # type: ignore[arg-type]
            open_start = None
            open_label = None

    for i, tag in enumerate(tags):
        prefix, label = split_tag(tag)
        if prefix == "B":
            close(i - 1)
            open_start, open_label = i, label
        elif prefix == "I":
            if open_start is None or label != open_label:
                close(i - 1)
                open_start, open_label = i, label
        else:  # O or X
            close(i - 1)
    close(len(tags) - 1)
    return spans


@dataclass(frozen=True)
class SubwordAlignment:
    """Maps subword pieces back to the tokens that produced them.

    ``piece_to_token`` is monotone non-decreasing and covers every token with at
    least one piece; ``first_piece_mask`` is true exactly once per token.
    """

    pieces: tuple[str, ...]
    piece_to_token: tuple[int, ...]
    first_piece_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        n = len(self.pieces)
        if len(self.piece_to_token) != n or len(self.first_piece_mask) != n:
            raise AlignmentError("alignment field lengths differ")
        if n == 0:
            raise AlignmentError("alignment covers no pieces")
        prev = -1
        for idx, (tok, first) in enumerate(
            zip(self.piece_to_token, self.first_piece_mask)
        ):
            if tok < prev or tok > prev + 1:
                raise AlignmentError(
                    f"piece_to_token not contiguous monotone at piece {idx}"
                )
            if first != (tok == prev + 1):
                raise AlignmentError(f"first_piece_mask wrong at piece {idx}")
            prev = tok

    @property
    def token_count(self) -> int:
        return self.piece_to_token[-1] + 1

    def first_piece_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.first_piece_mask) if f]


def align_to_subwords(tags: Sequence[str], alignment: SubwordAlignment) -> list[str]:
    """Project token tags onto pieces: first piece keeps the tag, the rest get ``X``."""
    if alignment.token_count != len(tags):
        raise AlignmentError(
            f"alignment covers {alignment.token_count} tokens, got {len(tags)} tags"
        )
    for tag in tags:
        split_tag(tag)
    return [
        tags[tok] if first else SUBWORD
        for tok, first in zip(alignment.piece_to_token, alignment.first_piece_mask)
    ]


def project_from_subwords(
    piece_tags: Sequence[str], alignment: SubwordAlignment
) -> list[str]:
    """Recover token tags from piece tags: each token takes its first piece's tag.

    An ``X`` predicted on a first piece maps to ``O``; the output never contains
    ``X``.
    """
    if len(piece_tags) != len(alignment.pieces):
        raise AlignmentError(
            f"{len(piece_tags)} piece tags for {len(alignment.pieces)} pieces"
        )
    out: list[str] = []
    for tag, first in zip(piece_tags, alignment.first_piece_mask):
        if not first:
            continue
        prefix, _ = split_tag(tag)
        out.append(OUTSIDE if prefix == SUBWORD else tag)
    return out
