"""Hierarchical entity label space: fine labels, coarse types, and level matching.

A fine label has up to three dot-separated components (``type.subtype.subsubtype``),
lower components optional.  The coarse projection keeps only the type component.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

#: Coarse inventory used when none is configured (9 entries).
DEFAULT_COARSE_TYPES: tuple[str, ...] = (
    "crm", "fac", "gpe", "law", "loc", "org", "per", "veh", "wea",
)


class MalformedLabelError(ValueError):
    """Raised for label strings that do not parse as 1-3 dot-joined components."""


class TaxonomyError(ValueError):
    """Raised for inventories that violate taxonomy invariants."""


class Level(enum.Enum):
    """Hierarchy depth at which two labels are compared or truncated."""

    T = "T"
    ST = "ST"
    SST = "SST"


class LevelMatch(NamedTuple):
    t: bool
    st: bool
    sst: bool


@dataclass(frozen=True)
class FineLabel:
    """A hierarchical label; ``subtype``/``subsubtype`` may be absent (back-off)."""

    type: str
    subtype: str | None = None
    subsubtype: str | None = None

    def __post_init__(self) -> None:
        if self.subsubtype is not None and self.subtype is None:
            raise MalformedLabelError(
                f"label {self!r} has a subsubtype without a subtype"
            )
        for part in self.components():
            if not part or "." in part or part != part.lower():
                raise MalformedLabelError(f"bad label component {part!r}")

    def components(self) -> tuple[str, ...]:
        parts = [self.type]
        if self.subtype is not None:
            parts.append(self.subtype)
        if self.subsubtype is not None:
            parts.append(self.subsubtype)
        return tuple(parts)

    def render(self) -> str:
        return ".".join(self.components())

    def __str__(self) -> str:  # pragma: no cover - convenience
        return self.render()


def parse_label(text: str) -> FineLabel:
    """Parse ``type[.subtype[.subsubtype]]``; input is case-normalized to lowercase."""
    if not text or not text.strip():
        raise MalformedLabelError("empty label string")
    parts = text.strip().lower().split(".")
    if len(parts) > 3:
        raise MalformedLabelError(f"label {text!r} has more than 3 components")
    if any(not p for p in parts):
        raise MalformedLabelError(f"label {text!r} has an empty component")
    if any(any(ch.isspace() for ch in p) for p in parts):
        raise MalformedLabelError(f"label {text!r} contains whitespace")
    return FineLabel(*parts)


def normalize_coarse(name: str) -> str:
    """Canonical (lowercase) form of a coarse type name."""
    name = name.strip().lower()
    if not name or "." in name or any(ch.isspace() for ch in name):
        raise MalformedLabelError(f"bad coarse type name {name!r}")
    return name


def coarse_of(label: FineLabel) -> str:
    """Main-type projection: the type component of the label."""
    return label.type


def truncate(label: FineLabel, level: Level) -> FineLabel:
    """Drop components below ``level``; ``Level.SST`` is the identity."""
    if level is Level.T:
        return FineLabel(label.type)
    if level is Level.ST:
        return FineLabel(label.type, label.subtype)
    return label


def match_level(gold: FineLabel, pred: FineLabel) -> LevelMatch:
    """Per-level agreement between two labels.

    A level matches iff both labels truncated to that level are identical, so a
    component missing on one side only breaks the match at that level and below.
    """
    return LevelMatch(
        t=truncate(gold, Level.T) == truncate(pred, Level.T),
        st=truncate(gold, Level.ST) == truncate(pred, Level.ST),
        sst=gold == pred,
    )


class Taxonomy:
    """Ordered, immutable inventory of fine labels over a closed coarse type set.

    Label order is stable and defines the index space of probability vectors.
    """

    def __init__(
        self,
        fine_labels: Iterable[FineLabel],
        coarse_types: Iterable[str] | None = None,
    ) -> None:
        labels: list[FineLabel] = []
        seen: set[FineLabel] = set()
        for lab in fine_labels:
            if lab not in seen:
                seen.add(lab)
                labels.append(lab)
        if not labels:
            raise TaxonomyError("taxonomy needs at least one fine label")

        if coarse_types is None:
            coarse: list[str] = []
            for lab in labels:
                if lab.type not in coarse:
                    coarse.append(lab.type)
        else:
            coarse = [normalize_coarse(c) for c in coarse_types]
            if len(set(coarse)) != len(coarse):
                raise TaxonomyError("duplicate coarse type in inventory")
        coarse_set = set(coarse)
        for lab in labels:
            if lab.type not in coarse_set:
                raise TaxonomyError(
                    f"label {lab.render()!r} has type outside the coarse inventory"
                )

        self._labels: tuple[FineLabel, ...] = tuple(labels)
        self._coarse: tuple[str, ...] = tuple(coarse)
        self._index: dict[FineLabel, int] = {l: i for i, l in enumerate(labels)}
        self._by_coarse: dict[str, tuple[int, ...]] = {
            c: tuple(i for i, l in enumerate(labels) if l.type == c) for c in coarse
        }

    @property
    def fine_labels(self) -> tuple[FineLabel, ...]:
        return self._labels

    @property
    def coarse_types(self) -> tuple[str, ...]:
        return self._coarse

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: FineLabel) -> bool:
        return label in self._index

    def index_of(self, label: FineLabel) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise TaxonomyError(f"label {label.render()!r} not in taxonomy") from None

    def label_at(self, index: int) -> FineLabel:
        return self._labels[index]

    def indices_for_coarse(self, coarse: str) -> tuple[int, ...]:
        coarse = normalize_coarse(coarse)
        if coarse not in self._by_coarse:
            raise TaxonomyError(f"coarse type {coarse!r} not in inventory")
        return self._by_coarse[coarse]

    def fingerprint(self) -> str:
        payload = json.dumps(
            {
                "labels": [l.render() for l in self._labels],
                "coarse": list(self._coarse),
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_meta(self) -> dict:
        return {
            "labels": [l.render() for l in self._labels],
            "coarse": list(self._coarse),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "Taxonomy":
        return cls([parse_label(s) for s in meta["labels"]], meta["coarse"])


def load_taxonomy(
    source: str | Path | Iterable[str],
    coarse_types: Iterable[str] | None = None,
) -> Taxonomy:
    """Build a Taxonomy from a label-inventory document.

    One label per line; ``#`` comments and blank lines are ignored.  ``source``
    may be a path or an iterable of lines.  When ``coarse_types`` is not given
    the coarse inventory is inferred from the labels' type components.
    """
    if isinstance(source, (str, Path)):
        lines: Iterable[str] = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = source
    labels = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        labels.append(parse_label(line))
    return Taxonomy(labels, coarse_types)
