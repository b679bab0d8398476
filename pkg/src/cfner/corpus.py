"""Annotated corpora: documents, mentions, file formats, and silver-label merging.

Two on-disk shapes are supported.  Column files (``token<TAB>tag``) carry full
annotation: every unlabeled token is a genuine ``O``.  Standoff files pair an
untagged text corpus with a TSV of mention records and make no claim about
unlisted spans (partial annotation), which only the per-mention classifier can
consume.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import AbstractSet, Iterable, Sequence, TextIO

from . import codec
from .taxonomy import FineLabel, coarse_of, normalize_coarse, parse_label

DOCSTART = "-DOCSTART-"
PREDICTION_HEADER = ("doc_id", "sent_idx", "start", "end", "text", "label", "confidence")


class CorpusFormatError(ValueError):
    """Raised for malformed corpus files or records."""


class AnnotationError(ValueError):
    """Raised when mentions violate document invariants (bounds, overlap)."""


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int

    def __post_init__(self) -> None:
        if not self.text:
            raise CorpusFormatError("empty token text")
        if not self.char_start < self.char_end:
            raise CorpusFormatError(
                f"token {self.text!r} has bad offsets "
                f"[{self.char_start}, {self.char_end})"
            )


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...]
    doc_id: str
    index: int

    def __post_init__(self) -> None:
        if not self.tokens:
            raise CorpusFormatError(f"empty sentence {self.index} in doc {self.doc_id}")

    def __len__(self) -> int:
        return len(self.tokens)

    def texts(self) -> list[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class Mention:
    """A token span with optional coarse/fine labels and prediction metadata.

    ``coarse`` is the label assigned by (or for) the boundary stage and may
    legitimately differ from ``coarse_of(fine)`` on remapped entities.
    """

    sent_index: int
    start: int
    end: int
    coarse: str | None = None
    fine: FineLabel | None = None
    confidence: float | None = None
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (0 <= self.start <= self.end):
            raise AnnotationError(f"bad mention span ({self.start}, {self.end})")
        if self.coarse is not None:
            object.__setattr__(self, "coarse", normalize_coarse(self.coarse))
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise AnnotationError(f"confidence {self.confidence} outside [0, 1]")

    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def overlaps(self, other: "Mention") -> bool:
        return (
            self.sent_index == other.sent_index
            and self.start <= other.end
            and other.start <= self.end
        )


@dataclass(frozen=True)
class Document:
    id: str
    sentences: tuple[Sentence, ...]
    mentions: tuple[Mention, ...] = ()
    annotation_mode: str = "full"  # "full" | "partial"

    def __post_init__(self) -> None:
        if self.annotation_mode not in ("full", "partial"):
            raise AnnotationError(f"bad annotation_mode {self.annotation_mode!r}")
        by_sent: dict[int, list[Mention]] = {}
        for m in self.mentions:
            if not 0 <= m.sent_index < len(self.sentences):
                raise AnnotationError(
                    f"mention sentence {m.sent_index} out of range in doc {self.id}"
                )
            if m.end >= len(self.sentences[m.sent_index]):
                raise AnnotationError(
                    f"mention ({m.start}, {m.end}) out of bounds in doc {self.id} "
                    f"sentence {m.sent_index}"
                )
            by_sent.setdefault(m.sent_index, []).append(m)
        for sent_index, group in by_sent.items():
            group.sort(key=lambda m: m.start)
            for a, b in zip(group, group[1:]):
                if a.overlaps(b):
                    raise AnnotationError(
                        f"overlapping mentions in doc {self.id} "
                        f"sentence {sent_index}: {a.span()} vs {b.span()}"
                    )
        ordered = tuple(sorted(self.mentions, key=lambda m: (m.sent_index, m.start)))
        object.__setattr__(self, "mentions", ordered)

    def mentions_in(self, sent_index: int) -> list[Mention]:
        return [m for m in self.mentions if m.sent_index == sent_index]

    def surface(self, mention: Mention) -> str:
        sent = self.sentences[mention.sent_index]
        return " ".join(t.text for t in sent.tokens[mention.start : mention.end + 1])

    def token_count(self) -> int:
        return sum(len(s) for s in self.sentences)


def make_sentence(words: Sequence[str], doc_id: str, index: int) -> Sentence:
    """Build a Sentence from bare words, synthesizing space-joined char offsets."""
    tokens = []
    pos = 0
    for w in words:
        tokens.append(Token(w, pos, pos + len(w)))
        pos += len(w) + 1
    return Sentence(tuple(tokens), doc_id, index)


# ---------------------------------------------------------------------------
# column format


def _iter_lines(source: str | Path | TextIO) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def _parse_column_blocks(
    source: str | Path | TextIO,
) -> list[tuple[str | None, list[list[list[str]]]]]:
    """Split a column file into (doc id, sentences-of-rows) blocks."""
    docs: list[tuple[str | None, list[list[list[str]]]]] = []
    cur_id: str | None = None
    cur_rows: list[list[str]] = []
    cur_sents: list[list[list[str]]] = []
    started = False

    def flush_sentence() -> None:
        nonlocal cur_rows
        if cur_rows:
            cur_sents.append(cur_rows)
            cur_rows = []

    def flush_doc() -> None:
        nonlocal cur_sents, cur_id, started
        flush_sentence()
        if started:
            docs.append((cur_id, cur_sents))
        cur_sents = []
        cur_id = None
        started = False

    for raw in _iter_lines(source):
        line = raw.rstrip("\n")
        if line.startswith(DOCSTART):
            flush_doc()
            rest = line[len(DOCSTART) :].strip()
            cur_id = rest or None
            started = True
        elif not line.strip():
            flush_sentence()
        else:
            started = True
            cur_rows.append(line.split("\t"))
    flush_doc()
    return docs


def _build_document(
    doc_id: str,
    sent_rows: list[list[list[str]]],
    tagged: bool,
) -> Document:
    sentences: list[Sentence] = []
    mentions: list[Mention] = []
    for si, rows in enumerate(sent_rows):
        words: list[str] = []
        tags: list[str] = []
        for row in rows:
            if tagged:
                if len(row) != 2 or not row[0] or not row[1]:
                    raise CorpusFormatError(
                        f"doc {doc_id} sentence {si}: expected 'token<TAB>tag', "
                        f"got {row!r}"
                    )
                words.append(row[0])
                tags.append(row[1])
            else:
                if not row or not row[0]:
                    raise CorpusFormatError(
                        f"doc {doc_id} sentence {si}: empty token row {row!r}"
                    )
                words.append(row[0])
        sentences.append(make_sentence(words, doc_id, si))
        if tagged:
            try:
                spans = codec.iob2_to_spans(tags)
            except codec.MalformedTagError as exc:
                raise CorpusFormatError(f"doc {doc_id} sentence {si}: {exc}") from exc
            for start, end, label_str in spans:
                fine = parse_label(label_str)
                mentions.append(
                    Mention(si, start, end, coarse=coarse_of(fine), fine=fine)
                )
    return Document(doc_id, tuple(sentences), tuple(mentions), annotation_mode="full")


def read_column_corpus(source: str | Path | TextIO) -> list[Document]:
    """Read a fully annotated two-column corpus (``token<TAB>tag``).

    Blank lines break sentences; ``-DOCSTART- <id>`` lines break documents.
    Tag spans are decoded with the IOB2 repair policy; every tag label is
    parsed as a (possibly bare-type) fine label.
    """
    docs = []
    for n, (doc_id, sent_rows) in enumerate(_parse_column_blocks(source)):
        docs.append(_build_document(doc_id or f"doc{n}", sent_rows, tagged=True))
    return docs


def read_text_corpus(source: str | Path | TextIO) -> list[Document]:
    """Read a column corpus without tags (first column only, no annotation claim)."""
    docs = []
    for n, (doc_id, sent_rows) in enumerate(_parse_column_blocks(source)):
        doc = _build_document(doc_id or f"doc{n}", sent_rows, tagged=False)
        docs.append(replace(doc, annotation_mode="partial"))
    return docs


def _mention_tag_label(m: Mention) -> str:
    if m.fine is not None:
        return m.fine.render()
    if m.coarse is not None:
        return m.coarse
    raise CorpusFormatError(f"mention {m} has neither fine nor coarse label")


def write_column_corpus(docs: Sequence[Document], sink: str | Path | TextIO) -> None:
    """Write documents in the two-column format (inverse of read_column_corpus)."""
    out = io.StringIO()
    for doc in docs:
        out.write(f"{DOCSTART} {doc.id}\n")
        for si, sent in enumerate(doc.sentences):
            spans = [
                (m.start, m.end, _mention_tag_label(m)) for m in doc.mentions_in(si)
            ]
            tags = codec.spans_to_iob2(len(sent), spans)
            for tok, tag in zip(sent.tokens, tags):
                out.write(f"{tok.text}\t{tag}\n")
            out.write("\n")
    _write_text(sink, out.getvalue())


def _write_text(sink: str | Path | TextIO, text: str) -> None:
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


# ---------------------------------------------------------------------------
# standoff format


def read_standoff_mentions(
    records: str | Path | TextIO,
    text_source: str | Path | TextIO | Sequence[Document],
) -> list[Document]:
    """Attach standoff mention records to an untagged companion corpus.

    Records are TSV rows ``doc_id  sent_idx  start  end  label`` (5 columns) or
    prediction rows with ``text`` and ``confidence`` columns (7); a header line
    is skipped.  Resulting documents carry ``annotation_mode="partial"``:
    unlisted spans make no annotation claim.
    """
    if isinstance(text_source, (str, Path)) or hasattr(text_source, "read"):
        base_docs = read_text_corpus(text_source)  # type: ignore[arg-type]
    else:
        base_docs = [
            replace(d, mentions=(), annotation_mode="partial") for d in text_source
        ]
    by_id = {d.id: d for d in base_docs}
    new_mentions: dict[str, list[Mention]] = {d.id: [] for d in base_docs}

    for lineno, raw in enumerate(_iter_lines(records), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        cols = line.split("\t")
        if lineno == 1 and cols[0] == PREDICTION_HEADER[0]:
            continue
        if len(cols) == 5:
            doc_id, sent_idx, start, end, label = cols
            confidence = None
        elif len(cols) == 7:
            doc_id, sent_idx, start, end, _text, label, conf = cols
            confidence = float(conf)
        else:
            raise CorpusFormatError(
                f"standoff line {lineno}: expected 5 or 7 columns, got {len(cols)}"
            )
        if doc_id not in by_id:
            raise CorpusFormatError(f"standoff line {lineno}: unknown doc {doc_id!r}")
        doc = by_id[doc_id]
        si, st, en = int(sent_idx), int(start), int(end)
        if not 0 <= si < len(doc.sentences):
            raise CorpusFormatError(
                f"standoff line {lineno}: sentence {si} out of range in {doc_id}"
            )
        if not (0 <= st <= en < len(doc.sentences[si])):
            raise CorpusFormatError(
                f"standoff line {lineno}: span ({st}, {en}) out of bounds"
            )
        fine = parse_label(label)
        new_mentions[doc_id].append(
            Mention(si, st, en, coarse=coarse_of(fine), fine=fine, confidence=confidence)
        )

    out = []
    for doc in base_docs:
        try:
            out.append(
                Document(
                    doc.id,
                    doc.sentences,
                    tuple(new_mentions[doc.id]),
                    annotation_mode="partial",
                )
            )
        except AnnotationError as exc:
            raise AnnotationError(f"doc {doc.id}: {exc}") from exc
    return out


def write_predictions(docs: Sequence[Document], sink: str | Path | TextIO) -> None:
    """Write predicted mentions as TSV with a header.

    Columns: doc_id, sent_idx, start, end, surface text, fine label, confidence
    (6-decimal fixed point).  Every mention must carry a fine label and a
    confidence.
    """
    out = io.StringIO()
    out.write("\t".join(PREDICTION_HEADER) + "\n")
    for doc in docs:
        for m in doc.mentions:
            if m.fine is None or m.confidence is None:
                raise CorpusFormatError(
                    f"prediction in doc {doc.id} lacks fine label or confidence: {m}"
                )
            out.write(
                f"{doc.id}\t{m.sent_index}\t{m.start}\t{m.end}\t"
                f"{doc.surface(m)}\t{m.fine.render()}\t{m.confidence:.6f}\n"
            )
    _write_text(sink, out.getvalue())


# ---------------------------------------------------------------------------
# merging and concatenation


@dataclass
class MergeReport:
    added: int = 0
    dropped_overlap: int = 0
    dropped_type: int = 0

    def __str__(self) -> str:
        return (
            f"added={self.added} dropped_overlap={self.dropped_overlap} "
            f"dropped_type={self.dropped_type}"
        )


@dataclass
class MergeResult:
    document: Document
    report: MergeReport = field(default_factory=MergeReport)


def merge_silver(
    doc: Document,
    silver: Sequence[Mention],
    allowed_types: AbstractSet[str],
) -> MergeResult:
    """Add silver mentions that pass the type filter and overlap no existing mention.

    Gold mentions are never modified; drops are silent and only counted in the
    report, so merging the same silver set twice adds nothing the second time.
    """
    allowed = {normalize_coarse(t) for t in allowed_types}
    report = MergeReport()
    kept = list(doc.mentions)
    for m in silver:
        if m.coarse is None or m.coarse not in allowed:
            report.dropped_type += 1
            continue
        if not 0 <= m.sent_index < len(doc.sentences) or m.end >= len(
            doc.sentences[m.sent_index]
        ):
            raise AnnotationError(f"silver mention {m} outside doc {doc.id}")
        if any(m.overlaps(existing) for existing in kept):
            report.dropped_overlap += 1
            continue
        kept.append(m)
        report.added += 1
    merged = Document(doc.id, doc.sentences, tuple(kept), doc.annotation_mode)
    return MergeResult(merged, report)


def concat_corpora(
    corpora: Sequence[tuple[str, Sequence[Document]]],
    coarse_inventories: Sequence[AbstractSet[str]] | None = None,
) -> list[Document]:
    """Concatenate named corpora, prefixing doc ids only where they collide.

    When per-corpus coarse inventories are declared they must all be equal.
    """
    if coarse_inventories is not None:
        if len(coarse_inventories) != len(corpora):
            raise CorpusFormatError("one coarse inventory per corpus required")
        normalized = [{normalize_coarse(t) for t in inv} for inv in coarse_inventories]
        if any(inv != normalized[0] for inv in normalized[1:]):
            raise CorpusFormatError("coarse inventory mismatch between corpora")

    seen_in: dict[str, list[str]] = {}
    for name, docs in corpora:
        for doc in docs:
            owners = seen_in.setdefault(doc.id, [])
            if name in owners:
                raise CorpusFormatError(
                    f"duplicate doc id {doc.id!r} within corpus {name!r}"
                )
            owners.append(name)

    out: list[Document] = []
    for name, docs in corpora:
        for doc in docs:
            if len(seen_in[doc.id]) > 1:
                out.append(with_doc_id(doc, f"{name}/{doc.id}"))
            else:
                out.append(doc)
    return out


def with_doc_id(doc: Document, new_id: str) -> Document:
    """Copy a document under a new id, keeping sentence back-references consistent."""
    sentences = tuple(replace(s, doc_id=new_id) for s in doc.sentences)
    return Document(new_id, sentences, doc.mentions, doc.annotation_mode)
