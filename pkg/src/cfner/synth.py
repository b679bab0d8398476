"""Synthetic cue-determined corpora for desk-scale experiments.

Entity surface forms encode their own labels.  A mention-initial word looks
like ``z<C><C><F><suffix>`` (continuations start with ``y``), where ``C`` is a
coarse-type cue letter and ``F`` a subtype cue letter, so under the character
bigram tokenizer the first piece reveals boundary+coarse type and the second
piece the full fine label.  Suffix and filler alphabets are disjoint from the
cue letters, so no accidental cues arise.  A "remap" family reproduces the
convention-drift phenomenon: its surface cue (and its coarse-corpus
annotation) say ``org`` while its gold fine label lives under ``gpe``, so only
decoding that may leave the coarse type can recover it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Document, Mention, make_sentence
from .taxonomy import (
    DEFAULT_COARSE_TYPES,
    FineLabel,
    Taxonomy,
    coarse_of,
    parse_label,
)

FINE_SUBTYPES = ("alpha", "beta", "gamma")
_FINE_CUE = {"alpha": "j", "beta": "k", "gamma": "l", "remap": "m"}
_COARSE_CUE = {c: chr(ord("a") + i) for i, c in enumerate(DEFAULT_COARSE_TYPES)}
_FILLER_ALPHABET = "abcdefgh"
_SUFFIX_ALPHABET = "nopqr"

REMAP_LABEL = FineLabel("gpe", "remap")
#: coarse-stage conventions label the remap family as this type
REMAP_COARSE = "org"


def build_taxonomy(include_remap: bool = True) -> Taxonomy:
    labels = [
        parse_label(f"{coarse}.{sub}")
        for coarse in DEFAULT_COARSE_TYPES
        for sub in FINE_SUBTYPES
    ]
    if include_remap:
        labels.append(REMAP_LABEL)
    return Taxonomy(labels, DEFAULT_COARSE_TYPES)


@dataclass(frozen=True)
class _Pools:
    fillers: tuple[str, ...]
    begin_words: dict[FineLabel, tuple[str, ...]]
    cont_words: dict[FineLabel, tuple[str, ...]]


@dataclass
class SynthWorld:
    taxonomy: Taxonomy
    coarse_train: list[Document]
    coarse_dev: list[Document]
    fine_train: list[Document]
    fine_dev: list[Document]
    eval_docs: list[Document]
    remap_label: FineLabel | None


def _make_entity_word(
    rng: np.random.Generator, prefix: str, coarse_cue: str, fine_cue: str
) -> str:
    suffix_len = int(rng.choice([2, 4]))
    suffix = "".join(rng.choice(list(_SUFFIX_ALPHABET), size=suffix_len))
    # bigram pieces: "<p><C>" (boundary + coarse cue), "<C><F>" (label cue), noise
    return f"{prefix}{coarse_cue}{coarse_cue}{fine_cue}{suffix}"


def _unique_words(rng: np.random.Generator, count: int, make) -> tuple[str, ...]:
    words: list[str] = []
    seen: set[str] = set()
    while len(words) < count:
        w = make(rng)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return tuple(words)


def _build_pools(rng: np.random.Generator, taxonomy: Taxonomy) -> _Pools:
    def filler(r: np.random.Generator) -> str:
        length = int(r.integers(4, 7))
        return "".join(r.choice(list(_FILLER_ALPHABET), size=length))

    fillers = _unique_words(rng, 200, filler)
    begin: dict[FineLabel, tuple[str, ...]] = {}
    cont: dict[FineLabel, tuple[str, ...]] = {}
    for label in taxonomy.fine_labels:
        subtype = label.subtype or "alpha"
        fine_cue = _FINE_CUE[subtype]
        # remap-family surfaces carry the org cue despite the gpe gold label
        cue_coarse = REMAP_COARSE if label == REMAP_LABEL else coarse_of(label)
        coarse_cue = _COARSE_CUE[cue_coarse]
        n_begin, n_cont = (12, 6) if label == REMAP_LABEL else (16, 8)
        begin[label] = _unique_words(
            rng, n_begin, lambda r: _make_entity_word(r, "z", coarse_cue, fine_cue)
        )
        cont[label] = _unique_words(
            rng, n_cont, lambda r: _make_entity_word(r, "y", coarse_cue, fine_cue)
        )
    return _Pools(fillers, begin, cont)


def _synthesize_sentence(
    rng: np.random.Generator,
    pools: _Pools,
    taxonomy: Taxonomy,
    mention_count_probs: Sequence[float],
    remap_prob: float,
) -> tuple[list[str], list[tuple[int, int, FineLabel]]]:
    """Words plus (start, end, fine label) spans, mentions separated by fillers."""
    n_fillers = int(rng.integers(5, 12))
    words = [str(w) for w in rng.choice(pools.fillers, size=n_fillers)]
    n_mentions = int(rng.choice(len(mention_count_probs), p=mention_count_probs))
    regular = [l for l in taxonomy.fine_labels if l != REMAP_LABEL]
    labels = []
    for i in range(n_mentions):
        if i == 0 and n_mentions > 0 and rng.random() < remap_prob and REMAP_LABEL in taxonomy:
            labels.append(REMAP_LABEL)
        else:
            labels.append(regular[int(rng.integers(len(regular)))])
    gaps = sorted(rng.choice(n_fillers + 1, size=n_mentions, replace=False)) if n_mentions else []
    spans: list[tuple[int, int, FineLabel]] = []
    out: list[str] = []
    cursor = 0
    for gap, label in zip(gaps, labels):
        out.extend(words[cursor:gap])
        cursor = gap
        length = 1 if rng.random() < 0.65 else 2
        start = len(out)
        out.append(pools.begin_words[label][int(rng.integers(len(pools.begin_words[label])))])
        if length == 2:
            out.append(pools.cont_words[label][int(rng.integers(len(pools.cont_words[label])))])
        spans.append((start, len(out) - 1, label))
    out.extend(words[cursor:])
    return out, spans


def _make_documents(
    rng: np.random.Generator,
    pools: _Pools,
    taxonomy: Taxonomy,
    n_sentences: int,
    doc_prefix: str,
    level: str,  # "coarse" | "fine"
    mention_count_probs: Sequence[float],
    remap_prob: float,
    sentences_per_doc: int = 20,
) -> list[Document]:
    docs: list[Document] = []
    sent_words: list[list[str]] = []
    sent_spans: list[list[tuple[int, int, FineLabel]]] = []
    for _ in range(n_sentences):
        words, spans = _synthesize_sentence(
            rng, pools, taxonomy, mention_count_probs, remap_prob
        )
        sent_words.append(words)
        sent_spans.append(spans)
    for d0 in range(0, n_sentences, sentences_per_doc):
        doc_id = f"{doc_prefix}{d0 // sentences_per_doc:05d}"
        sentences = []
        mentions = []
        for si, (words, spans) in enumerate(
            zip(sent_words[d0 : d0 + sentences_per_doc], sent_spans[d0 : d0 + sentences_per_doc])
        ):
            sentences.append(make_sentence(words, doc_id, si))
            for start, end, label in spans:
                if level == "fine":
                    mentions.append(
                        Mention(si, start, end, coarse=coarse_of(label), fine=label)
                    )
                else:
                    coarse = REMAP_COARSE if label == REMAP_LABEL else coarse_of(label)
                    mentions.append(
                        Mention(si, start, end, coarse=coarse, fine=FineLabel(coarse))
                    )
        docs.append(Document(doc_id, tuple(sentences), tuple(mentions), "full"))
    return docs


def build_world(
    seed: int = 7,
    coarse_train: int = 5000,
    coarse_dev: int = 400,
    fine_train: int = 500,
    fine_dev: int = 150,
    eval_sentences: int = 300,
    include_remap: bool = True,
) -> SynthWorld:
    """Deterministic synthetic world with a 10:1 coarse-to-fine data asymmetry."""
    taxonomy = build_taxonomy(include_remap)
    rng = np.random.default_rng(seed)
    pools = _build_pools(rng, taxonomy)
    remap_prob = 0.05 if include_remap else 0.0
    remap_prob_fine = 0.10 if include_remap else 0.0
    world = SynthWorld(
        taxonomy=taxonomy,
        coarse_train=_make_documents(
            rng, pools, taxonomy, coarse_train, "ct", "coarse", [0.2, 0.5, 0.3], remap_prob
        ),
        coarse_dev=_make_documents(
            rng, pools, taxonomy, coarse_dev, "cd", "coarse", [0.2, 0.5, 0.3], remap_prob
        ),
        fine_train=_make_documents(
            rng, pools, taxonomy, fine_train, "ft", "fine", [0.0, 0.6, 0.4], remap_prob_fine
        ),
        fine_dev=_make_documents(
            rng, pools, taxonomy, fine_dev, "fd", "fine", [0.0, 0.6, 0.4], remap_prob_fine
        ),
        eval_docs=_make_documents(
            rng, pools, taxonomy, eval_sentences, "ev", "fine", [0.15, 0.5, 0.35], remap_prob_fine
        ),
        remap_label=REMAP_LABEL if include_remap else None,
    )
    return world
