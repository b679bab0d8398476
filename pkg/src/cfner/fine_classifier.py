"""Per-mention classifier over the fine-label space.

A mention is rendered into a transformed token sequence (masked, entity-masked,
or entity-bounded), scored against every fine label from the pooled sequence
vector, and decoded with a configurable decode-time filter.  Filters never
apply during training; the training path has no filter parameter.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import encoder
from .coarse_tagger import scheduled_lr
from .corpus import Document, Mention, Sentence
from .encoder import Adam, EncoderConfig, Params
from .taxonomy import FineLabel, Taxonomy, coarse_of, normalize_coarse
from .tokenizer import MASK, SEP, CharBigramTokenizer

logger = logging.getLogger(__name__)

REPRESENTATIONS = ("masked", "entity_masked", "entity_bounded")
FILTER_KINDS = ("pass_through", "coarse_type", "threshold")


class RenderError(ValueError):
    pass


class RepresentationMismatchError(ValueError):
    """Example rendered with a different representation than the model's."""


def marker_token(coarse: str) -> str:
    """Atomic marker string for a coarse type (registered in the tokenizer)."""
    return normalize_coarse(coarse).upper()


@dataclass(frozen=True)
class RenderedExample:
    """A sentence transformed around one mention, with provenance."""

    tokens: tuple[str, ...]
    kind: str
    doc_id: str
    sent_index: int
    mention: Mention

    def debug_line(self) -> str:
        return f"{self.doc_id}\t{self.sent_index}\t{self.kind}\t{' '.join(self.tokens)}"


def _check_span(sentence: Sentence, mention: Mention) -> None:
    if mention.end >= len(sentence):
        raise RenderError(
            f"mention span ({mention.start}, {mention.end}) outside sentence "
            f"of length {len(sentence)}"
        )


def render_masked(sentence: Sentence, mention: Mention) -> RenderedExample:
    """Replace the mention with one mask token; append separator + mention tokens."""
    _check_span(sentence, mention)
    words = sentence.texts()
    span = words[mention.start : mention.end + 1]
    tokens = words[: mention.start] + [MASK] + words[mention.end + 1 :] + [SEP] + span
    return RenderedExample(
        tuple(tokens), "masked", sentence.doc_id, mention.sent_index, mention
    )


def render_entity_masked(
    sentence: Sentence, mention: Mention, coarse: str
) -> RenderedExample:
    """Replace the mention tokens in place with the single coarse-type marker."""
    _check_span(sentence, mention)
    words = sentence.texts()
    tokens = words[: mention.start] + [marker_token(coarse)] + words[mention.end + 1 :]
    return RenderedExample(
        tuple(tokens), "entity_masked", sentence.doc_id, mention.sent_index, mention
    )


def render_entity_bounded(
    sentence: Sentence, mention: Mention, coarse: str
) -> RenderedExample:
    """Surround the mention tokens with the coarse-type marker on both sides."""
    _check_span(sentence, mention)
    words = sentence.texts()
    marker = marker_token(coarse)
    tokens = (
        words[: mention.start]
        + [marker]
        + words[mention.start : mention.end + 1]
        + [marker]
        + words[mention.end + 1 :]
    )
    return RenderedExample(
        tuple(tokens), "entity_bounded", sentence.doc_id, mention.sent_index, mention
    )


def render(
    kind: str, sentence: Sentence, mention: Mention, coarse: str | None = None
) -> RenderedExample:
    if kind == "masked":
        return render_masked(sentence, mention)
    if coarse is None:
        raise RenderError(f"representation {kind!r} needs a coarse type")
    if kind == "entity_masked":
        return render_entity_masked(sentence, mention, coarse)
    if kind == "entity_bounded":
        return render_entity_bounded(sentence, mention, coarse)
    raise RenderError(f"unknown representation kind {kind!r}")


# ---------------------------------------------------------------------------
# probabilities and filters


@dataclass(frozen=True)
class ProbVector:
    """Probability distribution over the taxonomy's fine labels, in label order."""

    probs: np.ndarray
    taxonomy: Taxonomy

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.shape != (len(self.taxonomy),):
            raise ValueError(
                f"probability vector length {probs.shape} does not match "
                f"taxonomy size {len(self.taxonomy)}"
            )
        if (probs < 0).any() or (probs > 1).any():
            raise ValueError("probabilities outside [0, 1]")
        if abs(float(probs.sum()) - 1.0) > 1e-6:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")

    def __len__(self) -> int:
        return len(self.probs)


@dataclass(frozen=True)
class FilterConfig:
    kind: str = "pass_through"
    theta: float = 0.9

    def __post_init__(self) -> None:
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"filter kind must be one of {FILTER_KINDS}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta {self.theta} outside [0, 1]")

    def describe(self) -> str:
        if self.kind == "threshold":
            return f"threshold(theta={self.theta})"
        return self.kind


def filter_pass_through(p: ProbVector, t: str) -> dict[int, float]:
    """Identity: every label survives regardless of the coarse type."""
    return {i: float(v) for i, v in enumerate(p.probs)}


def filter_coarse_type(p: ProbVector, t: str) -> dict[int, float]:
    """Keep only labels whose main type equals the coarse type.

    May be empty when the taxonomy has no fine label under ``t``; the decoder
    treats that as the empty-filter signal.
    """
    return {int(i): float(p.probs[i]) for i in p.taxonomy.indices_for_coarse(t)}


def filter_threshold(p: ProbVector, t: str, theta: float) -> dict[int, float]:
    """Coarse-type survivors plus any label whose probability reaches ``theta``."""
    coarse_idx = set(p.taxonomy.indices_for_coarse(t))
    return {
        int(i): float(v)
        for i, v in enumerate(p.probs)
        if i in coarse_idx or v >= theta
    }


def apply_filter(p: ProbVector, t: str, cfg: FilterConfig) -> dict[int, float]:
    if cfg.kind == "pass_through":
        return filter_pass_through(p, t)
    if cfg.kind == "coarse_type":
        return filter_coarse_type(p, t)
    return filter_threshold(p, t, cfg.theta)


class DecodeResult(NamedTuple):
    label: FineLabel
    confidence: float
    used_fallback: bool


def decode_label(p: ProbVector, t: str, cfg: FilterConfig) -> DecodeResult:
    """Argmax over the filtered label set with renormalized confidence.

    Confidence is the winning probability renormalized over the surviving set
    (equivalent to zeroing skipped labels and renormalizing).  Ties break to
    the lowest taxonomy index.  An empty filtered set falls back to the
    pass-through argmax and flags the result.
    """
    subset = apply_filter(p, t, cfg)
    used_fallback = False
    if not subset:
        subset = filter_pass_through(p, t)
        used_fallback = True
    best_idx = -1
    best_prob = -1.0
    for idx in sorted(subset):
        if subset[idx] > best_prob:
            best_idx, best_prob = idx, subset[idx]
    total = sum(subset.values())
    if total > 0.0:
        confidence = min(best_prob / total, 1.0)
    else:
        confidence = 1.0 / len(subset)  # degenerate all-zero subset: uniform
    return DecodeResult(p.taxonomy.label_at(best_idx), confidence, used_fallback)


# ---------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class ClassifierConfig:
    """Training hyperparameters; the reference learning-rate range for large
    pretrained encoders is 2e-5 to 5e-5 (batch 24, 10 epochs)."""

    learning_rate: float = 2e-5
    batch_size: int = 24
    epochs: int = 10
    seed: int = 0
    representation: str = "masked"
    lr_schedule: str = "linear"  # "linear" decay to 5%, or "constant"
    hidden: int = 64
    blocks: int = 2
    heads: int = 4
    ffn: int = 256
    max_len: int = 128
    max_word_vocab: int = 1024
    n_buckets: int = 1024

    def __post_init__(self) -> None:
        if min(self.batch_size, self.epochs, self.hidden, self.max_len) <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.representation not in REPRESENTATIONS:
            raise ValueError(f"representation must be one of {REPRESENTATIONS}")
        if self.lr_schedule not in ("linear", "constant"):
            raise ValueError("lr_schedule must be 'linear' or 'constant'")

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ClassifierModel:
    encoder_config: EncoderConfig
    params: Params
    tokenizer: CharBigramTokenizer
    taxonomy: Taxonomy
    representation: str
    config_fingerprint: str
    history: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.params["head.w"].shape[1] != len(self.taxonomy):
            raise ValueError("classifier head width does not match taxonomy size")


def build_training_examples(
    docs: Sequence[Document],
    representation: str,
    taxonomy: Taxonomy,
) -> list[tuple[RenderedExample, int]]:
    """Render one example per fine-labeled mention, paired with its label index.

    The coarse type fed to marker representations is the gold one.  Partially
    annotated documents are fine here: only positive examples are consumed.
    """
    out = []
    for doc in docs:
        for m in doc.mentions:
            if m.fine is None:
                raise ValueError(
                    f"mention {m.span()} in doc {doc.id} lacks a fine label"
                )
            idx = taxonomy.index_of(m.fine)  # raises on out-of-taxonomy gold
            coarse = m.coarse if m.coarse is not None else coarse_of(m.fine)
            example = render(representation, doc.sentences[m.sent_index], m, coarse)
            out.append((example, idx))
    return out


def _marker_vocab(taxonomy: Taxonomy) -> list[str]:
    return [marker_token(c) for c in taxonomy.coarse_types]


def _batch_probs(
    model: ClassifierModel, examples: Sequence[RenderedExample], batch_size: int = 128
) -> np.ndarray:
    """Softmax probabilities for many rendered examples (inference mode)."""
    enc_params = {k: v for k, v in model.params.items() if not k.startswith("head.")}
    rows = []
    for start in range(0, len(examples), batch_size):
        group = examples[start : start + batch_size]
        seqs = [model.tokenizer.encode_tokens(e.tokens)[0] for e in group]
        ids, mask = encoder.pad_batch([list(s.ids) for s in seqs])
        vectors, _ = encoder.forward(model.encoder_config, enc_params, ids, mask)
        logits = vectors[:, 0, :] @ model.params["head.w"] + model.params["head.b"]
        rows.append(encoder.softmax(logits))
    return np.concatenate(rows, axis=0) if rows else np.zeros((0, len(model.taxonomy)))


def classify(model: ClassifierModel, example: RenderedExample) -> ProbVector:
    """Probability of every fine label for one rendered mention."""
    if example.kind != model.representation:
        raise RepresentationMismatchError(
            f"example rendered as {example.kind!r} but the model expects "
            f"{model.representation!r}"
        )
    probs = _batch_probs(model, [example])[0]
    # guard against accumulated rounding before the ProbVector invariant check
    probs = probs / probs.sum()
    return ProbVector(probs, model.taxonomy)


def sequence_objective(enc_cfg: EncoderConfig):
    """Sequence-level cross-entropy on the pooled (sequence-start) vector."""

    def objective(params: Params, batch: dict) -> tuple[float, encoder.Grads]:
        enc_params = {k: v for k, v in params.items() if not k.startswith("head.")}
        vectors, cache = encoder.forward(
            enc_cfg, enc_params, batch["ids"], batch["mask"], need_cache=True
        )
        pooled = vectors[:, 0, :]
        logits = pooled @ params["head.w"] + params["head.b"]
        losses, dlogits = encoder.softmax_cross_entropy(logits, batch["targets"])
        n = logits.shape[0]
        loss = float(losses.mean())
        dlogits /= n
        grads: encoder.Grads = {
            "head.w": pooled.T @ dlogits,
            "head.b": dlogits.sum(axis=0),
        }
        dvectors = np.zeros_like(vectors)
        dvectors[:, 0, :] = dlogits @ params["head.w"].T
        grads.update(encoder.backward(enc_cfg, enc_params, cache, dvectors))
        return loss, grads

    return objective


def train_classifier(
    train: Sequence[Document],
    dev: Sequence[Document],
    config: ClassifierConfig,
    taxonomy: Taxonomy,
) -> ClassifierModel:
    """Train on positive examples only; select the best dev-accuracy epoch.

    The dev metric is full-label accuracy under pass-through decoding with
    gold coarse types, i.e. plain argmax accuracy.
    """
    train_examples = build_training_examples(train, config.representation, taxonomy)
    dev_examples = build_training_examples(dev, config.representation, taxonomy)
    if not train_examples:
        raise ValueError("no fine-labeled training mentions")

    tokenizer = CharBigramTokenizer.build(
        (ex.tokens for ex, _ in train_examples),
        extra_vocab=_marker_vocab(taxonomy),
        max_word_vocab=config.max_word_vocab,
        n_buckets=config.n_buckets,
    )
    enc_cfg = EncoderConfig(
        vocab_size=tokenizer.vocab_size,
        hidden=config.hidden,
        blocks=config.blocks,
        heads=config.heads,
        ffn=config.ffn,
        max_len=config.max_len,
    )
    rng = np.random.default_rng(config.seed)
    params = encoder.init_params(enc_cfg, rng)
    params["head.w"] = rng.normal(0.0, 0.02, size=(config.hidden, len(taxonomy)))
    params["head.b"] = np.zeros(len(taxonomy))

    model = ClassifierModel(
        encoder_config=enc_cfg,
        params=params,
        tokenizer=tokenizer,
        taxonomy=taxonomy,
        representation=config.representation,
        config_fingerprint=config.fingerprint(),
    )

    encoded = []
    for ex, target in train_examples:
        seq, _ = tokenizer.encode_tokens(ex.tokens)
        encoded.append({"ids": list(seq.ids), "target": target})
    dev_targets = np.asarray([t for _, t in dev_examples], dtype=np.int64)
    dev_rendered = [ex for ex, _ in dev_examples]

    objective = sequence_objective(enc_cfg)
    optimizer = Adam(config.learning_rate)
    best: tuple[float, int] | None = None
    best_params = model.params
    for epoch in range(1, config.epochs + 1):
        optimizer.lr = scheduled_lr(
            config.learning_rate, epoch, config.epochs, config.lr_schedule
        )
        order = rng.permutation(len(encoded))
        losses = []
        for start in range(0, len(encoded), config.batch_size):
            group = [encoded[i] for i in order[start : start + config.batch_size]]
            ids, mask = encoder.pad_batch([g["ids"] for g in group])
            targets = np.asarray([g["target"] for g in group], dtype=np.int64)
            batch = {"ids": ids, "mask": mask, "targets": targets}
            model.params, loss = encoder.train_step(
                model.params, batch, objective, optimizer
            )
            losses.append(loss)
        if dev_rendered:
            probs = _batch_probs(model, dev_rendered)
            acc = float((probs.argmax(axis=1) == dev_targets).mean())
        else:
            acc = 0.0
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "dev_accuracy": acc}
        model.history.append(row)
        logger.info("epoch %d loss %.4f dev acc %.4f", epoch, row["loss"], acc)
        if best is None or acc > best[0]:
            best = (acc, epoch)
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    model.history.append({"selected_epoch": best[1], "selected_dev_accuracy": best[0]})
    return model


def classify_mentions(
    model: ClassifierModel,
    docs_with_mentions: Sequence[tuple[Document, Sequence[Mention]]],
    filter_cfg: FilterConfig,
    coarse_source: str = "mention",
) -> list[list[DecodeResult]]:
    """Render, score, and decode many mentions with batched encoding.

    ``coarse_source`` picks the coarse type handed to renderers and filters:
    the mention's own ``coarse`` field (stage-one output or gold, whichever the
    caller stored there).
    """
    rendered: list[RenderedExample] = []
    coarse_types: list[str] = []
    layout: list[int] = []
    for doc, mentions in docs_with_mentions:
        layout.append(len(mentions))
        for m in mentions:
            coarse = m.coarse if m.coarse is not None else coarse_of(m.fine)
            rendered.append(
                render(model.representation, doc.sentences[m.sent_index], m, coarse)
            )
            coarse_types.append(coarse)
    all_probs = _batch_probs(model, rendered)
    results: list[DecodeResult] = []
    for row, coarse in zip(all_probs, coarse_types):
        p = ProbVector(row / row.sum(), model.taxonomy)
        results.append(decode_label(p, coarse, filter_cfg))
    grouped: list[list[DecodeResult]] = []
    cursor = 0
    for count in layout:
        grouped.append(results[cursor : cursor + count])
        cursor += count
    return grouped


def dump_examples(examples: Sequence[RenderedExample], path: str | Path) -> None:
    """Debug dump: one rendered example per line, markers visible."""
    text = "".join(ex.debug_line() + "\n" for ex in examples)
    Path(path).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# persistence


def save_classifier(model: ClassifierModel, path: str | Path) -> None:
    meta = {
        "kind": "classifier",
        "encoder": model.encoder_config.to_meta(),
        "tokenizer": model.tokenizer.to_meta(),
        "taxonomy": model.taxonomy.to_meta(),
        "taxonomy_fingerprint": model.taxonomy.fingerprint(),
        "representation": model.representation,
        "config_fingerprint": model.config_fingerprint,
        "history": model.history,
    }
    encoder.save_checkpoint(path, meta, model.params)


def load_classifier(path: str | Path) -> ClassifierModel:
    meta, params = encoder.load_checkpoint(path)
    if meta.get("kind") != "classifier":
        raise ValueError(
            f"{path}: checkpoint is not a classifier (kind={meta.get('kind')!r})"
        )
    return ClassifierModel(
        encoder_config=EncoderConfig.from_meta(meta["encoder"]),
        params=params,
        tokenizer=CharBigramTokenizer.from_meta(meta["tokenizer"]),
        taxonomy=Taxonomy.from_meta(meta["taxonomy"]),
        representation=meta["representation"],
        config_fingerprint=meta["config_fingerprint"],
        history=list(meta.get("history", [])),
    )
