"""Sequence-labeling model over an IOB2 tag inventory.

Used with the coarse type set for stage one of the cascade and, with the full
fine-label inventory, as the end-to-end baseline.  Per-token softmax over the
tag alphabet with IOB2 repair at decode; no transition layer.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import codec, encoder
from .corpus import Document, Mention, Sentence
from .encoder import Adam, EncoderConfig, Params
from .taxonomy import FineLabel, Taxonomy, coarse_of, parse_label
from .tokenizer import CharBigramTokenizer

logger = logging.getLogger(__name__)

INVENTORY_KINDS = ("coarse", "fine")


class PartialAnnotationError(ValueError):
    """Sequence training rejects partially annotated documents."""


@dataclass(frozen=True)
class TaggerConfig:
    """Training hyperparameters; the learning-rate/batch/epoch defaults are the
    reference operating point for large pretrained encoders and are normally
    overridden for the desk-scale encoder."""

    learning_rate: float = 1e-5
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    inventory: str = "coarse"  # "coarse" | "fine"
    lr_schedule: str = "linear"  # "linear" decay to 5%, or "constant"
    hidden: int = 64
    blocks: int = 2
    heads: int = 4
    ffn: int = 256
    max_len: int = 128
    max_word_vocab: int = 1024
    n_buckets: int = 1024

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")
        if min(self.batch_size, self.epochs, self.hidden, self.max_len) <= 0:
            raise ValueError("hyperparameters must be positive")
        if self.inventory not in INVENTORY_KINDS:
            raise ValueError(f"inventory must be one of {INVENTORY_KINDS}")
        if self.lr_schedule not in ("linear", "constant"):
            raise ValueError("lr_schedule must be 'linear' or 'constant'")

    def fingerprint(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def tag_alphabet(labels: Sequence[str]) -> tuple[str, ...]:
    """``O``, then B-/I- pairs in inventory order, then the subword tag ``X``."""
    tags = [codec.OUTSIDE]
    for label in labels:
        tags.append(f"B-{label}")
        tags.append(f"I-{label}")
    tags.append(codec.SUBWORD)
    return tuple(tags)


@dataclass
class TaggerModel:
    encoder_config: EncoderConfig
    params: Params
    tokenizer: CharBigramTokenizer
    alphabet: tuple[str, ...]
    inventory: str
    taxonomy: Taxonomy
    config_fingerprint: str
    history: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.params["head.w"].shape[1] != len(self.alphabet):
            raise ValueError("output layer width does not match tag alphabet")

    @property
    def tag_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.alphabet)}


def inventory_labels(taxonomy: Taxonomy, inventory: str) -> list[str]:
    if inventory == "coarse":
        return list(taxonomy.coarse_types)
    return [l.render() for l in taxonomy.fine_labels]


def _mention_tag_label(m: Mention, inventory: str) -> str:
    if inventory == "coarse":
        if m.coarse is None:
            raise ValueError(f"mention {m} lacks a coarse label")
        return m.coarse
    if m.fine is None:
        raise ValueError(f"mention {m} lacks a fine label")
    return m.fine.render()


def _chunk_tokens(
    tokenizer: CharBigramTokenizer, tokens: Sequence[str], max_content: int
) -> list[tuple[int, list[str]]]:
    """Greedy zero-overlap split so each chunk fits the piece window."""
    chunks: list[tuple[int, list[str]]] = []
    cur: list[str] = []
    cur_pieces = 0
    offset = 0
    for i, tok in enumerate(tokens):
        n = tokenizer.content_piece_count([tok])
        if n > max_content:
            raise encoder.OverLengthError(
                f"token {tok!r} alone exceeds the {max_content}-piece window"
            )
        if cur and cur_pieces + n > max_content:
            chunks.append((offset, cur))
            cur, cur_pieces, offset = [], 0, i
        cur.append(tok)
        cur_pieces += n
    if cur:
        chunks.append((offset, cur))
    return chunks


def _build_examples(
    docs: Sequence[Document],
    tokenizer: CharBigramTokenizer,
    tag_to_id: dict[str, int],
    inventory: str,
    max_len: int,
) -> list[dict]:
    """Piece-level training examples; over-length sentences are split upstream."""
    examples = []
    max_content = max_len - 2
    for doc in docs:
        for si, sent in enumerate(doc.sentences):
            spans = [
                (m.start, m.end, _mention_tag_label(m, inventory))
                for m in doc.mentions_in(si)
            ]
            token_tags = codec.spans_to_iob2(len(sent), spans)
            for offset, chunk in _chunk_tokens(tokenizer, sent.texts(), max_content):
                seq, alignment = tokenizer.encode_tokens(chunk)
                piece_tags = codec.align_to_subwords(
                    token_tags[offset : offset + len(chunk)], alignment
                )
                targets = np.zeros(len(seq), dtype=np.int64)
                loss_mask = np.zeros(len(seq), dtype=np.float64)
                for pi, tag in enumerate(piece_tags):
                    pos = pi + 1  # content starts after <CLS>
                    if tag == codec.SUBWORD:
                        continue  # no training signal from subword pieces
                    targets[pos] = tag_to_id[tag]
                    loss_mask[pos] = 1.0
                examples.append(
                    {"ids": list(seq.ids), "targets": targets, "loss_mask": loss_mask}
                )
    return examples


def _collate(examples: Sequence[dict]) -> dict:
    ids, mask = encoder.pad_batch([e["ids"] for e in examples])
    targets = np.zeros_like(ids)
    loss_mask = np.zeros_like(mask)
    for i, e in enumerate(examples):
        n = len(e["ids"])
        targets[i, :n] = e["targets"]
        loss_mask[i, :n] = e["loss_mask"]
    return {"ids": ids, "mask": mask, "targets": targets, "loss_mask": loss_mask}


def token_objective(enc_cfg: EncoderConfig):
    """Token-level cross-entropy, averaged over loss-masked piece positions."""

    def objective(params: Params, batch: dict) -> tuple[float, encoder.Grads]:
        enc_params = {k: v for k, v in params.items() if not k.startswith("head.")}
        vectors, cache = encoder.forward(
            enc_cfg, enc_params, batch["ids"], batch["mask"], need_cache=True
        )
        logits = vectors @ params["head.w"] + params["head.b"]
        n_classes = logits.shape[-1]
        flat_logits = logits.reshape(-1, n_classes)
        flat_targets = batch["targets"].reshape(-1)
        losses, dflat = encoder.softmax_cross_entropy(flat_logits, flat_targets)
        weights = batch["loss_mask"].reshape(-1)
        denom = max(weights.sum(), 1.0)
        loss = float((losses * weights).sum() / denom)
        dlogits = (dflat * weights[:, None] / denom).reshape(logits.shape)
        grads: encoder.Grads = {
            "head.w": np.einsum("blh,blc->hc", vectors, dlogits),
            "head.b": dlogits.sum(axis=(0, 1)),
        }
        dvectors = dlogits @ params["head.w"].T
        grads.update(encoder.backward(enc_cfg, enc_params, cache, dvectors))
        return loss, grads

    return objective


def _reject_partial(docs: Sequence[Document], role: str) -> None:
    for doc in docs:
        if doc.annotation_mode != "full":
            raise PartialAnnotationError(
                f"{role} document {doc.id!r} is partially annotated: unlabeled "
                "spans would be trained as non-entities. Sequence training "
                "requires full annotation; route partial data to the "
                "per-mention fine classifier stage instead."
            )


def train_tagger(
    train: Sequence[Document],
    dev: Sequence[Document],
    config: TaggerConfig,
    taxonomy: Taxonomy,
) -> TaggerModel:
    """Train and return the epoch checkpoint with the highest dev mention F1.

    Dev F1 compares exact spans plus the label at the inventory's granularity;
    ties prefer the earliest epoch.
    """
    from . import evaluation  # local import: evaluation is a consumer elsewhere

    _reject_partial(train, "training")
    _reject_partial(dev, "development")

    labels = inventory_labels(taxonomy, config.inventory)
    alphabet = tag_alphabet(labels)
    tokenizer = CharBigramTokenizer.build(
        (s.texts() for d in train for s in d.sentences),
        extra_vocab=(),
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
    params["head.w"] = rng.normal(0.0, 0.02, size=(config.hidden, len(alphabet)))
    params["head.b"] = np.zeros(len(alphabet))

    tag_to_id = {t: i for i, t in enumerate(alphabet)}
    examples = _build_examples(train, tokenizer, tag_to_id, config.inventory, config.max_len)
    if not examples:
        raise ValueError("no training sentences")

    model = TaggerModel(
        encoder_config=enc_cfg,
        params=params,
        tokenizer=tokenizer,
        alphabet=alphabet,
        inventory=config.inventory,
        taxonomy=taxonomy,
        config_fingerprint=config.fingerprint(),
    )
    objective = token_objective(enc_cfg)
    optimizer = Adam(config.learning_rate)
    granularity = "T" if config.inventory == "coarse" else "full"

    best: tuple[float, int] | None = None
    best_params = params
    for epoch in range(1, config.epochs + 1):
        optimizer.lr = scheduled_lr(config.learning_rate, epoch, config.epochs, config.lr_schedule)
        order = rng.permutation(len(examples))
        losses = []
        for start in range(0, len(examples), config.batch_size):
            batch = _collate([examples[i] for i in order[start : start + config.batch_size]])
            model.params, loss = encoder.train_step(
                model.params, batch, objective, optimizer
            )
            losses.append(loss)
        pred_docs = predict_documents(model, dev)
        prf = evaluation.mention_prf(list(dev), pred_docs, granularity)
        row = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "dev_precision": prf.precision,
            "dev_recall": prf.recall,
            "dev_f1": prf.f1,
        }
        model.history.append(row)
        logger.info("epoch %d loss %.4f dev F1 %.4f", epoch, row["loss"], prf.f1)
        if best is None or prf.f1 > best[0]:
            best = (prf.f1, epoch)
            best_params = {k: v.copy() for k, v in model.params.items()}
    model.params = best_params
    model.history.append({"selected_epoch": best[1], "selected_dev_f1": best[0]})
    return model


def train_baseline(
    train: Sequence[Document],
    dev: Sequence[Document],
    config: TaggerConfig,
    taxonomy: Taxonomy,
) -> TaggerModel:
    """End-to-end baseline: the same machinery over the full fine-label alphabet."""
    if config.inventory != "fine":
        config = TaggerConfig(**{**asdict(config), "inventory": "fine"})
    return train_tagger(train, dev, config, taxonomy)


def _predict_token_tags(
    model: TaggerModel, token_lists: Sequence[Sequence[str]], batch_size: int = 128
) -> list[tuple[list[str], list[float]]]:
    """Argmax tags plus chosen-tag probability per token, for many sentences."""
    max_content = model.encoder_config.max_len - 2
    pieces_per_chunk: list[tuple[int, int, object, object]] = []
    for si, tokens in enumerate(token_lists):
        for offset, chunk in _chunk_tokens(model.tokenizer, tokens, max_content):
            seq, alignment = model.tokenizer.encode_tokens(chunk)
            pieces_per_chunk.append((si, offset, seq, alignment))

    results: list[tuple[list[str], list[float]]] = [
        ([codec.OUTSIDE] * len(toks), [0.0] * len(toks)) for toks in token_lists
    ]
    enc_params = {
        k: v for k, v in model.params.items() if not k.startswith("head.")
    }
    for start in range(0, len(pieces_per_chunk), batch_size):
        group = pieces_per_chunk[start : start + batch_size]
        ids, mask = encoder.pad_batch([list(seq.ids) for _, _, seq, _ in group])
        vectors, _ = encoder.forward(model.encoder_config, enc_params, ids, mask)
        logits = vectors @ model.params["head.w"] + model.params["head.b"]
        probs = encoder.softmax(logits)
        for gi, (si, offset, seq, alignment) in enumerate(group):
            piece_tags = [codec.SUBWORD] * len(alignment.pieces)
            chosen_probs = []
            for pi, first in enumerate(alignment.first_piece_mask):
                if not first:
                    continue
                dist = probs[gi, pi + 1]
                choice = int(np.argmax(dist))
                piece_tags[pi] = model.alphabet[choice]
                chosen_probs.append(float(dist[choice]))
            token_tags = codec.project_from_subwords(piece_tags, alignment)
            tags_out, probs_out = results[si]
            for j, (tag, p) in enumerate(zip(token_tags, chosen_probs)):
                tags_out[offset + j] = tag
                probs_out[offset + j] = p
    return results


def _spans_to_mentions(
    spans: Sequence[codec.Span],
    token_probs: Sequence[float],
    sent_index: int,
    inventory: str,
) -> list[Mention]:
    mentions = []
    for start, end, label_str in spans:
        conf = float(np.mean(token_probs[start : end + 1]))
        if inventory == "coarse":
            fine = FineLabel(label_str)
            coarse = label_str
        else:
            fine = parse_label(label_str)
            coarse = coarse_of(fine)
        mentions.append(
            Mention(sent_index, start, end, coarse=coarse, fine=fine, confidence=conf)
        )
    return mentions


def predict_tags(
    model: TaggerModel, sentence: Sentence
) -> tuple[list[str], list[Mention]]:
    """Tag one sentence; mentions carry labels and mean-token-probability confidence."""
    (tags, probs), = _predict_token_tags(model, [sentence.texts()])
    spans = codec.iob2_to_spans(tags)
    return tags, _spans_to_mentions(spans, probs, sentence.index, model.inventory)


def predict_documents(model: TaggerModel, docs: Sequence[Document]) -> list[Document]:
    """Tag every sentence of every document; returns prediction documents."""
    token_lists = [s.texts() for d in docs for s in d.sentences]
    flat = _predict_token_tags(model, token_lists)
    out: list[Document] = []
    cursor = 0
    for doc in docs:
        mentions: list[Mention] = []
        for si in range(len(doc.sentences)):
            tags, probs = flat[cursor]
            cursor += 1
            spans = codec.iob2_to_spans(tags)
            mentions.extend(_spans_to_mentions(spans, probs, si, model.inventory))
        out.append(Document(doc.id, doc.sentences, tuple(mentions), "full"))
    return out


# ---------------------------------------------------------------------------
# persistence


def save_tagger(model: TaggerModel, path: str | Path) -> None:
    meta = {
        "kind": "tagger",
        "encoder": model.encoder_config.to_meta(),
        "tokenizer": model.tokenizer.to_meta(),
        "alphabet": list(model.alphabet),
        "inventory": model.inventory,
        "taxonomy": model.taxonomy.to_meta(),
        "taxonomy_fingerprint": model.taxonomy.fingerprint(),
        "config_fingerprint": model.config_fingerprint,
        "history": model.history,
    }
    encoder.save_checkpoint(path, meta, model.params)


def load_tagger(path: str | Path) -> TaggerModel:
    meta, params = encoder.load_checkpoint(path)
    if meta.get("kind") != "tagger":
        raise ValueError(f"{path}: checkpoint is not a tagger (kind={meta.get('kind')!r})")
    return TaggerModel(
        encoder_config=EncoderConfig.from_meta(meta["encoder"]),
        params=params,
        tokenizer=CharBigramTokenizer.from_meta(meta["tokenizer"]),
        alphabet=tuple(meta["alphabet"]),
        inventory=meta["inventory"],
        taxonomy=Taxonomy.from_meta(meta["taxonomy"]),
        config_fingerprint=meta["config_fingerprint"],
        history=list(meta.get("history", [])),
    )
