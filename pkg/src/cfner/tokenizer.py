"""Pluggable subword tokenizer with a desk-scale default.

The default scheme keeps whitespace tokens whole when they are in a learned
word vocabulary and otherwise splits them into non-overlapping character
bigrams hashed into a fixed bucket range.  Registered extra-vocabulary strings
(coarse-type markers, mask, separator) are always atomic single pieces.
"""

from __future__ import annotations

import zlib
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .codec import SubwordAlignment

HASH_SCHEME = "char-bigram-crc32-v1"

PAD, CLS, SEP, MASK = "<PAD>", "<CLS>", "<SEP>", "<MASK>"
PAD_ID, CLS_ID, SEP_ID, MASK_ID = 0, 1, 2, 3
N_RESERVED = 4
_BUILTIN = {PAD: PAD_ID, CLS: CLS_ID, SEP: SEP_ID, MASK: MASK_ID}


class TokenizerError(ValueError):
    pass


@dataclass(frozen=True)
class PieceSequence:
    """Encoder input: piece ids framed by sequence-start and separator specials."""

    ids: tuple[int, ...]
    is_special: tuple[bool, ...]  # true at the framing CLS/SEP positions

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.is_special):
            raise TokenizerError("ids/is_special length mismatch")
        if len(self.ids) < 2 or self.ids[0] != CLS_ID or self.ids[-1] != SEP_ID:
            raise TokenizerError("sequence must be framed by <CLS> ... <SEP>")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def content_slice(self) -> slice:
        return slice(1, len(self.ids) - 1)


class CharBigramTokenizer:
    """Word-vocabulary tokenizer with hashed character-bigram fallback."""

    def __init__(
        self,
        word_vocab: Sequence[str],
        extra_vocab: Sequence[str] = (),
        n_buckets: int = 1024,
    ) -> None:
        if n_buckets < 1:
            raise TokenizerError("n_buckets must be positive")
        self.extra_vocab = tuple(dict.fromkeys(extra_vocab))
        self.word_vocab = tuple(dict.fromkeys(word_vocab))
        self.n_buckets = n_buckets
        self._extra_ids = {
            w: N_RESERVED + i for i, w in enumerate(self.extra_vocab)
        }
        base = N_RESERVED + len(self.extra_vocab)
        self._word_ids = {w: base + i for i, w in enumerate(self.word_vocab)}
        self._bucket_base = base + len(self.word_vocab)

    @property
    def vocab_size(self) -> int:
        return self._bucket_base + self.n_buckets

    @classmethod
    def build(
        cls,
        sentences: Iterable[Sequence[str]],
        extra_vocab: Sequence[str] = (),
        max_word_vocab: int = 1024,
        n_buckets: int = 1024,
    ) -> "CharBigramTokenizer":
        """Learn the word vocabulary from a token stream.

        Selection is deterministic: by descending count, then lexicographic.
        """
        extra = tuple(dict.fromkeys(extra_vocab))
        skip = set(extra) | set(_BUILTIN)
        counts: Counter[str] = Counter()
        for sent in sentences:
            for tok in sent:
                if tok not in skip:
                    counts[tok] += 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        words = [w for w, _ in ranked[:max_word_vocab]]
        return cls(words, extra, n_buckets)

    def _bucket_id(self, piece: str) -> int:
        return self._bucket_base + zlib.crc32(piece.encode("utf-8")) % self.n_buckets

    def _token_pieces(self, token: str) -> tuple[list[str], list[int]]:
        if not token:
            raise TokenizerError("empty token")
        if token in self._extra_ids:
            return [token], [self._extra_ids[token]]
        if token in _BUILTIN:
            return [token], [_BUILTIN[token]]
        if token in self._word_ids:
            return [token], [self._word_ids[token]]
        bigrams = [token[i : i + 2] for i in range(0, len(token), 2)]
        pieces = [bigrams[0]] + [f"##{bg}" for bg in bigrams[1:]]
        return pieces, [self._bucket_id(p) for p in pieces]

    def encode_tokens(
        self, tokens: Sequence[str]
    ) -> tuple[PieceSequence, SubwordAlignment]:
        """Tokenize pre-split tokens into a framed piece sequence plus alignment.

        The alignment covers only the content region (framing specials excluded).
        """
        if not tokens:
            raise TokenizerError("cannot encode an empty token sequence")
        piece_strings: list[str] = []
        piece_ids: list[int] = []
        piece_to_token: list[int] = []
        first_mask: list[bool] = []
        for ti, tok in enumerate(tokens):
            strs, ids = self._token_pieces(tok)
            for j, (s, i) in enumerate(zip(strs, ids)):
                piece_strings.append(s)
                piece_ids.append(i)
                piece_to_token.append(ti)
                first_mask.append(j == 0)
        ids = (CLS_ID, *piece_ids, SEP_ID)
        special = (True,) + (False,) * len(piece_ids) + (True,)
        seq = PieceSequence(ids, special)
        alignment = SubwordAlignment(
            tuple(piece_strings), tuple(piece_to_token), tuple(first_mask)
        )
        return seq, alignment

    def content_piece_count(self, tokens: Sequence[str]) -> int:
        return sum(len(self._token_pieces(t)[0]) for t in tokens)

    def to_meta(self) -> dict:
        return {
            "scheme": HASH_SCHEME,
            "word_vocab": list(self.word_vocab),
            "extra_vocab": list(self.extra_vocab),
            "n_buckets": self.n_buckets,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "CharBigramTokenizer":
        if meta.get("scheme") != HASH_SCHEME:
            raise TokenizerError(f"unsupported tokenizer scheme {meta.get('scheme')!r}")
        return cls(meta["word_vocab"], meta["extra_vocab"], meta["n_buckets"])
