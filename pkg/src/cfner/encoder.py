"""Trainable desk-scale contextual encoder.

A small transformer (learned piece embeddings + sinusoidal positions + stacked
self-attention blocks) implemented directly on numpy with hand-derived
backward passes, so gradients can be checked against central finite
differences.  Inference is a pure function of (sequence, parameters); training
is deterministic for a fixed seed on a single worker.

Pretrained external encoders plug in behind the same ``encode`` contract via
:class:`EncoderAdapter`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .tokenizer import PieceSequence

Params = dict[str, np.ndarray]
Grads = dict[str, np.ndarray]


class EncoderError(ValueError):
    pass


class OverLengthError(EncoderError):
    """Sequence exceeds the configured maximum; caller must split upstream."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss; reported, never silently clamped."""


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    hidden: int = 64
    blocks: int = 2
    heads: int = 4
    ffn: int = 256
    max_len: int = 128

    def __post_init__(self) -> None:
        if self.hidden % self.heads != 0:
            raise EncoderError("hidden width must be divisible by head count")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def to_meta(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "hidden": self.hidden,
            "blocks": self.blocks,
            "heads": self.heads,
            "ffn": self.ffn,
            "max_len": self.max_len,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "EncoderConfig":
        return cls(**meta)


@dataclass(frozen=True)
class EncoderOutput:
    vectors: np.ndarray  # [pieces, hidden]
    pooled: np.ndarray  # [hidden], the sequence-start vector


def init_params(config: EncoderConfig, rng: np.random.Generator) -> Params:
    """Initialize trainable tensors (float64, scale 0.02 normals)."""
    h, f = config.hidden, config.ffn

    def w(*shape: int) -> np.ndarray:
        return rng.normal(0.0, 0.02, size=shape)

    params: Params = {"embed": w(config.vocab_size, h)}
    for b in range(config.blocks):
        p = f"blocks.{b}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{name}"] = w(h, h)
        for name in ("bq", "bk", "bv", "bo"):
            params[f"{p}.attn.{name}"] = np.zeros(h)
        params[f"{p}.ln1.gain"] = np.ones(h)
        params[f"{p}.ln1.bias"] = np.zeros(h)
        params[f"{p}.ffn.w1"] = w(h, f)
        params[f"{p}.ffn.b1"] = np.zeros(f)
        params[f"{p}.ffn.w2"] = w(f, h)
        params[f"{p}.ffn.b2"] = np.zeros(h)
        params[f"{p}.ln2.gain"] = np.ones(h)
        params[f"{p}.ln2.bias"] = np.zeros(h)
    return params


def sinusoidal_positions(max_len: int, hidden: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    dim = np.arange(hidden)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (dim // 2) / hidden)
    enc = np.empty((max_len, hidden))
    enc[:, 0::2] = np.sin(angle[:, 0::2])
    enc[:, 1::2] = np.cos(angle[:, 1::2])
    return enc


_LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)
_POS_SCALE = 0.1


def _layer_norm(y: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    mu = y.mean(axis=-1, keepdims=True)
    var = ((y - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (y - mu) * inv_std
    return gain * xhat + bias, (xhat, inv_std)


def _layer_norm_backward(dout: np.ndarray, gain: np.ndarray, cache):
    xhat, inv_std = cache
    dgain = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    dbias = dout.sum(axis=tuple(range(dout.ndim - 1)))
    dxhat = dout * gain
    dy = inv_std * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dy, dgain, dbias


def _gelu(h: np.ndarray):
    u = _GELU_C * (h + 0.044715 * h**3)
    t = np.tanh(u)
    return 0.5 * h * (1.0 + t), t


def _gelu_backward(dout: np.ndarray, h: np.ndarray, t: np.ndarray) -> np.ndarray:
    du = _GELU_C * (1.0 + 3 * 0.044715 * h**2)
    return dout * (0.5 * (1.0 + t) + 0.5 * h * (1.0 - t**2) * du)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, l, h = x.shape
    return x.reshape(b, l, heads, h // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, nh, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, nh * dh)


def forward(
    config: EncoderConfig,
    params: Params,
    ids: np.ndarray,
    attn_mask: np.ndarray,
    need_cache: bool = False,
):
    """Run the encoder on padded id batches.

    ``ids``: int array [batch, length]; ``attn_mask``: 1.0 at real pieces, 0.0
    at padding.  Returns (vectors [batch, length, hidden], cache-or-None).
    """
    b, l = ids.shape
    if l > config.max_len:
        raise OverLengthError(f"{l} pieces exceed the maximum of {config.max_len}")
    # embeddings are scaled up so the fixed-amplitude positional signal does
    # not drown the content signal at init
    x = params["embed"][ids] * np.sqrt(config.hidden) + _POS_SCALE * sinusoidal_positions(
        l, config.hidden
    )[None, :, :]
    # masked key positions get a large negative score before softmax
    neg = (1.0 - attn_mask)[:, None, None, :] * -1e30
    scale = 1.0 / np.sqrt(config.head_dim)
    caches = [] if need_cache else None
    x0 = x
    for bi in range(config.blocks):
        p = f"blocks.{bi}"
        q = x @ params[f"{p}.attn.wq"] + params[f"{p}.attn.bq"]
        k = x @ params[f"{p}.attn.wk"] + params[f"{p}.attn.bk"]
        v = x @ params[f"{p}.attn.wv"] + params[f"{p}.attn.bv"]
        qh, kh, vh = (_split_heads(t, config.heads) for t in (q, k, v))
        scores = qh @ kh.transpose(0, 1, 3, 2) * scale + neg
        scores -= scores.max(axis=-1, keepdims=True)
        att = np.exp(scores)
        att /= att.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(att @ vh)
        attn_out = ctx @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"]
        y1 = x + attn_out
        x1, ln1_cache = _layer_norm(
            y1, params[f"{p}.ln1.gain"], params[f"{p}.ln1.bias"]
        )
        hpre = x1 @ params[f"{p}.ffn.w1"] + params[f"{p}.ffn.b1"]
        act, gelu_t = _gelu(hpre)
        ffn_out = act @ params[f"{p}.ffn.w2"] + params[f"{p}.ffn.b2"]
        y2 = x1 + ffn_out
        x2, ln2_cache = _layer_norm(
            y2, params[f"{p}.ln2.gain"], params[f"{p}.ln2.bias"]
        )
        if need_cache:
            caches.append(
                {
                    "x_in": x,
                    "qh": qh,
                    "kh": kh,
                    "vh": vh,
                    "att": att,
                    "ctx": ctx,
                    "x1": x1,
                    "ln1": ln1_cache,
                    "hpre": hpre,
                    "gelu_t": gelu_t,
                    "act": act,
                    "ln2": ln2_cache,
                }
            )
        x = x2
    cache = {"ids": ids, "x0": x0, "blocks": caches} if need_cache else None
    return x, cache


def backward(
    config: EncoderConfig, params: Params, cache: dict, dvectors: np.ndarray
) -> Grads:
    """Backpropagate through the encoder; returns gradients for every tensor."""
    grads: Grads = {}
    scale = 1.0 / np.sqrt(config.head_dim)
    dx = dvectors
    for bi in reversed(range(config.blocks)):
        p = f"blocks.{bi}"
        c = cache["blocks"][bi]
        dy2, grads[f"{p}.ln2.gain"], grads[f"{p}.ln2.bias"] = _layer_norm_backward(
            dx, params[f"{p}.ln2.gain"], c["ln2"]
        )
        dx1 = dy2.copy()
        dact = dy2 @ params[f"{p}.ffn.w2"].T
        grads[f"{p}.ffn.w2"] = np.einsum("blf,blh->fh", c["act"], dy2)
        grads[f"{p}.ffn.b2"] = dy2.sum(axis=(0, 1))
        dhpre = _gelu_backward(dact, c["hpre"], c["gelu_t"])
        grads[f"{p}.ffn.w1"] = np.einsum("blh,blf->hf", c["x1"], dhpre)
        grads[f"{p}.ffn.b1"] = dhpre.sum(axis=(0, 1))
        dx1 += dhpre @ params[f"{p}.ffn.w1"].T
        dy1, grads[f"{p}.ln1.gain"], grads[f"{p}.ln1.bias"] = _layer_norm_backward(
            dx1, params[f"{p}.ln1.gain"], c["ln1"]
        )
        dx_in = dy1.copy()
        d_attn_out = dy1
        grads[f"{p}.attn.wo"] = np.einsum("blh,blo->ho", c["ctx"], d_attn_out)
        grads[f"{p}.attn.bo"] = d_attn_out.sum(axis=(0, 1))
        dctx_h = _split_heads(d_attn_out @ params[f"{p}.attn.wo"].T, config.heads)
        datt = dctx_h @ c["vh"].transpose(0, 1, 3, 2)
        dvh = c["att"].transpose(0, 1, 3, 2) @ dctx_h
        att = c["att"]
        dscores = att * (datt - (datt * att).sum(axis=-1, keepdims=True))
        dqh = dscores @ c["kh"] * scale
        dkh = dscores.transpose(0, 1, 3, 2) @ c["qh"] * scale
        x_in = c["x_in"]
        for name, dt in (("wq", dqh), ("wk", dkh), ("wv", dvh)):
            d = _merge_heads(dt)
            grads[f"{p}.attn.{name}"] = np.einsum("blh,blo->ho", x_in, d)
            grads[f"{p}.attn.b{name[1]}"] = d.sum(axis=(0, 1))
            dx_in += d @ params[f"{p}.attn.{name}"].T
        dx = dx_in
    dembed = np.zeros_like(params["embed"])
    np.add.at(dembed, cache["ids"], dx)
    grads["embed"] = dembed * np.sqrt(config.hidden)
    return grads


class Encoder:
    """Bundles a config and parameter dict behind the encode contract."""

    def __init__(self, config: EncoderConfig, params: Params) -> None:
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig, seed: int) -> "Encoder":
        return cls(config, init_params(config, np.random.default_rng(seed)))

    def encode(self, seq: PieceSequence) -> EncoderOutput:
        """Deterministic per-piece vectors for one sequence (inference mode)."""
        ids = np.asarray([seq.ids], dtype=np.int64)
        mask = np.ones_like(ids, dtype=np.float64)
        vectors, _ = forward(self.config, self.params, ids, mask)
        if not np.isfinite(vectors).all():
            raise EncoderError("encoder produced non-finite values")
        return EncoderOutput(vectors=vectors[0], pooled=vectors[0, 0])


class EncoderAdapter(Protocol):
    """Seam for plugging in an external pretrained encoder."""

    def encode(self, seq: PieceSequence) -> EncoderOutput: ...


# ---------------------------------------------------------------------------
# optimization


class Adam:
    """Standard Adam with bias correction; state is part of training determinism."""

    def __init__(
        self,
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ) -> None:
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m: Grads = {}
        self._v: Grads = {}

    def step(self, params: Params, grads: Grads) -> Params:
        self.step_count += 1
        b1, b2 = self.betas
        out: Params = {}
        for name, value in params.items():
            g = grads[name]
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(value)
                self._v[name] = np.zeros_like(value)
            v = self._v[name]
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            self._m[name] = m
            self._v[name] = v
            mhat = m / (1 - b1**self.step_count)
            vhat = v / (1 - b2**self.step_count)
            out[name] = value - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


Objective = Callable[[Params, object], tuple[float, Grads]]


def train_step(
    params: Params, batch: object, objective: Objective, optimizer: Adam
) -> tuple[Params, float]:
    """One gradient-descent update; raises on non-finite loss instead of clamping."""
    loss, grads = objective(params, batch)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite training loss {loss!r}")
    return optimizer.step(params, grads), float(loss)


def softmax_cross_entropy(
    logits: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row CE loss and dloss/dlogits (unreduced) for [N, C] logits."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expv = np.exp(shifted)
    probs = expv / expv.sum(axis=-1, keepdims=True)
    n = logits.shape[0]
    picked = probs[np.arange(n), targets]
    losses = -np.log(np.maximum(picked, 1e-300))
    dlogits = probs.copy()
    dlogits[np.arange(n), targets] -= 1.0
    return losses, dlogits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    expv = np.exp(shifted)
    return expv / expv.sum(axis=-1, keepdims=True)


def pad_batch(
    sequences: Sequence[Sequence[int]],
) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad id sequences; returns (ids [B, L], mask [B, L])."""
    if not sequences:
        raise EncoderError("empty batch")
    longest = max(len(s) for s in sequences)
    ids = np.zeros((len(sequences), longest), dtype=np.int64)
    mask = np.zeros((len(sequences), longest), dtype=np.float64)
    for i, s in enumerate(sequences):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_FORMAT = "cfner-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, meta: dict, params: Params) -> None:
    """Self-describing single-file container: JSON meta + parameter tensors."""
    payload = dict(meta)
    payload["format"] = CHECKPOINT_FORMAT
    payload["format_version"] = CHECKPOINT_VERSION
    arrays = {f"p/{k}": v for k, v in params.items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(payload, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict, Params]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise EncoderError(f"{path}: not a recognized checkpoint container")
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise EncoderError(
                f"{path}: unsupported checkpoint version {meta.get('format_version')}"
            )
        params = {k[2:]: data[k].copy() for k in data.files if k.startswith("p/")}
    return meta, params
