"""Trainable dual encoder mapping captions and image feature vectors into a
shared unit-norm embedding space.

The text side embeds tokens, adds learned position vectors for the first
``max_pos`` positions, runs one single-head self-attention mixing pass with a
residual connection, mean-pools, projects, and L2-normalizes. The image side
is a two-layer tanh MLP followed by L2 normalization. Everything is float64
numpy so gradients can be checked against central finite differences.

Forward passes used during training return caches that the objective module
consumes for backpropagation; the public ``encode_text``/``encode_image``
wrappers are the read-only single-sample entry points.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from hncl.lexicon import (
    COLOR_WORDS,
    OBJECT_WORDS,
    Concept,
    builtin_lexicon,
    normalize_token,
    tokenize,
)
from hncl.corpus import SIZE_NAMES, RELATION_WORDS, feature_dim

__all__ = [
    "UNK_TOKEN",
    "MAX_LOGIT_SCALE",
    "EncoderConfig",
    "ModelParams",
    "CheckpointError",
    "default_vocab",
    "init_params",
    "encode_text",
    "encode_image",
    "save_checkpoint",
    "load_checkpoint",
]

UNK_TOKEN = "<unk>"

# exp(logit_scale) is clamped to this bound wherever similarities are formed.
MAX_LOGIT_SCALE = math.log(100.0)

_MAGIC = b"HNCL"
_CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt, or version-mismatched checkpoints."""


def default_vocab(object_vocab: int = 12) -> tuple[str, ...]:
    """Token vocabulary covering the synthetic caption templates: the article,
    size and color words, the first ``object_vocab`` object names, and the
    relation words. Index 0 is the reserved unknown token."""
    tokens: list[str] = [UNK_TOKEN, "a"]
    seen = set(tokens)
    words: list[str] = list(SIZE_NAMES) + list(COLOR_WORDS)
    words += list(OBJECT_WORDS[:object_vocab]) + list(RELATION_WORDS)
    for word in words:
        for tok in word.split():
            if tok not in seen:
                seen.add(tok)
                tokens.append(tok)
    return tuple(tokens)


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int
    vocab: tuple[str, ...] = field(default_factory=default_vocab)
    d_tok: int = 32
    d: int = 16
    hidden: int = 64
    max_pos: int = 16

    def __post_init__(self) -> None:
        if min(self.feature_dim, self.d_tok, self.d, self.hidden, self.max_pos) <= 0:
            raise ValueError("all encoder dimensions must be positive")
        if len(self.vocab) < 1 or self.vocab[0] != UNK_TOKEN:
            raise ValueError(f"vocab must start with the reserved {UNK_TOKEN!r} token")
        object.__setattr__(self, "vocab", tuple(self.vocab))

    @property
    def token_index(self) -> dict[str, int]:
        idx = self.__dict__.get("_token_index")
        if idx is None:
            idx = {tok: i for i, tok in enumerate(self.vocab)}
            self.__dict__["_token_index"] = idx
        return idx

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "vocab": list(self.vocab),
            "d_tok": self.d_tok,
            "d": self.d,
            "hidden": self.hidden,
            "max_pos": self.max_pos,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(
            feature_dim=int(data["feature_dim"]),
            vocab=tuple(data["vocab"]),
            d_tok=int(data["d_tok"]),
            d=int(data["d"]),
            hidden=int(data["hidden"]),
            max_pos=int(data["max_pos"]),
        )


@dataclass
class ModelParams:
    """All learnable tensors plus the logit scale (a 0-d float64 array)."""

    config: EncoderConfig
    token_emb: np.ndarray
    pos_emb: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    text_proj: np.ndarray
    img_w1: np.ndarray
    img_b1: np.ndarray
    img_w2: np.ndarray
    img_b2: np.ndarray
    logit_scale: np.ndarray

    _ARRAY_FIELDS = (
        "token_emb", "pos_emb", "wq", "wk", "wv", "text_proj",
        "img_w1", "img_b1", "img_w2", "img_b2", "logit_scale",
    )

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in self._ARRAY_FIELDS]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config, *(getattr(self, n).copy() for n in self._ARRAY_FIELDS)
        )

    def zero_like_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self.named_arrays()}

    def scale(self) -> float:
        """exp(logit_scale), clamped to MAX_LOGIT_SCALE."""
        return math.exp(min(float(self.logit_scale), MAX_LOGIT_SCALE))


def init_params(config: EncoderConfig, seed: int) -> ModelParams:
    """Weights ~ N(0, 1/fan_in), zero biases, logit scale ln(1/0.07)."""
    rng = np.random.default_rng(seed)
    dt, d, h, dim = config.d_tok, config.d, config.hidden, config.feature_dim

    def normal(shape, fan_in):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

    return ModelParams(
        config=config,
        token_emb=normal((len(config.vocab), dt), dt),
        pos_emb=normal((config.max_pos, dt), dt),
        wq=normal((dt, dt), dt),
        wk=normal((dt, dt), dt),
        wv=normal((dt, dt), dt),
        text_proj=normal((dt, d), dt),
        img_w1=normal((dim, h), dim),
        img_b1=np.zeros(h),
        img_w2=normal((h, d), h),
        img_b2=np.zeros(d),
        logit_scale=np.asarray(math.log(1.0 / 0.07), dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Text pipeline


def caption_token_ids(config: EncoderConfig, caption: Union[str, Sequence[str]]) -> list[int]:
    """Normalized tokens mapped to vocab ids; out-of-vocab tokens become UNK."""
    tokens = tokenize(caption)
    if not tokens:
        raise ValueError("cannot encode an empty caption")
    index = config.token_index
    return [index.get(normalize_token(t), 0) for t in tokens]


@dataclass
class TextBatch:
    """Captions bucketed by token count so each bucket runs as one tensor op.

    ``groups`` maps caption length to (ids array of shape (B, L), original
    caption positions). Prepared once and reused across repeated forward
    passes, e.g. by the finite-difference oracle.
    """

    n: int
    groups: list[tuple[np.ndarray, np.ndarray]]


def prepare_text_batch(
    config: EncoderConfig, captions: Sequence[Union[str, Sequence[str]]]
) -> TextBatch:
    by_len: dict[int, tuple[list[list[int]], list[int]]] = {}
    for pos, caption in enumerate(captions):
        ids = caption_token_ids(config, caption)
        bucket = by_len.setdefault(len(ids), ([], []))
        bucket[0].append(ids)
        bucket[1].append(pos)
    groups = [
        (np.asarray(ids_list, dtype=np.intp), np.asarray(pos_list, dtype=np.intp))
        for length, (ids_list, pos_list) in sorted(by_len.items())
    ]
    return TextBatch(n=len(captions), groups=groups)


@dataclass
class _TextGroupCache:
    ids: np.ndarray
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    pooled: np.ndarray
    u: np.ndarray
    norms: np.ndarray
    emb: np.ndarray
    positions: np.ndarray


def text_forward(
    params: ModelParams, batch: TextBatch
) -> tuple[np.ndarray, list[_TextGroupCache]]:
    """Embeddings (n, d) for every caption in the batch, plus per-bucket caches."""
    cfg = params.config
    inv_sqrt = 1.0 / math.sqrt(cfg.d_tok)
    out = np.empty((batch.n, cfg.d), dtype=np.float64)
    caches: list[_TextGroupCache] = []
    for ids, positions in batch.groups:
        length = ids.shape[1]
        lp = min(length, cfg.max_pos)
        x = params.token_emb[ids]
        x[:, :lp, :] += params.pos_emb[:lp]
        q = x @ params.wq
        k = x @ params.wk
        v = x @ params.wv
        scores = np.einsum("bld,bmd->blm", q, k) * inv_sqrt
        scores -= scores.max(axis=2, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=2, keepdims=True)
        mixed = np.einsum("blm,bmd->bld", attn, v)
        pooled = (x + mixed).mean(axis=1)
        u = pooled @ params.text_proj
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        emb = u / norms
        out[positions] = emb
        caches.append(_TextGroupCache(ids, x, q, k, v, attn, pooled, u, norms, emb, positions))
    return out, caches


def text_backward(
    params: ModelParams,
    caches: list[_TextGroupCache],
    d_emb: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    """Accumulate gradients of a scalar loss into ``grads`` given d(loss)/d(emb)."""
    cfg = params.config
    inv_sqrt = 1.0 / math.sqrt(cfg.d_tok)
    for c in caches:
        de = d_emb[c.positions]
        du = (de - c.emb * np.sum(c.emb * de, axis=1, keepdims=True)) / c.norms
        grads["text_proj"] += c.pooled.T @ du
        dp = du @ params.text_proj.T
        length = c.ids.shape[1]
        dh = np.repeat(dp[:, None, :], length, axis=1) / length
        dx = dh.copy()
        dmix = dh
        dattn = np.einsum("bld,bmd->blm", dmix, c.v)
        dv = np.einsum("blm,bld->bmd", c.attn, dmix)
        dscores = c.attn * (dattn - np.sum(dattn * c.attn, axis=2, keepdims=True))
        dq = np.einsum("blm,bmd->bld", dscores, c.k) * inv_sqrt
        dk = np.einsum("blm,bld->bmd", dscores, c.q) * inv_sqrt
        dx += dq @ params.wq.T + dk @ params.wk.T + dv @ params.wv.T
        flat_x = c.x.reshape(-1, cfg.d_tok)
        grads["wq"] += flat_x.T @ dq.reshape(-1, cfg.d_tok)
        grads["wk"] += flat_x.T @ dk.reshape(-1, cfg.d_tok)
        grads["wv"] += flat_x.T @ dv.reshape(-1, cfg.d_tok)
        lp = min(length, cfg.max_pos)
        grads["pos_emb"][:lp] += dx[:, :lp, :].sum(axis=0)
        np.add.at(grads["token_emb"], c.ids.ravel(), dx.reshape(-1, cfg.d_tok))


# ---------------------------------------------------------------------------
# Image pipeline


@dataclass
class _ImageCache:
    features: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    norms: np.ndarray
    emb: np.ndarray


def image_forward(params: ModelParams, features: np.ndarray) -> tuple[np.ndarray, _ImageCache]:
    cfg = params.config
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != cfg.feature_dim:
        raise ValueError(
            f"expected image features of dimension {cfg.feature_dim}, got {features.shape}"
        )
    a1 = np.tanh(features @ params.img_w1 + params.img_b1)
    z2 = a1 @ params.img_w2 + params.img_b2
    norms = np.linalg.norm(z2, axis=1, keepdims=True)
    emb = z2 / norms
    return emb, _ImageCache(features, a1, z2, norms, emb)


def image_backward(
    params: ModelParams,
    cache: _ImageCache,
    d_emb: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    dz2 = (d_emb - cache.emb * np.sum(cache.emb * d_emb, axis=1, keepdims=True)) / cache.norms
    grads["img_w2"] += cache.a1.T @ dz2
    grads["img_b2"] += dz2.sum(axis=0)
    da1 = dz2 @ params.img_w2.T
    dz1 = (1.0 - cache.a1**2) * da1
    grads["img_w1"] += cache.features.T @ dz1
    grads["img_b1"] += dz1.sum(axis=0)


# ---------------------------------------------------------------------------
# Public single-sample entry points


def encode_text(params: ModelParams, caption: Union[str, Sequence[str]]) -> np.ndarray:
    """Unit-norm embedding of one caption."""
    batch = prepare_text_batch(params.config, [caption])
    emb, _ = text_forward(params, batch)
    return emb[0]


def encode_image(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of one image feature vector."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1:
        raise ValueError("encode_image expects a single flat feature vector")
    emb, _ = image_forward(params, features[None, :])
    return emb[0]


# ---------------------------------------------------------------------------
# Checkpoint container: magic | version | header JSON | f64 payload | sha256


def save_checkpoint(
    params: ModelParams, path: Union[str, Path], meta: Optional[dict] = None
) -> None:
    arrays = params.named_arrays()
    header = {
        "format": "hncl-checkpoint",
        "config": params.config.to_dict(),
        "meta": meta or {},
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in arrays)
    body = _MAGIC + struct.pack("<II", _CHECKPOINT_VERSION, len(header_bytes)) + header_bytes + payload
    digest = hashlib.sha256(body).digest()
    Path(path).write_bytes(body + digest)


def load_checkpoint(path: Union[str, Path]) -> tuple[ModelParams, dict]:
    """Read a checkpoint, verifying magic, version, and content checksum."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < 44 or blob[:4] != _MAGIC:
        raise CheckpointError(f"not a checkpoint file: {path}")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError(f"checksum mismatch, checkpoint corrupt: {path}")
    version, header_len = struct.unpack("<II", body[4:12])
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(body[12 : 12 + header_len].decode("utf-8"))
    config = EncoderConfig.from_dict(header["config"])
    offset = 12 + header_len
    values = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(shape)
        values[spec["name"]] = arr.astype(np.float64)
        offset += count * 8
    try:
        params = ModelParams(config=config, **values)
    except TypeError as exc:
        raise CheckpointError(f"checkpoint parameter set mismatch: {exc}") from None
    return params, header.get("meta", {})
