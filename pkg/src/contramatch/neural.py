"""Hashing tokenizer, compact text encoder and pairwise classification head.

Encoder, for a batch of token sequences::

    x      = mean of token embeddings (zero vector for an empty sequence)
    h1     = dropout(tanh(x @ W1 + b1))           # dropout in train mode only
    pooled = tanh(h1 @ W2 + b2)
    proj   = normalize(pooled @ Wp)               # x / (||x|| + 1e-12)

Pair head: ``logit = dropout([u, v, |u-v|, u*v]) @ Wc + bc`` on the pooled
vectors ``u`` and ``v``.

Gradients are hand-derived. Forward functions return a cache that the
matching backward function consumes; dropout masks live in the cache so
backward replays them exactly.
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels

CHECKPOINT_VERSION = 1
NORM_EPS = 1e-12
ENCODER_PARAMS = ("E", "W1", "b1", "W2", "b2", "Wp")
HEAD_PARAMS = ("Wc", "bc")
PARAM_NAMES = ENCODER_PARAMS + HEAD_PARAMS

_TOKEN_RE = re.compile(r"\[COL\]|\[VAL\]|\w+|[^\w\s]")


@dataclass(frozen=True)
class TokenizerConfig:
    vocab_size: int = 32768
    max_tokens: int = 128

    def __post_init__(self):
        if self.vocab_size <= 3:
            raise ValueError("vocab_size must exceed the 3 reserved ids")


def tokenize(text: str, cfg: TokenizerConfig = TokenizerConfig()) -> np.ndarray:
    """Lowercase, split on whitespace/punctuation and hash tokens to ids.

    ``[COL]`` and ``[VAL]`` map to ids 1 and 2; every other token ``t`` maps
    to ``3 + fnv1a64(utf8(t)) % (V - 3)``. Punctuation characters are
    tokens of their own.
    """
    tokens = [t if t in ("[COL]", "[VAL]") else t.lower() for t in _TOKEN_RE.findall(text)]
    return kernels.hash_tokens(tokens[: cfg.max_tokens], cfg.vocab_size)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 32768
    max_tokens: int = 128
    embed_dim: int = 64
    hidden_dim: int = 256
    proj_dim: int = 32
    dropout: float = 0.1

    @property
    def tokenizer(self) -> TokenizerConfig:
        return TokenizerConfig(self.vocab_size, self.max_tokens)


@dataclass
class ModelState:
    """Parameters plus Adam moments.

    ``touched`` marks embedding rows that have ever received a gradient; the
    optimizer only visits those rows, which is exact because untouched rows
    have zero moments.
    """
    config: ModelConfig
    params: dict[str, np.ndarray]
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    touched: np.ndarray
    step: int = 0
    seed: int = 0

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: a.copy() for k, a in self.params.items()},
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
            self.touched.copy(),
            self.step,
            self.seed,
        )

    def reset_optimizer(self) -> None:
        for k in self.m:
            self.m[k][...] = 0.0
            self.v[k][...] = 0.0
        self.touched[...] = False
        self.step = 0


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_state(config: ModelConfig = ModelConfig(), seed: int = 0) -> ModelState:
    rng = np.random.default_rng(seed)
    d, h, k = config.embed_dim, config.hidden_dim, config.proj_dim
    params = {
        "E": rng.uniform(-0.05, 0.05, size=(config.vocab_size, d)),
        "W1": _xavier(rng, d, h, (d, h)),
        "b1": np.zeros(h),
        "W2": _xavier(rng, h, d, (h, d)),
        "b2": np.zeros(d),
        "Wp": _xavier(rng, d, k, (d, k)),
        "Wc": _xavier(rng, 4 * d, 1, (4 * d,)),
        "bc": np.zeros(()),
    }
    zeros = {name: np.zeros_like(a) for name, a in params.items()}
    return ModelState(
        config, params, zeros, {n: a.copy() for n, a in zeros.items()},
        np.zeros(config.vocab_size, dtype=bool), 0, seed,
    )


@dataclass(frozen=True)
class TokenBatch:
    """Token sequences packed as one id array plus ``n + 1`` offsets."""
    ids: np.ndarray
    offsets: np.ndarray

    @classmethod
    def pack(cls, seqs: Sequence[np.ndarray]) -> "TokenBatch":
        lengths = np.fromiter((len(s) for s in seqs), dtype=np.int64, count=len(seqs))
        offsets = np.zeros(len(seqs) + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        ids = np.concatenate(seqs).astype(np.int64) if len(seqs) and offsets[-1] else \
            np.zeros(0, dtype=np.int64)
        return cls(ids, offsets)

    def __len__(self) -> int:
        return len(self.offsets) - 1


@dataclass(frozen=True)
class RowGrad:
    """Gradient for a subset of embedding rows."""
    rows: np.ndarray
    values: np.ndarray

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        out[self.rows] = self.values
        return out


@dataclass(frozen=True)
class EncoderOutput:
    pooled: np.ndarray
    projected: np.ndarray

    @property
    def degenerate(self) -> bool:
        """True when the projection is (numerically) the zero vector."""
        return bool(np.linalg.norm(self.projected) < 0.5)


def _dropout_mask(rng, shape, p: float) -> np.ndarray:
    return (rng.random(shape) >= p) / (1.0 - p)


def encoder_forward(state: ModelState, batch: TokenBatch, train: bool,
                    rng: Optional[np.random.Generator] = None):
    """Return ``(pooled, projected, cache)`` for every sequence of ``batch``."""
    P = state.params
    p = state.config.dropout
    x = kernels.mean_pool(P["E"], batch.ids, batch.offsets)
    h1 = np.tanh(x @ P["W1"] + P["b1"])
    mask = None
    if train and p > 0.0:
        if rng is None:
            raise ValueError("train mode with dropout needs an rng")
        mask = _dropout_mask(rng, h1.shape, p)
        h1d = h1 * mask
    else:
        h1d = h1
    pooled = np.tanh(h1d @ P["W2"] + P["b2"])
    q = pooled @ P["Wp"]
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    projected = q / (norm + NORM_EPS)
    cache = {"batch": batch, "x": x, "h1": h1, "mask": mask, "h1d": h1d,
             "pooled": pooled, "q": q, "norm": norm}
    return pooled, projected, cache


def encoder_backward(state: ModelState, cache, d_projected=None, d_pooled=None) -> dict:
    """Gradients of the encoder parameters; ``E`` comes back as a :class:`RowGrad`."""
    if cache is None:
        raise RuntimeError("encoder_backward called without a recorded forward pass")
    P = state.params
    pooled = cache["pooled"]
    g_pooled = np.zeros_like(pooled) if d_pooled is None else np.array(d_pooled, dtype=float)
    grads: dict = {}
    if d_projected is not None:
        q, norm = cache["q"], cache["norm"]
        denom = norm + NORM_EPS
        safe = np.where(norm > 0, norm, 1.0)
        radial = (q * d_projected).sum(axis=1, keepdims=True) / (safe * denom ** 2)
        dq = d_projected / denom - q * radial
        grads["Wp"] = pooled.T @ dq
        g_pooled += dq @ P["Wp"].T
    else:
        grads["Wp"] = np.zeros_like(P["Wp"])
    da2 = g_pooled * (1.0 - pooled ** 2)
    grads["W2"] = cache["h1d"].T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ P["W2"].T
    if cache["mask"] is not None:
        dh1 = dh1 * cache["mask"]
    h1 = cache["h1"]
    da1 = dh1 * (1.0 - h1 ** 2)
    grads["W1"] = cache["x"].T @ da1
    grads["b1"] = da1.sum(axis=0)
    dx = da1 @ P["W1"].T
    batch: TokenBatch = cache["batch"]
    rows, inverse = np.unique(batch.ids, return_inverse=True)
    values = kernels.scatter_mean_grad(dx, inverse.astype(np.int64), batch.offsets, len(rows))
    grads["E"] = RowGrad(rows, values)
    return grads


def combine_pair(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``[u, v, |u - v|, u * v]`` along the last axis."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return np.concatenate([u, v, np.abs(u - v), u * v], axis=-1)


def head_forward(state: ModelState, u: np.ndarray, v: np.ndarray, train: bool,
                 rng: Optional[np.random.Generator] = None):
    feats = combine_pair(u, v)
    p = state.config.dropout
    mask = _dropout_mask(rng, feats.shape, p) if train and p > 0.0 else None
    fd = feats * mask if mask is not None else feats
    logits = fd @ state.params["Wc"] + state.params["bc"]
    return logits, {"u": u, "v": v, "fd": fd, "mask": mask}


def head_backward(state: ModelState, cache, d_logits: np.ndarray):
    """Return ``(grads, du, dv)`` for the classification head."""
    if cache is None:
        raise RuntimeError("head_backward called without a recorded forward pass")
    d = cache["u"].shape[1]
    grads = {"Wc": cache["fd"].T @ d_logits, "bc": np.asarray(d_logits.sum())}
    df = np.outer(d_logits, state.params["Wc"])
    if cache["mask"] is not None:
        df = df * cache["mask"]
    u, v = cache["u"], cache["v"]
    sign = np.sign(u - v)
    du = df[:, :d] + sign * df[:, 2 * d:3 * d] + v * df[:, 3 * d:]
    dv = df[:, d:2 * d] - sign * df[:, 2 * d:3 * d] + u * df[:, 3 * d:]
    return grads, du, dv


def pair_forward(state: ModelState, left: TokenBatch, right: TokenBatch, train: bool,
                 rng: Optional[np.random.Generator] = None, encoder_train: Optional[bool] = None):
    """Logits for aligned left/right batches; both sides share one encoder pass."""
    if encoder_train is None:
        encoder_train = train
    n = len(left)
    both = TokenBatch(
        np.concatenate([left.ids, right.ids]),
        np.concatenate([left.offsets, right.offsets[1:] + left.offsets[-1]]),
    )
    pooled, _, enc_cache = encoder_forward(state, both, encoder_train, rng)
    logits, head_cache = head_forward(state, pooled[:n], pooled[n:], train, rng)
    return logits, {"enc": enc_cache, "head": head_cache}


def pair_backward(state: ModelState, cache, d_logits: np.ndarray, frozen: bool = False) -> dict:
    """Gradients for the pair classifier. A frozen encoder gets no gradients."""
    if cache is None:
        raise RuntimeError("pair_backward called without a recorded forward pass")
    grads, du, dv = head_backward(state, cache["head"], d_logits)
    if not frozen:
        enc = encoder_backward(state, cache["enc"], d_pooled=np.vstack([du, dv]))
        del enc["Wp"]
        grads.update(enc)
    return grads


def dense_grads(state: ModelState, grads: dict) -> dict[str, np.ndarray]:
    """Every parameter's gradient as a dense array; absent entries are zero."""
    out = {}
    for name, arr in state.params.items():
        g = grads.get(name)
        if g is None:
            out[name] = np.zeros_like(arr)
        elif isinstance(g, RowGrad):
            out[name] = g.to_dense(arr.shape)
        else:
            out[name] = np.asarray(g, dtype=np.float64).reshape(arr.shape)
    return out


def encode(tokens: np.ndarray, state: ModelState, mode: str = "eval",
           rng: Optional[np.random.Generator] = None) -> EncoderOutput:
    pooled, projected, _ = encoder_forward(state, TokenBatch.pack([tokens]), mode == "train", rng)
    return EncoderOutput(pooled[0], projected[0])


def classify_pair(left: np.ndarray, right: np.ndarray, state: ModelState, mode: str = "eval",
                  rng: Optional[np.random.Generator] = None) -> float:
    logits, _ = pair_forward(state, TokenBatch.pack([left]), TokenBatch.pack([right]),
                             mode == "train", rng)
    return float(logits[0])


def save_checkpoint(state: ModelState, path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(state.config),
            "step": state.step, "seed": state.seed}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
              "touched": state.touched}
    for name in PARAM_NAMES:
        arrays[f"param/{name}"] = state.params[name]
        arrays[f"m/{name}"] = state.m[name]
        arrays[f"v/{name}"] = state.v[name]
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> ModelState:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(data["__meta__"].tobytes().decode("utf-8"))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        return ModelState(
            ModelConfig(**meta["config"]),
            {n: data[f"param/{n}"].copy() for n in PARAM_NAMES},
            {n: data[f"m/{n}"].copy() for n in PARAM_NAMES},
            {n: data[f"v/{n}"].copy() for n in PARAM_NAMES},
            data["touched"].copy(),
            meta["step"],
            meta["seed"],
        )
