"""Contrastive pre-training, pairwise fine-tuning and evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .augment import AugmentationPolicy, augment_offer
from .entity_graph import EntityLabeling, pretraining_pool, singleton_labels
from .losses import bce_loss_and_grad, sigmoid, simclr_loss_and_grad, supcon_loss_and_grad, \
    two_view_pairing
from .neural import (ENCODER_PARAMS, HEAD_PARAMS, ModelConfig, ModelState, TokenBatch,
                     encoder_backward, encoder_forward, head_backward, head_forward,
                     init_state, pair_backward, pair_forward, tokenize)
from .optim import LinearSchedule, adam_step
from .records import Corpus, PairAnnotation, serialize_offer
from .sampling import batch_rng, build_pooled_dataset, build_sampling_datasets, sample_batch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainConfig:
    batch_size: int = 32          # N; a batch holds 2N offers
    epochs: int = 50
    lr: float = 1e-3
    warmup_ratio: float = 0.05
    temperature: float = 0.07
    mode: str = "supcon"          # supcon | simclr
    sampling: str = "source_aware"  # source_aware | pooled
    augmentation: Optional[AugmentationPolicy] = None
    dataset_choice: str = "uniform"
    seed: int = 1
    debug: bool = False

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0 or self.temperature <= 0:
            raise ValueError("batch_size, lr and temperature must be positive, epochs >= 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1)")
        if self.mode not in ("supcon", "simclr"):
            raise ValueError(f"unknown pre-training mode {self.mode!r}")
        if self.sampling not in ("source_aware", "pooled"):
            raise ValueError(f"unknown sampling {self.sampling!r}")


@dataclass(frozen=True)
class FinetuneConfig:
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 10
    encoder_frozen: bool = True
    lr: float = 1e-3
    head_lr: Optional[float] = None   # defaults to lr
    warmup_ratio: float = 0.05
    seed: int = 1

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, **row) -> None:
        self.rows.append(row)

    def to_csv(self, path) -> None:
        if not self.rows:
            open(path, "w").close()
            return
        cols = list(self.rows[0])
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols) + "\n")
            for r in self.rows:
                fh.write(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                                  for c in cols) + "\n")


class TokenCache:
    """Serialized and tokenized offers, computed once per offer."""

    def __init__(self, corpus: Corpus, config: ModelConfig):
        self.corpus = corpus
        self.tok_cfg = config.tokenizer
        self._text: dict[str, str] = {}
        self._ids: dict[str, np.ndarray] = {}

    def text(self, oid: str) -> str:
        if oid not in self._text:
            self._text[oid] = serialize_offer(self.corpus.offers[oid])
        return self._text[oid]

    def ids(self, oid: str) -> np.ndarray:
        if oid not in self._ids:
            self._ids[oid] = tokenize(self.text(oid), self.tok_cfg)
        return self._ids[oid]

    def batch(self, oids: Sequence[str]) -> TokenBatch:
        return TokenBatch.pack([self.ids(o) for o in oids])


def pretrain(corpus: Corpus, labeling: EntityLabeling, cfg: PretrainConfig,
             state: Optional[ModelState] = None,
             model_config: ModelConfig = ModelConfig()) -> tuple[ModelState, TrainLog]:
    """Contrastive pre-training of the encoder on 2N-offer batches."""
    if state is None:
        state = init_state(model_config, cfg.seed)
    state = state.copy()
    state.reset_optimizer()
    pool = pretraining_pool(corpus)
    if not pool:
        raise ValueError("empty pre-training pool")
    if cfg.mode == "simclr":
        labeling = singleton_labels(pool)
    if cfg.sampling == "source_aware":
        datasets = build_sampling_datasets(pool, labeling, corpus)
    else:
        datasets = [build_pooled_dataset(pool, labeling, corpus)]

    cache = TokenCache(corpus, state.config)
    n = cfg.batch_size
    steps = math.ceil(len(pool) / (2 * n))
    schedule = LinearSchedule.from_ratio(cfg.lr, steps * cfg.epochs, cfg.warmup_ratio)
    aug = cfg.augmentation if cfg.augmentation is not None and cfg.augmentation.enabled else None
    pairing = two_view_pairing(n)
    trace = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        for step in range(steps):
            rng = batch_rng(cfg.seed, epoch, step)
            batch = sample_batch(datasets, n, rng, cfg.dataset_choice, cfg.debug)
            if aug is None:
                tokens = cache.batch(batch.offer_ids)
            else:
                tokens = TokenBatch.pack([
                    tokenize(augment_offer(cache.text(o), aug, rng), cache.tok_cfg)
                    for o in batch.offer_ids
                ])
            _, z, enc_cache = encoder_forward(state, tokens, True, rng)
            if cfg.mode == "supcon":
                loss, dz = supcon_loss_and_grad(z, batch.labels, cfg.temperature, cfg.debug)
            else:
                loss, dz = simclr_loss_and_grad(z, pairing, cfg.temperature, cfg.debug)
            grads = encoder_backward(state, enc_cache, d_projected=dz)
            lr = adam_step(state, grads, schedule, ENCODER_PARAMS)
            trace.add(epoch=epoch, step=state.step, loss=loss, lr=lr, origin=batch.origin)
        log.debug("pretrain epoch %d loss %.4f", epoch, trace.rows[-1]["loss"])
    return state, trace


class EarlyStopping:
    """Track the best validation loss; signal a stop after ``patience`` bad epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.snapshot = None

    def update(self, loss: float, epoch: int, snapshot: Callable[[], object]) -> bool:
        if loss < self.best_loss:
            self.best_loss, self.best_epoch, self.bad_epochs = loss, epoch, 0
            self.snapshot = snapshot()
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def _pair_arrays(pairs: Sequence[PairAnnotation]):
    left = [p.left_id for p in pairs]
    right = [p.right_id for p in pairs]
    return left, right, np.array([p.label for p in pairs], dtype=np.float64)


def pooled_vectors(state: ModelState, cache: TokenCache, oids: Sequence[str],
                   chunk: int = 512) -> dict[str, np.ndarray]:
    """Eval-mode pooled representation per offer."""
    out = {}
    for i in range(0, len(oids), chunk):
        part = list(oids[i:i + chunk])
        pooled, _, _ = encoder_forward(state, cache.batch(part), False)
        out.update(zip(part, pooled))
    return out


def pair_logits(state: ModelState, corpus: Corpus, pairs: Sequence[PairAnnotation],
                cache: Optional[TokenCache] = None) -> np.ndarray:
    """Eval-mode logits for ``pairs``."""
    cache = cache or TokenCache(corpus, state.config)
    left, right, _ = _pair_arrays(pairs)
    vecs = pooled_vectors(state, cache, list(dict.fromkeys(left + right)))
    if not pairs:
        return np.zeros(0)
    u = np.stack([vecs[o] for o in left])
    v = np.stack([vecs[o] for o in right])
    logits, _ = head_forward(state, u, v, False)
    return logits


def finetune(corpus: Corpus, state: ModelState, cfg: FinetuneConfig,
             val_loss_fn: Optional[Callable[[ModelState, int], float]] = None
             ) -> tuple[ModelState, int, TrainLog]:
    """BCE fine-tuning with early stopping on validation loss.

    Returns the snapshot with the lowest validation loss and its epoch. A
    frozen encoder runs in eval mode and its pooled vectors are computed
    once; only the head is updated. ``val_loss_fn`` overrides the
    validation loss (used in tests of the stopping rule).
    """
    train, valid = corpus.pairs["train"], corpus.pairs["valid"]
    if not train or not valid:
        raise ValueError("fine-tuning needs non-empty train and validation pairs")
    state = state.copy()
    state.reset_optimizer()
    cache = TokenCache(corpus, state.config)
    left, right, y = _pair_arrays(train)
    frozen = cfg.encoder_frozen
    if frozen:
        vecs = pooled_vectors(state, cache, list(dict.fromkeys(left + right)))
        U = np.stack([vecs[o] for o in left])
        V = np.stack([vecs[o] for o in right])
    names = HEAD_PARAMS if frozen else tuple(n for n in ENCODER_PARAMS + HEAD_PARAMS if n != "Wp")

    steps = math.ceil(len(train) / cfg.batch_size)
    schedule = LinearSchedule.from_ratio(cfg.lr, steps * cfg.max_epochs, cfg.warmup_ratio)
    head_scale = (cfg.head_lr or cfg.lr) / cfg.lr
    lr_scale = {n: head_scale for n in HEAD_PARAMS}
    stopper = EarlyStopping(cfg.patience)
    trace = TrainLog()
    for epoch in range(1, cfg.max_epochs + 1):
        order = np.random.default_rng([cfg.seed, 0xF1, epoch]).permutation(len(train))
        losses = []
        for step in range(steps):
            idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
            rng = np.random.default_rng([cfg.seed, 0xF2, epoch, step])
            if frozen:
                logits, head_cache = head_forward(state, U[idx], V[idx], True, rng)
                loss, dlogits = bce_loss_and_grad(logits, y[idx])
                grads = head_backward(state, head_cache, dlogits)[0]
            else:
                lb = cache.batch([left[i] for i in idx])
                rb = cache.batch([right[i] for i in idx])
                logits, pc = pair_forward(state, lb, rb, True, rng)
                loss, dlogits = bce_loss_and_grad(logits, y[idx])
                grads = pair_backward(state, pc, dlogits)
            adam_step(state, grads, schedule, names, lr_scale)
            losses.append(loss)
        if val_loss_fn is not None:
            val_loss = val_loss_fn(state, epoch)
        else:
            val_loss = bce_loss_and_grad(pair_logits(state, corpus, valid, cache),
                                         _pair_arrays(valid)[2])[0]
        trace.add(epoch=epoch, train_loss=float(np.mean(losses)), val_loss=float(val_loss))
        if stopper.update(val_loss, epoch, state.copy):
            break
    return stopper.snapshot, stopper.best_epoch, trace


@dataclass(frozen=True)
class EvalReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    threshold: float = 0.5

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int, threshold: float = 0.5):
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f1, tp, fp, fn, tn, threshold)

    @classmethod
    def from_predictions(cls, probs, targets, threshold: float = 0.5):
        pred = np.asarray(probs) > threshold
        t = np.asarray(targets).astype(bool)
        return cls.from_counts(int((pred & t).sum()), int((pred & ~t).sum()),
                               int((~pred & t).sum()), int((~pred & ~t).sum()), threshold)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("precision", "recall", "f1", "tp", "fp", "fn", "tn", "threshold")}


def evaluate(corpus: Corpus, split: str, state: ModelState, threshold: float = 0.5) -> EvalReport:
    pairs = corpus.pairs[split]
    if not pairs:
        raise ValueError(f"split {split!r} has no pairs")
    probs = sigmoid(pair_logits(state, corpus, pairs))
    return EvalReport.from_predictions(probs, _pair_arrays(pairs)[2], threshold)


def cosine_separation(state: ModelState, corpus: Corpus, entity_of: dict[str, int],
                      oids: Optional[Sequence[str]] = None) -> float:
    """Mean intra-entity minus mean inter-entity cosine of projected embeddings."""
    oids = list(oids if oids is not None else entity_of)
    cache = TokenCache(corpus, state.config)
    _, z, _ = encoder_forward(state, cache.batch(oids), False)
    sims = z @ z.T
    ent = np.array([entity_of[o] for o in oids])
    same = ent[:, None] == ent[None, :]
    off = ~np.eye(len(oids), dtype=bool)
    return float(sims[same & off].mean() - sims[~same].mean())
