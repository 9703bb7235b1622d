"""Contrastive (SupCon, SimCLR) and binary cross-entropy losses with gradients.

Contrastive losses take unit-normalised embeddings ``z`` of shape (n, k).
For anchor ``i`` with positive set ``P(i)`` and contrast set ``A(i)`` (the
batch minus ``i``)::

    l_i = -1/|P(i)| * sum_{p in P(i)} log( exp(z_i.z_p/t) / sum_{a in A(i)} exp(z_i.z_a/t) )

and the loss is the mean of ``l_i`` over anchors with a non-empty ``P(i)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_TEMPERATURE = 0.07


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = DEFAULT_TEMPERATURE
    mode: str = "supcon"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.mode not in ("supcon", "simclr"):
            raise ValueError(f"unknown contrastive mode {self.mode!r}")


def _check(z: np.ndarray, debug: bool) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise ValueError(f"contrastive loss needs a batch of at least 2 vectors, got {z.shape}")
    if debug:
        norms = np.linalg.norm(z, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-3):
            raise ValueError(f"embeddings are not unit-normalised (norms {norms.round(4)})")
    return z


def _masked_contrastive(z: np.ndarray, positives: np.ndarray, temperature: float):
    """Loss and d loss / d z for a boolean positive mask with a False diagonal."""
    logits = z @ z.T / temperature
    np.fill_diagonal(logits, -np.inf)
    row_max = logits.max(axis=1, keepdims=True)
    shifted = logits - row_max
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = shifted - np.log(denom)
    softmax = exp / denom

    counts = positives.sum(axis=1)
    valid = counts > 0
    num_valid = int(valid.sum())
    if num_valid == 0:
        return 0.0, np.zeros_like(z)
    pos = positives.astype(np.float64)
    safe_counts = np.where(valid, counts, 1)
    pos_log_prob = np.where(positives, log_prob, 0.0).sum(axis=1)
    per_anchor = -pos_log_prob / safe_counts
    loss = float(per_anchor[valid].sum() / num_valid)

    coeff = softmax - pos / safe_counts[:, None]
    coeff[~valid] = 0.0
    coeff /= num_valid
    np.fill_diagonal(coeff, 0.0)
    grad = (coeff + coeff.T) @ z / temperature
    return loss, grad


def label_positive_mask(labels: Sequence[int]) -> np.ndarray:
    labels = np.asarray(labels)
    mask = labels[:, None] == labels[None, :]
    np.fill_diagonal(mask, False)
    return mask


def pairing_positive_mask(pairing: Sequence[int]) -> np.ndarray:
    pairing = np.asarray(pairing, dtype=np.int64)
    n = len(pairing)
    if np.any(pairing < 0) or np.any(pairing >= n) or np.any(pairing == np.arange(n)):
        raise ValueError("pairing must map each index to a different in-batch index")
    mask = np.zeros((n, n), dtype=bool)
    mask[np.arange(n), pairing] = True
    return mask


def supcon_loss_and_grad(z, labels, temperature: float = DEFAULT_TEMPERATURE,
                         debug: bool = False):
    z = _check(z, debug)
    if len(labels) != z.shape[0]:
        raise ValueError("labels and embeddings differ in length")
    return _masked_contrastive(z, label_positive_mask(labels), temperature)


def supcon_loss(z, labels, temperature: float = DEFAULT_TEMPERATURE, debug: bool = False) -> float:
    return supcon_loss_and_grad(z, labels, temperature, debug)[0]


def simclr_loss_and_grad(z, pairing, temperature: float = DEFAULT_TEMPERATURE,
                         debug: bool = False):
    """SimCLR: the only positive of anchor ``i`` is ``pairing[i]``."""
    z = _check(z, debug)
    if len(pairing) != z.shape[0]:
        raise ValueError("pairing and embeddings differ in length")
    return _masked_contrastive(z, pairing_positive_mask(pairing), temperature)


def simclr_loss(z, pairing, temperature: float = DEFAULT_TEMPERATURE, debug: bool = False) -> float:
    return simclr_loss_and_grad(z, pairing, temperature, debug)[0]


def two_view_pairing(n: int) -> np.ndarray:
    """Pairing for a batch laid out as N anchors followed by their N copies."""
    return np.concatenate([np.arange(n, 2 * n), np.arange(n)])


def bce_loss_and_grad(logits, targets):
    """Mean binary cross-entropy on logits, in the overflow-safe form."""
    x = np.asarray(logits, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("bce_loss needs at least one logit")
    if x.shape != t.shape:
        raise ValueError("logits and targets differ in length")
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    grad = (sigmoid(x) - t) / x.size
    return float(per.mean()), grad


def bce_loss(logits, targets) -> float:
    return bce_loss_and_grad(logits, targets)[0]


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
