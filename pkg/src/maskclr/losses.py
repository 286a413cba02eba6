"""Contrastive and supervised losses.

The contrastive term is the temperature-scaled cross-entropy over pairwise
similarities: for 2N views where view i's positive partner is j,

    l(i, j) = -log( exp(sim(i, j)/t) / sum_{k != i} exp(sim(i, k)/t) )

averaged over all 2N positive-anchored terms. Similarities are cosine by
default (embeddings L2-normalized first); a raw dot product is available
behind the ``normalize`` flag. All log-sum-exp reductions subtract the row
max so temperatures down to 0.01 stay in range.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import (
    ConfigurationError,
    ContractError,
    DegenerateVectorError,
    DimensionError,
    InsufficientBatchError,
)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    supervised_weight: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be > 0")
        if self.supervised_weight < 0:
            raise ConfigurationError("supervised_weight must be >= 0")


def filter_degenerate_pairs(z_a, z_b, eps=ad.EPS_NORM):
    """Drop pairs where either embedding has (near-)zero norm.

    Returns filtered tensors plus the number of dropped pairs. Filtering is
    a constant 0/1 selection matmul, so gradients flow to the survivors.
    """
    if z_a.shape != z_b.shape:
        raise DimensionError("paired embeddings must have matching shapes")
    with np.errstate(over="ignore"):
        na = np.sqrt((z_a.data * z_a.data).sum(axis=1))
        nb = np.sqrt((z_b.data * z_b.data).sum(axis=1))
    keep = (na > eps) & (nb > eps)
    dropped = int((~keep).sum())
    if dropped == 0:
        return z_a, z_b, 0
    idx = np.flatnonzero(keep)
    sel = np.zeros((idx.size, z_a.shape[0]))
    sel[np.arange(idx.size), idx] = 1.0
    sel_t = ad.Tensor(sel)
    return ad.matmul(sel_t, z_a), ad.matmul(sel_t, z_b), dropped


def nt_xent(z_a, z_b, temperature, normalize=True):
    """Contrastive loss over N embedding pairs (rows of z_a / z_b)."""
    if temperature <= 0:
        raise ContractError("temperature must be > 0")
    if z_a.ndim != 2 or z_a.shape != z_b.shape:
        raise DimensionError("nt_xent expects two equal-shape N x d matrices")
    n = z_a.shape[0]
    if n < 2:
        raise InsufficientBatchError(f"need at least 2 pairs, got {n}")

    z = ad.concat([z_a, z_b], axis=0)
    with np.errstate(over="ignore"):
        norms = np.sqrt((z.data * z.data).sum(axis=1))
    if np.any(norms <= ad.EPS_NORM):
        raise DegenerateVectorError("degenerate embedding reached nt_xent; filter pairs first")
    if normalize:
        z = ad.l2_normalize(z)

    logits = ad.mul(ad.matmul(z, ad.transpose(z)), 1.0 / temperature)
    m = 2 * n
    offdiag = 1.0 - np.eye(m)

    masked = np.where(offdiag > 0, logits.data, -np.inf)
    shift = masked.max(axis=1, keepdims=True)  # constant; exact log-sum-exp gradient
    e = ad.mul(ad.exp(ad.add(logits, ad.Tensor(-shift))), offdiag)
    lse = ad.add(ad.log(ad.tensor_sum(e, axis=1)), ad.Tensor(shift[:, 0]))

    pos = np.zeros((m, m))
    pos[np.arange(m), (np.arange(m) + n) % m] = 1.0
    pos_logit = ad.tensor_sum(ad.mul(logits, pos), axis=1)

    return ad.tensor_mean(ad.add(lse, ad.mul(pos_logit, -1.0)))


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the true classes."""
    if logits.ndim != 2:
        raise DimensionError("cross_entropy expects N x C logits")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ContractError(f"labels must lie in [0, {c})")

    shift = logits.data.max(axis=1, keepdims=True)
    e = ad.exp(ad.add(logits, ad.Tensor(-shift)))
    lse = ad.add(ad.log(ad.tensor_sum(e, axis=1)), ad.Tensor(shift[:, 0]))

    onehot = np.zeros((n, c))
    onehot[np.arange(n), labels] = 1.0
    true_logit = ad.tensor_sum(ad.mul(logits, onehot), axis=1)

    return ad.tensor_mean(ad.add(lse, ad.mul(true_logit, -1.0)))


def total_loss(contrastive, supervised, supervised_weight):
    """contrastive + weight * supervised."""
    return ad.add(contrastive, ad.mul(supervised, float(supervised_weight)))
