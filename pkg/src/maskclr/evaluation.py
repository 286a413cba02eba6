"""Representation-quality evaluation.

Embeds every image up to the projection head output (the classifier is
never used here), clusters the embeddings with restarted K-Means, and
scores the clustering against the true labels with NMI, AMI and ARI.

Metric conventions, stated once so nothing is implicit:
- NMI normalizes mutual information by the arithmetic mean of the two
  entropies (geometric available via ``average="geometric"``).
- AMI subtracts the exact hypergeometric expected mutual information from
  both numerator and denominator.
- If both partitions are single-cluster the scores are 1.0; if exactly
  one is, they are 0.0.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .augment import deterministic_views
from .errors import ConfigurationError, ContractError, DimensionError
from .model import EMBED_DIM, views_to_arrays
from .seeding import STREAM_KMEANS, rng_for


@dataclass
class EmbeddingSet:
    matrix: np.ndarray  # N x 32
    ids: List[str]
    labels: List[Optional[int]]
    branch: str = "full"
    checkpoint_id: str = ""

    def __post_init__(self):
        if len(self.ids) != self.matrix.shape[0] or len(self.labels) != self.matrix.shape[0]:
            raise DimensionError("ids/labels length must match the embedding rows")
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("sample ids must be unique")


def embed_dataset(model, dataset, branch="full", aug_cfg=None, batch_size=64, checkpoint_id=""):
    """Deterministic embeddings: centered views, no augmentation randomness."""
    if branch not in ("full", "crop"):
        raise ConfigurationError(f"unknown branch '{branch}'")
    if branch == "crop" and model.cfg.mode != "dual":
        raise ConfigurationError("shared-mode checkpoints have no crop branch")
    if aug_cfg is None:
        from .augment import AugmentConfig

        aug_cfg = AugmentConfig(
            crop_size=model.cfg.crop_size, full_size=model.cfg.full_size, color_strength=0.0
        )

    rows, ids, labels = [], [], []
    samples = dataset.samples
    for lo in range(0, len(samples), batch_size):
        chunk = samples[lo : lo + batch_size]
        views = [deterministic_views(s, aug_cfg) for s in chunk]
        full, crop = views_to_arrays(views, model.cfg)
        if branch == "full":
            h = model.encoder_full(ad.Tensor(full))
            z = model.proj_full(h)
        else:
            h = model.encoder_crop(ad.Tensor(crop))
            z = model.proj_crop(h)
        rows.append(z.data)
        ids.extend(s.id for s in chunk)
        labels.extend(s.label for s in chunk)
    matrix = np.vstack(rows) if rows else np.zeros((0, EMBED_DIM))
    return EmbeddingSet(matrix=matrix, ids=ids, labels=labels, branch=branch, checkpoint_id=checkpoint_id)


# ---------------------------------------------------------------------------
# K-Means


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_trace: List[float] = field(default_factory=list)
    seed: int = 0


def _sq_dists(x, centroids):
    d = x[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", d, d)


def kmeans_pp_init(x, k, rng):
    """k-means++ seeding: first center uniform, then D^2-weighted picks."""
    n = x.shape[0]
    centers = [x[int(rng.integers(0, n))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[int(rng.integers(0, n))])
            continue
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - centers[-1]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(x, k, rng, max_iter, tol):
    centroids = kmeans_pp_init(x, k, rng)
    labels = np.zeros(x.shape[0], dtype=np.int64)
    trace = []
    prev = np.inf
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(x.shape[0]), labels].sum())
        trace.append(inertia)
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = x[members].mean(axis=0)
            else:
                # re-seed an emptied cluster at the worst-fit point
                centroids[c] = x[int(d2[np.arange(x.shape[0]), labels].argmax())]
        if prev - inertia <= tol:
            break
        prev = inertia
    d2 = _sq_dists(x, centroids)
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    trace.append(inertia)
    return labels, centroids, inertia, trace


def kmeans(x, k, seed=0, max_iter=300, tol=1e-9, n_restarts=10):
    """Lloyd's algorithm with k-means++ seeding and seeded restarts.

    The best restart by final inertia wins; ties go to the lowest restart
    seed, so the result is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ContractError(f"need 1 <= k <= {n}, got k={k}")
    best = None
    for r in range(n_restarts):
        rng = rng_for(seed, STREAM_KMEANS, r)
        labels, centroids, inertia, trace = _lloyd(x, k, rng, max_iter, tol)
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(
                labels=labels, centroids=centroids, inertia=inertia, inertia_trace=trace, seed=seed
            )
    return best


# ---------------------------------------------------------------------------
# partition-agreement metrics


def contingency(a, b):
    """Count matrix: entry (u, v) = #samples with label u in a and v in b."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError("contingency expects two equal-length label vectors")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def _mutual_info(table):
    n = table.sum()
    ai = table.sum(axis=1)
    bj = table.sum(axis=0)
    nz = table > 0
    nij = table[nz].astype(np.float64)
    outer = np.outer(ai, bj)[nz].astype(np.float64)
    return float((nij / n * (np.log(nij * n) - np.log(outer))).sum())


def _mean_entropy(ha, hb, average):
    if average == "arithmetic":
        return 0.5 * (ha + hb)
    if average == "geometric":
        return math.sqrt(ha * hb)
    raise ConfigurationError(f"unknown average '{average}'")


def nmi(a, b, average="arithmetic"):
    """Normalized mutual information in [0, 1]."""
    table = contingency(a, b)
    n = int(table.sum())
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    # rounding can push the ratio a few ulp past 1.0; the range is [0, 1]
    return float(min(max(_mutual_info(table) / _mean_entropy(ha, hb, average), 0.0), 1.0))


def ari(a, b):
    """Adjusted Rand index via pair counting with chance correction."""
    table = contingency(a, b)
    n = int(table.sum())
    comb = lambda x: x * (x - 1) / 2.0
    sum_ij = comb(table.astype(np.float64)).sum()
    sum_a = comb(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb(table.sum(axis=0).astype(np.float64)).sum()
    total = comb(float(n))
    expected = sum_a * sum_b / total if total > 0 else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both single-cluster or both all-singletons: identical partitions
        return 1.0
    return float(min(max((sum_ij - expected) / (max_index - expected), -1.0), 1.0))


def expected_mutual_info(ai, bj, n):
    """Exact E[MI] over the hypergeometric model of fixed marginals."""
    ai = np.asarray(ai, dtype=np.int64)
    bj = np.asarray(bj, dtype=np.int64)
    lgam = np.array([math.lgamma(x + 1) for x in range(int(n) + 1)])  # lgam[x] = log(x!)
    log_fact = lambda x: lgam[np.asarray(x, dtype=np.int64)]
    emi = 0.0
    for a in ai:
        for b in bj:
            lo = max(1, a + b - n)
            hi = min(a, b)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1)
            log_term = (
                log_fact(a)
                + log_fact(b)
                + log_fact(n - a)
                + log_fact(n - b)
                - log_fact(n)
                - log_fact(nij)
                - log_fact(a - nij)
                - log_fact(b - nij)
                - log_fact(n - a - b + nij)
            )
            vals = nij / n * (np.log(nij * n) - math.log(a * b))
            emi += float((vals * np.exp(log_term)).sum())
    return emi


def ami(a, b, average="arithmetic"):
    """Adjusted mutual information: (MI - E[MI]) / (mean entropy - E[MI])."""
    table = contingency(a, b)
    n = int(table.sum())
    ha = _entropy(table.sum(axis=1), n)
    hb = _entropy(table.sum(axis=0), n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    mi = _mutual_info(table)
    emi = expected_mutual_info(table.sum(axis=1), table.sum(axis=0), n)
    denom = _mean_entropy(ha, hb, average) - emi
    if denom == 0.0:
        return 1.0 if mi == emi else 0.0
    return float(min((mi - emi) / denom, 1.0))


@dataclass
class MetricsReport:
    nmi: float
    ami: float
    ari: float
    k: int
    seed: int
    n_samples: int
    checkpoint_id: str = ""
    branch: str = "full"
    restarts: int = 10

    def to_dict(self):
        return {
            "nmi": self.nmi,
            "ami": self.ami,
            "ari": self.ari,
            "k": self.k,
            "seed": self.seed,
            "n_samples": self.n_samples,
            "checkpoint_id": self.checkpoint_id,
            "branch": self.branch,
            "restarts": self.restarts,
        }


def score_embeddings(emb: EmbeddingSet, k=None, seed=0, n_restarts=10):
    """Cluster an embedding set and score against its true labels."""
    if any(l is None for l in emb.labels):
        raise ConfigurationError("evaluation needs true labels for every sample")
    true = np.asarray(emb.labels, dtype=np.int64)
    if k is None:
        k = int(len(np.unique(true)))
    assignment = kmeans(emb.matrix, k, seed=seed, n_restarts=n_restarts)
    return MetricsReport(
        nmi=nmi(true, assignment.labels),
        ami=ami(true, assignment.labels),
        ari=ari(true, assignment.labels),
        k=k,
        seed=seed,
        n_samples=len(emb.labels),
        checkpoint_id=emb.checkpoint_id,
        branch=emb.branch,
        restarts=n_restarts,
    )


def evaluate(model, dataset, k=None, seed=0, branch="full", n_restarts=10, checkpoint_id=""):
    """Full protocol: embed, cluster with K-Means, score NMI/AMI/ARI."""
    emb = embed_dataset(model, dataset, branch=branch, checkpoint_id=checkpoint_id)
    return score_embeddings(emb, k=k, seed=seed, n_restarts=n_restarts)
