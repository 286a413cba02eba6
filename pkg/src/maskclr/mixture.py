"""Diagonal Gaussian mixtures with a designated outlier component.

EM with k-means++ initialized means. After fitting, the component with the
largest average variance (broadest; ties broken by lowest mixing weight)
is designated the outlier component — anomalous samples such as empty or
badly captured frames form a diffuse, low-density cloud, which is exactly
what the broadest component absorbs. ``detect_outliers`` then reports
every sample whose argmax responsibility lands there.

Covariances are diagonal with a variance floor; a component that collapses
(weight near zero or every variance pinned at the floor) is re-seeded once
and the fit fails if it collapses again.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError, SingularComponentError
from .seeding import STREAM_DIMS, STREAM_GMM, rng_for

VARIANCE_FLOOR = 1e-6


@dataclass
class GmmModel:
    weights: np.ndarray  # K
    means: np.ndarray  # K x d
    variances: np.ndarray  # K x d, diagonal covariances
    outlier_component: int
    log_likelihood_trace: List[float] = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    reseeded: bool = False

    @property
    def n_components(self):
        return self.weights.shape[0]


@dataclass
class OutlierReport:
    outlier_ids: List[str]
    outlier_indices: np.ndarray
    outlier_responsibility: np.ndarray  # per sample, responsibility of the outlier component
    component_populations: List[int]
    outlier_component: int

    def to_dict(self):
        return {
            "outlier_ids": list(self.outlier_ids),
            "outlier_indices": [int(i) for i in self.outlier_indices],
            "outlier_component": int(self.outlier_component),
            "component_populations": [int(c) for c in self.component_populations],
            "n_outliers": int(len(self.outlier_ids)),
        }


def _log_prob(x, means, variances):
    """N x K matrix of per-component log densities."""
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for c in range(k):
        diff = x - means[c]
        out[:, c] = -0.5 * (
            d * np.log(2.0 * np.pi)
            + np.log(variances[c]).sum()
            + (diff * diff / variances[c]).sum(axis=1)
        )
    return out


def _e_step(x, weights, means, variances):
    logp = _log_prob(x, means, variances) + np.log(weights)
    shift = logp.max(axis=1, keepdims=True)
    p = np.exp(logp - shift)
    norm = p.sum(axis=1, keepdims=True)
    resp = p / norm
    ll = float((np.log(norm[:, 0]) + shift[:, 0]).sum())
    return resp, ll


def _designate_outlier(weights, variances):
    avg_var = variances.mean(axis=1)
    order = sorted(range(len(weights)), key=lambda c: (-avg_var[c], weights[c]))
    return order[0]


def gmm_fit(x, n_components=3, seed=0, tol=1e-6, max_iter=200):
    """Fit by EM; the log-likelihood trace is non-decreasing by construction."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("gmm_fit expects an N x d matrix")
    n, d = x.shape
    k = int(n_components)
    if k < 1:
        raise ConfigurationError("n_components must be >= 1")
    if n < k * d:
        raise ConfigurationError(f"need at least K*d = {k * d} samples, got {n}")

    from .evaluation import kmeans_pp_init

    rng = rng_for(seed, STREAM_GMM)
    means = kmeans_pp_init(x, k, rng).copy()
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    trace = []
    converged = False
    reseeded_any = False
    reseeded_components = set()
    prev_ll = -np.inf
    it = 0
    while it < max_iter:
        it += 1
        resp, ll = _e_step(x, weights, means, variances)
        trace.append(ll)

        nk = resp.sum(axis=0)
        collapsed = [
            c
            for c in range(k)
            if nk[c] < 1e-10 or np.all(variances[c] <= VARIANCE_FLOOR)
        ]
        if collapsed:
            for c in collapsed:
                if c in reseeded_components:
                    raise SingularComponentError(
                        f"component {c} collapsed twice (variance floor / empty)"
                    )
                reseeded_components.add(c)
                means[c] = x[int(rng.integers(0, n))]
                variances[c] = global_var
                weights[c] = 1.0 / k
            weights = weights / weights.sum()
            reseeded_any = True
            trace.clear()  # the monotone EM trace restarts after a re-seed
            prev_ll = -np.inf
            continue

        weights = nk / n
        for c in range(k):
            means[c] = (resp[:, c][:, None] * x).sum(axis=0) / nk[c]
            diff = x - means[c]
            variances[c] = np.maximum(
                (resp[:, c][:, None] * diff * diff).sum(axis=0) / nk[c], VARIANCE_FLOOR
            )

        if ll - prev_ll < tol and np.isfinite(prev_ll):
            converged = True
            break
        prev_ll = ll

    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        outlier_component=_designate_outlier(weights, variances),
        log_likelihood_trace=trace,
        converged=converged,
        n_iter=it,
        reseeded=reseeded_any,
    )


def gmm_assign(model, x):
    """Hard labels (argmax responsibility) plus the responsibility matrix."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.means.shape[1]:
        raise DimensionError(
            f"expected N x {model.means.shape[1]} input, got {x.shape}"
        )
    resp, _ = _e_step(x, model.weights, model.means, model.variances)
    return resp.argmax(axis=1), resp


def detect_outliers(model, x, ids=None, min_breadth_ratio=2.5):
    """Samples whose argmax responsibility is the outlier component.

    Outliers form a diffuse cloud, so the designated component only counts
    as an outlier bucket when it is substantially broader than the rest:
    its average variance must exceed ``min_breadth_ratio`` times the
    largest average variance among the other components. Without the guard
    a fit on outlier-free data flags whichever sub-cluster happened to
    land in the broadest component. Pass 0 to disable the guard.
    """
    labels, resp = gmm_assign(model, x)
    n = x.shape[0]
    if ids is None:
        ids = [str(i) for i in range(n)]
    if len(ids) != n:
        raise DimensionError("ids length must match the number of samples")
    oc = model.outlier_component
    idx = np.flatnonzero(labels == oc)
    if model.n_components > 1 and min_breadth_ratio > 0:
        avg_var = model.variances.mean(axis=1)
        rest = np.delete(avg_var, oc).max()
        if avg_var[oc] < min_breadth_ratio * rest:
            idx = np.array([], dtype=np.int64)  # no diffuse component: nothing to flag
    populations = [int((labels == c).sum()) for c in range(model.n_components)]
    return OutlierReport(
        outlier_ids=[ids[i] for i in idx],
        outlier_indices=idx,
        outlier_responsibility=resp[:, oc],
        component_populations=populations,
        outlier_component=oc,
    )


def select_dims(x, n_dims=3, seed=0):
    """Random column subset for low-dimensional inspection plots."""
    x = np.asarray(x)
    d = x.shape[1]
    if n_dims > d:
        raise ContractError(f"cannot select {n_dims} of {d} dimensions")
    rng = rng_for(seed, STREAM_DIMS)
    idx = np.sort(rng.choice(d, size=n_dims, replace=False))
    return x[:, idx].copy(), [int(i) for i in idx]
