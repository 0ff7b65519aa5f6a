"""Sampling strategies for picking training locations from a candidate pool.

The spatially balanced pick uses the local pivotal method: repeatedly pair
a random unresolved unit with its nearest unresolved neighbor and transfer
inclusion probability between them until every unit resolves to in or out.
Comparison strategies (systematic, random, Latin hypercube, density- and
cluster-based) share the same fixed-size contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .seeding import rng_for

_EPS = 1e-12


@dataclass(frozen=True)
class CandidatePool:
    """Candidate locations, optionally carrying an auxiliary weight each."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 1:
            raise ValueError("pool needs an (N, 2) array of points")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (len(pts),) or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per point")
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.points)


def _pool_points(pool) -> np.ndarray:
    if isinstance(pool, CandidatePool):
        return pool.points
    return CandidatePool(np.asarray(pool, dtype=float)).points


def lpm_sample(pool, n: int, seed: int = 0) -> np.ndarray:
    """Spatially balanced fixed-size sample; returns sorted candidate indices.

    Local pivotal method, nearest-neighbor pairing variant: inclusion
    probabilities start uniform at n/N and each pairing step resolves one
    unit to 0 or 1 while conserving the total, so exactly n units survive.
    """
    pts = _pool_points(pool)
    n_total = len(pts)
    if not 1 <= n <= n_total:
        raise ValueError(f"sample size {n} outside [1, {n_total}]")
    if n == n_total:
        return np.arange(n_total)
    rng = rng_for(seed, "lpm")
    prob = np.full(n_total, n / n_total)
    alive = np.arange(n_total)
    while len(alive) > 1:
        pick = rng.integers(len(alive))
        i = alive[pick]
        d2 = ((pts[alive] - pts[i]) ** 2).sum(axis=1)
        d2[pick] = np.inf
        j = alive[int(np.argmin(d2))]
        pi, pj = prob[i], prob[j]
        total = pi + pj
        u = rng.random()
        if total < 1.0:
            if u < pj / total:
                prob[i], prob[j] = 0.0, total
            else:
                prob[i], prob[j] = total, 0.0
        else:
            if u < (1.0 - pj) / (2.0 - total):
                prob[i], prob[j] = 1.0, total - 1.0
            else:
                prob[i], prob[j] = total - 1.0, 1.0
        resolved = (prob[alive] <= _EPS) | (prob[alive] >= 1.0 - _EPS)
        alive = alive[~resolved]
    if len(alive) == 1:
        prob[alive[0]] = 1.0 if prob[alive[0]] > 0.5 else 0.0
    selected = np.flatnonzero(prob >= 1.0 - _EPS)
    if len(selected) != n:  # float drift safety net; never expected
        order = np.argsort(-prob, kind="stable")
        selected = np.sort(order[:n])
    return selected


def random_sample(pool, n: int, seed: int = 0) -> np.ndarray:
    pts = _pool_points(pool)
    if not 1 <= n <= len(pts):
        raise ValueError(f"sample size {n} outside [1, {len(pts)}]")
    rng = rng_for(seed, "random-sample")
    return np.sort(rng.choice(len(pts), size=n, replace=False))


def uniform_sample(pool, n: int) -> np.ndarray:
    """Systematic sampling: even index stride through row-major sorted order."""
    pts = _pool_points(pool)
    if not 1 <= n <= len(pts):
        raise ValueError(f"sample size {n} outside [1, {len(pts)}]")
    order = np.lexsort((pts[:, 0], pts[:, 1]))
    picks = np.round(np.linspace(0, len(pts) - 1, n)).astype(int)
    return np.sort(order[picks])


def _match_targets(pts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Greedy nearest-unused-candidate assignment of target locations."""
    taken = np.zeros(len(pts), dtype=bool)
    out = []
    for t in targets:
        d2 = ((pts - t) ** 2).sum(axis=1)
        d2[taken] = np.inf
        k = int(np.argmin(d2))
        taken[k] = True
        out.append(k)
    return np.sort(np.array(out))


def lhs_sample(pool, n: int, seed: int = 0) -> np.ndarray:
    """Latin hypercube over the pool's bounding box, snapped to candidates."""
    pts = _pool_points(pool)
    if not 1 <= n <= len(pts):
        raise ValueError(f"sample size {n} outside [1, {len(pts)}]")
    rng = rng_for(seed, "lhs")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    targets = np.empty((n, 2))
    for axis in range(2):
        bins = rng.permutation(n)
        u = rng.random(n)
        frac = (bins + u) / n
        targets[:, axis] = lo[axis] + frac * (hi[axis] - lo[axis])
    return _match_targets(pts, targets)


def density_sample(pool, n: int, seed: int = 0, k: int = 10) -> np.ndarray:
    """Inclusion weighted by local candidate density (k-NN estimate)."""
    pts = _pool_points(pool)
    n_total = len(pts)
    if not 1 <= n <= n_total:
        raise ValueError(f"sample size {n} outside [1, {n_total}]")
    k = min(k, n_total - 1)
    if k < 1:
        return np.arange(n_total)[:n]
    d_k = np.empty(n_total)
    chunk = max(1, int(2e7) // n_total)
    for start in range(0, n_total, chunk):
        block = pts[start : start + chunk]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
        d_k[start : start + chunk] = np.sqrt(np.partition(d2, k, axis=1)[:, k])
    dens = 1.0 / np.maximum(d_k, 1e-12) ** 2
    p = dens / dens.sum()
    rng = rng_for(seed, "density")
    return np.sort(rng.choice(n_total, size=n, replace=False, p=p))


def _kmeans(pts: np.ndarray, k: int, rng, iters: int = 50) -> np.ndarray:
    """Plain Lloyd iteration with k-means++ seeding; returns centroids."""
    centroids = np.empty((k, 2))
    centroids[0] = pts[rng.integers(len(pts))]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        p = d2 / d2.sum() if d2.sum() > 0 else None
        centroids[i] = pts[rng.choice(len(pts), p=p)]
        d2 = np.minimum(d2, ((pts - centroids[i]) ** 2).sum(axis=1))
    for _ in range(iters):
        d2 = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new = centroids.copy()
        for i in range(k):
            members = pts[labels == i]
            if len(members):
                new[i] = members.mean(axis=0)
        if np.allclose(new, centroids):
            break
        centroids = new
    return centroids


def cluster_sample(pool, n: int, seed: int = 0) -> np.ndarray:
    """k-means with k = n; the candidate nearest each centroid is selected."""
    pts = _pool_points(pool)
    if not 1 <= n <= len(pts):
        raise ValueError(f"sample size {n} outside [1, {len(pts)}]")
    rng = rng_for(seed, "cluster")
    centroids = _kmeans(pts, n, rng)
    return _match_targets(pts, centroids)


STRATEGIES = ("uniform", "random", "lhs", "density", "cluster", "lpm")


def sample_with(strategy: str, pool, n: int, seed: int = 0) -> np.ndarray:
    if strategy == "uniform":
        return uniform_sample(pool, n)
    if strategy == "random":
        return random_sample(pool, n, seed)
    if strategy == "lhs":
        return lhs_sample(pool, n, seed)
    if strategy == "density":
        return density_sample(pool, n, seed)
    if strategy == "cluster":
        return cluster_sample(pool, n, seed)
    if strategy == "lpm":
        return lpm_sample(pool, n, seed)
    raise ValueError(f"unknown sampling strategy {strategy!r}")


def compare_samplers(pool, n: int, seed: int = 0) -> dict[str, np.ndarray]:
    """Run every strategy on the same pool; each returns exactly n indices."""
    return {name: sample_with(name, pool, n, seed) for name in STRATEGIES}


def balance_metric(points, bounds=None) -> float:
    """Coefficient of variation of nearest-neighbor distances (0 = perfectly
    even spread). ``bounds`` is accepted for interface symmetry; the metric
    itself is scale-free."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("balance metric needs at least two points")
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(d2.min(axis=1))
    mean = nn.mean()
    if mean == 0:
        return float("inf")
    return float(nn.std() / mean)
