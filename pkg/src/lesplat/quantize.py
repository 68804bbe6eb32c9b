"""Discrete language-feature codebook built with spherical k-means.

Codewords live on the unit sphere and assignment uses cosine similarity,
matching the similarity measure used by relevancy scoring downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CODEBOOK_SIZE = 64

_UNIT_TOL = 1e-6
_CONVERGENCE_TOL = 1e-6
_MAX_ITERATIONS = 100


def _normalize_rows(x: np.ndarray, name: str = "feature") -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms < 1e-12):
        raise ValueError(f"{name} vectors must be nonzero")
    return x / norms[:, None]


@dataclass(frozen=True)
class Codebook:
    """K unit-norm codewords of dimension D, one row each."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError("codebook entries must be a non-empty 2-D array")
        norms = np.linalg.norm(e, axis=1)
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            raise ValueError("codebook rows must be unit norm")
        object.__setattr__(self, "entries", e)

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def _kmeans_pp_seed(features: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding with squared cosine distance weights."""
    n = features.shape[0]
    chosen = [int(rng.integers(n))]
    best_sim = features @ features[chosen[0]]
    while len(chosen) < k:
        d2 = np.maximum(1.0 - best_sim, 0.0) ** 2
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        best_sim = np.maximum(best_sim, features @ features[idx])
    return features[chosen].copy()


def build_codebook(features, k: int, seed: int = 0) -> Codebook:
    """Cluster unit-normalized features into ``k`` codewords.

    Runs Lloyd iterations with cosine-similarity assignment; centroids are
    renormalized to the unit sphere each round. Stops after 100 iterations
    or once the largest centroid shift drops below 1e-6. Deterministic for
    a fixed seed.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("features must be a 2-D array of row vectors")
    if feats.shape[0] < k:
        raise ValueError(f"need at least k={k} features, got {feats.shape[0]}")
    if k < 1:
        raise ValueError("k must be at least 1")
    feats = _normalize_rows(feats)

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_seed(feats, k, rng)
    for _ in range(_MAX_ITERATIONS):
        sims = feats @ centroids.T
        labels = np.argmax(sims, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = feats[labels == j]
            if members.shape[0] == 0:
                continue  # keep previous centroid for an empty cluster
            mean = members.sum(axis=0)
            norm = np.linalg.norm(mean)
            if norm > 1e-12:
                new_centroids[j] = mean / norm
        shift = np.max(np.linalg.norm(new_centroids - centroids, axis=1))
        centroids = new_centroids
        if shift < _CONVERGENCE_TOL:
            break
    return Codebook(entries=centroids)


def assign(feature, cb: Codebook) -> int:
    """Index of the codeword with highest cosine similarity (ties: lowest)."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (cb.dim,):
        raise ValueError(f"feature must have shape ({cb.dim},), got {f.shape}")
    norm = np.linalg.norm(f)
    if norm < 1e-12:
        raise ValueError("cannot assign a zero vector")
    return int(np.argmax(cb.entries @ (f / norm)))


def assign_all(features, cb: Codebook) -> np.ndarray:
    """Vectorized `assign` over rows."""
    feats = _normalize_rows(np.asarray(features, dtype=np.float64))
    return np.argmax(feats @ cb.entries.T, axis=1)


def quantization_error(features, cb: Codebook) -> float:
    """Mean cosine distance (1 - cos) between features and their codewords."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("features must be a non-empty 2-D array")
    feats = _normalize_rows(feats)
    sims = feats @ cb.entries.T
    return float(np.mean(1.0 - np.max(sims, axis=1)))
