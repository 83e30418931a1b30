"""Latent-space applications: priors for empty blocks, interpolation,
and semantic manipulation along cluster directions."""

from __future__ import annotations

import numpy as np

NEIGHBOR_COUNT = 5
PRIOR_NOISE_SIGMA = 0.1
DISTANCE_SOFTENING_M = 1.0


class LatentError(ValueError):
    """Raised for empty prior sets and mismatched dimensions."""


def sparse_prior_latent(target_centroid, priors, k: int = NEIGHBOR_COUNT,
                        sigma: float = PRIOR_NOISE_SIGMA, rng=None):
    """Distance-weighted mean of the `k` nearest prior latents + noise.

    priors: iterable of (centroid (2,), latent (d,)).  Weights are
    proportional to 1 / (distance + 1 m), normalised to sum to one.
    """
    priors = list(priors)
    if not priors:
        raise LatentError("need at least one prior block")
    target = np.asarray(target_centroid, dtype=np.float64)
    centroids = np.array([np.asarray(c, dtype=np.float64)
                          for c, _ in priors])
    latents = np.array([np.asarray(z, dtype=np.float64)
                        for _, z in priors])
    distances = np.linalg.norm(centroids - target, axis=1)
    nearest = np.argsort(distances, kind="stable")[:min(k, len(priors))]
    weights = 1.0 / (distances[nearest] + DISTANCE_SOFTENING_M)
    weights /= weights.sum()
    latent = weights @ latents[nearest]
    if sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng()
        latent = latent + rng.normal(0.0, sigma, size=latent.shape)
    return latent


def interpolate(z_a, z_b, alpha: float):
    """(1 - alpha) * z_a + alpha * z_b; endpoints are exact."""
    z_a = np.asarray(z_a, dtype=np.float64)
    z_b = np.asarray(z_b, dtype=np.float64)
    if z_a.shape != z_b.shape:
        raise LatentError("latent shapes differ: %s vs %s"
                          % (z_a.shape, z_b.shape))
    if alpha == 0.0:
        return z_a.copy()
    if alpha == 1.0:
        return z_b.copy()
    return (1.0 - alpha) * z_a + alpha * z_b


def manipulate(z, centroid_from, centroid_to, beta: float):
    """Translate `z` along the direction between two cluster centers."""
    z = np.asarray(z, dtype=np.float64)
    direction = (np.asarray(centroid_to, dtype=np.float64)
                 - np.asarray(centroid_from, dtype=np.float64))
    if direction.shape != z.shape:
        raise LatentError("centroid dimension does not match latent")
    return z + beta * direction


def cluster_centroid(latents, labels):
    """Per-label arithmetic mean; returns {label: centroid}."""
    latents = np.asarray(latents, dtype=np.float64)
    labels = np.asarray(labels)
    if latents.shape[0] != labels.shape[0]:
        raise LatentError("one label per latent required")
    if latents.shape[0] == 0:
        raise LatentError("need at least one latent")
    out = {}
    for label in np.unique(labels):
        out[label.item()] = latents[labels == label].mean(axis=0)
    return out
