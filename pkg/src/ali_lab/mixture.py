"""2D Gaussian mixtures laid out on a square grid.

The default toy problem is a 5x5 grid with spacing 2 and isotropic standard
deviation 0.05, so neighbouring modes sit 40 standard deviations apart.
Training happens on standardized coordinates (divided by ``scale``) so that
centroids lie in ``[-1, 1]^2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import ContractError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianMixture:
    centroids: np.ndarray  # [K, 2]
    covariances: np.ndarray  # [K, 2, 2]
    weights: np.ndarray  # [K]

    def __post_init__(self):
        c, s, w = self.centroids, self.covariances, self.weights
        k = c.shape[0]
        if c.shape != (k, 2) or s.shape != (k, 2, 2) or w.shape != (k,):
            raise ContractError(f"inconsistent mixture shapes {c.shape} {s.shape} {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ContractError("mixture weights must be a probability vector")
        if not np.allclose(s, np.swapaxes(s, 1, 2)):
            raise ContractError("covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(s) <= 0):
            raise ContractError("covariances must be positive definite")

    @property
    def n_components(self) -> int:
        return self.centroids.shape[0]

    def scaled(self, factor: float) -> "GaussianMixture":
        """Mixture of ``x * factor`` for ``x`` drawn from this mixture."""
        return GaussianMixture(
            self.centroids * factor, self.covariances * factor**2, self.weights.copy()
        )

    def to_dict(self) -> dict:
        return {
            "centroids": self.centroids.tolist(),
            "covariances": self.covariances.tolist(),
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GaussianMixture":
        return cls(
            np.asarray(doc["centroids"], dtype=np.float64),
            np.asarray(doc["covariances"], dtype=np.float64),
            np.asarray(doc["weights"], dtype=np.float64),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def make_grid_mixture(side: int, spacing: float, sigma: float) -> GaussianMixture:
    """``side**2`` isotropic components on a grid centred at the origin.

    Component ``k`` sits at row ``k // side`` and column ``k % side``; rows
    run along the second coordinate.
    """
    if side < 1 or spacing <= 0 or sigma <= 0:
        raise ContractError(f"need side>=1, spacing>0, sigma>0; got {side}, {spacing}, {sigma}")
    offsets = (np.arange(side) - (side - 1) / 2.0) * spacing
    rows, cols = np.meshgrid(offsets, offsets, indexing="ij")
    centroids = np.stack([cols.ravel(), rows.ravel()], axis=1)
    k = side * side
    covs = np.broadcast_to(np.eye(2) * sigma**2, (k, 2, 2)).copy()
    return GaussianMixture(centroids, covs, np.full(k, 1.0 / k))


def sample(mix: GaussianMixture, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Ancestral sampling: component label first, then a Gaussian draw."""
    if n < 1:
        raise ContractError("n must be >= 1")
    labels = rng.choice(mix.n_components, size=n, p=mix.weights)
    chol = np.linalg.cholesky(mix.covariances)
    eps = rng.standard_normal((n, 2))
    x = mix.centroids[labels] + np.einsum("nij,nj->ni", chol[labels], eps)
    return x, labels


def _component_log_pdf(mix: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """``log N(point; c_k, S_k)`` for every point and component, shape [n, K]."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    prec = np.linalg.inv(mix.covariances)
    _, logdet = np.linalg.slogdet(mix.covariances)
    diff = pts[:, None, :] - mix.centroids[None, :, :]
    maha = np.einsum("nki,kij,nkj->nk", diff, prec, diff)
    return -0.5 * (maha + logdet[None, :]) - LOG_2PI


def _weighted_log_terms(mix: GaussianMixture, points: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        log_w = np.log(mix.weights)
    return _component_log_pdf(mix, points) + log_w[None, :]


def _logsumexp(a: np.ndarray) -> np.ndarray:
    top = a.max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return (np.log(np.exp(a - top).sum(axis=1, keepdims=True)) + top)[:, 0]


def responsibilities(mix: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Posterior component probabilities; ``[K]`` for one point, ``[n, K]`` for many."""
    points = np.asarray(points, dtype=np.float64)
    terms = _weighted_log_terms(mix, points)
    post = np.exp(terms - _logsumexp(terms)[:, None])
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if points.ndim == 1 else post


def log_density(mix: GaussianMixture, points: np.ndarray) -> float | np.ndarray:
    """``log sum_k w_k N(x; c_k, S_k)`` for one point or a batch."""
    points = np.asarray(points, dtype=np.float64)
    out = _logsumexp(_weighted_log_terms(mix, points))
    return float(out[0]) if points.ndim == 1 else out


def assign_components(mix: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """Argmax-responsibility label per point; ties go to the lowest index."""
    terms = _weighted_log_terms(mix, np.atleast_2d(points))
    return np.argmax(terms, axis=1)


def grid_rows(labels: np.ndarray, side: int) -> np.ndarray:
    return np.asarray(labels) // side
